use segnet::arraycore::{GradStore, Graph, ParamStore, Tensor};
use segnet::config::ModelConfig;
use segnet::error::Error;
use segnet::objective::{
    combine_graph, combine_losses, nll_sequence, weighted_bce, weighted_bce_value, Adam, LossWeights,
    PlateauSchedule,
};

const LN2: f64 = std::f64::consts::LN_2;

fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() < tol, "{a} vs {b}");
}

fn bce(probs: &[f64], labels: &[u8], omega: f64) -> f64 {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let p = g.constant(Tensor::column(probs.to_vec()));
    let l = weighted_bce(&mut g, p, labels, omega).unwrap();
    g.value(l).item()
}

#[test]
fn bce_examples() {
    close(bce(&[0.5], &[1], 1.0), LN2, 1e-12);
    close(bce(&[0.5], &[1], 2.0), 2.0 * LN2, 1e-12);
    let expected = 0.7 * -(0.9f64.ln()) / 2.0 + -(0.9f64.ln()) / 2.0;
    close(bce(&[0.9, 0.1], &[1, 0], 0.7), expected, 1e-12);
    close(expected, 0.0896, 5e-5);
    close(weighted_bce_value(&[0.9, 0.1], &[1, 0], 0.7), expected, 1e-12);
}

#[test]
fn bce_clamps_exact_zero_and_one() {
    let l = bce(&[0.0, 1.0], &[1, 0], 1.0);
    close(l, -(1e-7f64.ln()), 1e-9);
    assert!(l.is_finite());
}

#[test]
fn unit_weight_is_plain_cross_entropy() {
    let p: [f64; 4] = [0.3, 0.8, 0.55, 0.01];
    let y: [u8; 4] = [0, 1, 1, 0];
    let plain: f64 = -p
        .iter()
        .zip(y)
        .map(|(&p, y)| if y == 1 { p.ln() } else { (1.0 - p).ln() })
        .sum::<f64>()
        / 4.0;
    close(bce(&p, &y, 1.0), plain, 1e-12);
}

fn nll(rows: &[Vec<f64>], targets: &[usize]) -> (f64, usize) {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let d = g.constant(Tensor::from_rows(rows));
    let (l, c) = nll_sequence(&mut g, d, targets).unwrap();
    (g.value(l).item(), c)
}

#[test]
fn nll_examples() {
    assert_eq!(nll(&[vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]], &[5]).0, 0.0);
    close(nll(&[vec![0.5; 8], vec![0.5; 8]], &[6, 7]).0, 2.0 * LN2, 1e-12);
    let uniform = vec![0.1; 10];
    close(nll(&[uniform.clone(), uniform.clone(), uniform], &[6, 7, 8]).0, 3.0 * 10f64.ln(), 1e-12);
}

#[test]
fn nll_skips_pad_and_counts_clamps() {
    let (l, c) = nll(&[vec![0.5; 8], vec![0.0; 8]], &[6, 0]);
    close(l, LN2, 1e-12);
    assert_eq!(c, 0);
    let (l, c) = nll(&[vec![0.0; 8]], &[6]);
    close(l, -(1e-12f64.ln()), 1e-9);
    assert_eq!(c, 1);
}

#[test]
fn combine_examples() {
    let w = LossWeights {
        alpha: 1.0,
        ..LossWeights::default()
    };
    assert_eq!(combine_losses(0.3, 1.7, 9.0, &w).unwrap().0, 1.7);
    let w = LossWeights {
        alpha: 1.0,
        beta: 0.5,
        ..LossWeights::default()
    };
    assert_eq!(combine_losses(2.0, 4.0, 0.0, &w).unwrap().1, 3.0);
    let w = LossWeights::default();
    close(combine_losses(0.0, 1.0, 2.0, &w).unwrap().0, 1.3, 1e-12);
}

#[test]
fn combine_is_linear_and_rejects_non_finite() {
    let w = LossWeights::default();
    let (g1, e1) = combine_losses(0.4, 1.1, 2.5, &w).unwrap();
    let (g2, e2) = combine_losses(0.8, 2.2, 5.0, &w).unwrap();
    close(g2, 2.0 * g1, 1e-12);
    close(e2, 2.0 * e1, 1e-12);
    assert!(matches!(combine_losses(f64::NAN, 1.0, 1.0, &w), Err(Error::Numeric(_))));
    assert!(matches!(combine_losses(1.0, f64::INFINITY, 1.0, &w), Err(Error::Numeric(_))));
}

#[test]
fn graph_combination_matches_numbers() {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let w = LossWeights::default();
    let (a, b, c) = (
        g.constant(Tensor::scalar(0.4)),
        g.constant(Tensor::scalar(1.1)),
        g.constant(Tensor::scalar(2.5)),
    );
    let (lg, leg) = combine_graph(&mut g, a, b, c, &w).unwrap();
    let (eg, eeg) = combine_losses(0.4, 1.1, 2.5, &w).unwrap();
    close(g.value(lg).item(), eg, 1e-12);
    close(g.value(leg).item(), eeg, 1e-12);
}

#[test]
fn default_weights_follow_config() {
    let w = LossWeights::from_config(&ModelConfig::full());
    assert_eq!((w.alpha, w.beta, w.omega_selector, w.omega_extractor), (0.7, 0.5, 0.7, 2.0));
}

#[test]
fn clipping_scales_norm_ten_to_one() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::zeros(&[1, 2]), true).unwrap();
    let mut grads = GradStore::for_params(&store);
    grads.get_mut(id).data_mut().copy_from_slice(&[6.0, 8.0]);
    let before = grads.clip_global_norm(1.0);
    close(before, 10.0, 1e-12);
    close(grads.global_norm(), 1.0, 1e-12);
    close(grads.get(id).data()[0], 0.6, 1e-12);
}

#[test]
fn schedule_halves_on_regression_and_stops_on_patience() {
    let mut s = PlateauSchedule::new(1e-4, 2, true);
    assert!(s.observe(0.5).improved);
    let ev = s.observe(0.4);
    assert!(ev.halved && !ev.improved && !ev.stop);
    assert_eq!(s.lr, 5e-5);
    let ev = s.observe(0.45);
    assert!(!ev.halved && ev.stop);
    assert_eq!(s.lr, 5e-5);
    assert_eq!(s.best(), Some(0.5));

    let mut s = PlateauSchedule::new(1.0, 5, false);
    s.observe(3.0);
    s.observe(2.0);
    assert_eq!(s.lr, 1.0);
    s.observe(2.5);
    assert_eq!(s.lr, 0.5);
}

#[test]
fn adam_step_descends_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::row(vec![3.0, -2.0]), true).unwrap();
    let frozen = store.add("f", Tensor::row(vec![1.0]), false).unwrap();
    let loss = |s: &ParamStore| s.value(id).sum_squares();
    let mut adam = Adam::new(&store, 1e-4);
    let before = loss(&store);
    let mut grads = GradStore::for_params(&store);
    let x = store.value(id).data().to_vec();
    grads.get_mut(id).data_mut().copy_from_slice(&[2.0 * x[0], 2.0 * x[1]]);
    grads.get_mut(frozen).data_mut()[0] = 5.0;
    adam.step(&mut store, &grads);
    assert!(loss(&store) < before);
    assert_eq!(store.value(frozen).data(), &[1.0]);
    // first bias-corrected step moves each coordinate by lr
    close(store.value(id).data()[0], 3.0 - 1e-4, 1e-9);
    assert_eq!(adam.steps(), 1);
}
