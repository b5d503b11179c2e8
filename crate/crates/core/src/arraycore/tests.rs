use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn store_with(entries: &[(&str, Vec<Vec<f64>>)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, rows) in entries {
        s.add(name, Tensor::from_rows(rows), true).unwrap();
    }
    s
}

fn random_store(seed: u64, shapes: &[(&str, usize, usize)]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for &(name, r, c) in shapes {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        s.add(name, Tensor::new(vec![r, c], data).unwrap(), true)
            .unwrap();
    }
    s
}

fn assert_passes(report: &GradCheckReport) {
    assert!(
        report.passed(),
        "grad check failed: {:?}",
        report.failures()
    );
}

#[test]
fn matmul_identity_and_dot() {
    let s = store_with(&[
        ("i", vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
        ("b", vec![vec![2.0, 3.0], vec![4.0, 5.0]]),
        ("r", vec![vec![1.0, 2.0]]),
        ("c", vec![vec![3.0], vec![4.0]]),
    ]);
    let mut g = Graph::new(&s);
    let (i, b) = (g.param(s.id("i").unwrap()), g.param(s.id("b").unwrap()));
    let y = g.matmul(i, b).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 3.0, 4.0, 5.0]);
    let (r, c) = (g.param(s.id("r").unwrap()), g.param(s.id("c").unwrap()));
    let d = g.matmul(r, c).unwrap();
    assert_eq!(g.value(d).data(), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let s = random_store(0, &[("a", 2, 3), ("b", 2, 3)]);
    let mut g = Graph::new(&s);
    let (a, b) = (g.param(s.id("a").unwrap()), g.param(s.id("b").unwrap()));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2x3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn matmul_gradient_matches_finite_difference() {
    let s = store_with(&[("a", vec![vec![1.0, 2.0]]), ("b", vec![vec![3.0], vec![4.0]])]);
    let (_, grads) = analytic_grads(&s, &|g: &mut Graph| {
        let a = g.param(ParamId(0));
        let b = g.param(ParamId(1));
        let y = g.matmul(a, b)?;
        Ok(g.sum(y))
    })
    .unwrap();
    let ga = grads.get(s.id("a").unwrap()).data();
    assert!((ga[0] - 3.0).abs() < 1e-12 && (ga[1] - 4.0).abs() < 1e-12);
    let report = grad_check(
        &s,
        |g: &mut Graph| {
            let a = g.param(ParamId(0));
            let b = g.param(ParamId(1));
            let y = g.matmul(a, b)?;
            Ok(g.sum(y))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_passes(&report);
}

#[test]
fn softmax_examples() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let x = g.constant(Tensor::row(vec![0.0, 0.0, 0.0]));
    let y = g.softmax_rows(x, None).unwrap();
    for v in g.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let x = g.constant(Tensor::row(vec![1000.0, 0.0, 0.0]));
    let y = g.softmax_rows(x, None).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 1.0).abs() < 1e-9 && d[1] < 1e-9 && d.iter().all(|v| v.is_finite()));
    let x = g.constant(Tensor::row(vec![2f64.ln(), 0.0, 0.0]));
    let y = g.softmax_rows(x, None).unwrap();
    let d = g.value(y).data();
    assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.25).abs() < 1e-12);
}

#[test]
fn softmax_mask_zeroes_and_rejects_full_mask() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.1, -2.0]]));
    let mask = [true, false, true, false, false, true];
    let y = g.softmax_rows(x, Some(&mask)).unwrap();
    let d = g.value(y).data();
    assert_eq!(d[1], 0.0);
    assert_eq!(d[3], 0.0);
    assert_eq!(d[5], 1.0);
    assert!((d[0] + d[2] - 1.0).abs() < 1e-12);
    let err = g.softmax_rows(x, Some(&[true, true, true, false, false, false]));
    assert!(matches!(err, Err(Error::InvalidMask { row: 1 })));
}

#[test]
fn backward_trivial_cases() {
    let s = store_with(&[("p", vec![vec![1.0, 2.0, 3.0]])]);
    let mut grads = GradStore::for_params(&s);
    let mut g = Graph::training(&s, 0.0, None);
    let p = g.param(ParamId(0));
    let l = g.sum(p);
    g.backward(l, &mut grads).unwrap();
    assert_eq!(grads.get(ParamId(0)).data(), &[1.0, 1.0, 1.0]);

    grads.zero();
    let mut g = Graph::training(&s, 0.0, None);
    let p = g.param(ParamId(0));
    let sq = g.mul(p, p).unwrap();
    let l = g.sum(sq);
    g.backward(l, &mut grads).unwrap();
    assert_eq!(grads.get(ParamId(0)).data(), &[2.0, 4.0, 6.0]);
    // a second pass without zeroing accumulates
    g.backward(l, &mut grads).unwrap();
    assert_eq!(grads.get(ParamId(0)).data(), &[4.0, 8.0, 12.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let s = store_with(&[("p", vec![vec![1.0, 2.0]])]);
    let mut grads = GradStore::for_params(&s);
    let mut g = Graph::training(&s, 0.0, None);
    let p = g.param(ParamId(0));
    let y = g.tanh(p);
    assert!(matches!(g.backward(y, &mut grads), Err(Error::Contract(_))));
}

#[test]
fn fan_out_sums_both_consumers() {
    // loss = sum(p * 3) + sum(tanh(p)) uses p twice
    let s = store_with(&[("p", vec![vec![0.3, -0.7]])]);
    let mut grads = GradStore::for_params(&s);
    let mut g = Graph::training(&s, 0.0, None);
    let p = g.param(ParamId(0));
    let a = g.scale(p, 3.0);
    let b = g.tanh(p);
    let sa = g.sum(a);
    let sb = g.sum(b);
    let l = g.add(sa, sb).unwrap();
    g.backward(l, &mut grads).unwrap();
    for (gv, x) in grads.get(ParamId(0)).data().iter().zip([0.3f64, -0.7]) {
        let expect = 3.0 + (1.0 - x.tanh().powi(2));
        assert!((gv - expect).abs() < 1e-12);
    }
}

#[test]
fn grad_check_quadratic_scalar() {
    let s = store_with(&[("x", vec![vec![3.0]])]);
    let f = |g: &mut Graph| {
        let x = g.param(ParamId(0));
        let y = g.mul(x, x)?;
        Ok(g.sum(y))
    };
    let (_, grads) = analytic_grads(&s, &f).unwrap();
    assert_eq!(grads.get(ParamId(0)).data(), &[6.0]);
    let report = grad_check(&s, f, &GradCheckOptions { step: 1e-6, ..Default::default() }).unwrap();
    assert!(report.params[0].max_abs_error < 1e-7);
    assert_passes(&report);
}

#[test]
fn grad_check_reports_non_finite() {
    let s = store_with(&[("x", vec![vec![800.0]])]);
    let report = grad_check(
        &s,
        |g: &mut Graph| {
            let x = g.param(ParamId(0));
            let y = g.exp(x);
            let z = g.exp(y);
            Ok(g.sum(z))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(!report.passed());
    assert!(report.params[0].non_finite);
    assert_eq!(report.failures()[0].name, "x");
}

#[test]
fn softmax_nll_on_random_logits() {
    let s = random_store(11, &[("logits", 4, 6)]);
    let report = grad_check(
        &s,
        |g: &mut Graph| {
            let x = g.param(ParamId(0));
            let p = g.softmax_rows(x, None)?;
            let picked = g.pick(p, &[0, 5, 2, 3])?;
            let lp = g.log_clamped(picked, 1e-12);
            let s = g.sum(lp);
            Ok(g.scale(s, -1.0))
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_passes(&report);
}

/// One composite per op family, each checked against central differences.
#[test]
fn every_op_passes_grad_check_on_random_shapes() {
    for seed in 0..3u64 {
        let s = random_store(
            seed,
            &[
                ("a", 3, 4),
                ("b", 4, 5),
                ("c", 3, 4),
                ("row", 1, 4),
                ("col", 3, 1),
                ("gamma", 1, 4),
                ("beta", 1, 4),
                ("rel", 3, 5),
                ("filt", 6, 4),
                ("fbias", 1, 4),
            ],
        );
        let id = |n: &str| s.id(n).unwrap();
        type Case<'a> = (&'a str, Box<dyn Fn(&mut Graph) -> crate::error::Result<Var> + 'a>);
        let cases: Vec<Case> = vec![
            ("matmul", Box::new(|g| {
                let (a, b) = (g.param(id("a")), g.param(id("b")));
                let y = g.matmul(a, b)?;
                let t = g.tanh(y);
                Ok(g.sum(t))
            })),
            ("matmul_nt+transpose", Box::new(|g| {
                let (a, c) = (g.param(id("a")), g.param(id("c")));
                let y = g.matmul_nt(a, c)?;
                let t = g.transpose(y);
                let s = g.sigmoid(t);
                Ok(g.sum(s))
            })),
            ("elementwise", Box::new(|g| {
                let (a, c) = (g.param(id("a")), g.param(id("c")));
                let m = g.mul(a, c)?;
                let d = g.sub(m, a)?;
                let e = g.exp(d);
                let r = g.relu(c);
                let s = g.add(e, r)?;
                let s = g.add_scalar(s, 2.0);
                let l = g.log_clamped(s, 1e-12);
                Ok(g.sum(l))
            })),
            ("broadcast", Box::new(|g| {
                let (a, r, c) = (g.param(id("a")), g.param(id("row")), g.param(id("col")));
                let x = g.add_row(a, r)?;
                let y = g.mul_row(x, r)?;
                let z = g.mul_col(y, c)?;
                let k = g.mul_const(z, Tensor::filled(&[3, 4], 0.5))?;
                let t = g.tanh(k);
                Ok(g.sum(t))
            })),
            ("softmax_masked", Box::new(|g| {
                let a = g.param(id("a"));
                let mask = [true, false, true, true, false, true, true, true, true, true, false, false];
                let p = g.softmax_rows(a, Some(&mask))?;
                let w = g.mul_const(p, Tensor::new(vec![3, 4], (0..12).map(|v| v as f64).collect())?)?;
                Ok(g.sum(w))
            })),
            ("layer_norm", Box::new(|g| {
                let (a, ga, be) = (g.param(id("a")), g.param(id("gamma")), g.param(id("beta")));
                let y = g.layer_norm(a, ga, be, 1e-5)?;
                let t = g.tanh(y);
                Ok(g.sum(t))
            })),
            ("batch_norm", Box::new(|g| {
                let (a, ga, be) = (g.param(id("a")), g.param(id("gamma")), g.param(id("beta")));
                let (y, _) = g.batch_norm_train(a, ga, be, 1e-5)?;
                let t = g.sigmoid(y);
                let w = g.mul_const(t, Tensor::new(vec![3, 4], (0..12).map(|v| (v % 5) as f64).collect())?)?;
                Ok(g.sum(w))
            })),
            ("maxout+pooling", Box::new(|g| {
                let (a, c) = (g.param(id("a")), g.param(id("c")));
                let m = g.maximum(a, c)?;
                let mx = g.max_rows(m)?;
                let mn = g.mean_rows(m);
                let cat = g.concat_cols(&[mx, mn])?;
                let t = g.tanh(cat);
                Ok(g.sum(t))
            })),
            ("concat_rows+gather", Box::new(|g| {
                let (a, c) = (g.param(id("a")), g.param(id("c")));
                let cat = g.concat_rows(&[a, c])?;
                let gat = g.gather_rows(cat, &[0, 5, 5, 2], "test")?;
                let t = g.tanh(gat);
                Ok(g.sum(t))
            })),
            ("conv1d+segment_max", Box::new(|g| {
                let a = g.param(id("a"));
                let at = g.transpose(a);
                let (y, segs) = g.conv1d(at, &[(0, 2), (1, 4)], 2, id("filt"), id("fbias"))?;
                let p = g.segment_max(y, &segs)?;
                let t = g.tanh(p);
                Ok(g.sum(t))
            })),
            ("coverage_adjust", Box::new(|g| {
                let a = g.param(id("a"));
                let adj = g.coverage_adjust(a)?;
                let p = g.softmax_rows(adj, None)?;
                let w = g.mul_const(p, Tensor::new(vec![3, 4], (0..12).map(|v| (v * 7 % 5) as f64).collect())?)?;
                Ok(g.sum(w))
            })),
            ("relative", Box::new(|g| {
                let (r, a) = (g.param(id("rel")), g.param(id("a")));
                let e = g.rel_gather(r, 4, 2, 0)?; // [3 x 4]
                let p = g.softmax_rows(e, None)?;
                let sc = g.rel_scatter(p, 2, 1)?; // [3 x 5]
                let sc2 = g.rel_scatter(a, 2, 0)?;
                let y = g.mul(sc, sc2)?;
                Ok(g.sum(y))
            })),
            ("scatter+pick", Box::new(|g| {
                let a = g.param(id("a"));
                let p = g.softmax_rows(a, None)?;
                let sc = g.scatter_cols(p, &[0, 2, 2, 5], 6)?;
                let pk = g.pick(sc, &[2, 5, 0])?;
                let l = g.log_clamped(pk, 1e-12);
                Ok(g.sum(l))
            })),
        ];
        for (name, f) in cases {
            let report = grad_check(&s, |g: &mut Graph| f(g), &GradCheckOptions::default())
                .unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(report.passed(), "{name} (seed {seed}): {:?}", report.failures());
        }
    }
}

#[test]
fn degenerate_maxout_equals_single_piece() {
    let s = random_store(4, &[("x", 3, 4), ("w", 4, 2)]);
    let mut g = Graph::new(&s);
    let x = g.param(ParamId(0));
    let w = g.param(ParamId(1));
    let p1 = g.matmul(x, w).unwrap();
    let p2 = g.matmul(x, w).unwrap();
    let m = g.maximum(p1, p2).unwrap();
    assert_eq!(g.value(m), g.value(p1));
}

#[test]
fn coverage_adjust_matches_direct_ratio() {
    let rows = vec![vec![0.3, -1.0, 2.0], vec![1.0, 0.0, -0.5], vec![-0.2, 0.7, 0.1]];
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let e = g.constant(Tensor::from_rows(&rows));
    let adj = g.coverage_adjust(e).unwrap();
    let a = g.softmax_rows(adj, None).unwrap();
    for t in 0..3 {
        let f: Vec<f64> = (0..3)
            .map(|j| {
                let num = rows[t][j].exp();
                if t == 0 {
                    num
                } else {
                    num / (0..t).map(|k| rows[k][j].exp()).sum::<f64>()
                }
            })
            .collect();
        let z: f64 = f.iter().sum();
        for (j, fj) in f.iter().enumerate() {
            assert!((g.value(a).get(t, j) - fj / z).abs() < 1e-12);
        }
    }
}

#[test]
fn dropout_is_identity_without_rng_and_scales_with_it() {
    let s = random_store(1, &[("x", 20, 20)]);
    let mut g = Graph::training(&s, 0.5, None);
    let x = g.param(ParamId(0));
    assert_eq!(g.dropout(x).unwrap(), x);
    let mut g = Graph::training(&s, 0.5, Some(ChaCha8Rng::seed_from_u64(9)));
    let x = g.param(ParamId(0));
    let y = g.dropout(x).unwrap();
    let (xv, yv) = (g.value(x).data(), g.value(y).data());
    let zeros = yv.iter().filter(|v| **v == 0.0).count();
    assert!(zeros > 100 && zeros < 300);
    for (a, b) in xv.iter().zip(yv) {
        assert!(*b == 0.0 || (b - 2.0 * a).abs() < 1e-12);
    }
}

#[test]
fn batch_norm_eval_uses_running_statistics() {
    let s = store_with(&[("g", vec![vec![2.0, 1.0]]), ("b", vec![vec![0.5, 0.0]])]);
    let mut g = Graph::new(&s);
    let x = g.constant(Tensor::from_rows(&[vec![3.0, 1.0]]));
    let (ga, be) = (g.param(ParamId(0)), g.param(ParamId(1)));
    let y = g.batch_norm_eval(x, ga, be, &[1.0, 1.0], &[4.0, 1.0], 0.0).unwrap();
    assert_eq!(g.value(y).data(), &[2.0 * (2.0 / 2.0) + 0.5, 0.0]);
}
