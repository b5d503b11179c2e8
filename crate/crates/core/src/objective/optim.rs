use crate::arraycore::{GradStore, ParamStore, Tensor};

/// Adam with bias correction. Only trainable parameters move.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let m: Vec<Tensor> = params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &GradStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if !params.get(id).trainable {
                continue;
            }
            let i = id.index();
            let g = grads.get(id).data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let w = params.value_mut(id).data_mut();
            for k in 0..g.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                w[k] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// What the schedule decided after a validation score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEvent {
    pub improved: bool,
    pub halved: bool,
    pub stop: bool,
}

/// Halves the learning rate whenever validation gets worse than the previous
/// evaluation; stops after `patience` evaluations without a new best.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub patience: usize,
    higher_is_better: bool,
    best: Option<f64>,
    last: Option<f64>,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, patience: usize, higher_is_better: bool) -> Self {
        PlateauSchedule {
            lr,
            patience,
            higher_is_better,
            best: None,
            last: None,
            since_best: 0,
        }
    }

    fn better(&self, a: f64, b: f64) -> bool {
        if self.higher_is_better {
            a > b
        } else {
            a < b
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, score: f64) -> ScheduleEvent {
        let improved = self.best.is_none_or(|b| self.better(score, b));
        let halved = self.last.is_some_and(|l| self.better(l, score));
        if halved {
            self.lr *= 0.5;
        }
        if improved {
            self.best = Some(score);
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.last = Some(score);
        ScheduleEvent {
            improved,
            halved,
            stop: self.since_best >= self.patience,
        }
    }
}
