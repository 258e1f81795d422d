use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;

/// Cosine decay from `initial` to `floor` over `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub floor: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn cosine(initial: f64, floor: f64, total_steps: usize) -> Self {
        LrSchedule {
            initial,
            floor,
            total_steps,
        }
    }

    pub fn at(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.initial;
        }
        let t = (step.min(self.total_steps - 1)) as f64 / (self.total_steps - 1) as f64;
        self.floor + 0.5 * (self.initial - self.floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Adam state: first/second moments per parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
    pub step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Array2<f64>> = store.iter().map(|t| Array2::zeros(t.data.raw_dim())).collect();
        OptimizerState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            Zip::from(&mut p.data)
                .and(&p.grad)
                .and(m)
                .and(v)
                .for_each(|w, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *w -= lr * mh / (vh.sqrt() + eps);
                });
        }
        store.zero_grad();
    }

    pub fn moments(&self) -> (&[Array2<f64>], &[Array2<f64>]) {
        (&self.first, &self.second)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.add("w", array![[1.0, 2.0]]);
        let mut opt = OptimizerState::new(&store, 1e-3);
        for _ in 0..10 {
            opt.step(&mut store);
        }
        assert_eq!(store.iter().next().unwrap().data, array![[1.0, 2.0]]);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut store = ParamStore::new();
        let id = store.add("w", array![[0.0]]);
        let mut opt = OptimizerState::new(&store, 1e-2);
        let mut prev = 0.0;
        for _ in 0..100 {
            store.get_mut(id).grad.fill(0.5);
            opt.step(&mut store);
            let w = store.data(id)[[0, 0]];
            assert!(w < prev);
            prev = w;
        }
        assert!(store.get(id).grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = array![[0.3, -1.2, 2.0, 0.05]];
        let mut store = ParamStore::new();
        let id = store.add("w", Array2::zeros((1, 4)));
        let mut opt = OptimizerState::new(&store, 5e-2);
        let sched = LrSchedule::cosine(5e-2, 1e-5, 500);
        for step in 0..500 {
            opt.lr = sched.at(step);
            let g = (store.data(id) - &target) * 2.0;
            store.get_mut(id).grad.assign(&g);
            opt.step(&mut store);
        }
        let err = (store.data(id) - &target).mapv(|x| x * x).sum().sqrt();
        assert!(err < 1e-3, "distance {err}");
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::cosine(1e-3, 1e-5, 101);
        assert_eq!(s.at(0), 1e-3);
        assert!((s.at(100) - 1e-5).abs() < 1e-18);
        assert!((s.at(50) - (1e-5 + 0.5 * (1e-3 - 1e-5))).abs() < 1e-15);
    }
}
