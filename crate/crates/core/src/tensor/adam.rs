use super::ParamStore;
use crate::error::{shape_err, Error, Result};

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step so one state can follow a store that grows before training starts.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if !store.grads_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        if self.m.is_empty() {
            self.m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return shape_err(format!("adam state for {} params, store has {}", self.m.len(), store.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if m.len() != p.value.numel() {
                return shape_err(format!("adam moment size mismatch for {}", p.name));
            }
            for (((x, &g), mi), vi) in p.value.data_mut().iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Graph, Tensor};

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
        let mut adam = AdamState::new(0.1);
        for _ in 0..5 {
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1: m̂ = g, v̂ = g², update = lr·g/(|g|+ε) ≈ lr.
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(0.0));
        store.add_grad(id, &[1.0]);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut store).unwrap();
        let x = store.get(id).data()[0];
        assert!((x + 0.1 / (1.0 + 1e-8)).abs() < 1e-15, "x = {x}");
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(0.0));
        let mut adam = AdamState::new(0.05);
        for _ in 0..500 {
            store.zero_grad();
            let mut g = Graph::new();
            let x = g.param(&store, id);
            let three = g.constant(Tensor::scalar(3.0));
            let d = g.sub(x, three).unwrap();
            let sq = g.mul(d, d).unwrap();
            let loss = g.sum(sq);
            g.backward(loss).unwrap();
            g.accumulate_into(&mut store);
            adam.step(&mut store).unwrap();
        }
        let x = store.get(id).data()[0];
        assert!((x - 3.0).abs() < 1e-2, "x = {x}");
    }

    #[test]
    fn step_counter_increases() {
        let mut store = ParamStore::new();
        store.add("x", Tensor::scalar(1.0));
        let mut adam = AdamState::new(0.01);
        adam.step(&mut store).unwrap();
        adam.step(&mut store).unwrap();
        assert_eq!(adam.steps(), 2);
    }
}
