use crate::diffcore::{ParamGrads, ParamStore, Scalar};

/// Adam with bias correction. Moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Scalar>(store: &ParamStore<F>, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update. Parameters the gradients never reached are treated as
    /// having zero gradient.
    pub fn step<F: Scalar>(&mut self, store: &mut ParamStore<F>, grads: &ParamGrads<F>) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
            let g = grads.get(id);
            let values = store.get_mut(id).data_mut();
            for k in 0..values.len() {
                let gk = g.map_or(0.0, |g| Scalar::to_f64(g[k]));
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let update = self.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + self.epsilon);
                values[k] = F::from_f64(Scalar::to_f64(values[k]) - update);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::<f32>::new();
        let id = store.add("w", Tensor::from_f64(1, 3, &[0.5, -1.0, 2.0]).unwrap()).unwrap();
        let before = store.get(id).data().to_vec();
        let mut adam = Adam::new(&store, 0.1);
        let mut grads = ParamGrads::empty(store.len());
        adam.step(&mut store, &grads);
        assert_eq!(store.get(id).data(), &before[..]);
        grads.add_slice(id, &[0.0, 0.0, 0.0]);
        adam.step(&mut store, &grads);
        assert_eq!(store.get(id).data(), &before[..]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(1, 2, &[1.0, 1.0]).unwrap()).unwrap();
        let mut adam = Adam::new(&store, 0.01);
        let mut grads = ParamGrads::empty(1);
        grads.add_slice(id, &[3.0, -0.2]);
        adam.step(&mut store, &grads);
        let w = store.get(id).data();
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] - 1.01).abs() < 1e-9);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(1, 1, &[5.0]).unwrap()).unwrap();
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..500 {
            let w = store.get(id).data()[0];
            let mut grads = ParamGrads::empty(1);
            grads.add_slice(id, &[2.0 * (w - 1.0)]);
            adam.step(&mut store, &grads);
        }
        assert!((store.get(id).data()[0] - 1.0).abs() < 1e-2);
    }
}
