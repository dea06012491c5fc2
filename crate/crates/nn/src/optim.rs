use crate::{ParamStore, Scalar, Tensor};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - T::of(self.beta1.powi(self.step as i32));
        let c2 = T::one() - T::of(self.beta2.powi(self.step as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let (pv, pg) = (p.value.data_mut(), p.grad.data());
            for i in 0..pv.len() {
                let g = pg[i];
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (T::one() - b1) * g;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let mhat = m.data()[i] / c1;
                let vhat = v.data()[i] / c2;
                pv[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Step decay: `initial · factor^(epoch / every)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.every == 0 {
            return self.initial;
        }
        self.initial * self.factor.powi((epoch / self.every) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::<f64>::new(0);
        let id = store.add("x", Tensor::new(&[2], vec![3.0, -2.0]));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            store.zero_grad();
            let v = store.value(id).data().to_vec();
            store.get_mut(id).grad = Tensor::new(&[2], v.iter().map(|x| 2.0 * x).collect());
            opt.step(&mut store);
        }
        assert!(store.value(id).data().iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut store = ParamStore::<f32>::new(0);
        let id = store.add("x", Tensor::new(&[1], vec![1.5]));
        store.get_mut(id).grad = Tensor::new(&[1], vec![4.0]);
        Adam::new(0.0).step(&mut store);
        assert_eq!(store.value(id).data(), &[1.5]);
    }

    #[test]
    fn step_decay_halves() {
        let s = StepDecay { initial: 1e-4, factor: 0.5, every: 100 };
        assert_eq!(s.lr_at(0), 1e-4);
        assert_eq!(s.lr_at(99), 1e-4);
        assert_eq!(s.lr_at(100), 5e-5);
        assert_eq!(s.lr_at(250), 2.5e-5);
    }
}
