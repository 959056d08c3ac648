use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};

/// Adam with bias correction and decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        Self { beta1, beta2, eps, weight_decay, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every trainable parameter. `grads` is in store order;
    /// a trainable parameter without a gradient is an error.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Vec<f64>>],
        lr: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Invariant(format!(
                "optimizer tracks {} tensors, store has {}, {} gradients given",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in &ids {
            let p = store.get(*id);
            if p.trainable && grads[id.index()].is_none() {
                return Err(Error::Invariant(format!("parameter {} received no gradient", p.name)));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for id in ids {
            let i = id.index();
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let g = grads[i].as_ref().expect("checked above");
            let rate = lr(p.group);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((x, &gj), mj), vj) in p.value.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *x -= rate * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * *x);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64) -> (ParamStore, crate::params::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("x", &[1], vec![x], ParamGroup::Head).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_is_sign_times_rate() {
        let (mut s, id) = one(0.0);
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8, 0.0);
        adam.step(&mut s, &[Some(vec![3.7])], |_| 0.01).unwrap();
        assert!((s.get(id).value[0] + 0.01).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, id) = one(1.25);
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8, 0.0);
        for _ in 0..3 {
            adam.step(&mut s, &[Some(vec![0.0])], |_| 0.1).unwrap();
        }
        assert_eq!(s.get(id).value[0], 1.25);
    }

    #[test]
    fn three_steps_on_a_parabola() {
        // Hand-unrolled reference for f(x) = x², x₀ = 1, lr = 0.1.
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut want = Vec::new();
        for t in 1..=3 {
            let g = 2.0 * x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            x -= lr * mhat / (vhat.sqrt() + eps);
            want.push(x);
        }
        // First step moves by lr (to 0.9); the others follow the moments.
        assert!((want[0] - 0.9).abs() < 1e-9);

        let (mut s, id) = one(1.0);
        let mut adam = Adam::new(&s, b1, b2, eps, 0.0);
        for w in want {
            let g = 2.0 * s.get(id).value[0];
            adam.step(&mut s, &[Some(vec![g])], |_| lr).unwrap();
            assert!((s.get(id).value[0] - w).abs() < 1e-12);
        }
        assert_eq!(adam.steps(), 3);
    }

    #[test]
    fn decoupled_decay_and_groups() {
        let mut s = ParamStore::new();
        let a = s.add("a", &[1], vec![2.0], ParamGroup::Backbone).unwrap();
        let b = s.add("b", &[1], vec![2.0], ParamGroup::Head).unwrap();
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8, 0.5);
        let lr = |g| if g == ParamGroup::Backbone { 0.1 } else { 0.01 };
        adam.step(&mut s, &[Some(vec![0.0]), Some(vec![0.0])], lr).unwrap();
        assert!((s.get(a).value[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
        assert!((s.get(b).value[0] - (2.0 - 0.01 * 0.5 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_and_frozen_parameters() {
        let mut s = ParamStore::new();
        s.add("a", &[1], vec![1.0], ParamGroup::Head).unwrap();
        s.add("b", &[1], vec![1.0], ParamGroup::Head).unwrap();
        let mut adam = Adam::new(&s, 0.9, 0.999, 1e-8, 0.1);
        let err = adam.step(&mut s, &[Some(vec![1.0]), None], |_| 0.1).unwrap_err();
        assert!(matches!(&err, Error::Invariant(m) if m.contains('b')), "{err}");
        s.set_trainable("b", false).unwrap();
        adam.step(&mut s, &[Some(vec![1.0]), None], |_| 0.1).unwrap();
        assert_eq!(s.by_name("b").unwrap().value, vec![1.0]);
    }
}
