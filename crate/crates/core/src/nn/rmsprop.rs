use super::Mlp;
use crate::error::{Error, Result};

/// RMSProp optimizer state.
///
/// `cache <- decay * cache + (1 - decay) * g^2`, then
/// `param <- param - lr * g / (sqrt(cache) + epsilon)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    cache: Vec<f64>,
    decay: f64,
    epsilon: f64,
}

impl RmsProp {
    pub const DEFAULT_DECAY: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-8;

    pub fn new(param_count: usize) -> Self {
        Self::with_params(param_count, Self::DEFAULT_DECAY, Self::DEFAULT_EPSILON)
            .expect("default RMSProp constants are valid")
    }

    pub fn for_net(net: &Mlp) -> Self {
        Self::new(net.param_count())
    }

    pub fn with_params(param_count: usize, decay: f64, epsilon: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::Config(format!("RMSProp decay must be in (0,1), got {decay}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!("RMSProp epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { cache: vec![0.0; param_count], decay, epsilon })
    }

    pub fn cache(&self) -> &[f64] {
        &self.cache
    }

    /// Applies one update. Nothing is modified if the step is rejected.
    pub fn step(&mut self, net: &mut Mlp, grads: &[f64], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if grads.len() != net.param_count() || self.cache.len() != net.param_count() {
            return Err(Error::Shape(format!(
                "network has {} parameters, gradient {} and cache {}",
                net.param_count(),
                grads.len(),
                self.cache.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        for ((p, c), &g) in net.params_mut().iter_mut().zip(self.cache.iter_mut()).zip(grads) {
            *c = self.decay * *c + (1.0 - self.decay) * g * g;
            *p -= lr * g / (c.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn scalar_net(w: f64) -> Mlp {
        Mlp::from_params(&[LayerSpec::linear(1, 1)], vec![w, 0.0]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_cache() {
        let mut net = scalar_net(0.7);
        let mut opt = RmsProp::for_net(&net);
        opt.step(&mut net, &[1.0, 1.0], 0.01).unwrap();
        let before = net.clone();
        let cache_before = opt.cache().to_vec();
        opt.step(&mut net, &[0.0, 0.0], 0.01).unwrap();
        assert_eq!(net, before);
        for (a, b) in opt.cache().iter().zip(&cache_before) {
            assert!((a - 0.9 * b).abs() < 1e-18);
        }
    }

    #[test]
    fn single_update_by_hand() {
        let mut net = scalar_net(1.0);
        let mut opt = RmsProp::for_net(&net);
        opt.step(&mut net, &[2.0, 0.0], 0.001).unwrap();
        assert!((opt.cache()[0] - 0.4).abs() < 1e-15);
        let expected = 1.0 - 0.001 * 2.0 / (0.4f64.sqrt() + 1e-8);
        assert!((net.params()[0] - expected).abs() < 1e-15);
        assert!((net.params()[0] - 0.9968377).abs() < 1e-7);
    }

    #[test]
    fn constant_gradient_step_approaches_lr() {
        let mut net = scalar_net(0.0);
        let mut opt = RmsProp::for_net(&net);
        let mut last = 0.0;
        for _ in 0..300 {
            let before = net.params()[0];
            opt.step(&mut net, &[5.0, 0.0], 0.01).unwrap();
            last = before - net.params()[0];
        }
        assert!((last - 0.01).abs() < 1e-9, "step {last}");
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut net = scalar_net(1.0);
        let mut opt = RmsProp::for_net(&net);
        let err = opt.step(&mut net, &[f64::NAN, 0.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(net.params(), &[1.0, 0.0]);
        assert_eq!(opt.cache(), &[0.0, 0.0]);
    }

    #[test]
    fn bad_learning_rate_and_shape() {
        let mut net = scalar_net(1.0);
        let mut opt = RmsProp::for_net(&net);
        assert!(opt.step(&mut net, &[1.0, 1.0], 0.0).is_err());
        assert!(matches!(opt.step(&mut net, &[1.0], 0.1), Err(Error::Shape(_))));
    }
}
