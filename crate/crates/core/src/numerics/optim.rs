use indexmap::IndexMap;

use super::{NumericsError, ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Adam moments and step counter. Weight decay enters as `wd * param` added to
/// the gradient before the moment updates.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: IndexMap<String, (Tensor, Tensor)>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }

    /// One update of every parameter in `params` that has a gradient.
    /// Parameters absent from `grads` are left untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<(), NumericsError> {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(NumericsError::shape(
                    "adam_step",
                    format!("{name}: param {:?} grad {:?}", p.shape(), g.shape()),
                ));
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())));
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.data()[i] + weight_decay * p[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Exponential decay `lr0 * gamma^(epoch / step_size)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub gamma: f64,
    pub step_size: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            gamma: 0.5,
            step_size: 10.0,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.lr0 * self.gamma.powf(epoch as f64 / self.step_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vec![v]));
        p
    }

    #[test]
    fn zero_gradient_no_decay_keeps_params() {
        let mut params = single(0.7);
        let mut adam = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        adam.step(&mut params, &single(0.0)).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[0.7]);
        assert_eq!(adam.step_count(), 1);
        assert!(adam.moments("w").is_some());
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = 1, v_hat = 1 -> update = lr / (1 + eps)
        let mut params = single(0.0);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(cfg);
        adam.step(&mut params, &single(1.0)).unwrap();
        let expected = -cfg.lr / (1.0 + cfg.eps);
        assert!((params.get("w").unwrap().data()[0] - expected).abs() < 1e-18);
    }

    #[test]
    fn weight_decay_is_additive_gradient_term() {
        let mut a = single(2.0);
        let mut b = single(2.0);
        let mut with_wd = AdamState::new(AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        });
        let mut explicit = AdamState::new(AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        with_wd.step(&mut a, &single(0.3)).unwrap();
        explicit.step(&mut b, &single(0.3 + 0.1 * 2.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_runs_identical_trajectories() {
        let run = || {
            let mut p = single(1.0);
            let mut adam = AdamState::new(AdamConfig::default());
            let mut traj = Vec::new();
            for i in 0..20 {
                adam.step(&mut p, &single((i as f64).sin())).unwrap();
                traj.push(p.get("w").unwrap().data()[0]);
            }
            traj
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_errors() {
        let mut p = single(1.0);
        let mut g = ParamSet::new();
        g.insert("w", Tensor::vector(vec![1.0, 2.0]));
        assert!(AdamState::new(AdamConfig::default()).step(&mut p, &g).is_err());
    }

    #[test]
    fn schedule_values() {
        let s = LrSchedule::default();
        assert_eq!(s.lr(0), 1e-4);
        assert!((s.lr(10) - 5e-5).abs() < 1e-20);
        assert!((s.lr(20) - 2.5e-5).abs() < 1e-20);
    }
}
