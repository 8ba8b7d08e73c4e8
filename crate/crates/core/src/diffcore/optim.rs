//! Parameter updates: momentum SGD, AdamW, and the cosine learning-rate
//! schedule.

use crate::diffcore::params::ParamStore;
use crate::diffcore::tensor::Tensor;
use crate::error::{CoreError, Result};

#[derive(Clone, Copy, Debug)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.9,
            weight_decay: 0.0,
        }
    }
}

/// Momentum SGD: v <- momentum v + (g + wd p); p <- p - lr v.
pub struct Sgd {
    cfg: SgdConfig,
    velocity: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig, store: &ParamStore) -> Self {
        Sgd {
            cfg,
            velocity: (0..store.len()).map(|_| None).collect(),
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        for id in store.iter_ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = &grads[id.0] else { continue };
            let slot = id.0;
            let p = store.get_mut(id);
            let v = self.velocity[slot].get_or_insert_with(|| Tensor::zeros(p.shape()));
            for ((pv, vv), gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                let update = gv + self.cfg.weight_decay * *pv;
                *vv = self.cfg.momentum * *vv + update;
                *pv -= lr * *vv;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// AdamW with decoupled weight decay:
/// m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;
/// p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p).
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
    t: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, store: &ParamStore) -> Self {
        AdamW {
            cfg,
            m: (0..store.len()).map(|_| None).collect(),
            v: (0..store.len()).map(|_| None).collect(),
            t: 0,
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
    ) -> Result<()> {
        if !(lr > 0.0) {
            return Err(CoreError::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for id in store.iter_ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = &grads[id.0] else { continue };
            let slot = id.0;
            let p = store.get_mut(id);
            let m = self.m[slot].get_or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self.v[slot].get_or_insert_with(|| Tensor::zeros(p.shape()));
            for (((pv, mv), vv), gv) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mv = self.cfg.beta1 * *mv + (1.0 - self.cfg.beta1) * gv;
                *vv = self.cfg.beta2 * *vv + (1.0 - self.cfg.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= lr * (m_hat / (v_hat.sqrt() + self.cfg.eps) + self.cfg.weight_decay * *pv);
            }
        }
        Ok(())
    }
}

/// Cosine annealing: lr0 (1 + cos(pi step / total)) / 2.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(CoreError::InvalidArgument(
            "cosine schedule over zero steps".into(),
        ));
    }
    if step > total {
        return Err(CoreError::InvalidArgument(format!(
            "schedule step {step} past total {total}"
        )));
    }
    Ok(lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store
            .register("p", Tensor::from_vec(&[1], vec![value]).unwrap(), true)
            .unwrap();
        store
    }

    #[test]
    fn sgd_zero_grad_is_identity() {
        let mut store = single_param(1.5);
        let mut opt = Sgd::new(
            SgdConfig {
                momentum: 0.0,
                weight_decay: 0.0,
            },
            &store,
        );
        let grads = vec![Some(Tensor::from_vec(&[1], vec![0.0]).unwrap())];
        opt.step(&mut store, &grads, 0.1).unwrap();
        assert_eq!(store.entries()[0].value.data()[0], 1.5);
    }

    #[test]
    fn sgd_plain_step() {
        let mut store = single_param(1.0);
        let mut opt = Sgd::new(
            SgdConfig {
                momentum: 0.0,
                weight_decay: 0.0,
            },
            &store,
        );
        let grads = vec![Some(Tensor::from_vec(&[1], vec![1.0]).unwrap())];
        opt.step(&mut store, &grads, 0.1).unwrap();
        assert!((store.entries()[0].value.data()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adamw_single_step_matches_hand_formula() {
        let (p0, g, lr, wd) = (2.0, 0.3, 0.05, 0.01);
        let cfg = AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        };
        let mut store = single_param(p0);
        let mut opt = AdamW::new(cfg, &store);
        let grads = vec![Some(Tensor::from_vec(&[1], vec![g]).unwrap())];
        opt.step(&mut store, &grads, lr).unwrap();
        // Hand evaluation of the update rule at t=1.
        let m = (1.0 - cfg.beta1) * g;
        let v = (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        let want = p0 - lr * (m_hat / (v_hat.sqrt() + cfg.eps) + wd * p0);
        let got = store.entries()[0].value.data()[0];
        assert!((got - want).abs() < 1e-14, "got {got}, want {want}");
    }

    #[test]
    fn nonpositive_learning_rate_rejected() {
        let mut store = single_param(1.0);
        let mut sgd = Sgd::new(SgdConfig::default(), &store);
        let grads = vec![Some(Tensor::from_vec(&[1], vec![1.0]).unwrap())];
        assert!(sgd.step(&mut store, &grads, 0.0).is_err());
        let mut adam = AdamW::new(AdamWConfig::default(), &store);
        assert!(adam.step(&mut store, &grads, -0.1).is_err());
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 0.4).unwrap(), 0.4);
        assert!(cosine_lr(100, 100, 0.4).unwrap().abs() < 1e-16);
        assert!((cosine_lr(50, 100, 0.4).unwrap() - 0.2).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.4).is_err());
        assert!(cosine_lr(101, 100, 0.4).is_err());
    }
}
