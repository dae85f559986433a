use super::{NumError, ParamStore};

/// Adam hyperparameters. `l2` is weight decay added to the raw gradient
/// (`g += l2 * p`) before the moment updates, so it is not part of any
/// loss value reported elsewhere.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 0.0,
        }
    }
}

/// One optimizer step over every parameter in the store, using the
/// gradients currently held there. `t` is the 1-based step count used
/// for bias correction.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig, t: usize) -> Result<(), NumError> {
    if cfg.lr <= 0.0 {
        return Err(NumError::Config(format!(
            "learning rate must be positive, got {}",
            cfg.lr
        )));
    }
    if t == 0 {
        return Err(NumError::Config("step count starts at 1".into()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);

    for (_, p) in store.entries_mut() {
        let n = p.value.numel();
        for i in 0..n {
            let g = p.grad.data()[i] + cfg.l2 * p.value.data()[i];
            let m = cfg.beta1 * p.m.data()[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.v.data()[i] + (1.0 - cfg.beta2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            p.value.data_mut()[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::{Array, Graph};
    use super::*;

    #[test]
    fn zero_grad_zero_l2_leaves_params_unchanged() {
        let mut store = ParamStore::new(7);
        store.init_uniform("w", &[3, 2], 0.5);
        let before = store.get("w").unwrap().clone();
        store.zero_grads();
        adam_step(&mut store, &AdamConfig::default(), 1).unwrap();
        let after = store.get("w").unwrap();
        assert_eq!(before.data(), after.data());
    }

    #[test]
    fn rejects_nonpositive_lr() {
        let mut store = ParamStore::new(7);
        store.init_zeros("w", &[2]);
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        assert!(adam_step(&mut store, &cfg, 1).is_err());
    }

    #[test]
    fn step_moves_against_gradient_sign() {
        let mut store = ParamStore::new(7);
        store.init_zeros("w", &[2]);
        {
            let mut g = Graph::new();
            let w = g.param(&store, "w").unwrap();
            let dir = g.constant(Array::from_vec(vec![1.0, -1.0]));
            let loss = g.dot(w, dir).unwrap();
            g.backward(loss, &mut store).unwrap();
        }
        adam_step(&mut store, &AdamConfig::default(), 1).unwrap();
        let w = store.get("w").unwrap();
        assert!(w.data()[0] < 0.0, "positive grad must decrease the param");
        assert!(w.data()[1] > 0.0, "negative grad must increase the param");
    }

    #[test]
    fn converges_on_quadratic_bowl() {
        // minimize sum((w - c)^2); after 500 steps at lr 0.05 the
        // iterate should sit within 1e-2 of the optimum.
        let mut store = ParamStore::new(7);
        store.init_zeros("w", &[3]);
        let target = Array::from_vec(vec![0.3, -0.7, 1.1]);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        for t in 1..=500 {
            let mut g = Graph::new();
            let w = g.param(&store, "w").unwrap();
            let c = g.constant(target.clone());
            let diff = g.sub(w, c).unwrap();
            let sq = g.mul(diff, diff).unwrap();
            let loss = g.sum(sq);
            g.backward(loss, &mut store).unwrap();
            adam_step(&mut store, &cfg, t).unwrap();
        }
        let w = store.get("w").unwrap();
        assert!(w.max_abs_diff(&target) < 1e-2, "final {:?}", w.data());
    }

    #[test]
    fn l2_decays_params_toward_zero_without_loss_gradient() {
        let mut store = ParamStore::new(7);
        store.init_uniform("w", &[4], 1.0);
        let before = store.get("w").unwrap().clone();
        store.zero_grads();
        let cfg = AdamConfig {
            l2: 1e-2,
            ..AdamConfig::default()
        };
        adam_step(&mut store, &cfg, 1).unwrap();
        let after = store.get("w").unwrap();
        for (b, a) in before.data().iter().zip(after.data()) {
            if *b != 0.0 {
                assert!(a.abs() < b.abs(), "decay must shrink magnitude");
                assert_eq!(a.signum(), b.signum());
            }
        }
    }
}
