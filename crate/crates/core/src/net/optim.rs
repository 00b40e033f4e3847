//! Adam, the polynomial learning-rate schedule and the EMA teacher update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut OptimState,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || state.m.len() != state.v.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len().min(state.m.len()).min(state.v.len()),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// `base * (1 - iter/total)^power`, zero from `iter >= total` on.
pub fn poly_lr(base: f64, iter: u64, total: u64, power: f64) -> f64 {
    if iter >= total {
        return 0.0;
    }
    base * (1.0 - iter as f64 / total as f64).powf(power)
}

/// `theta_t <- alpha * theta_t + (1 - alpha) * theta_s`.
pub fn ema_update(theta_t: &mut [f64], theta_s: &[f64], alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("ema alpha {alpha} outside [0, 1]")));
    }
    if theta_t.len() != theta_s.len() {
        return Err(Error::LengthMismatch {
            expected: theta_t.len(),
            actual: theta_s.len(),
        });
    }
    for (t, &s) in theta_t.iter_mut().zip(theta_s) {
        *t = alpha * *t + (1.0 - alpha) * s;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_counts_step_only() {
        let mut p = vec![0.5, -1.0];
        let mut st = OptimState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut st, 0.1, AdamConfig::default()).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut st = OptimState::new(3);
        adam_step(&mut p, &[3.0, -0.02, 1e3], &mut st, 0.01, AdamConfig::default()).unwrap();
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-6);
        assert!((p[2] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn quadratic_trajectory_matches_scalar_recursion() {
        // f(x) = (x - 3)^2, g = 2(x - 3)
        let cfg = AdamConfig::default();
        let lr = 0.1;
        let mut p = vec![0.0];
        let mut st = OptimState::new(1);
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * (p[0] - 3.0);
            adam_step(&mut p, &[g], &mut st, lr, cfg).unwrap();
            let gr = 2.0 * (x - 3.0);
            m = 0.9 * m + (1.0 - 0.9) * gr;
            v = 0.999 * v + (1.0 - 0.999) * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            x -= lr * mh / (vh.sqrt() + 1e-8);
            assert_eq!(p[0], x);
        }
        assert!((x - 0.3).abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![0.0];
        let mut st = OptimState::new(1);
        assert!(adam_step(&mut p, &[f64::NAN], &mut st, 0.1, AdamConfig::default()).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn poly_schedule_points() {
        assert_eq!(poly_lr(2.5e-4, 0, 1000, 0.9), 2.5e-4);
        assert_eq!(poly_lr(2.5e-4, 1000, 1000, 0.9), 0.0);
        assert!((poly_lr(1.0, 500, 1000, 0.9) - 0.5f64.powf(0.9)).abs() < 1e-15);
        assert!((0.5f64.powf(0.9) - 0.5359).abs() < 1e-4);
        let lrs: Vec<f64> = (0..=10).map(|i| poly_lr(1.0, i, 10, 0.9)).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ema_fixed_point_and_copy() {
        let s = vec![0.3, -0.2];
        let mut t = s.clone();
        ema_update(&mut t, &s, 0.99).unwrap();
        assert_eq!(t, s);
        let mut t = vec![5.0, 5.0];
        ema_update(&mut t, &s, 0.0).unwrap();
        assert_eq!(t, s);
        assert!(ema_update(&mut t, &s, 1.5).is_err());
    }

    #[test]
    fn ema_geometric_decay() {
        let s = vec![0.1, -0.4, 0.25];
        let mut t = vec![1.0, 0.5, -0.75];
        let dist = |t: &[f64]| t.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let d0 = dist(&t);
        for _ in 0..10 {
            ema_update(&mut t, &s, 0.99).unwrap();
        }
        assert!((dist(&t) - 0.99f64.powi(10) * d0).abs() < 1e-12);
    }
}
