use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adam hyperparameters.
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

/// What a call to [`adam_step`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// A gradient entry was NaN or infinite; nothing was modified.
    Skipped {
        index: usize,
    },
}

/// One bias-corrected Adam update. `step` is the number of updates applied
/// so far and is incremented when the update goes through.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: &mut u64,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<StepOutcome> {
    let n = params.len();
    if grads.len() != n || m.len() != n || v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "adam: {} params, {} grads, {} / {} moments",
            n,
            grads.len(),
            m.len(),
            v.len()
        )));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Ok(StepOutcome::Skipped { index });
    }
    let t = *step + 1;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..n {
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    *step = t;
    Ok(StepOutcome::Applied)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.25, 3.0];
        let before = p.clone();
        let (mut m, mut v, mut t) = (vec![0.0; 3], vec![0.0; 3], 0);
        adam_step(&mut p, &[0.0; 3], &mut m, &mut v, &mut t, 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p, before);
        assert_eq!(t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = vec![0.0];
        let (mut m, mut v, mut t) = (vec![0.0], vec![0.0], 0);
        adam_step(&mut p, &[1.0], &mut m, &mut v, &mut t, 1e-3, &AdamConfig::default()).unwrap();
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expect).abs() < 1e-12);
        assert!((p[0] + 9.99999990e-4).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = vec![1.0, 2.0];
        let (mut m, mut v, mut t) = (vec![0.0; 2], vec![0.0; 2], 4);
        let out = adam_step(
            &mut p,
            &[0.1, f64::NAN],
            &mut m,
            &mut v,
            &mut t,
            1e-3,
            &AdamConfig::default(),
        )
        .unwrap();
        assert_eq!(out, StepOutcome::Skipped { index: 1 });
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(t, 4);
    }
}
