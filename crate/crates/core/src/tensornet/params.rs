use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamConfig, StepOutcome};
use super::layers::LayerSpec;
use crate::{Error, Result};

/// Seeded generator used everywhere randomness is needed.
///
/// ChaCha8 is a counter-based stream cipher: the stream for a seed is fixed by
/// the algorithm, so draws are identical on every platform.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Flat parameter storage for a list of layers, plus Adam state.
///
/// Dense layers own `fan_in·fan_out` weights (row-major, `fan_in × fan_out`)
/// followed by `fan_out` biases; batchnorm layers own `width` gains followed
/// by `width` biases; activations own nothing.
///
/// Values are held in `f64` but every update is rounded to the nearest `f32`,
/// so a checkpoint (which stores `f32`) captures the full optimizer state and
/// resumed training continues bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub params: Vec<f64>,
    pub offsets: Vec<usize>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Parameter slice owned by layer `idx`.
    pub fn layer(&self, idx: usize) -> &[f64] {
        let (a, b) = self.bounds(idx);
        &self.params[a..b]
    }

    pub fn bounds(&self, idx: usize) -> (usize, usize) {
        let end = self.offsets.get(idx + 1).copied().unwrap_or(self.params.len());
        (self.offsets[idx], end)
    }

    /// Applies one Adam update and rounds parameters and moments to `f32`.
    pub fn apply_adam(&mut self, grads: &[f64], lr: f64, cfg: &AdamConfig) -> Result<StepOutcome> {
        let outcome = adam_step(
            &mut self.params,
            grads,
            &mut self.m,
            &mut self.v,
            &mut self.step,
            lr,
            cfg,
        )?;
        if outcome == StepOutcome::Applied {
            for buf in [&mut self.params, &mut self.m, &mut self.v] {
                buf.iter_mut().for_each(|x| *x = *x as f32 as f64);
            }
        }
        Ok(outcome)
    }
}

/// He-uniform dense weights (bound `sqrt(6 / fan_in)`), zero biases, unit
/// batchnorm gains. Weights are drawn layer by layer in storage order.
pub fn init_params(specs: &[LayerSpec], seed: u64) -> Result<ParamStore> {
    let mut rng = seeded_rng(seed);
    let mut params = Vec::new();
    let mut offsets = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate()?;
        offsets.push(params.len());
        match *spec {
            LayerSpec::Dense { fan_in, fan_out } => {
                let bound = (6.0 / fan_in as f64).sqrt();
                params.extend((0..fan_in * fan_out).map(|_| {
                    let w: f64 = rng.gen_range(-bound..bound);
                    w as f32 as f64
                }));
                params.extend(std::iter::repeat_n(0.0, fan_out));
            }
            LayerSpec::Batchnorm { width, .. } => {
                params.extend(std::iter::repeat_n(1.0, width));
                params.extend(std::iter::repeat_n(0.0, width));
            }
            _ => {}
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("initial parameters".into()));
    }
    let n = params.len();
    Ok(ParamStore {
        params,
        offsets,
        m: vec![0.0; n],
        v: vec![0.0; n],
        step: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<LayerSpec> {
        vec![
            LayerSpec::dense(8, 16),
            LayerSpec::batchnorm(16),
            LayerSpec::Relu { width: 16 },
            LayerSpec::dense(16, 3),
        ]
    }

    #[test]
    fn same_seed_same_store() {
        assert_eq!(init_params(&specs(), 9).unwrap(), init_params(&specs(), 9).unwrap());
        assert_ne!(init_params(&specs(), 9).unwrap(), init_params(&specs(), 10).unwrap());
    }

    #[test]
    fn layout_and_initial_values() {
        let store = init_params(&specs(), 1).unwrap();
        assert_eq!(store.len(), 8 * 16 + 16 + 32 + 16 * 3 + 3);
        let dense = store.layer(0);
        assert!(dense[128..].iter().all(|b| *b == 0.0), "biases start at zero");
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(dense[..128].iter().all(|w| w.abs() <= bound));
        let bn = store.layer(1);
        assert!(bn[..16].iter().all(|g| *g == 1.0) && bn[16..].iter().all(|b| *b == 0.0));
        assert!(store.layer(2).is_empty());
        assert!(store.layer(3)[48..].iter().all(|b| *b == 0.0));
    }

    #[test]
    fn he_uniform_mean_is_centred() {
        let fan_in = 50;
        let store = init_params(&[LayerSpec::dense(fan_in, 2000)], 3).unwrap();
        let w = &store.layer(0)[..fan_in * 2000];
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        // uniform(-b, b) has standard deviation b/sqrt(3)
        let sigma = (6.0 / fan_in as f64).sqrt() / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3σ {}", 3.0 * sigma);
    }

    #[test]
    fn updates_are_f32_representable() {
        let mut store = init_params(&[LayerSpec::dense(3, 2)], 5).unwrap();
        let grads: Vec<f64> = (0..store.len()).map(|i| 0.1 * i as f64 - 0.3).collect();
        store.apply_adam(&grads, 1e-3, &AdamConfig::default()).unwrap();
        for buf in [&store.params, &store.m, &store.v] {
            assert!(buf.iter().all(|x| (*x as f32 as f64) == *x));
        }
        assert_eq!(store.step, 1);
    }
}
