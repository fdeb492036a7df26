//! Coordinate network mapping encoded footprints to acoustic parameters.

mod adam;
mod mlp;

pub use adam::{exponential_lr, AdamState, BETA1, BETA2, EPSILON};
pub use mlp::{layer_ranges, param_count, sigmoid, softplus, ForwardCache, Mlp, Scalar, OUTPUTS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{feature_len, SceneBounds};
use crate::error::{Error, Result};
use crate::frustum::FrustumGaussian;

/// Acoustic parameters at a query footprint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcousticSample {
    pub attenuation_per_mm: f64,
    pub backscatter: f64,
}

impl AcousticSample {
    pub fn new(attenuation_per_mm: f64, backscatter: f64) -> Result<Self> {
        if !(attenuation_per_mm >= 0.0 && (0.0..=1.0).contains(&backscatter)) {
            return Err(Error::Domain(format!(
                "acoustic sample out of range: attenuation {attenuation_per_mm}, backscatter {backscatter}"
            )));
        }
        Ok(Self {
            attenuation_per_mm,
            backscatter,
        })
    }
}

/// Anything that can be queried with frustum footprints.
pub trait AcousticField: Sync {
    fn query(&self, gaussians: &[FrustumGaussian]) -> Vec<AcousticSample>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldConfig {
    /// Hidden ReLU layers.
    pub num_layers: usize,
    pub hidden_width: usize,
    pub num_bands: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl FieldConfig {
    /// 4 × 64, 8 bands: CPU-tractable default.
    pub fn desk() -> Self {
        Self {
            num_layers: 4,
            hidden_width: 64,
            num_bands: 8,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    /// 8 × 256, 10 bands.
    pub fn large() -> Self {
        Self {
            num_layers: 8,
            hidden_width: 256,
            num_bands: 10,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers < 2 {
            return Err(Error::Config("num_layers must be at least 2".into()));
        }
        if self.hidden_width < 4 {
            return Err(Error::Config("hidden_width must be at least 4".into()));
        }
        if self.num_bands < 1 {
            return Err(Error::Config("num_bands must be at least 1".into()));
        }
        Ok(())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![feature_len(self.num_bands)];
        w.extend(std::iter::repeat_n(self.hidden_width, self.num_layers));
        w.push(OUTPUTS);
        w
    }

    pub fn param_count(&self) -> usize {
        param_count(&self.widths())
    }
}

/// Network weights plus optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    pub config: FieldConfig,
    pub mlp: Mlp<f32>,
    pub adam: AdamState,
}

impl FieldParams {
    pub fn step(&self) -> u64 {
        self.adam.step
    }

    pub fn all_finite(&self) -> bool {
        self.mlp.params().iter().all(|v| v.is_finite())
    }
}

/// Uniform Glorot weights (`±√(6/(fan_in+fan_out))`), zero biases, zero moments.
pub fn init(config: &FieldConfig) -> Result<FieldParams> {
    config.validate()?;
    Ok(FieldParams {
        config: config.clone(),
        mlp: init_mlp(config),
        adam: AdamState::new(config.param_count()),
    })
}

/// Same initialization at any precision; values agree up to rounding.
pub fn init_mlp<T: Scalar>(config: &FieldConfig) -> Mlp<T> {
    let widths = config.widths();
    let mut mlp = Mlp::<T>::zeros(widths.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for l in 0..widths.len() - 1 {
        let limit = (6.0 / (widths[l] + widths[l + 1]) as f64).sqrt();
        let (wr, _) = layer_ranges(&widths, l);
        for w in &mut mlp.params_mut()[wr] {
            *w = T::from(rng.random_range(-limit..limit)).unwrap();
        }
    }
    mlp
}

/// Applies one optimizer step, rejecting non-finite gradients.
pub fn optimizer_step(params: &mut FieldParams, gradients: &[f32], lr: f64) -> Result<()> {
    if gradients.len() != params.mlp.params().len() {
        return Err(Error::Config(format!(
            "gradient length {} does not match parameter count {}",
            gradients.len(),
            params.mlp.params().len()
        )));
    }
    if let Some(i) = gradients.iter().position(|g| !g.is_finite()) {
        let widths = params.mlp.widths().to_vec();
        let layer = (0..widths.len() - 1)
            .find_map(|l| {
                let (w, b) = layer_ranges(&widths, l);
                if w.contains(&i) {
                    Some(format!("layer {l} weights"))
                } else if b.contains(&i) {
                    Some(format!("layer {l} bias"))
                } else {
                    None
                }
            })
            .unwrap_or_default();
        return Err(Error::Training(format!(
            "non-finite gradient in {layer} (index {i})"
        )));
    }
    let FieldParams { mlp, adam, .. } = params;
    adam.update(mlp.params_mut(), gradients, lr);
    Ok(())
}

/// Rows per inference chunk.
const INFER_CHUNK: usize = 4096;

/// A trained network bound to the scene normalization it was trained with.
#[derive(Clone, Debug)]
pub struct NeuralField {
    pub mlp: Mlp<f32>,
    pub bounds: SceneBounds,
    pub num_bands: usize,
}

impl NeuralField {
    pub fn new(mlp: Mlp<f32>, bounds: SceneBounds, num_bands: usize) -> Result<Self> {
        if mlp.input_len() != feature_len(num_bands) {
            return Err(Error::Config(format!(
                "network input width {} does not match {num_bands} bands",
                mlp.input_len()
            )));
        }
        Ok(Self {
            mlp,
            bounds,
            num_bands,
        })
    }

    pub fn encode_batch(&self, gaussians: &[FrustumGaussian]) -> Vec<f32> {
        let width = feature_len(self.num_bands);
        let mut features = vec![0.0f32; gaussians.len() * width];
        for (g, row) in gaussians.iter().zip(features.chunks_exact_mut(width)) {
            self.bounds.encode_gaussian(g, self.num_bands, row);
        }
        features
    }
}

impl AcousticField for NeuralField {
    fn query(&self, gaussians: &[FrustumGaussian]) -> Vec<AcousticSample> {
        gaussians
            .par_chunks(INFER_CHUNK)
            .flat_map_iter(|chunk| {
                let x = self.encode_batch(chunk);
                self.mlp
                    .infer(&x, chunk.len())
                    .expect("feature width checked at construction")
                    .into_iter()
                    .map(|(a, b)| AcousticSample {
                        attenuation_per_mm: a as f64,
                        backscatter: b as f64,
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn large_parameter_count() {
        assert_eq!(FieldConfig::large().param_count(), 476_674);
        assert_eq!(60 * 256 + 256 + 7 * (256 * 256 + 256) + 256 * 2 + 2, 476_674);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut cfg = FieldConfig::desk();
        let a = init(&cfg).unwrap();
        let b = init(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 1;
        let c = init(&cfg).unwrap();
        assert_ne!(a.mlp.params(), c.mlp.params());
        let widths = cfg.widths();
        for l in 0..widths.len() - 1 {
            let (w, bias) = layer_ranges(&widths, l);
            let limit = (6.0 / (widths[l] + widths[l + 1]) as f32).sqrt();
            assert!(c.mlp.params()[w].iter().all(|v| v.abs() <= limit));
            assert!(c.mlp.params()[bias].iter().all(|v| *v == 0.0));
        }
        assert!(c.adam.m.iter().chain(&c.adam.v).all(|v| *v == 0.0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = FieldConfig::desk();
        cfg.num_layers = 1;
        assert!(init(&cfg).is_err());
        cfg.num_layers = 2;
        cfg.hidden_width = 3;
        assert!(init(&cfg).is_err());
    }

    #[test]
    fn seeded_network_responds_to_input_scale() {
        let params = init(&FieldConfig::desk()).unwrap();
        let width = params.mlp.input_len();
        let x: Vec<f32> = (0..width).map(|i| ((i as f32) * 0.37).sin()).collect();
        let x2: Vec<f32> = x.iter().map(|v| 2.0 * v).collect();
        let a = params.mlp.infer(&x, 1).unwrap();
        let b = params.mlp.infer(&x2, 1).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut params = init(&FieldConfig::desk()).unwrap();
        let mut g = vec![0.0f32; params.mlp.params().len()];
        let (_, bias) = layer_ranges(params.mlp.widths(), 2);
        g[bias.start + 1] = f32::NAN;
        let err = optimizer_step(&mut params, &g, 1e-3).unwrap_err().to_string();
        assert!(err.contains("layer 2 bias"), "{err}");
    }

    #[test]
    fn optimizer_steps_are_reproducible() {
        let run = || {
            let mut p = init(&FieldConfig::desk()).unwrap();
            let g: Vec<f32> = (0..p.mlp.params().len()).map(|i| ((i % 17) as f32 - 8.0) * 1e-3).collect();
            optimizer_step(&mut p, &g, 1e-3).unwrap();
            optimizer_step(&mut p, &g, 1e-3).unwrap();
            p
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.step(), 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn heads_stay_in_range(seed in 0u64..1000, scale in 0.1f32..50.0, x in -5.0f32..5.0) {
            let cfg = FieldConfig { num_layers: 2, hidden_width: 8, num_bands: 2, activation: Activation::Relu, seed };
            let mut mlp = init_mlp::<f32>(&cfg);
            for p in mlp.params_mut() {
                *p *= scale;
            }
            let feats: Vec<f32> = (0..12).map(|i| x * (i as f32 - 6.0)).collect();
            for (a, b) in mlp.infer(&feats, 1).unwrap() {
                prop_assert!(a.is_finite() && a >= 0.0);
                prop_assert!((0.0..=1.0).contains(&b));
            }
        }
    }
}
