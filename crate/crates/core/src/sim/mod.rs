//! Synthetic stand-in for a backbone with branches: inputs carry a latent
//! difficulty, and each exit's quality score grows with how far that
//! difficulty exceeds the exit's capacity.
//!
//! ```text
//! d       = softplus(w . x)
//! score_e = link_scale * softplus(d - capacity_e) + |eps_e|,  eps_e ~ N(0, noise_sd)
//! ```
//!
//! `eps_e` is drawn from a stream keyed by (seed, input bits, exit), so a
//! score depends only on the input and the exit, never on call order.

mod dataset;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    load_dataset, read_dataset, save_dataset, write_dataset, Dataset, Sample, DATASET_MAGIC,
};

/// Derive an independent seed for a named consumer of the master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the master seed
    let h = label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    });
    splitmix(master ^ splitmix(h))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub input_dim: usize,
    /// Trailing input coordinates that play the role of the generator noise.
    pub noise_dim: usize,
    /// One per branch, strictly ascending.
    pub exit_capacities: Vec<f64>,
    pub difficulty_weights: Vec<f64>,
    pub noise_sd: f64,
    pub link_scale: f64,
    /// Input coordinate reported as the per-input attribute.
    pub attribute_index: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    /// 8 condition + 8 noise coordinates, four exits; difficulty is driven
    /// mostly by coordinate 0, the attribute.
    fn default() -> Self {
        let input_dim = 16;
        let mut difficulty_weights: Vec<f64> = (0..input_dim)
            .map(|i| if i % 2 == 0 { 0.2 } else { -0.2 })
            .collect();
        difficulty_weights[0] = 1.5;
        Self {
            input_dim,
            noise_dim: 8,
            exit_capacities: vec![0.5, 1.0, 1.5, 2.0],
            difficulty_weights,
            noise_sd: 0.02,
            link_scale: 1.0,
            attribute_index: 0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.input_dim == 0 {
            return bad("input_dim must be >= 1".into());
        }
        if self.noise_dim >= self.input_dim {
            return bad("noise_dim must leave at least one condition coordinate".into());
        }
        if self.difficulty_weights.len() != self.input_dim {
            return bad(format!(
                "{} difficulty weights for input_dim {}",
                self.difficulty_weights.len(),
                self.input_dim
            ));
        }
        if self.difficulty_weights.iter().any(|w| !w.is_finite()) {
            return bad("difficulty weights must be finite".into());
        }
        if self.exit_capacities.is_empty()
            || self
                .exit_capacities
                .iter()
                .any(|c| !(c.is_finite() && *c > 0.0))
        {
            return bad("exit capacities must be positive and finite".into());
        }
        if self.exit_capacities.windows(2).any(|w| w[1] <= w[0]) {
            return bad("exit capacities must be strictly ascending".into());
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be >= 0".into());
        }
        if !(self.link_scale > 0.0 && self.link_scale.is_finite()) {
            return bad("link_scale must be positive".into());
        }
        if self.attribute_index >= self.input_dim {
            return bad("attribute_index outside the input".into());
        }
        Ok(())
    }

    pub fn exits(&self) -> usize {
        self.exit_capacities.len()
    }

    pub fn condition_dim(&self) -> usize {
        self.input_dim - self.noise_dim
    }
}

/// An input with its recorded attribute coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimInput {
    pub features: Vec<f64>,
    pub attribute: f64,
}

impl AsRef<[f64]> for SimInput {
    fn as_ref(&self) -> &[f64] {
        &self.features
    }
}

#[derive(Clone, Debug)]
pub struct QualityOracle {
    config: OracleConfig,
    rng: ChaCha8Rng,
}

impl QualityOracle {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "inputs"));
        Ok(Self { config, rng })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn exits(&self) -> usize {
        self.config.exits()
    }

    /// Draw `n` standard-normal inputs from the oracle's input stream.
    pub fn sample_inputs(&mut self, n: usize) -> Vec<SimInput> {
        let dim = self.config.input_dim;
        (0..n)
            .map(|_| {
                let features: Vec<f64> = (0..dim)
                    .map(|_| StandardNormal.sample(&mut self.rng))
                    .collect();
                let attribute = features[self.config.attribute_index];
                SimInput {
                    features,
                    attribute,
                }
            })
            .collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.config.input_dim {
            return Err(Error::shape(format!(
                "input has {} features, oracle expects {}",
                x.len(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    pub fn difficulty(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let dot: f64 = self
            .config
            .difficulty_weights
            .iter()
            .zip(x)
            .map(|(w, v)| w * v)
            .sum();
        Ok(softplus(dot))
    }

    /// Score of every branch for `x` (lower is better).
    pub fn true_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.difficulty(x)?;
        let cfg = &self.config;
        let input_key = x.iter().fold(derive_seed(cfg.seed, "score-noise"), |h, v| {
            splitmix(h ^ v.to_bits())
        });
        let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg
            .exit_capacities
            .iter()
            .enumerate()
            .map(|(e, cap)| {
                let base = cfg.link_scale * softplus(d - cap);
                let eps = if cfg.noise_sd > 0.0 {
                    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(input_key ^ e as u64));
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                (base + eps.abs()).max(f64::MIN_POSITIVE)
            })
            .collect())
    }

    /// Cross `n_conditions` condition vectors with `n_noise` fixed noise
    /// vectors and split the result, `val_fraction` of it held out.
    ///
    /// All values are rounded to f32 so the dataset file reproduces them
    /// exactly.
    pub fn make_dataset_split(
        &self,
        n_conditions: usize,
        n_noise: usize,
        val_fraction: f64,
    ) -> Result<Dataset> {
        if n_conditions == 0 || n_noise == 0 {
            return Err(Error::Argument("dataset needs positive counts".into()));
        }
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Argument("val_fraction must lie in [0, 1)".into()));
        }
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dataset"));
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    f64::from(v as f32)
                })
                .collect()
        };
        let conditions: Vec<Vec<f64>> = (0..n_conditions)
            .map(|_| draw(cfg.condition_dim()))
            .collect();
        let noises: Vec<Vec<f64>> = (0..n_noise).map(|_| draw(cfg.noise_dim)).collect();

        let mut samples = Vec::with_capacity(n_conditions * n_noise);
        for c in &conditions {
            for z in &noises {
                let input: Vec<f64> = c.iter().chain(z).copied().collect();
                let scores = self
                    .true_scores(&input)?
                    .into_iter()
                    .map(|s| f64::from((s as f32).max(f32::MIN_POSITIVE)))
                    .collect();
                let attribute = input[cfg.attribute_index];
                samples.push(Sample {
                    input,
                    scores,
                    attribute,
                });
            }
        }

        let mut split_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "split"));
        rand::seq::SliceRandom::shuffle(samples.as_mut_slice(), &mut split_rng);
        let n_val = (samples.len() as f64 * val_fraction).round() as usize;
        let train = samples.split_off(n_val);
        Ok(Dataset {
            input_dim: cfg.input_dim,
            exits: cfg.exits(),
            train,
            val: samples,
        })
    }

    /// [`make_dataset_split`](Self::make_dataset_split) with a 90/10 split.
    pub fn make_dataset(&self, n_conditions: usize, n_noise: usize) -> Result<Dataset> {
        self.make_dataset_split(n_conditions, n_noise, 0.1)
    }
}
