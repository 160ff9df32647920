//! Model configuration, parameter layout and initialization.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::decoders::{self, DecoderId};
use crate::diff::{Array, ParamStore, Real};
use crate::encoders::{self, EncoderKind};
use crate::error::{Error, Result};
use crate::latent;

pub const EMBEDDING: &str = "embedding";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// 1000-unit recurrent layers, 200-dim embeddings.
    Paper,
    /// 128-unit recurrent layers, 64-dim embeddings, 16-dim latent.
    Desk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    DailyDialog,
    MovieTriples,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub z_dim: usize,
    pub layers: usize,
}

impl ModelConfig {
    pub fn for_profile(profile: Profile, dataset: Dataset, vocab_size: usize) -> Self {
        match profile {
            Profile::Paper => Self {
                vocab_size,
                embed_dim: 200,
                hidden_dim: 1000,
                z_dim: match dataset {
                    Dataset::MovieTriples => 100,
                    Dataset::DailyDialog | Dataset::Custom => 160,
                },
                layers: 2,
            },
            Profile::Desk => Self {
                vocab_size,
                embed_dim: 64,
                hidden_dim: 128,
                z_dim: 16,
                layers: 2,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.embed_dim == 0
            || self.hidden_dim == 0
            || self.z_dim == 0
            || self.layers == 0
        {
            return Err(Error::InvalidArgument(format!("degenerate model config {:?}", self)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Uniform(f64),
    Normal(f64),
    /// Uniform with range sqrt(6 / (fan_in + fan_out)), for 2-D maps.
    Glorot,
    Zeros,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: String, shape: Vec<usize>, init: Init) -> Self {
        Self { name, shape, init }
    }
}

/// Every parameter of the model with its shape and initializer.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    specs.push(ParamSpec::new(
        EMBEDDING.into(),
        alloc::vec![cfg.vocab_size, cfg.embed_dim],
        Init::Normal(1.0),
    ));
    for kind in [EncoderKind::Utterance, EncoderKind::Context] {
        specs.extend(encoders::param_specs(cfg, kind));
    }
    specs.extend(latent::param_specs(cfg));
    for id in DecoderId::ALL {
        specs.extend(decoders::param_specs(cfg, id));
    }
    specs
}

fn init_array<T: Real>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Array<T> {
    match spec.init {
        Init::Zeros => Array::zeros(&spec.shape),
        Init::Uniform(r) => Array::from_fn(&spec.shape, |_| T::lit(rng.random_range(-r..r))),
        Init::Glorot => {
            let fan: usize = spec.shape.iter().sum();
            let r = (6.0 / fan as f64).sqrt();
            Array::from_fn(&spec.shape, |_| T::lit(rng.random_range(-r..r)))
        }
        Init::Normal(sd) => {
            let n = Normal::new(0.0, sd).expect("positive std");
            Array::from_fn(&spec.shape, |_| T::lit(n.sample(rng)))
        }
    }
}

/// Parameters plus the configuration and vocabulary they were built for.
#[derive(Debug, Clone)]
pub struct MirrorModel<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore<T>,
}

impl<T: Real> MirrorModel<T> {
    /// Freshly initialized model; the same seed gives identical parameters.
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::VocabularyMismatch {
                batch: vocab.len(),
                model: config.vocab_size,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for spec in param_specs(&config) {
            let a = init_array(&spec, &mut rng);
            params.insert(spec.name, a);
        }
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    /// Assemble from stored parameters, checking names and shapes against
    /// the configuration.
    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::VocabularyMismatch {
                batch: vocab.len(),
                model: config.vocab_size,
            });
        }
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter arrays, found {}",
                specs.len(),
                params.len()
            )));
        }
        for spec in &specs {
            let a = params
                .get(&spec.name)
                .ok_or_else(|| Error::UnknownParameter(spec.name.clone()))?;
            if a.shape() != spec.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "load",
                    detail: format!("{}: {:?} vs {:?}", spec.name, a.shape(), spec.shape),
                });
            }
        }
        Ok(Self {
            config,
            vocab,
            params,
        })
    }

    /// Zero the vocabulary projections of all four decoders, which makes
    /// every next-token distribution uniform.
    pub fn zero_output_projections(&mut self) {
        for id in DecoderId::ALL {
            for name in [id.output_weight(), id.output_bias()] {
                if let Some(a) = self.params.get_mut(&name) {
                    a.data_mut().iter_mut().for_each(|v| *v = T::zero());
                }
            }
        }
    }

    pub fn cast<U: Real>(&self) -> MirrorModel<U> {
        MirrorModel {
            config: self.config,
            vocab: self.vocab.clone(),
            params: self.params.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::from_tokens((0..n).map(|i| i.to_string()).collect()).unwrap()
    }

    #[test]
    fn paper_profiles() {
        let dd = ModelConfig::for_profile(Profile::Paper, Dataset::DailyDialog, 20_005);
        assert_eq!((dd.hidden_dim, dd.embed_dim, dd.z_dim, dd.layers), (1000, 200, 160, 2));
        let mt = ModelConfig::for_profile(Profile::Paper, Dataset::MovieTriples, 20_005);
        assert_eq!(mt.z_dim, 100);
        let desk = ModelConfig::for_profile(Profile::Desk, Dataset::Custom, 10);
        assert_eq!((desk.hidden_dim, desk.embed_dim, desk.z_dim), (128, 64, 16));
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = ModelConfig {
            vocab_size: 9,
            embed_dim: 3,
            hidden_dim: 4,
            z_dim: 2,
            layers: 2,
        };
        let a = MirrorModel::<f32>::new(cfg, vocab(4), 7).unwrap();
        let b = MirrorModel::<f32>::new(cfg, vocab(4), 7).unwrap();
        for ((na, xa), (nb, xb)) in a.params.iter().zip(b.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(xa, xb);
        }
        assert!(MirrorModel::<f32>::new(cfg, vocab(5), 7).is_err());
    }

    #[test]
    fn recurrent_weights_within_init_range() {
        let cfg = ModelConfig {
            vocab_size: 9,
            embed_dim: 3,
            hidden_dim: 4,
            z_dim: 2,
            layers: 2,
        };
        let m = MirrorModel::<f64>::new(cfg, vocab(4), 1).unwrap();
        let w = m.params.get("enc_utt.l0.w").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.08));
        assert!(w.data().iter().any(|v| *v != 0.0));
    }
}
