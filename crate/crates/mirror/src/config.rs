//! Run settings resolved from defaults, an optional `key = value` file, and
//! command-line flags, in that order of precedence.
//!
//! ```text
//! # comments start with '#'
//! seed = 1234
//! profile = desk
//! mode = mirror
//! lr = 0.001
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use mirror_core::inference::{Strategy, ZMode};
use mirror_core::model::{Dataset, Profile};
use mirror_core::objective::LossMode;
use mirror_core::train::TrainConfig;
use serde::Serialize;

pub const DEFAULT_SEED: u64 = 1234;
pub const DATA_DIR_ENV: &str = "MIRROR_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Greedy,
    Beam,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub profile: Profile,
    pub mode: LossMode,
    pub dataset: Dataset,
    pub strategy: StrategyKind,
    pub k: usize,
    pub temperature: f64,
    pub z_mode: ZMode,
    pub port: u16,
    pub data_dir: Option<PathBuf>,
    pub lr: f64,
    pub lr_decay: f64,
    pub patience: usize,
    pub kl_ramp: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_len: usize,
    pub clip_norm: f64,
    pub vocab_size: usize,
    pub window: usize,
    pub gen_max_len: usize,
    pub context_turns: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: DEFAULT_SEED,
            profile: Profile::Desk,
            mode: LossMode::Mirror,
            dataset: Dataset::Custom,
            strategy: StrategyKind::Greedy,
            k: 5,
            temperature: 1.0,
            z_mode: ZMode::PriorMean,
            port: 8080,
            data_dir: None,
            lr: t.lr,
            lr_decay: t.lr_decay,
            patience: t.patience,
            kl_ramp: t.kl_ramp,
            batch_size: t.batch_size,
            epochs: t.max_epochs,
            max_len: t.max_len,
            clip_norm: t.clip_norm,
            vocab_size: mirror_core::corpus::DEFAULT_VOCAB_SIZE,
            window: 3,
            gen_max_len: 30,
            context_turns: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow::anyhow!("{} = {:?}: {}", key, v, e))
}

pub fn parse_profile(v: &str) -> Result<Profile> {
    match v {
        "paper" => Ok(Profile::Paper),
        "desk" => Ok(Profile::Desk),
        _ => bail!("unknown profile {:?} (paper, desk)", v),
    }
}

pub fn parse_dataset(v: &str) -> Result<Dataset> {
    match v {
        "dailydialog" => Ok(Dataset::DailyDialog),
        "movietriples" => Ok(Dataset::MovieTriples),
        "custom" => Ok(Dataset::Custom),
        _ => bail!("unknown dataset {:?} (dailydialog, movietriples, custom)", v),
    }
}

pub fn parse_z_mode(v: &str) -> Result<ZMode> {
    match v {
        "mean" | "prior-mean" => Ok(ZMode::PriorMean),
        "sample" | "prior-sample" => Ok(ZMode::PriorSample),
        _ => bail!("unknown z-mode {:?} (mean, sample)", v),
    }
}

pub fn parse_strategy(v: &str) -> Result<StrategyKind> {
    match v {
        "greedy" => Ok(StrategyKind::Greedy),
        "beam" => Ok(StrategyKind::Beam),
        "sample" => Ok(StrategyKind::Sample),
        _ => bail!("unknown strategy {:?} (greedy, beam, sample)", v),
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key.replace('-', "_").as_str() {
            "seed" => self.seed = parse(key, v)?,
            "profile" => self.profile = parse_profile(v)?,
            "mode" => self.mode = v.parse()?,
            "dataset" => self.dataset = parse_dataset(v)?,
            "strategy" => self.strategy = parse_strategy(v)?,
            "k" => self.k = parse(key, v)?,
            "temperature" => self.temperature = parse(key, v)?,
            "z_mode" => self.z_mode = parse_z_mode(v)?,
            "port" => self.port = parse(key, v)?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)),
            "lr" => self.lr = parse(key, v)?,
            "lr_decay" => self.lr_decay = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "kl_ramp" => self.kl_ramp = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "window" => self.window = parse(key, v)?,
            "gen_max_len" => self.gen_max_len = parse(key, v)?,
            "context_turns" => self.context_turns = parse(key, v)?,
            _ => bail!("unknown setting {:?}", key),
        }
        Ok(())
    }

    /// Apply `key = value` lines; blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("line {}: expected key = value", i + 1);
            };
            self.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn strategy(&self) -> Strategy {
        match self.strategy {
            StrategyKind::Greedy => Strategy::Greedy,
            StrategyKind::Beam => Strategy::Beam { k: self.k },
            StrategyKind::Sample => Strategy::Sample {
                temperature: self.temperature,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mode: self.mode,
            lr: self.lr,
            lr_decay: self.lr_decay,
            patience: self.patience,
            kl_ramp: self.kl_ramp,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            seed: self.seed,
            profile: self.profile,
            max_len: self.max_len,
            clip_norm: self.clip_norm,
        }
    }

    /// Explicit setting, else the environment variable, else `./data`.
    pub fn data_root(&self) -> PathBuf {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("data"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_override_defaults() {
        let mut s = Settings::default();
        s.apply_text("# run\nseed = 7\nprofile = paper\nz-mode = sample\n\nlr=0.01 # faster\n")
            .unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.profile, Profile::Paper);
        assert_eq!(s.z_mode, ZMode::PriorSample);
        assert_eq!(s.lr, 0.01);
    }

    #[test]
    fn bad_lines_are_reported() {
        let mut s = Settings::default();
        assert!(s.apply_text("seed 7").is_err());
        assert!(s.apply_text("colour = red").is_err());
        assert!(s.apply_text("mode = sideways").is_err());
    }
}
