//! Training configuration in a `key = value` text format.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Unknown or repeated keys are errors that carry the line number.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::tensor::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub weights: LossWeights,
    /// Weight of the latent consistency term `L1(mu(E(I_cf)), z)`.
    pub alpha_latent: f32,
    pub n_critic: usize,
    pub seed: u64,
    /// Square image side.
    pub resolution: usize,
    /// Square centre-hole side.
    pub hole: usize,
    pub latent_dim: usize,
    pub generator_width: usize,
    pub critic_width: usize,
    /// Synthetic scenes generated when `data_dir` is empty.
    pub dataset_size: usize,
    /// Directory of `.ppm` images; empty selects the synthetic dataset.
    pub data_dir: String,
    /// 0 disables periodic checkpoints.
    pub checkpoint_interval: u64,
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            iterations: 2000,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            weights: LossWeights::default(),
            alpha_latent: 1.0,
            n_critic: 1,
            seed: 1,
            resolution: 32,
            hole: 16,
            latent_dim: 64,
            generator_width: 32,
            critic_width: 32,
            dataset_size: 2000,
            data_dir: String::new(),
            checkpoint_interval: 0,
            log_interval: 1,
        }
    }
}

const KEYS: &[&str] = &[
    "batch_size",
    "iterations",
    "learning_rate",
    "beta1",
    "beta2",
    "alpha_kl",
    "alpha_c",
    "alpha_adv",
    "lambda",
    "alpha_latent",
    "n_critic",
    "seed",
    "resolution",
    "hole",
    "latent_dim",
    "generator_width",
    "critic_width",
    "dataset_size",
    "data_dir",
    "checkpoint_interval",
    "log_interval",
];

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parse config text; `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<&str> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| Error::Config {
                path: origin.to_string(),
                line,
                message,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `name = value`, got `{content}`")))?;
            let (key, value) = (key.trim(), value.trim());
            let known = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| err(format!("unknown key `{key}`")))?;
            if seen.contains(known) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(known);
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate().map_err(|message| Error::Config {
            path: origin.to_string(),
            line: 0,
            message,
        })?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
            value
                .parse()
                .map_err(|_| format!("invalid value `{value}` for `{key}`"))
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "alpha_kl" => self.weights.alpha_kl = num(key, value)?,
            "alpha_c" => self.weights.alpha_c = num(key, value)?,
            "alpha_adv" => self.weights.alpha_adv = num(key, value)?,
            "lambda" => self.weights.lambda = num(key, value)?,
            "alpha_latent" => self.alpha_latent = num(key, value)?,
            "n_critic" => self.n_critic = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "resolution" => self.resolution = num(key, value)?,
            "hole" => self.hole = num(key, value)?,
            "latent_dim" => self.latent_dim = num(key, value)?,
            "generator_width" => self.generator_width = num(key, value)?,
            "critic_width" => self.critic_width = num(key, value)?,
            "dataset_size" => self.dataset_size = num(key, value)?,
            "data_dir" => self.data_dir = value.to_string(),
            "checkpoint_interval" => self.checkpoint_interval = num(key, value)?,
            "log_interval" => self.log_interval = num(key, value)?,
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Range checks that need more than one key.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let w = &self.weights;
        let checks: [(bool, &str); 13] = [
            (self.batch_size >= 1, "batch_size must be at least 1"),
            (self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be positive"),
            ((0.0..1.0).contains(&self.beta1), "beta1 must lie in [0, 1)"),
            ((0.0..1.0).contains(&self.beta2), "beta2 must lie in [0, 1)"),
            (
                [w.alpha_kl, w.alpha_c, w.alpha_adv, w.lambda, self.alpha_latent]
                    .iter()
                    .all(|v| *v >= 0.0 && v.is_finite()),
                "loss weights must be finite and non-negative",
            ),
            ((1..=5).contains(&self.n_critic), "n_critic must lie in 1..=5"),
            (self.resolution > 0 && self.resolution % 16 == 0, "resolution must be a positive multiple of 16"),
            (self.hole > 0 && self.hole % 8 == 0, "hole must be a positive multiple of 8"),
            (self.hole <= self.resolution, "hole must not exceed resolution"),
            (self.latent_dim >= 1, "latent_dim must be at least 1"),
            (self.generator_width >= 2, "generator_width must be at least 2"),
            (self.critic_width >= 1, "critic_width must be at least 1"),
            (self.log_interval >= 1 && self.dataset_size >= 1, "log_interval and dataset_size must be at least 1"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(msg.to_string()),
            None => Ok(()),
        }
    }

    /// Text form accepted by [`TrainConfig::parse`]; used as the checkpoint echo.
    pub fn to_text(&self) -> String {
        let w = &self.weights;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to String");
        put("batch_size", self.batch_size.to_string());
        put("iterations", self.iterations.to_string());
        put("learning_rate", self.learning_rate.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("alpha_kl", w.alpha_kl.to_string());
        put("alpha_c", w.alpha_c.to_string());
        put("alpha_adv", w.alpha_adv.to_string());
        put("lambda", w.lambda.to_string());
        put("alpha_latent", self.alpha_latent.to_string());
        put("n_critic", self.n_critic.to_string());
        put("seed", self.seed.to_string());
        put("resolution", self.resolution.to_string());
        put("hole", self.hole.to_string());
        put("latent_dim", self.latent_dim.to_string());
        put("generator_width", self.generator_width.to_string());
        put("critic_width", self.critic_width.to_string());
        put("dataset_size", self.dataset_size.to_string());
        put("data_dir", self.data_dir.clone());
        put("checkpoint_interval", self.checkpoint_interval.to_string());
        put("log_interval", self.log_interval.to_string());
        s
    }
}
