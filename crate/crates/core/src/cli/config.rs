//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::airl::RewardMode;
use crate::error::{Error, Result};
use crate::rl::TrainConfig;
use crate::scene::Template;

/// Where scenarios come from: files on disk or fresh synthetic generation.
#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    /// A scenario file, or a directory of them (`manifest.json` order when
    /// present, otherwise sorted `*.json`).
    Path(PathBuf),
    Generate { template: Template, n_agents: usize, n_scenarios: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub scenarios: ScenarioSource,
    pub eval_scenarios: ScenarioSource,
    pub out_dir: PathBuf,
    /// Whether the seed came from the file.
    pub seed_set: bool,
}

pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "model",
    "policy_radius",
    "disc_radius",
    "reward_mode",
    "envs_per_epoch",
    "clip_eps",
    "epochs_per_batch",
    "minibatch",
    "lr_policy",
    "gamma",
    "lambda",
    "lr_decay_fraction",
    "value_coef",
    "entropy_coef",
    "max_grad_norm",
    "weight_decay",
    "disc_lr",
    "disc_steps",
    "disc_minibatch",
    "value_scale",
    "checkpoint_every",
    "bc_steps",
    "parallel",
    "scenarios",
    "template",
    "n_agents",
    "n_scenarios",
    "eval_scenarios",
    "n_eval",
    "out_dir",
];

/// Parses `key = value` lines; `#` starts a comment. Unknown and repeated
/// keys are errors.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !CONFIG_KEYS.contains(&k) {
            return Err(Error::Config(format!("line {}: unknown key `{k}`", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
        }
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self> {
        let mut t = TrainConfig::default();
        let mut template = Template::Straight;
        let (mut n_agents, mut n_scenarios, mut n_eval) = (4usize, 20usize, 50usize);
        let (mut scenarios, mut eval_scenarios) = (None, None);
        let mut out_dir = PathBuf::from("runs");
        for (k, v) in &pairs {
            let v = v.as_str();
            match k.as_str() {
                "seed" => t.seed = num(k, v)?,
                "epochs" => t.epochs = num(k, v)?,
                "model" => t.model = v.parse()?,
                "policy_radius" => t.policy_radius = num(k, v)?,
                "disc_radius" => t.disc_radius = num(k, v)?,
                "reward_mode" => t.reward_mode = v.parse::<RewardMode>()?,
                "envs_per_epoch" => t.envs_per_epoch = num(k, v)?,
                "clip_eps" => t.ppo.clip_eps = num(k, v)?,
                "epochs_per_batch" => t.ppo.epochs_per_batch = num(k, v)?,
                "minibatch" => t.ppo.minibatch = num(k, v)?,
                "lr_policy" => t.ppo.lr_policy = num(k, v)?,
                "gamma" => t.ppo.gamma = num(k, v)?,
                "lambda" => t.ppo.lambda = num(k, v)?,
                "lr_decay_fraction" => t.ppo.lr_decay_fraction = num(k, v)?,
                "value_coef" => t.ppo.value_coef = num(k, v)?,
                "entropy_coef" => t.ppo.entropy_coef = num(k, v)?,
                "max_grad_norm" => t.ppo.max_grad_norm = num(k, v)?,
                "weight_decay" => t.ppo.weight_decay = num(k, v)?,
                "disc_lr" => t.disc_lr = num(k, v)?,
                "disc_steps" => t.disc_steps = num(k, v)?,
                "disc_minibatch" => t.disc_minibatch = num(k, v)?,
                "value_scale" => t.value_scale = Some(num(k, v)?),
                "checkpoint_every" => t.checkpoint_every = num(k, v)?,
                "bc_steps" => t.bc_steps = num(k, v)?,
                "parallel" => t.parallel = num(k, v)?,
                "scenarios" => scenarios = Some(PathBuf::from(v)),
                "template" => template = v.parse()?,
                "n_agents" => n_agents = num(k, v)?,
                "n_scenarios" => n_scenarios = num(k, v)?,
                "eval_scenarios" => eval_scenarios = Some(PathBuf::from(v)),
                "n_eval" => n_eval = num(k, v)?,
                "out_dir" => out_dir = PathBuf::from(v),
                _ => return Err(Error::Config(format!("unknown key `{k}`"))),
            }
        }
        if n_agents == 0 || n_scenarios == 0 || n_eval == 0 {
            return Err(Error::Config("n_agents, n_scenarios and n_eval must be positive".into()));
        }
        let mut cfg = RunConfig {
            scenarios: scenarios.map(ScenarioSource::Path).unwrap_or(ScenarioSource::Generate {
                template,
                n_agents,
                n_scenarios,
                seed: 0,
            }),
            eval_scenarios: eval_scenarios.map(ScenarioSource::Path).unwrap_or(ScenarioSource::Generate {
                template,
                n_agents,
                n_scenarios: n_eval,
                seed: 0,
            }),
            out_dir,
            seed_set: pairs.contains_key("seed"),
            train: t,
        };
        cfg.set_seed(cfg.train.seed);
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Sets the run seed; generated training and evaluation scenarios use
    /// disjoint seed ranges derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        if let ScenarioSource::Generate { seed: s, .. } = &mut self.scenarios {
            *s = seed.wrapping_mul(1_000_003);
        }
        if let ScenarioSource::Generate { seed: s, .. } = &mut self.eval_scenarios {
            *s = seed.wrapping_mul(1_000_003).wrapping_add(500_000);
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::from_pairs(BTreeMap::new()).expect("defaults are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let c = RunConfig::from_text("seed = 3\nepochs = 2 # short\nreward_mode = constant:5\nminibatch=64\n").unwrap();
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.train.reward_mode, RewardMode::Constant(5.0));
        assert_eq!(c.train.ppo.minibatch, 64);
        assert!(c.seed_set);
        assert!(matches!(RunConfig::from_text("epoch = 2"), Err(Error::Config(_))));
        assert!(RunConfig::from_text("epochs = 2\nepochs = 3").is_err());
        assert!(RunConfig::from_text("gamma = 1.5").is_err());
        assert!(RunConfig::from_text("template = roundabout").is_err());
        assert!(RunConfig::from_text("no equals sign").is_err());
        assert!(!RunConfig::default().seed_set);
    }
}
