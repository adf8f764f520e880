use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{assign_advantages, collect_rollouts, ppo_update, ActionMode, PPOConfig, Policy, PolicyConfig, PpoStats, RolloutConfig};
use crate::airl::{bc_update, discriminator_update, surrogate_from_logit, DiscStats, Discriminator, ExpertBuffer, RewardMode, RewardTransform};
use crate::encoder::{BatchFrame, BatchSample, EncoderConfig, DISCRIMINATOR_RADIUS, POLICY_RADIUS};
use crate::error::{Error, Result};
use crate::eval::{evaluate_policy, MetricsReport};
use crate::nn::{load_checkpoint, read_manifest, save_checkpoint, AdamW};
use crate::scene::World;

/// World ids of expert frames start here so they never collide with rollout
/// environments.
const EXPERT_WORLD_ID: usize = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSize {
    /// Hidden 64, one Perceiver layer.
    Small,
    /// Hidden 128, three Perceiver layers.
    Full,
}

impl ModelSize {
    pub fn encoder(self, radius: f64) -> EncoderConfig {
        match self {
            ModelSize::Small => EncoderConfig::small(radius),
            ModelSize::Full => EncoderConfig::full(radius),
        }
    }
}

impl fmt::Display for ModelSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            ModelSize::Small => "small",
            ModelSize::Full => "full",
        })
    }
}

impl FromStr for ModelSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(ModelSize::Small),
            "full" => Ok(ModelSize::Full),
            _ => Err(Error::Config(format!("model size `{s}`: expected small or full"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub model: ModelSize,
    pub policy_radius: f64,
    pub disc_radius: f64,
    pub reward_mode: RewardMode,
    /// Scenarios simulated per epoch, drawn from the training set.
    pub envs_per_epoch: usize,
    pub ppo: PPOConfig,
    pub disc_lr: f64,
    pub disc_steps: usize,
    /// Samples per discriminator step, half generated and half expert.
    pub disc_minibatch: usize,
    /// Value-head output scale; derived from the reward mode when unset.
    pub value_scale: Option<f64>,
    pub checkpoint_every: usize,
    pub bc_steps: usize,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 300,
            model: ModelSize::Small,
            policy_radius: POLICY_RADIUS,
            disc_radius: DISCRIMINATOR_RADIUS,
            reward_mode: RewardMode::Adaptive(5.0),
            envs_per_epoch: 1,
            ppo: PPOConfig::default(),
            disc_lr: 1e-4,
            disc_steps: 1,
            disc_minibatch: 1024,
            value_scale: None,
            checkpoint_every: 50,
            bc_steps: 300,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.policy_config().encoder.validate()?;
        self.disc_encoder().validate()?;
        if self.envs_per_epoch == 0 || self.disc_minibatch < 2 || self.checkpoint_every == 0 {
            return Err(Error::Config("envs_per_epoch, disc_minibatch and checkpoint_every must be positive".into()));
        }
        if !(self.disc_lr > 0.0) || self.value_scale.is_some_and(|v| !(v > 0.0)) {
            return Err(Error::Config("disc_lr and value_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn policy_config(&self) -> PolicyConfig {
        let mut pc = PolicyConfig::new(self.model.encoder(self.policy_radius));
        pc.value_scale = self.value_scale.unwrap_or_else(|| {
            let level = match self.reward_mode {
                RewardMode::Adaptive(t) | RewardMode::Constant(t) => t.abs(),
            };
            level.max(1.0) / (1.0 - self.ppo.gamma)
        });
        pc
    }

    pub fn disc_encoder(&self) -> EncoderConfig {
        self.model.encoder(self.disc_radius)
    }
}

/// One JSON-lines training log record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub disc_loss: f64,
    pub disc_acc: f64,
    pub r_mean_raw: f64,
    pub offset: f64,
    pub r_mean_transformed: f64,
    pub experiences: usize,
    pub collision_rate: f64,
    pub offtrack_rate: f64,
    pub policy_std: [f64; 2],
    pub lr: f64,
    pub ppo: PpoStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub disc: Discriminator,
    pub records: Vec<EpochRecord>,
    pub checkpoints: Vec<PathBuf>,
    /// Epoch the run started from (nonzero when resumed).
    pub start_epoch: usize,
}

fn epoch_rng(seed: u64, epoch: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(epoch as u64);
    rng
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_{epoch:06}.bin")
}

fn disc_name(epoch: usize) -> String {
    format!("disc_{epoch:06}.bin")
}

/// Checkpoints in `dir` sorted by epoch.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(num) = name.strip_prefix("ckpt_").and_then(|n| n.strip_suffix(".bin")) {
            if let Ok(e) = num.parse() {
                out.push((e, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Restores a policy from a checkpoint written by [`train`] or
/// [`train_bc`]; returns it with its epoch.
pub fn load_run_checkpoint(path: impl AsRef<Path>) -> Result<(Policy, usize)> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::Checkpoint(format!("{} does not exist", path.display())));
    }
    let manifest = read_manifest(path)?;
    let pc: PolicyConfig = serde_json::from_value(manifest.meta["policy"].clone())
        .map_err(|e| Error::Checkpoint(format!("policy config in manifest: {e}")))?;
    let epoch = manifest.meta["epoch"].as_u64().unwrap_or(0) as usize;
    let mut policy = Policy::new(pc, 0)?;
    load_checkpoint(&mut policy.store, path)?;
    Ok((policy, epoch))
}

fn save_run(dir: &Path, epoch: usize, cfg: &TrainConfig, policy: &Policy, disc: &Discriminator) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = json!({ "epoch": epoch, "policy": policy.cfg, "train": cfg });
    let path = dir.join(checkpoint_name(epoch));
    save_checkpoint(&disc.store, dir.join(disc_name(epoch)), meta.clone())?;
    save_checkpoint(&policy.store, &path, meta)?;
    Ok(path)
}

fn append_jsonl(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(value).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

fn dump_failure(dir: Option<&Path>, epoch: usize, err: &Error, last: Option<&EpochRecord>, policy: &Policy) -> Error {
    let nonfinite = policy.store.values().iter().filter(|v| !v.is_finite()).count();
    let msg = format!("epoch {epoch}: {err}; {nonfinite} non-finite policy parameters");
    if let Some(dir) = dir {
        let dump = json!({ "epoch": epoch, "error": err.to_string(), "nonfinite_params": nonfinite, "last_record": last });
        let path = dir.join(format!("failure_epoch{epoch:06}.json"));
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(&path, serde_json::to_string_pretty(&dump).unwrap_or_default());
        }
    }
    Error::Numerical(msg)
}

/// AIRL training: per epoch collect rollouts, update the discriminator,
/// score rewards, apply the offset, compute GAE and update the policy.
/// With `out_dir`, writes the JSON-lines log and checkpoints and resumes
/// from the latest checkpoint found there.
pub fn train(cfg: &TrainConfig, worlds: &[World], out_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    if worlds.is_empty() {
        return Err(Error::Empty("training scenarios"));
    }
    let expert = ExpertBuffer::new(worlds)?;
    let mut policy = Policy::new(cfg.policy_config(), cfg.seed)?;
    let mut disc = Discriminator::new(cfg.disc_encoder(), cfg.seed ^ 0xD15C)?;
    let mut start = 0;
    if let Some(dir) = out_dir {
        if let Some((e, path)) = list_checkpoints(dir)?.pop() {
            load_checkpoint(&mut policy.store, &path)?;
            load_checkpoint(&mut disc.store, dir.join(disc_name(e)))?;
            start = e;
        }
    }
    let log = out_dir.map(|d| d.join("train_log.jsonl"));
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut records = Vec::new();
    let mut checkpoints = Vec::new();
    for epoch in start..cfg.epochs {
        let rec = match train_epoch(cfg, worlds, &expert, &mut policy, &mut disc, epoch) {
            Ok(r) => r,
            Err(e @ (Error::NonFinite(_) | Error::Numerical(_))) => {
                return Err(dump_failure(out_dir, epoch, &e, records.last(), &policy));
            }
            Err(e) => return Err(e),
        };
        if let Some(log) = &log {
            append_jsonl(log, &rec)?;
        }
        records.push(rec);
        let done = epoch + 1;
        if let Some(dir) = out_dir {
            if done % cfg.checkpoint_every == 0 || done == cfg.epochs {
                checkpoints.push(save_run(dir, done, cfg, &policy, &disc)?);
            }
        }
    }
    Ok(TrainOutcome { policy, disc, records, checkpoints, start_epoch: start })
}

fn train_epoch(
    cfg: &TrainConfig,
    worlds: &[World],
    expert: &ExpertBuffer,
    policy: &mut Policy,
    disc: &mut Discriminator,
    epoch: usize,
) -> Result<EpochRecord> {
    let lr = cfg.ppo.lr_at(epoch, cfg.epochs);
    let mut rng = epoch_rng(cfg.seed, epoch, 0xE90C);
    let n_envs = cfg.envs_per_epoch.min(worlds.len());
    let picked: Vec<usize> = {
        let mut v = index::sample(&mut rng, worlds.len(), n_envs).into_vec();
        v.sort_unstable();
        v
    };
    let envs: Vec<World> = picked.iter().map(|&i| worlds[i].clone()).collect();
    let ws = policy.store.snapshot::<f32>();
    let rcfg = RolloutConfig { bootstrap: true, ..RolloutConfig::new(cfg.seed, epoch as u64, ActionMode::Sample) };
    let mut rollout = collect_rollouts(policy, &ws, &envs, rcfg)?;
    let n = rollout.experiences.len();
    if n == 0 {
        return Err(Error::Empty("rollout experiences"));
    }
    let mut std = [0.0; 2];
    for x in &rollout.experiences {
        std[0] += x.std[0] / n as f64;
        std[1] += x.std[1] / n as f64;
    }

    let (gen_frames, gen_offsets) = rollout.frames(&envs);
    let (exp_frames, exp_offsets) = expert.frames(worlds, EXPERT_WORLD_ID);
    let mut frames: Vec<BatchFrame<'_>> = gen_frames.clone();
    frames.extend(exp_frames);
    let opt = AdamW::new(cfg.disc_lr).with_weight_decay(cfg.ppo.weight_decay);
    let half = (cfg.disc_minibatch / 2).min(n).min(expert.len());
    let mut gen_idx: Vec<usize> = (0..n).collect();
    let mut dstats = DiscStats::default();
    for _ in 0..cfg.disc_steps {
        gen_idx.shuffle(&mut rng);
        let exp_idx = index::sample(&mut rng, expert.len(), half).into_vec();
        let mut samples: Vec<BatchSample> = gen_idx[..half].iter().map(|&i| rollout.sample(&gen_offsets, i)).collect();
        let mut actions: Vec<_> = gen_idx[..half].iter().map(|&i| rollout.experiences[i].action).collect();
        let mut labels = vec![0.0; half];
        for &i in &exp_idx {
            let mut s = expert.sample(&exp_offsets, i);
            s.frame += gen_frames.len();
            samples.push(s);
        }
        actions.extend(expert.noised_actions(&exp_idx, std, &mut rng));
        labels.extend(std::iter::repeat_n(1.0, half));
        dstats = discriminator_update(disc, &frames, &samples, &actions, &labels, &opt, cfg.ppo.max_grad_norm, cfg.parallel)?;
    }

    let dws = disc.store.snapshot::<f32>();
    let samples: Vec<BatchSample> = (0..n).map(|i| rollout.sample(&gen_offsets, i)).collect();
    let actions: Vec<_> = rollout.experiences.iter().map(|x| x.action).collect();
    let logits = disc.logits(&dws, &gen_frames, &samples, &actions, cfg.parallel)?;
    let raw: Vec<f64> = logits.iter().map(|&l| surrogate_from_logit(l)).collect();
    let (transform, rewards) = RewardTransform::fit(cfg.reward_mode, &raw)?;
    drop(frames);
    drop(gen_frames);
    for (x, (&r, &t)) in rollout.experiences.iter_mut().zip(raw.iter().zip(&rewards)) {
        x.raw_reward = r;
        x.reward = t;
    }
    assign_advantages(&mut rollout.experiences, cfg.ppo.gamma, cfg.ppo.lambda)?;
    let ppo_seed = rng.random();
    let stats = ppo_update(policy, &envs, &rollout, &cfg.ppo, lr, ppo_seed, cfg.parallel)?;

    let agents: usize = envs.iter().map(|w| w.scenario.n_agents()).sum();
    let causes: Vec<_> = rollout.final_causes().into_iter().flatten().collect();
    let frac = |c| causes.iter().filter(|&&x| x == c).count() as f64 / agents.max(1) as f64;
    Ok(EpochRecord {
        epoch,
        disc_loss: dstats.loss,
        disc_acc: dstats.accuracy,
        r_mean_raw: transform.running_mean,
        offset: transform.offset,
        r_mean_transformed: rewards.iter().sum::<f64>() / n as f64,
        experiences: n,
        collision_rate: frac(crate::dynamics::Termination::Collision),
        offtrack_rate: frac(crate::dynamics::Termination::OffTrack),
        policy_std: std,
        lr,
        ppo: stats,
    })
}

/// Behavior cloning on the expert data of `worlds`; `bc_steps` AdamW steps
/// on random minibatches of `ppo.minibatch` samples.
pub fn train_bc(cfg: &TrainConfig, worlds: &[World], out_dir: Option<&Path>) -> Result<(Policy, Vec<f64>)> {
    cfg.validate()?;
    let expert = ExpertBuffer::new(worlds)?;
    let mut policy = Policy::new(cfg.policy_config(), cfg.seed)?;
    let (frames, offsets) = expert.frames(worlds, 0);
    let opt = AdamW::new(cfg.ppo.lr_policy).with_weight_decay(cfg.ppo.weight_decay);
    let mb = cfg.ppo.minibatch.min(expert.len());
    let mut losses = Vec::with_capacity(cfg.bc_steps);
    for step in 0..cfg.bc_steps {
        let mut rng = epoch_rng(cfg.seed, step, 0xBC);
        let idx = index::sample(&mut rng, expert.len(), mb).into_vec();
        let samples: Vec<BatchSample> = idx.iter().map(|&i| expert.sample(&offsets, i)).collect();
        let actions: Vec<[f64; 2]> = idx.iter().map(|&i| {
            let a = expert.samples[i].action;
            [a.accel, a.steer]
        }).collect();
        let opt = AdamW { lr: cfg.ppo.lr_at(step, cfg.bc_steps), ..opt };
        losses.push(bc_update(&mut policy, &frames, &samples, &actions, &opt, cfg.ppo.max_grad_norm, cfg.parallel)?);
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = json!({ "epoch": cfg.bc_steps, "policy": policy.cfg, "train": cfg, "kind": "bc" });
        save_checkpoint(&policy.store, dir.join("bc.bin"), meta)?;
        for (i, l) in losses.iter().enumerate() {
            append_jsonl(&dir.join("bc_log.jsonl"), &json!({ "step": i, "nll": l }))?;
        }
    }
    Ok((policy, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub target: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
}

/// Trains one policy per (target, seed) with an adaptive offset and
/// evaluates each closed-loop on `eval_worlds`.
pub fn run_target_sweep(
    base: &TrainConfig,
    worlds: &[World],
    eval_worlds: &[World],
    targets: &[f64],
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::new();
    for &target in targets {
        for &seed in seeds {
            let cfg = TrainConfig { seed, reward_mode: RewardMode::Adaptive(target), ..base.clone() };
            let dir = out_dir.map(|d| d.join(format!("target_{target}_seed_{seed}")));
            let run = train(&cfg, worlds, dir.as_deref())?;
            let metrics = evaluate_policy(&run.policy, eval_worlds)?;
            let point = SweepPoint { target, seed, metrics };
            if let Some(d) = out_dir {
                append_jsonl(&d.join("sweep.jsonl"), &point)?;
            }
            out.push(point);
        }
    }
    Ok(out)
}

/// Evaluates every checkpoint and returns the index of the best by
/// model-selection score with all reports.
pub fn select_checkpoint(paths: &[PathBuf], worlds: &[World]) -> Result<(usize, Vec<MetricsReport>)> {
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let (policy, _) = load_run_checkpoint(p)?;
        reports.push(evaluate_policy(&policy, worlds)?);
    }
    let cands: Vec<_> = reports.iter().map(|r| (r.rmse, r.offtrack_rate, r.collision_rate)).collect();
    Ok((super::model_selection(&cands)?, reports))
}
