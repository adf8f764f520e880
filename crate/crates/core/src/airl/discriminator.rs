use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sigmoid;
use crate::dynamics::Action;
use crate::encoder::{BatchFrame, BatchSample, EncoderConfig, SceneEncoder, TargetLoss};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, AdamW, Grads, MlpBlock, ParamStore, Real, Weights};

/// Actions are divided by these before entering the decoder.
pub const ACTION_NORM: [f64; 2] = [2.0, 0.1];

/// `D(o, a) = sigmoid(MLP([z, a / ACTION_NORM]))` on its own encoder and
/// parameter store.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub cfg: EncoderConfig,
    pub store: ParamStore,
    pub encoder: SceneEncoder,
    pub head: MlpBlock,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscStats {
    pub loss: f64,
    pub accuracy: f64,
    pub expert_mean_d: f64,
    pub generated_mean_d: f64,
}

impl Discriminator {
    pub fn new(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = SceneEncoder::new(&mut store, "disc", cfg, &mut rng)?;
        let h = cfg.hidden;
        let head = MlpBlock::new(&mut store, "disc.head", h + 2, h, 1, &mut rng)?;
        Ok(Self { cfg, store, encoder, head })
    }

    fn input<T: Real>(z: &[T], a: Action) -> Vec<T> {
        let mut x = z.to_vec();
        x.push(T::lift(a.accel / ACTION_NORM[0]));
        x.push(T::lift(a.steer / ACTION_NORM[1]));
        x
    }

    /// Logits of all samples.
    pub fn logits(
        &self,
        ws: &Weights<f32>,
        frames: &[BatchFrame<'_>],
        samples: &[BatchSample],
        actions: &[Action],
        parallel: bool,
    ) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let labels = vec![0.0; samples.len()];
        let loss = DiscLoss::new(self, actions, &labels);
        self.encoder.batch_loss(ws, frames, samples, &loss, None, parallel)?;
        Ok(loss.into_logits())
    }
}

/// Mean binary cross-entropy with logits; label 1 marks expert samples.
pub struct DiscLoss<'a> {
    pub disc: &'a Discriminator,
    pub actions: &'a [Action],
    pub labels: &'a [f64],
    logits: Mutex<Vec<f64>>,
}

impl<'a> DiscLoss<'a> {
    pub fn new(disc: &'a Discriminator, actions: &'a [Action], labels: &'a [f64]) -> Self {
        Self { disc, actions, labels, logits: Mutex::new(vec![f64::NAN; labels.len()]) }
    }

    pub fn into_logits(self) -> Vec<f64> {
        self.logits.into_inner().unwrap()
    }
}

impl<T: Real> TargetLoss<T> for DiscLoss<'_> {
    fn eval(&self, ws: &Weights<T>, index: usize, z: &[T], grads: Option<&mut Grads<T>>) -> Result<(f64, Vec<T>)> {
        let n = T::lift(self.labels.len() as f64);
        let x = Discriminator::input(z, self.actions[index]);
        let (out, cache) = self.disc.head.forward(ws, &x)?;
        let l = out[0];
        let y = T::lift(self.labels[index]);
        self.logits.lock().unwrap()[index] = l.as_f64();
        // max(l, 0) − l·y + ln(1 + e^−|l|)
        let loss = (l.max(T::zero()) - l * y + (-l.abs()).exp().ln_1p()) / n;
        let Some(grads) = grads else { return Ok((loss.as_f64(), Vec::new())) };
        let s = T::lift(sigmoid(l.as_f64()));
        let dl = (s - y) / n;
        let mut dx = self.disc.head.backward(ws, &x, &cache, &[dl], grads, true);
        dx.truncate(z.len());
        Ok((loss.as_f64(), dx))
    }
}

/// One AdamW step on the mean BCE over `samples`; statistics are computed
/// before the step.
pub fn discriminator_update(
    disc: &mut Discriminator,
    frames: &[BatchFrame<'_>],
    samples: &[BatchSample],
    actions: &[Action],
    labels: &[f64],
    opt: &AdamW,
    max_grad_norm: f64,
    parallel: bool,
) -> Result<DiscStats> {
    let n_exp = labels.iter().filter(|&&y| y > 0.5).count();
    if n_exp == 0 || n_exp == labels.len() {
        return Err(Error::Empty("discriminator batch needs expert and generated samples"));
    }
    if samples.len() != labels.len() || actions.len() != labels.len() {
        return Err(Error::Shape("discriminator batch lengths differ".into()));
    }
    let ws = disc.store.snapshot::<f32>();
    let mut grads = disc.store.zero_grads::<f32>();
    let loss_fn = DiscLoss::new(disc, actions, labels);
    let loss = disc.encoder.batch_loss(&ws, frames, samples, &loss_fn, Some(&mut grads), parallel)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("discriminator loss"));
    }
    let logits = loss_fn.into_logits();
    let mut stats = DiscStats { loss, ..Default::default() };
    let mut correct = 0usize;
    for (&l, &y) in logits.iter().zip(labels) {
        correct += ((l > 0.0) == (y > 0.5)) as usize;
        if y > 0.5 {
            stats.expert_mean_d += sigmoid(l) / n_exp as f64;
        } else {
            stats.generated_mean_d += sigmoid(l) / (labels.len() - n_exp) as f64;
        }
    }
    stats.accuracy = correct as f64 / labels.len() as f64;
    clip_grad_norm(&mut grads, max_grad_norm);
    disc.store.set_grads(&grads)?;
    opt.step(&mut disc.store)?;
    Ok(stats)
}
