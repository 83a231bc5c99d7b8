//! MSE and adversarial training loops.
//!
//! Every step rebuilds a fresh graph per batch item, imputes the item under a
//! newly sampled mask exactly as at inference time, and backpropagates the
//! objective. Item gradients are computed in parallel and reduced in batch
//! order, so a run is bit-reproducible for a given seed regardless of the
//! number of threads.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::loss;
use crate::masking::{sample_mask_with, MaskKind, MaskSpec};
use crate::model::{Discriminator, Generator, ModelConfig, Parameterized};
use crate::parallel::{self, Execution};
use crate::scheduler::{self, Mode};
use crate::sequence::{Mask, Sequence};
use crate::Rng;

/// A loss above this, or a non-finite one, aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Scales below this are treated as constant dimensions and left unscaled.
const MIN_SCALE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Mse,
    Adversarial,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Mse => "mse",
            Objective::Adversarial => "adversarial",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Objective::Mse),
            "adversarial" => Ok(Objective::Adversarial),
            _ => Err(Error::Config(format!(
                "unknown objective {s:?}; expected mse or adversarial"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate_generator: f64,
    pub learning_rate_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub objective: Objective,
    pub mask_spec: MaskSpec,
    pub seed: u64,
    /// Decoder head count; `None` derives it from the mask prior.
    pub resolutions: Option<usize>,
    pub hidden_size: usize,
    pub decoder_hidden: usize,
    pub discriminator_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate_generator: 1e-3,
            learning_rate_discriminator: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            objective: Objective::Mse,
            mask_spec: MaskSpec::random(0, 0),
            seed: 0,
            resolutions: None,
            hidden_size: 64,
            decoder_hidden: 64,
            discriminator_hidden: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        for (name, lr) in [
            ("learning_rate_generator", self.learning_rate_generator),
            ("learning_rate_discriminator", self.learning_rate_discriminator),
        ] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must be in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.hidden_size == 0 || self.decoder_hidden == 0 || self.discriminator_hidden == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if let Some(r) = self.resolutions {
            if r == 0 || r > scheduler::MAX_RESOLUTIONS {
                return Err(Error::Config(format!(
                    "resolutions must be in 1..={}",
                    scheduler::MAX_RESOLUTIONS
                )));
            }
        }
        Ok(())
    }

    /// Forward-prediction masks and masks that may hide the first step need
    /// the virtual start pivot.
    pub fn mode(&self) -> Mode {
        mode_for(&self.mask_spec)
    }

    /// Head count: the configured one, or the power of two nearest the mean
    /// gap length of the mask prior.
    pub fn resolve_resolutions(&self, len: usize) -> Result<usize> {
        if let Some(r) = self.resolutions {
            return Ok(r);
        }
        let mut rng = Rng::seed_from_u64(self.seed);
        let gap = self.mask_spec.mean_gap_length(len, 256, &mut rng)?;
        Ok(scheduler::default_resolutions(gap))
    }

    pub fn model_config(&self, dim: usize, resolutions: usize) -> ModelConfig {
        ModelConfig {
            dim,
            hidden_size: self.hidden_size,
            decoder_hidden: self.decoder_hidden,
            resolutions,
            deterministic: self.objective == Objective::Mse,
            discriminator_hidden: self.discriminator_hidden,
        }
    }
}

/// Scheduler mode implied by a mask prior.
pub fn mode_for(spec: &MaskSpec) -> Mode {
    match spec.kind {
        MaskKind::ForwardPrediction { .. } => Mode::ForwardPrediction,
        _ if !spec.keep_first => Mode::ForwardPrediction,
        _ => Mode::Standard,
    }
}

/// The single-resolution ablation: the same configuration with one head, so
/// every gap is filled strictly left to right.
pub fn single_res_variant(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        resolutions: Some(1),
        ..config.clone()
    }
}

/// Per-dimension affine standardization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(dim: usize) -> Self {
        Normalization {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Zero mean and unit variance per dimension over all steps of `sequences`.
    pub fn fit(sequences: &[Sequence]) -> Result<Self> {
        let first = sequences
            .first()
            .ok_or_else(|| Error::Data("cannot fit normalization on an empty set".into()))?;
        let dim = first.dim();
        let mut sum = vec![0.0; dim];
        let mut count = 0usize;
        for s in sequences {
            for row in s.rows() {
                for (a, v) in sum.iter_mut().zip(row) {
                    *a += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Data("cannot fit normalization on empty sequences".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; dim];
        for s in sequences {
            for row in s.rows() {
                for d in 0..dim {
                    sq[d] += (row[d] - mean[d]).powi(2);
                }
            }
        }
        let scale = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd < MIN_SCALE {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Normalization { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, s: &Sequence) -> Result<()> {
        if s.dim() != self.dim() {
            return Err(Error::Data(format!(
                "normalization covers {} dimensions, sequence has {}",
                self.dim(),
                s.dim()
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, s: &Sequence) -> Result<Sequence> {
        self.check(s)?;
        let mut out = s.clone();
        for t in 0..s.len() {
            for (d, v) in out.step_mut(t).iter_mut().enumerate() {
                *v = (*v - self.mean[d]) / self.scale[d];
            }
        }
        Ok(out)
    }

    pub fn denormalize(&self, s: &Sequence) -> Result<Sequence> {
        self.check(s)?;
        let mut out = s.clone();
        for t in 0..s.len() {
            for (d, v) in out.step_mut(t).iter_mut().enumerate() {
                *v = *v * self.scale[d] + self.mean[d];
            }
        }
        Ok(out)
    }
}

/// Complete training sequences and the statistics used to standardize them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub normalization: Normalization,
}

impl Dataset {
    /// Checks shapes and fits the normalization on `sequences`.
    pub fn new(sequences: Vec<Sequence>) -> Result<Self> {
        let normalization = Normalization::fit(&sequences)?;
        Self::with_normalization(sequences, normalization)
    }

    pub fn with_normalization(sequences: Vec<Sequence>, normalization: Normalization) -> Result<Self> {
        if let Some(first) = sequences.first() {
            let (len, dim) = (first.len(), first.dim());
            if sequences.iter().any(|s| s.len() != len || s.dim() != dim) {
                return Err(Error::Data("sequences differ in length or dimension".into()));
            }
            if !sequences.iter().all(Sequence::is_finite) {
                return Err(Error::Data("training sequences must be finite".into()));
            }
        }
        Ok(Dataset {
            sequences,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn normalized(&self) -> Result<Vec<Sequence>> {
        self.sequences
            .iter()
            .map(|s| self.normalization.normalize(s))
            .collect()
    }
}

/// Adaptive moment estimation over the tensors of one model.
///
/// Entries whose gradient is exactly zero in a step are left untouched, moment
/// estimates included.
#[derive(Clone, Debug)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: i32,
}

impl Adam {
    pub fn new(model: &dyn Parameterized, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let mut m = Vec::new();
        model.visit("", &mut |_, t| m.push(vec![0.0; t.len()]));
        Adam {
            beta1,
            beta2,
            epsilon,
            v: m.clone(),
            m,
            steps: 0,
        }
    }

    /// Applies one update; `grads` follows the model's visit order.
    pub fn step(&mut self, model: &mut dyn Parameterized, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!("{} gradients for {} tensors", grads.len(), self.m.len()),
            ));
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let mut k = 0;
        let mut result = Ok(());
        model.visit_mut("", &mut |name, tensor| {
            let (g, m, v) = (&grads[k], &mut self.m[k], &mut self.v[k]);
            k += 1;
            if g.len() != tensor.len() {
                result = Err(Error::shape("adam", format!("gradient length mismatch for {name}")));
                return;
            }
            for (i, p) in tensor.data_mut().iter_mut().enumerate() {
                if g[i] == 0.0 {
                    continue;
                }
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
                *p -= lr * update;
            }
        });
        result
    }
}

fn gradients_in_order(g: &Graph, loss: NodeId, ids: &[NodeId]) -> Result<Vec<Vec<f64>>> {
    let grads = g.backward(loss)?;
    Ok(ids
        .iter()
        .map(|&id| grads.get_or_zeros(id, g.value(id).len()))
        .collect())
}

fn check_finite(what: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {what}")))
    }
}

/// Sums per-item gradients in order and divides by `count`.
fn mean_gradients(items: impl Iterator<Item = Vec<Vec<f64>>>, count: usize) -> Option<Vec<Vec<f64>>> {
    let mut total: Option<Vec<Vec<f64>>> = None;
    for item in items {
        match &mut total {
            None => total = Some(item),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&item) {
                    for (x, y) in a.iter_mut().zip(g) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut total = total?;
    let inv = 1.0 / count as f64;
    total.iter_mut().flatten().for_each(|x| *x *= inv);
    Some(total)
}

/// MSE of one imputation and its gradient for every generator tensor.
/// `None` when the mask hides nothing.
pub fn mse_gradients(
    generator: &Generator,
    truth: &Sequence,
    mask: &Mask,
    mode: Mode,
    rng: Option<&mut Rng>,
) -> Result<Option<(f64, Vec<Vec<f64>>)>> {
    let mut g = Graph::new();
    let bound = generator.bind(&mut g);
    let imputation = bound.impute(&mut g, truth, mask, mode, rng)?;
    let Some(loss) = loss::mse_loss_graph(&mut g, &imputation.values, truth, mask)? else {
        return Ok(None);
    };
    let value = g.scalar(loss);
    check_finite("mse loss", value)?;
    let grads = gradients_in_order(&g, loss, &bound.param_ids())?;
    Ok(Some((value, grads)))
}

/// Mean masked MSE of a deterministic generator over `data`, with masks drawn
/// from `spec` using `seed`. Sequences whose mask hides nothing are skipped.
pub fn evaluate_mse(
    generator: &Generator,
    data: &[Sequence],
    spec: &MaskSpec,
    seed: u64,
    exec: Execution,
) -> Result<f64> {
    let mut rng = Rng::seed_from_u64(seed);
    let masks = data
        .iter()
        .map(|s| sample_mask_with(spec, s.len(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let mode = mode_for(spec);
    let losses = parallel::map_slice(exec, data, |i, truth| {
        let imputed = generator.impute(truth, &masks[i], mode, None)?;
        loss::mse_loss(&imputed, truth, &masks[i])
    });
    let mut total = 0.0;
    let mut count = 0usize;
    for l in losses {
        let l = l?;
        if !l.nothing_missing {
            total += l.value;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

struct AdversarialItem {
    generator_loss: f64,
    discriminator_loss: f64,
    generator_grads: Vec<Vec<f64>>,
    discriminator_grads: Vec<Vec<f64>>,
    correct: usize,
    judged: usize,
}

/// Imputes `truth` with stochastic heads, scores real and imputed steps with
/// the discriminator, and differentiates both adversarial losses.
fn adversarial_item(
    generator: &Generator,
    discriminator: &Discriminator,
    truth: &Sequence,
    mask: &Mask,
    mode: Mode,
    rng: &mut Rng,
) -> Result<AdversarialItem> {
    let mut g = Graph::new();
    let gen = generator.bind(&mut g);
    let disc = discriminator.bind(&mut g);
    let imputation = gen.impute(&mut g, truth, mask, mode, Some(rng))?;
    let real: Vec<NodeId> = truth.rows().map(|r| g.constant_vec(r.to_vec())).collect();
    let real_probs = disc.discriminate(&mut g, &real)?;
    let fake_probs = disc.discriminate(&mut g, &imputation.values)?;
    let losses = loss::adversarial_losses(&mut g, &real_probs, &fake_probs)?;
    let mut correct = 0;
    let mut judged = 0;
    for t in mask.missing_indices() {
        correct += usize::from(g.scalar(real_probs[t]) > 0.5);
        correct += usize::from(g.scalar(fake_probs[t]) < 0.5);
        judged += 2;
    }
    Ok(AdversarialItem {
        generator_loss: g.scalar(losses.generator),
        discriminator_loss: g.scalar(losses.discriminator),
        generator_grads: gradients_in_order(&g, losses.generator, &gen.param_ids())?,
        discriminator_grads: gradients_in_order(&g, losses.discriminator, &disc.param_ids())?,
        correct,
        judged,
    })
}

/// Outcome of one adversarial batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversarialStep {
    pub generator_loss: f64,
    pub discriminator_loss: f64,
    /// Share of missing steps the discriminator classified correctly, counting
    /// real and imputed copies separately.
    pub accuracy: f64,
}

/// Generator, optional discriminator, and their optimizer state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    adam_generator: Adam,
    adam_discriminator: Option<Adam>,
    rng: Rng,
    exec: Execution,
}

impl Trainer {
    /// Fresh models for sequences of `dim` values per step.
    pub fn new(config: TrainConfig, dim: usize, resolutions: usize, exec: Execution) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::seed_from_u64(config.seed);
        let model_config = config.model_config(dim, resolutions);
        let generator = Generator::new(model_config, &mut rng)?;
        let discriminator = (config.objective == Objective::Adversarial)
            .then(|| Discriminator::new(dim, config.discriminator_hidden, &mut rng));
        Ok(Self::from_models(config, generator, discriminator, rng, exec))
    }

    pub fn from_models(
        config: TrainConfig,
        generator: Generator,
        discriminator: Option<Discriminator>,
        rng: Rng,
        exec: Execution,
    ) -> Self {
        let adam = |m: &dyn Parameterized| Adam::new(m, config.beta1, config.beta2, config.epsilon);
        Trainer {
            adam_generator: adam(&generator),
            adam_discriminator: discriminator.as_ref().map(|d| adam(d)),
            config,
            generator,
            discriminator,
            rng,
            exec,
        }
    }

    /// One seed per batch item, drawn in order from the trainer's stream.
    fn item_seeds(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.rng.random()).collect()
    }

    fn sample(&self, seed: u64, len: usize) -> Result<(Mask, Rng)> {
        let mut rng = Rng::seed_from_u64(seed);
        let mask = sample_mask_with(&self.config.mask_spec, len, &mut rng)?;
        Ok((mask, rng))
    }

    /// One generator update on the masked MSE. Returns the batch mean loss, or
    /// `None` when no mask in the batch hid anything.
    pub fn mse_step(&mut self, batch: &[&Sequence]) -> Result<Option<f64>> {
        let seeds = self.item_seeds(batch.len());
        let mode = self.config.mode();
        let this = &*self;
        let results = parallel::map_slice(this.exec, batch, |i, truth| {
            let (mask, mut rng) = this.sample(seeds[i], truth.len())?;
            mse_gradients(&this.generator, truth, &mask, mode, Some(&mut rng))
        });
        let items: Vec<(f64, Vec<Vec<f64>>)> =
            results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
        if items.is_empty() {
            return Ok(None);
        }
        let n = items.len();
        let loss = items.iter().map(|(l, _)| l).sum::<f64>() / n as f64;
        let grads = mean_gradients(items.into_iter().map(|(_, g)| g), n).expect("non-empty");
        self.adam_generator
            .step(&mut self.generator, &grads, self.config.learning_rate_generator)?;
        Ok(Some(loss))
    }

    fn adversarial_items(&mut self, batch: &[&Sequence]) -> Result<Vec<AdversarialItem>> {
        let seeds = self.item_seeds(batch.len());
        let Some(disc) = &self.discriminator else {
            return Err(Error::Config("adversarial training needs a discriminator".into()));
        };
        if self.generator.config.deterministic {
            return Err(Error::Config(
                "adversarial training needs stochastic decoder heads".into(),
            ));
        }
        let mode = self.config.mode();
        let this = &*self;
        parallel::map_slice(this.exec, batch, |i, truth| {
            let (mask, mut rng) = this.sample(seeds[i], truth.len())?;
            adversarial_item(&this.generator, disc, truth, &mask, mode, &mut rng)
        })
        .into_iter()
        .collect()
    }

    fn summarize(items: &[AdversarialItem]) -> Result<AdversarialStep> {
        let n = items.len().max(1) as f64;
        let step = AdversarialStep {
            generator_loss: items.iter().map(|i| i.generator_loss).sum::<f64>() / n,
            discriminator_loss: items.iter().map(|i| i.discriminator_loss).sum::<f64>() / n,
            accuracy: {
                let judged: usize = items.iter().map(|i| i.judged).sum();
                let correct: usize = items.iter().map(|i| i.correct).sum();
                if judged == 0 {
                    0.0
                } else {
                    correct as f64 / judged as f64
                }
            },
        };
        check_finite("generator loss", step.generator_loss)?;
        check_finite("discriminator loss", step.discriminator_loss)?;
        Ok(step)
    }

    fn update_discriminator(&mut self, items: &[AdversarialItem]) -> Result<()> {
        let grads = mean_gradients(items.iter().map(|i| i.discriminator_grads.clone()), items.len());
        if let (Some(grads), Some(disc), Some(adam)) =
            (grads, self.discriminator.as_mut(), self.adam_discriminator.as_mut())
        {
            adam.step(disc, &grads, self.config.learning_rate_discriminator)?;
        }
        Ok(())
    }

    /// Updates only the discriminator. The reported losses and accuracy are
    /// those measured before the update.
    pub fn discriminator_step(&mut self, batch: &[&Sequence]) -> Result<AdversarialStep> {
        let items = self.adversarial_items(batch)?;
        let step = Self::summarize(&items)?;
        self.update_discriminator(&items)?;
        Ok(step)
    }

    /// One generator update followed by one discriminator update, both from
    /// gradients at the current parameters.
    pub fn adversarial_step(&mut self, batch: &[&Sequence]) -> Result<AdversarialStep> {
        let items = self.adversarial_items(batch)?;
        let step = Self::summarize(&items)?;
        if let Some(grads) =
            mean_gradients(items.iter().map(|i| i.generator_grads.clone()), items.len())
        {
            self.adam_generator
                .step(&mut self.generator, &grads, self.config.learning_rate_generator)?;
        }
        self.update_discriminator(&items)?;
        Ok(step)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub generator_loss: f64,
    pub discriminator_loss: Option<f64>,
}

/// Trained parameters with the statistics needed to apply them to raw data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub generator: Generator,
    pub discriminator: Option<Discriminator>,
    pub normalization: Normalization,
}

impl TrainedModel {
    /// Imputes a raw (unnormalized) sequence. Observed steps are returned
    /// bit-exactly as given.
    pub fn impute(
        &self,
        sequence: &Sequence,
        mask: &Mask,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<Sequence> {
        let normalized = self.normalization.normalize(&sequence.zero_filled(mask))?;
        let imputed = self.generator.impute(&normalized, mask, mode, rng)?;
        let mut out = self.normalization.denormalize(&imputed)?;
        for t in mask.observed_indices() {
            out.step_mut(t).copy_from_slice(sequence.step(t));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last epoch that finished without diverging.
    pub model: TrainedModel,
    pub history: Vec<EpochStats>,
    /// Mean generator loss of every batch, in order.
    pub batch_losses: Vec<f64>,
    /// Set when training stopped early on a non-finite or exploding loss.
    pub diverged: Option<String>,
}

fn diverging(loss: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_LIMIT
}

/// Trains on `dataset` (raw values; standardized internally).
pub fn train(dataset: &Dataset, config: &TrainConfig, exec: Execution) -> Result<TrainOutcome> {
    config.validate()?;
    let data = dataset.normalized()?;
    let first = data
        .first()
        .ok_or_else(|| Error::Data("training set is empty".into()))?;
    let (len, dim) = (first.len(), first.dim());
    config.mask_spec.validate(len)?;
    let resolutions = config.resolve_resolutions(len)?;
    let mut trainer = Trainer::new(config.clone(), dim, resolutions, exec)?;
    let snapshot = |t: &Trainer| TrainedModel {
        generator: t.generator.clone(),
        discriminator: t.discriminator.clone(),
        normalization: dataset.normalization.clone(),
    };
    let mut good = snapshot(&trainer);
    let mut history = Vec::with_capacity(config.epochs);
    let mut batch_losses = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut trainer.rng);
        let mut g_losses = Vec::new();
        let mut d_losses = Vec::new();
        let mut failure = None;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sequence> = chunk.iter().map(|&i| &data[i]).collect();
            let step = match config.objective {
                Objective::Mse => trainer.mse_step(&batch).map(|l| l.map(|l| (l, None))),
                Objective::Adversarial => trainer
                    .adversarial_step(&batch)
                    .map(|s| Some((s.generator_loss, Some(s.discriminator_loss)))),
            };
            match step {
                Ok(Some((g, d))) => {
                    if diverging(g) || d.is_some_and(diverging) {
                        failure = Some(format!("loss diverged in epoch {epoch}: {g}"));
                        break;
                    }
                    batch_losses.push(g);
                    g_losses.push(g);
                    d_losses.extend(d);
                }
                Ok(None) => {}
                Err(Error::Numerical(msg)) => {
                    failure = Some(format!("epoch {epoch}: {msg}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(msg) = failure {
            return Ok(TrainOutcome {
                model: good,
                history,
                batch_losses,
                diverged: Some(msg),
            });
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        history.push(EpochStats {
            epoch,
            generator_loss: mean(&g_losses),
            discriminator_loss: (!d_losses.is_empty()).then(|| mean(&d_losses)),
        });
        good = snapshot(&trainer);
    }
    Ok(TrainOutcome {
        model: good,
        history,
        batch_losses,
        diverged: None,
    })
}
