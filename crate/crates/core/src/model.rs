//! Forward/backward GRU encoders, resolution-indexed decoder heads and the
//! per-step discriminator.
//!
//! Parameters live in plain [`Tensor`]s. To evaluate or train, a model is bound
//! onto a [`Graph`], which records every parameter as a leaf; the order in which
//! leaves are recorded matches [`Parameterized::visit`], so gradients can be
//! matched back to tensors by position.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};
use crate::scheduler::{self, Imputation, Mode, StepModel};
use crate::sequence::{Mask, Sequence};
use crate::Rng;

/// Walks named parameter tensors in a fixed order.
pub trait Parameterized {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn uniform(rng: &mut Rng, shape: Vec<usize>, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape product matches data length")
}

/// Hyperparameters shared by the generator and the discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Values per step (D).
    pub dim: usize,
    pub hidden_size: usize,
    pub decoder_hidden: usize,
    /// Number of decoder heads (R).
    pub resolutions: usize,
    pub deterministic: bool,
    pub discriminator_hidden: usize,
}

impl ModelConfig {
    pub fn new(dim: usize, resolutions: usize) -> Self {
        ModelConfig {
            dim,
            hidden_size: 64,
            decoder_hidden: 64,
            resolutions,
            deterministic: true,
            discriminator_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden_size == 0 || self.decoder_hidden == 0 {
            return Err(Error::Config("dimensions must be positive".into()));
        }
        if self.resolutions == 0 || self.resolutions > scheduler::MAX_RESOLUTIONS {
            return Err(Error::Config(format!(
                "resolutions must be in 1..={}, got {}",
                scheduler::MAX_RESOLUTIONS,
                self.resolutions
            )));
        }
        if self.discriminator_hidden == 0 {
            return Err(Error::Config("discriminator_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Gated recurrent unit. Every gate matrix is `hidden x (input + hidden)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_update: Tensor,
    pub w_reset: Tensor,
    pub w_candidate: Tensor,
    pub b_update: Tensor,
    pub b_reset: Tensor,
    pub b_candidate: Tensor,
}

impl GruCell {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let fan_in = input_dim + hidden_dim;
        let w = |rng: &mut Rng| uniform(rng, vec![hidden_dim, fan_in], fan_in);
        let b = |rng: &mut Rng| uniform(rng, vec![hidden_dim], fan_in);
        GruCell {
            input_dim,
            hidden_dim,
            w_update: w(rng),
            w_reset: w(rng),
            w_candidate: w(rng),
            b_update: b(rng),
            b_reset: b(rng),
            b_candidate: b(rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(vec![hidden_dim, input_dim + hidden_dim]);
        let b = || Tensor::zeros(vec![hidden_dim]);
        GruCell {
            input_dim,
            hidden_dim,
            w_update: w(),
            w_reset: w(),
            w_candidate: w(),
            b_update: b(),
            b_reset: b(),
            b_candidate: b(),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundGru {
        BoundGru {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_update: g.param(&self.w_update),
            w_reset: g.param(&self.w_reset),
            w_candidate: g.param(&self.w_candidate),
            b_update: g.param(&self.b_update),
            b_reset: g.param(&self.b_reset),
            b_candidate: g.param(&self.b_candidate),
        }
    }
}

impl Parameterized for GruCell {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "w_update"), &self.w_update);
        f(join(prefix, "w_reset"), &self.w_reset);
        f(join(prefix, "w_candidate"), &self.w_candidate);
        f(join(prefix, "b_update"), &self.b_update);
        f(join(prefix, "b_reset"), &self.b_reset);
        f(join(prefix, "b_candidate"), &self.b_candidate);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w_update"), &mut self.w_update);
        f(join(prefix, "w_reset"), &mut self.w_reset);
        f(join(prefix, "w_candidate"), &mut self.w_candidate);
        f(join(prefix, "b_update"), &mut self.b_update);
        f(join(prefix, "b_reset"), &mut self.b_reset);
        f(join(prefix, "b_candidate"), &mut self.b_candidate);
    }
}

/// A [`GruCell`] recorded on a graph.
#[derive(Clone, Copy, Debug)]
pub struct BoundGru {
    input_dim: usize,
    hidden_dim: usize,
    w_update: NodeId,
    w_reset: NodeId,
    w_candidate: NodeId,
    b_update: NodeId,
    b_reset: NodeId,
    b_candidate: NodeId,
}

impl BoundGru {
    /// Parameter leaves in [`Parameterized::visit`] order.
    pub fn ids(&self) -> [NodeId; 6] {
        [
            self.w_update,
            self.w_reset,
            self.w_candidate,
            self.b_update,
            self.b_reset,
            self.b_candidate,
        ]
    }

    /// One recurrence step: `h' = h + z * (c - h)`.
    pub fn step(&self, g: &mut Graph, h: NodeId, input: NodeId) -> Result<NodeId> {
        if g.shape(input) != [self.input_dim] || g.shape(h) != [self.hidden_dim] {
            return Err(Error::shape(
                "gru_step",
                format!(
                    "expected input [{}] and state [{}], got {:?} and {:?}",
                    self.input_dim,
                    self.hidden_dim,
                    g.shape(input),
                    g.shape(h)
                ),
            ));
        }
        let xh = g.concat(&[input, h])?;
        let zl = g.matmul(self.w_update, xh)?;
        let zl = g.add(zl, self.b_update)?;
        let z = g.sigmoid(zl);
        let rl = g.matmul(self.w_reset, xh)?;
        let rl = g.add(rl, self.b_reset)?;
        let r = g.sigmoid(rl);
        let rh = g.mul(r, h)?;
        let xrh = g.concat(&[input, rh])?;
        let cl = g.matmul(self.w_candidate, xrh)?;
        let cl = g.add(cl, self.b_candidate)?;
        let c = g.tanh(cl);
        let delta = g.sub(c, h)?;
        let zd = g.mul(z, delta)?;
        g.add(h, zd)
    }
}

/// Forward and backward encoders over `I = [X, M]` plus their learned
/// initial states.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub forward: GruCell,
    pub backward: GruCell,
    pub h0_forward: Tensor,
    pub h0_backward: Tensor,
}

impl Encoder {
    pub fn new(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Encoder {
            forward: GruCell::new(2 * dim, hidden, rng),
            backward: GruCell::new(2 * dim, hidden, rng),
            h0_forward: Tensor::zeros(vec![hidden]),
            h0_backward: Tensor::zeros(vec![hidden]),
        }
    }
}

impl Parameterized for Encoder {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.forward.visit(&join(prefix, "forward"), f);
        self.backward.visit(&join(prefix, "backward"), f);
        f(join(prefix, "h0_forward"), &self.h0_forward);
        f(join(prefix, "h0_backward"), &self.h0_backward);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.forward.visit_mut(&join(prefix, "forward"), f);
        self.backward.visit_mut(&join(prefix, "backward"), f);
        f(join(prefix, "h0_forward"), &mut self.h0_forward);
        f(join(prefix, "h0_backward"), &mut self.h0_backward);
    }
}

/// Two-layer head `g^(r)`: `[h_f, h_b] -> tanh -> [mu, raw_sigma]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderHead {
    pub w_hidden: Tensor,
    pub b_hidden: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl DecoderHead {
    pub fn new(state: usize, hidden: usize, dim: usize, rng: &mut Rng) -> Self {
        DecoderHead {
            w_hidden: uniform(rng, vec![hidden, 2 * state], 2 * state),
            b_hidden: uniform(rng, vec![hidden], 2 * state),
            w_out: uniform(rng, vec![2 * dim, hidden], hidden),
            b_out: uniform(rng, vec![2 * dim], hidden),
        }
    }
}

impl Parameterized for DecoderHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        f(join(prefix, "w_hidden"), &self.w_hidden);
        f(join(prefix, "b_hidden"), &self.b_hidden);
        f(join(prefix, "w_out"), &self.w_out);
        f(join(prefix, "b_out"), &self.b_out);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w_hidden"), &mut self.w_hidden);
        f(join(prefix, "b_hidden"), &mut self.b_hidden);
        f(join(prefix, "w_out"), &mut self.w_out);
        f(join(prefix, "b_out"), &mut self.b_out);
    }
}

#[derive(Clone, Copy, Debug)]
struct BoundHead {
    w_hidden: NodeId,
    b_hidden: NodeId,
    w_out: NodeId,
    b_out: NodeId,
}

/// Encoder plus one decoder head per resolution: the imputation model `G_θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub heads: Vec<DecoderHead>,
}

impl Generator {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(config.dim, config.hidden_size, rng);
        let heads = (0..config.resolutions)
            .map(|_| DecoderHead::new(config.hidden_size, config.decoder_hidden, config.dim, rng))
            .collect();
        Ok(Generator {
            config,
            encoder,
            heads,
        })
    }

    /// Records every parameter on `g`, in [`Parameterized::visit`] order.
    pub fn bind(&self, g: &mut Graph) -> BoundGenerator {
        let forward = self.encoder.forward.bind(g);
        let backward = self.encoder.backward.bind(g);
        let h0_forward = g.param(&self.encoder.h0_forward);
        let h0_backward = g.param(&self.encoder.h0_backward);
        let heads = self
            .heads
            .iter()
            .map(|h| BoundHead {
                w_hidden: g.param(&h.w_hidden),
                b_hidden: g.param(&h.b_hidden),
                w_out: g.param(&h.w_out),
                b_out: g.param(&h.b_out),
            })
            .collect();
        let dim = self.config.dim;
        BoundGenerator {
            dim,
            resolutions: self.config.resolutions,
            deterministic: self.config.deterministic,
            forward,
            backward,
            h0_forward,
            h0_backward,
            heads,
            observed_channel: g.constant_vec(vec![1.0; dim]),
            missing_channel: g.constant_vec(vec![0.0; dim]),
        }
    }

    /// Imputes `sequence` under `mask`. Observed steps are copied from the input.
    ///
    /// `rng` supplies the reparameterization noise and is required when the
    /// heads are stochastic.
    pub fn impute(
        &self,
        sequence: &Sequence,
        mask: &Mask,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<Sequence> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let result = bound.impute(&mut g, sequence, mask, mode, rng)?;
        let mut out = sequence.clone();
        for t in mask.missing_indices() {
            out.step_mut(t).copy_from_slice(g.value(result.values[t]));
        }
        Ok(out)
    }
}

impl Parameterized for Generator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        for (r, head) in self.heads.iter().enumerate() {
            head.visit(&join(prefix, &format!("decoder.{}", r + 1)), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        for (r, head) in self.heads.iter_mut().enumerate() {
            head.visit_mut(&join(prefix, &format!("decoder.{}", r + 1)), f);
        }
    }
}

/// A [`Generator`] recorded on a graph.
#[derive(Clone, Debug)]
pub struct BoundGenerator {
    dim: usize,
    resolutions: usize,
    deterministic: bool,
    forward: BoundGru,
    backward: BoundGru,
    h0_forward: NodeId,
    h0_backward: NodeId,
    heads: Vec<BoundHead>,
    observed_channel: NodeId,
    missing_channel: NodeId,
}

impl BoundGenerator {
    /// Parameter leaves in [`Parameterized::visit`] order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        ids.extend(self.forward.ids());
        ids.extend(self.backward.ids());
        ids.push(self.h0_forward);
        ids.push(self.h0_backward);
        for h in &self.heads {
            ids.extend([h.w_hidden, h.b_hidden, h.w_out, h.b_out]);
        }
        ids
    }

    pub fn resolutions(&self) -> usize {
        self.resolutions
    }

    pub fn h0_forward(&self) -> NodeId {
        self.h0_forward
    }

    pub fn h0_backward(&self) -> NodeId {
        self.h0_backward
    }

    fn encoder_input(&self, g: &mut Graph, value: NodeId, observed: bool) -> Result<NodeId> {
        if g.shape(value) != [self.dim] {
            return Err(Error::shape(
                "encoder_input",
                format!("expected step of [{}], got {:?}", self.dim, g.shape(value)),
            ));
        }
        let channel = if observed {
            self.observed_channel
        } else {
            self.missing_channel
        };
        g.concat(&[value, channel])
    }

    /// `f_f(h_{t-1}, [x_t, m_t])`. Unobserved values must already be zero-filled.
    pub fn encode_step_forward(
        &self,
        g: &mut Graph,
        h_prev: NodeId,
        value: NodeId,
        observed: bool,
    ) -> Result<NodeId> {
        let input = self.encoder_input(g, value, observed)?;
        self.forward.step(g, h_prev, input)
    }

    /// `f_b(h_{t+1}, [x_t, m_t])`.
    pub fn encode_step_backward(
        &self,
        g: &mut Graph,
        h_next: NodeId,
        value: NodeId,
        observed: bool,
    ) -> Result<NodeId> {
        let input = self.encoder_input(g, value, observed)?;
        self.backward.step(g, h_next, input)
    }

    /// Applies head `resolution` (1-based) to the pivot states. Returns the mean
    /// in deterministic mode, otherwise a reparameterized sample using `eps`.
    pub fn decode_head(
        &self,
        g: &mut Graph,
        resolution: usize,
        h_forward: NodeId,
        h_backward: NodeId,
        eps: Option<&[f64]>,
    ) -> Result<NodeId> {
        if resolution == 0 || resolution > self.resolutions {
            return Err(Error::domain(
                "decode_head",
                format!("resolution {resolution} outside 1..={}", self.resolutions),
            ));
        }
        let head = self.heads[resolution - 1];
        let joint = g.concat(&[h_forward, h_backward])?;
        let hidden = g.matmul(head.w_hidden, joint)?;
        let hidden = g.add(hidden, head.b_hidden)?;
        let hidden = g.tanh(hidden);
        let out = g.matmul(head.w_out, hidden)?;
        let out = g.add(out, head.b_out)?;
        let mu = g.slice(out, 0, self.dim)?;
        if self.deterministic {
            return Ok(mu);
        }
        let eps = eps.ok_or_else(|| {
            Error::domain("decode_head", "stochastic head needs a noise draw")
        })?;
        let raw = g.slice(out, self.dim, self.dim)?;
        let sigma = g.positive_scale(raw);
        g.gaussian_sample(mu, sigma, eps)
    }

    /// Runs the multiresolution schedule on `g`. The returned values are graph
    /// nodes, so a loss built from them backpropagates through every decode.
    pub fn impute(
        &self,
        g: &mut Graph,
        sequence: &Sequence,
        mask: &Mask,
        mode: Mode,
        rng: Option<&mut Rng>,
    ) -> Result<Imputation<NodeId>> {
        if sequence.dim() != self.dim {
            return Err(Error::Data(format!(
                "model expects {} values per step, sequence has {}",
                self.dim,
                sequence.dim()
            )));
        }
        if mask.len() != sequence.len() {
            return Err(Error::Mask(format!(
                "mask length {} does not match sequence length {}",
                mask.len(),
                sequence.len()
            )));
        }
        if !self.deterministic && rng.is_none() && !mask.is_complete() {
            return Err(Error::domain("impute", "stochastic heads need a noise source"));
        }
        let filled = sequence.zero_filled(mask);
        let values: Vec<NodeId> = filled.rows().map(|row| g.constant_vec(row.to_vec())).collect();
        let mut stepper = GraphStepper {
            graph: g,
            model: self,
            rng,
        };
        scheduler::impute_with(&mut stepper, values, mask, self.resolutions, mode)
    }
}

struct GraphStepper<'a, 'r> {
    graph: &'a mut Graph,
    model: &'a BoundGenerator,
    rng: Option<&'r mut Rng>,
}

impl StepModel for GraphStepper<'_, '_> {
    type State = NodeId;
    type Value = NodeId;

    fn initial_forward(&mut self) -> Result<NodeId> {
        Ok(self.model.h0_forward)
    }

    fn initial_backward(&mut self) -> Result<NodeId> {
        Ok(self.model.h0_backward)
    }

    fn forward_step(&mut self, prev: &NodeId, value: &NodeId, observed: bool) -> Result<NodeId> {
        self.model
            .encode_step_forward(self.graph, *prev, *value, observed)
    }

    fn backward_step(&mut self, next: &NodeId, value: &NodeId, observed: bool) -> Result<NodeId> {
        self.model
            .encode_step_backward(self.graph, *next, *value, observed)
    }

    fn decode(&mut self, resolution: usize, forward: &NodeId, backward: &NodeId) -> Result<NodeId> {
        let eps = match (self.model.deterministic, self.rng.as_deref_mut()) {
            (true, _) => None,
            (false, Some(rng)) => Some(
                (0..self.model.dim)
                    .map(|_| StandardNormal.sample(rng))
                    .collect::<Vec<f64>>(),
            ),
            (false, None) => {
                return Err(Error::domain("decode", "stochastic heads need a noise source"))
            }
        };
        self.model
            .decode_head(self.graph, resolution, *forward, *backward, eps.as_deref())
    }
}

/// Forward GRU over the steps with a per-step `sigmoid(w . h_t + b)` head.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub dim: usize,
    pub cell: GruCell,
    pub h0: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

impl Discriminator {
    pub fn new(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Discriminator {
            dim,
            cell: GruCell::new(dim, hidden, rng),
            h0: Tensor::zeros(vec![hidden]),
            w_out: uniform(rng, vec![1, hidden], hidden),
            b_out: uniform(rng, vec![1], hidden),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Discriminator {
            dim,
            cell: GruCell::zeros(dim, hidden),
            h0: Tensor::zeros(vec![hidden]),
            w_out: Tensor::zeros(vec![1, hidden]),
            b_out: Tensor::zeros(vec![1]),
        }
    }

    pub fn bind(&self, g: &mut Graph) -> BoundDiscriminator {
        BoundDiscriminator {
            dim: self.dim,
            cell: self.cell.bind(g),
            h0: g.param(&self.h0),
            w_out: g.param(&self.w_out),
            b_out: g.param(&self.b_out),
        }
    }

    /// Per-step probabilities that each step comes from real data.
    pub fn probabilities(&self, sequence: &Sequence) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g);
        let steps: Vec<NodeId> = sequence.rows().map(|r| g.constant_vec(r.to_vec())).collect();
        let probs = bound.discriminate(&mut g, &steps)?;
        Ok(probs.iter().map(|&p| g.scalar(p)).collect())
    }
}

impl Parameterized for Discriminator {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Tensor)) {
        self.cell.visit(&join(prefix, "cell"), f);
        f(join(prefix, "h0"), &self.h0);
        f(join(prefix, "w_out"), &self.w_out);
        f(join(prefix, "b_out"), &self.b_out);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.cell.visit_mut(&join(prefix, "cell"), f);
        f(join(prefix, "h0"), &mut self.h0);
        f(join(prefix, "w_out"), &mut self.w_out);
        f(join(prefix, "b_out"), &mut self.b_out);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDiscriminator {
    dim: usize,
    cell: BoundGru,
    h0: NodeId,
    w_out: NodeId,
    b_out: NodeId,
}

impl BoundDiscriminator {
    /// Parameter leaves in [`Parameterized::visit`] order.
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut ids = self.cell.ids().to_vec();
        ids.extend([self.h0, self.w_out, self.b_out]);
        ids
    }

    /// One probability node (shape `[1]`) per step, each strictly inside (0, 1)
    /// for finite inputs.
    pub fn discriminate(&self, g: &mut Graph, steps: &[NodeId]) -> Result<Vec<NodeId>> {
        let mut h = self.h0;
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            if g.shape(x) != [self.dim] {
                return Err(Error::shape(
                    "discriminate",
                    format!("expected step of [{}], got {:?}", self.dim, g.shape(x)),
                ));
            }
            if g.value(x).iter().any(|v| v.is_nan()) {
                return Err(Error::domain("discriminate", "NaN in input sequence"));
            }
            h = self.cell.step(g, h, x)?;
            let logit = g.matmul(self.w_out, h)?;
            let logit = g.add(logit, self.b_out)?;
            out.push(g.sigmoid(logit));
        }
        Ok(out)
    }
}
