//! Non-autoregressive multiresolution decode order and lazy hidden-state upkeep.
//!
//! Positions in this module are 1-based, matching the usual `x_1 .. x_T`
//! notation: position `0` is a virtual start whose forward state is the learned
//! initial state, and position `T + 1` is a virtual end whose backward state is
//! the learned initial backward state. Sequence index `t` is position `t + 1`.
//!
//! The scheduler knows nothing about neural networks. Anything implementing
//! [`StepModel`] can be driven by [`impute_with`].

use crate::error::{Error, Result};
use crate::sequence::Mask;

/// Largest supported resolution count; strides are `2^(R - r)`.
pub const MAX_RESOLUTIONS: usize = 30;

/// How boundary gaps are handled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    /// The first step must be observed. Trailing gaps are closed by the
    /// virtual end pivot.
    #[default]
    Standard,
    /// Leading gaps are also allowed and use the virtual start pivot.
    ForwardPrediction,
}

/// One decode action: fill `target` from the forward state at `left` and the
/// backward state at `right`, using decoder head `resolution`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScheduleStep {
    pub left: usize,
    pub right: usize,
    pub resolution: usize,
    pub target: usize,
}

impl ScheduleStep {
    pub fn is_virtual_start(&self) -> bool {
        self.left == 0
    }

    pub fn is_virtual_end(&self, len: usize) -> bool {
        self.right == len + 1
    }
}

/// Stride of head `r` out of `resolutions`: `2^(R - r)`.
pub fn stride(resolutions: usize, r: usize) -> usize {
    1usize << (resolutions - r)
}

/// Coarsest head whose stride fits at most half of the pivot distance.
pub fn resolution_for_gap(resolutions: usize, width: usize) -> usize {
    (1..=resolutions)
        .find(|&r| 2 * stride(resolutions, r) <= width)
        .unwrap_or(resolutions)
}

fn check_resolutions(resolutions: usize) -> Result<()> {
    if resolutions == 0 || resolutions > MAX_RESOLUTIONS {
        return Err(Error::Config(format!(
            "resolution count must be in 1..={MAX_RESOLUTIONS}, got {resolutions}"
        )));
    }
    Ok(())
}

/// The next decode action for `mask`, or `None` once every step is observed.
pub fn next_step(mask: &Mask, resolutions: usize, mode: Mode) -> Result<Option<ScheduleStep>> {
    check_resolutions(resolutions)?;
    let bits = mask.bits();
    let first_missing = match bits.iter().position(|&b| !b) {
        Some(t) => t,
        None => return Ok(None),
    };
    if first_missing == 0 && mode == Mode::Standard {
        return Err(Error::NoLeftPivot { position: 1 });
    }
    // index t maps to position t + 1, so the left pivot sits at position t
    let left = first_missing;
    let right = bits[first_missing..]
        .iter()
        .position(|&b| b)
        .map_or(bits.len() + 1, |off| first_missing + off + 1);
    let resolution = resolution_for_gap(resolutions, right - left);
    Ok(Some(ScheduleStep {
        left,
        right,
        resolution,
        target: left + stride(resolutions, resolution),
    }))
}

/// Full decode order. Each missing position appears exactly once.
pub fn run_schedule(mask: &Mask, resolutions: usize, mode: Mode) -> Result<Vec<ScheduleStep>> {
    let mut mask = mask.clone();
    let mut steps = Vec::with_capacity(mask.missing_count());
    while let Some(step) = next_step(&mask, resolutions, mode)? {
        mask.set_observed(step.target - 1);
        steps.push(step);
    }
    Ok(steps)
}

/// A recurrent encoder/decoder pair the scheduler can drive.
pub trait StepModel {
    type State: Clone;
    type Value: Clone;

    fn initial_forward(&mut self) -> Result<Self::State>;
    fn initial_backward(&mut self) -> Result<Self::State>;
    /// `h_t^f = f_f(h_{t-1}^f, [x_t, m_t])`.
    fn forward_step(&mut self, prev: &Self::State, value: &Self::Value, observed: bool)
        -> Result<Self::State>;
    /// `h_t^b = f_b(h_{t+1}^b, [x_t, m_t])`.
    fn backward_step(&mut self, next: &Self::State, value: &Self::Value, observed: bool)
        -> Result<Self::State>;
    fn decode(
        &mut self,
        resolution: usize,
        forward: &Self::State,
        backward: &Self::State,
    ) -> Result<Self::Value>;
}

/// Cell-evaluation counters, per position.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EvalCounts {
    /// Indexed by position `0..=T+1`.
    pub forward: Vec<u32>,
    pub backward: Vec<u32>,
    pub decodes: usize,
}

impl EvalCounts {
    pub fn forward_total(&self) -> usize {
        self.forward.iter().map(|&c| c as usize).sum()
    }

    pub fn backward_total(&self) -> usize {
        self.backward.iter().map(|&c| c as usize).sum()
    }
}

/// Hidden states per position with validity flags.
///
/// A valid forward entry at `p` was computed from the valid entry at `p - 1`
/// and the current input at `p`; a valid backward entry from `p + 1`.
#[derive(Clone, Debug)]
pub struct StateCache<S> {
    forward: Vec<S>,
    backward: Vec<S>,
    forward_valid: Vec<bool>,
    backward_valid: Vec<bool>,
    counts: EvalCounts,
}

impl<S: Clone> StateCache<S> {
    /// Runs the full forward and backward passes over the (zero-filled) input.
    pub fn initialize<M>(model: &mut M, values: &[M::Value], mask: &Mask) -> Result<Self>
    where
        M: StepModel<State = S>,
    {
        let len = values.len();
        if mask.len() != len {
            return Err(Error::Mask(format!(
                "mask length {} does not match sequence length {len}",
                mask.len()
            )));
        }
        let mut counts = EvalCounts {
            forward: vec![0; len + 2],
            backward: vec![0; len + 2],
            decodes: 0,
        };
        let mut forward = Vec::with_capacity(len + 2);
        forward.push(model.initial_forward()?);
        for p in 1..=len {
            let h = model.forward_step(&forward[p - 1], &values[p - 1], mask.is_observed(p - 1))?;
            counts.forward[p] += 1;
            forward.push(h);
        }
        // placeholder at T + 1 keeps indices aligned; it is never read
        forward.push(forward[len].clone());

        let mut backward = vec![model.initial_backward()?; len + 2];
        for p in (1..=len).rev() {
            backward[p] =
                model.backward_step(&backward[p + 1], &values[p - 1], mask.is_observed(p - 1))?;
            counts.backward[p] += 1;
        }
        Ok(StateCache {
            forward,
            backward,
            forward_valid: vec![true; len + 2],
            backward_valid: vec![true; len + 2],
            counts,
        })
    }

    pub fn counts(&self) -> &EvalCounts {
        &self.counts
    }

    pub fn into_counts(self) -> EvalCounts {
        self.counts
    }

    fn len(&self) -> usize {
        self.forward.len() - 2
    }

    /// Brings the forward state at `step.left` and the backward state at
    /// `step.right` up to date and returns copies of both.
    pub fn ensure_states<M>(
        &mut self,
        model: &mut M,
        step: &ScheduleStep,
        values: &[M::Value],
        mask: &Mask,
    ) -> Result<(S, S)>
    where
        M: StepModel<State = S>,
    {
        let i = step.left;
        let mut k = i;
        while !self.forward_valid[k] {
            k -= 1;
        }
        for p in k + 1..=i {
            self.forward[p] =
                model.forward_step(&self.forward[p - 1], &values[p - 1], mask.is_observed(p - 1))?;
            self.forward_valid[p] = true;
            self.counts.forward[p] += 1;
        }

        let j = step.right;
        let mut k = j;
        while !self.backward_valid[k] {
            k += 1;
        }
        for p in (j..k).rev() {
            self.backward[p] =
                model.backward_step(&self.backward[p + 1], &values[p - 1], mask.is_observed(p - 1))?;
            self.backward_valid[p] = true;
            self.counts.backward[p] += 1;
        }
        Ok((self.forward[i].clone(), self.backward[j].clone()))
    }

    /// Marks states that depend on the input at `position` as stale.
    pub fn invalidate(&mut self, position: usize) {
        let len = self.len();
        for p in position..=len {
            self.forward_valid[p] = false;
        }
        for p in 1..=position {
            self.backward_valid[p] = false;
        }
    }
}

/// Result of driving a [`StepModel`] through the full schedule.
#[derive(Clone, Debug)]
pub struct Imputation<V> {
    pub values: Vec<V>,
    pub steps: Vec<ScheduleStep>,
    pub counts: EvalCounts,
}

/// Fills every unobserved entry of `values`, coarse to fine.
///
/// `values` holds one entry per step; unobserved entries are placeholders
/// (zero-filled) and are replaced by decoded values. Observed entries are
/// never touched.
pub fn impute_with<M: StepModel>(
    model: &mut M,
    mut values: Vec<M::Value>,
    mask: &Mask,
    resolutions: usize,
    mode: Mode,
) -> Result<Imputation<M::Value>> {
    check_resolutions(resolutions)?;
    // surface pivot errors before spending any cell evaluations
    next_step(mask, resolutions, mode)?;
    let mut cache = StateCache::initialize(model, &values, mask)?;
    let mut mask = mask.clone();
    let mut steps = Vec::with_capacity(mask.missing_count());
    while let Some(step) = next_step(&mask, resolutions, mode)? {
        let (hf, hb) = cache.ensure_states(model, &step, &values, &mask)?;
        let decoded = model.decode(step.resolution, &hf, &hb)?;
        cache.counts.decodes += 1;
        let t = step.target - 1;
        values[t] = decoded;
        mask.set_observed(t);
        cache.invalidate(step.target);
        steps.push(step);
    }
    Ok(Imputation {
        values,
        steps,
        counts: cache.into_counts(),
    })
}

/// Resolution count whose coarsest stride `2^R` is the power of two nearest to
/// `mean_gap`.
pub fn default_resolutions(mean_gap: f64) -> usize {
    if !(mean_gap > 1.0) {
        return 1;
    }
    (mean_gap.log2().round() as usize).clamp(1, MAX_RESOLUTIONS)
}

/// Renders a schedule as `step k: i j r t*` lines (1-based positions).
pub fn format_schedule(steps: &[ScheduleStep]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(k, s)| {
            format!(
                "step {}: {} {} {} {}\n",
                k + 1,
                s.left,
                s.right,
                s.resolution,
                s.target
            )
        })
        .collect()
}
