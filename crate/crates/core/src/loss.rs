//! Imputation losses: masked mean squared error and the per-step adversarial
//! objective.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::sequence::{Mask, Sequence};

/// Probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before `log`.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MseLoss {
    pub value: f64,
    /// Set when the mask had no missing steps; `value` is then 0.
    pub nothing_missing: bool,
}

/// Mean over missing steps of the squared Euclidean distance per step.
pub fn mse_loss(imputed: &Sequence, truth: &Sequence, mask: &Mask) -> Result<MseLoss> {
    if imputed.len() != truth.len() || imputed.dim() != truth.dim() || mask.len() != truth.len() {
        return Err(Error::shape(
            "mse_loss",
            format!(
                "imputed {}x{}, truth {}x{}, mask {}",
                imputed.len(),
                imputed.dim(),
                truth.len(),
                truth.dim(),
                mask.len()
            ),
        ));
    }
    let missing: Vec<usize> = mask.missing_indices().collect();
    if missing.is_empty() {
        return Ok(MseLoss {
            value: 0.0,
            nothing_missing: true,
        });
    }
    let total: f64 = missing
        .iter()
        .map(|&t| {
            imputed
                .step(t)
                .iter()
                .zip(truth.step(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum();
    Ok(MseLoss {
        value: total / missing.len() as f64,
        nothing_missing: false,
    })
}

/// Graph version of [`mse_loss`]: `steps[t]` is the imputed node for step `t`.
/// Returns `None` when nothing is missing.
pub fn mse_loss_graph(
    g: &mut Graph,
    steps: &[NodeId],
    truth: &Sequence,
    mask: &Mask,
) -> Result<Option<NodeId>> {
    if steps.len() != truth.len() || mask.len() != truth.len() {
        return Err(Error::shape(
            "mse_loss",
            format!("{} steps, truth of {}, mask of {}", steps.len(), truth.len(), mask.len()),
        ));
    }
    let mut diffs = Vec::new();
    for t in mask.missing_indices() {
        let target = g.constant_vec(truth.step(t).to_vec());
        diffs.push(g.sub(steps[t], target)?);
    }
    if diffs.is_empty() {
        return Ok(None);
    }
    let count = diffs.len() as f64;
    let joined = g.concat(&diffs)?;
    let sq = g.square(joined);
    let total = g.sum(sq);
    Ok(Some(g.scale(total, 1.0 / count)))
}

/// Per-step terms of the adversarial objective on a graph.
#[derive(Clone, Copy, Debug)]
pub struct AdversarialLosses {
    /// `sum_t log(1 - D(fake_t))`, minimized by the generator.
    pub generator: NodeId,
    /// `-[sum_t log D(real_t) + sum_t log(1 - D(fake_t))]`, minimized by the
    /// discriminator.
    pub discriminator: NodeId,
}

fn sum_log(g: &mut Graph, probs: &[NodeId], complement: bool) -> Result<NodeId> {
    if probs.is_empty() {
        return Err(Error::shape("adversarial_losses", "empty sequence"));
    }
    let joined = g.concat(probs)?;
    let clamped = g.clamp(joined, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let arg = if complement {
        let neg = g.scale(clamped, -1.0);
        g.offset(neg, 1.0)
    } else {
        clamped
    };
    let logs = g.log(arg)?;
    Ok(g.sum(logs))
}

/// Builds both adversarial losses from per-step discriminator probabilities
/// (each a `[1]` node) on real and imputed sequences.
pub fn adversarial_losses(
    g: &mut Graph,
    real_probs: &[NodeId],
    fake_probs: &[NodeId],
) -> Result<AdversarialLosses> {
    let fake_term = sum_log(g, fake_probs, true)?;
    if !g.scalar(fake_term).is_finite() {
        return Err(Error::Numerical("non-finite generator loss".into()));
    }
    let real_term = sum_log(g, real_probs, false)?;
    let total = g.add(real_term, fake_term)?;
    let discriminator = g.scale(total, -1.0);
    if !g.scalar(discriminator).is_finite() {
        return Err(Error::Numerical("non-finite discriminator loss".into()));
    }
    Ok(AdversarialLosses {
        generator: fake_term,
        discriminator,
    })
}
