//! Reference imputers: linear interpolation and k-nearest-neighbour sequences.
//! The single-resolution ablation is a generator built with one resolution.

use crate::error::{Error, Result};
use crate::sequence::{Mask, Sequence};

pub const DEFAULT_K: usize = 5;

fn check(sequence: &Sequence, mask: &Mask) -> Result<()> {
    if mask.len() != sequence.len() {
        return Err(Error::Mask(format!(
            "mask length {} does not match sequence length {}",
            mask.len(),
            sequence.len()
        )));
    }
    if mask.observed_indices().next().is_none() {
        return Err(Error::Data("cannot impute a sequence with no observed step".into()));
    }
    Ok(())
}

/// Interpolates each gap between its two closest observed steps; leading and
/// trailing gaps repeat the nearest observation.
pub fn linear_impute(sequence: &Sequence, mask: &Mask) -> Result<Sequence> {
    check(sequence, mask)?;
    let observed: Vec<usize> = mask.observed_indices().collect();
    let mut out = sequence.clone();
    let first = observed[0];
    let last = *observed.last().unwrap();
    for t in 0..first {
        out.step_mut(t).copy_from_slice(sequence.step(first));
    }
    for t in last + 1..sequence.len() {
        out.step_mut(t).copy_from_slice(sequence.step(last));
    }
    for pair in observed.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let span = (b - a) as f64;
        for t in a + 1..b {
            let w = (t - a) as f64 / span;
            let (xa, xb) = (sequence.step(a), sequence.step(b));
            for (d, v) in out.step_mut(t).iter_mut().enumerate() {
                *v = xa[d] + w * (xb[d] - xa[d]);
            }
        }
    }
    Ok(out)
}

/// Training sequences searched by [`KnnIndex::impute`].
#[derive(Clone, Debug)]
pub struct KnnIndex {
    corpus: Vec<Sequence>,
    k: usize,
}

impl KnnIndex {
    pub fn new(corpus: Vec<Sequence>, k: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Data("nearest-neighbour index needs at least one sequence".into()));
        }
        if k == 0 || k > corpus.len() {
            return Err(Error::Config(format!(
                "k must be in 1..={}, got {k}",
                corpus.len()
            )));
        }
        let (len, dim) = (corpus[0].len(), corpus[0].dim());
        if corpus.iter().any(|s| s.len() != len || s.dim() != dim) {
            return Err(Error::Data("index sequences differ in shape".into()));
        }
        Ok(KnnIndex { corpus, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Mean squared difference over the observed entries of `query`.
    fn distance(candidate: &Sequence, query: &Sequence, observed: &[usize]) -> f64 {
        let mut total = 0.0;
        for &t in observed {
            for (a, b) in candidate.step(t).iter().zip(query.step(t)) {
                total += (a - b) * (a - b);
            }
        }
        total / (observed.len() * query.dim()) as f64
    }

    /// Indices of the `k` nearest training sequences, closest first. Ties go to
    /// the earlier sequence.
    pub fn neighbours(&self, query: &Sequence, mask: &Mask) -> Result<Vec<usize>> {
        check(query, mask)?;
        let reference = &self.corpus[0];
        if query.len() != reference.len() || query.dim() != reference.dim() {
            return Err(Error::Data(format!(
                "query is {}x{}, index holds {}x{}",
                query.len(),
                query.dim(),
                reference.len(),
                reference.dim()
            )));
        }
        let observed: Vec<usize> = mask.observed_indices().collect();
        let mut scored: Vec<(f64, usize)> = self
            .corpus
            .iter()
            .enumerate()
            .map(|(i, c)| (Self::distance(c, query, &observed), i))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(self.k).map(|(_, i)| i).collect())
    }

    /// Fills missing steps with the unweighted mean of the neighbours.
    pub fn impute(&self, query: &Sequence, mask: &Mask) -> Result<Sequence> {
        let nearest = self.neighbours(query, mask)?;
        let mut out = query.clone();
        let count = nearest.len() as f64;
        for t in mask.missing_indices() {
            let step = out.step_mut(t);
            step.iter_mut().for_each(|v| *v = 0.0);
            for &n in &nearest {
                for (v, x) in step.iter_mut().zip(self.corpus[n].step(t)) {
                    *v += x;
                }
            }
            step.iter_mut().for_each(|v| *v /= count);
        }
        Ok(out)
    }
}
