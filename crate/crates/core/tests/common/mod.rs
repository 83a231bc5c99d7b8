//! Central-difference gradient oracle shared by the integration tests.

#![allow(dead_code)]

use naomi::autodiff::{Graph, NodeId, Tensor};
use naomi::model::Parameterized;
use naomi::sequence::{Mask, Sequence};
use naomi::Rng;
use rand::Rng as _;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
pub struct Mismatch {
    pub leaf: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

fn loss_value<F>(leaves: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.param(t)).collect();
    let loss = build(&mut g, &ids);
    g.scalar(loss)
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central differences for every entry of every leaf. Returns the first entry
/// outside tolerance, if any.
pub fn gradcheck<F>(leaves: &[Tensor], build: F) -> Option<Mismatch>
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.param(t)).collect();
    let loss = build(&mut g, &ids);
    let grads = g.backward(loss).expect("scalar loss");
    for (leaf, t) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[leaf], t.len());
        for index in 0..t.len() {
            let mut plus = leaves.to_vec();
            plus[leaf].data_mut()[index] += STEP;
            let mut minus = leaves.to_vec();
            minus[leaf].data_mut()[index] -= STEP;
            let numeric = (loss_value(&plus, &build) - loss_value(&minus, &build)) / (2.0 * STEP);
            let a = analytic[index];
            let diff = (a - numeric).abs();
            if diff > ABS_FLOOR && diff > REL_TOL * a.abs().max(numeric.abs()) {
                return Some(Mismatch {
                    leaf,
                    index,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    None
}

pub fn uniform_vec(rng: &mut Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn uniform_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform_vec(rng, n, lo, hi)).unwrap()
}

/// `sum(out * w)` for fixed random weights, turning any node into a scalar
/// that exercises its whole Jacobian.
pub fn project(g: &mut Graph, out: NodeId, weights: &[f64]) -> NodeId {
    let w = g.constant(&Tensor::new(g.shape(out).to_vec(), weights.to_vec()).unwrap());
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

fn perturbed<M: Parameterized + Clone>(model: &M, flat: usize, delta: f64) -> M {
    let mut m = model.clone();
    let mut offset = 0;
    m.visit_mut("", &mut |_, t| {
        let n = t.len();
        if (offset..offset + n).contains(&flat) {
            t.data_mut()[flat - offset] += delta;
        }
        offset += n;
    });
    m
}

/// Gradcheck over every parameter of a model. `build` binds the model onto the
/// graph and returns the scalar loss plus the parameter leaves in visit order.
pub fn model_gradcheck<M, F>(model: &M, build: F) -> Option<(String, Mismatch)>
where
    M: Parameterized + Clone,
    F: Fn(&M, &mut Graph) -> (NodeId, Vec<NodeId>),
{
    let mut g = Graph::new();
    let (loss, ids) = build(model, &mut g);
    let grads = g.backward(loss).expect("scalar loss");
    let named = model.named_tensors();
    assert_eq!(ids.len(), named.len(), "leaf count must match visit order");
    let value_of = |m: &M| {
        let mut g = Graph::new();
        let (loss, _) = build(m, &mut g);
        g.scalar(loss)
    };
    let mut flat = 0;
    for (leaf, ((name, t), id)) in named.iter().zip(&ids).enumerate() {
        let analytic = grads.get_or_zeros(*id, t.len());
        for (index, &a) in analytic.iter().enumerate() {
            let numeric = (value_of(&perturbed(model, flat, STEP))
                - value_of(&perturbed(model, flat, -STEP)))
                / (2.0 * STEP);
            flat += 1;
            let diff = (a - numeric).abs();
            if diff > ABS_FLOOR && diff > REL_TOL * a.abs().max(numeric.abs()) {
                return Some((
                    name.clone(),
                    Mismatch {
                        leaf,
                        index,
                        analytic: a,
                        numeric,
                    },
                ));
            }
        }
    }
    None
}

/// Brute force: score every corpus entry, sort by (distance, index), average.
pub fn knn_oracle(corpus: &[Sequence], query: &Sequence, mask: &Mask, k: usize) -> Sequence {
    let observed: Vec<usize> = (0..mask.len()).filter(|&t| mask.is_observed(t)).collect();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (i, c) in corpus.iter().enumerate() {
        let mut sum = 0.0;
        for &t in &observed {
            for d in 0..query.dim() {
                let e = c.step(t)[d] - query.step(t)[d];
                sum += e * e;
            }
        }
        scored.push((sum / (observed.len() * query.dim()) as f64, i));
    }
    scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = query.clone();
    for t in 0..mask.len() {
        if mask.is_observed(t) {
            continue;
        }
        for d in 0..query.dim() {
            let total: f64 = scored[..k].iter().map(|&(_, i)| corpus[i].step(t)[d]).sum();
            out.step_mut(t)[d] = total / k as f64;
        }
    }
    out
}
