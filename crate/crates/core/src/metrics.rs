//! Trajectory-quality statistics for sets of imputed sequences.
//!
//! Sequences with an even number of values per step are read as agents of
//! `(x, y)` pairs; otherwise the whole step is treated as a single point.
//! Aggregates are means over sequences, summed in sorted order so that the
//! result does not depend on the order of the input set.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss;
use crate::parallel::{self, Execution};
use crate::sequence::{Mask, Sequence};

/// Default distance under which a point counts as touching a wall.
pub const WALL_DELTA: f64 = 0.01;

/// Velocity components at or below this magnitude carry no sign.
const SIGN_EPS: f64 = 1e-12;

/// Axis-aligned box; even coordinates use `x`, odd coordinates use `y`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Bounds {
    pub fn unit() -> Self {
        Bounds {
            x: (0.0, 1.0),
            y: (0.0, 1.0),
        }
    }

    pub fn axis(&self, coord: usize) -> (f64, f64) {
        if coord.is_multiple_of(2) {
            self.x
        } else {
            self.y
        }
    }

    /// Box available to the centre of a ball of radius `r`.
    pub fn shrink(&self, r: f64) -> Self {
        Bounds {
            x: (self.x.0 + r, self.x.1 - r),
            y: (self.y.0 + r, self.y.1 - r),
        }
    }

    fn contains(&self, p: &[f64]) -> bool {
        p.iter().enumerate().all(|(c, &v)| {
            let (lo, hi) = self.axis(c);
            v >= lo && v <= hi
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Limits for the ball centre (table shrunk by the ball radius).
    pub walls: Bounds,
    /// Region outside of which a point is out of bounds.
    pub court: Bounds,
    pub wall_delta: f64,
}

impl MetricsConfig {
    pub fn with_radius(radius: f64) -> Self {
        MetricsConfig {
            walls: Bounds::unit().shrink(radius),
            court: Bounds::unit(),
            wall_delta: WALL_DELTA,
        }
    }
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig::with_radius(0.0)
    }
}

type Point = Vec<f64>;

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    norm(&diff(a, b))
}

fn sign(v: f64) -> i8 {
    if v > SIGN_EPS {
        1
    } else if v < -SIGN_EPS {
        -1
    } else {
        0
    }
}

/// Splits a sequence into per-agent point lists.
pub fn agents(sequence: &Sequence) -> Vec<Vec<Point>> {
    let dim = sequence.dim();
    let (count, width) = if dim >= 2 && dim.is_multiple_of(2) {
        (dim / 2, 2)
    } else {
        (1, dim)
    };
    (0..count)
        .map(|a| {
            sequence
                .rows()
                .map(|row| row[a * width..(a + 1) * width].to_vec())
                .collect()
        })
        .collect()
}

/// Points `t` where some velocity component turns against its last non-zero
/// direction. Velocity `v_t` is `p_{t+1} - p_t`. Returns `(t, component)`.
pub fn direction_reversals(points: &[Point]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let Some(first) = points.first() else {
        return out;
    };
    let mut last = vec![0i8; first.len()];
    for t in 0..points.len().saturating_sub(1) {
        let v = diff(&points[t + 1], &points[t]);
        for (c, &vc) in v.iter().enumerate() {
            let s = sign(vc);
            if s == 0 {
                continue;
            }
            if last[c] != 0 && s != last[c] {
                out.push((t, c));
            }
            last[c] = s;
        }
    }
    out
}

fn touches_wall(p: &[f64], walls: &Bounds, delta: f64) -> bool {
    p.iter().enumerate().any(|(c, &v)| {
        let (lo, hi) = walls.axis(c);
        (v - lo).abs() <= delta || (hi - v).abs() <= delta
    })
}

/// Maximal runs of points containing no wall contact and no direction
/// reversal. Breakpoints themselves belong to no run. The two path ends are
/// always breakpoints: a reversal on the first or last step cannot be seen.
pub fn straight_segments(points: &[Point], walls: Option<&Bounds>, delta: f64) -> Vec<Range<usize>> {
    let mut broken = vec![false; points.len()];
    if let Some(n) = points.len().checked_sub(1) {
        broken[0] = true;
        broken[n] = true;
    }
    for (t, _) in direction_reversals(points) {
        broken[t] = true;
    }
    if let Some(w) = walls {
        for (t, p) in points.iter().enumerate() {
            if touches_wall(p, w, delta) {
                broken[t] = true;
            }
        }
    }
    let mut out = Vec::new();
    let mut start = None;
    for (t, &b) in broken.iter().enumerate() {
        match (b, start) {
            (false, None) => start = Some(t),
            (true, Some(s)) => {
                out.push(s..t);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(s..points.len());
    }
    out
}

fn arclength(points: &[Point]) -> f64 {
    points.windows(2).map(|w| dist(&w[1], &w[0])).sum()
}

/// Arclength over chord for one run of points.
pub fn segment_sinuosity(points: &[Point]) -> Option<f64> {
    let chord = dist(points.last()?, points.first()?);
    if chord < 1e-9 {
        return None;
    }
    Some(arclength(points) / chord)
}

/// Arclength-weighted mean sinuosity over straight segments with at least
/// three points. `None` when no segment qualifies.
pub fn sinuosity(points: &[Point], walls: Option<&Bounds>, delta: f64) -> Option<f64> {
    let mut weighted = 0.0;
    let mut weight = 0.0;
    for seg in straight_segments(points, walls, delta) {
        if seg.len() < 3 {
            continue;
        }
        let run = &points[seg];
        if let Some(s) = segment_sinuosity(run) {
            let len = arclength(run);
            weighted += s * len;
            weight += len;
        }
    }
    (weight > 0.0).then(|| weighted / weight)
}

/// Mean absolute change of step length between consecutive steps.
pub fn step_change(points: &[Point]) -> f64 {
    if points.len() < 3 {
        return 0.0;
    }
    let lengths: Vec<f64> = points.windows(2).map(|w| dist(&w[1], &w[0])).collect();
    let changes: f64 = lengths.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    changes / (lengths.len() - 1) as f64
}

/// [`step_change`] restricted to step pairs that lie inside one straight
/// segment.
pub fn segment_step_change(points: &[Point], walls: Option<&Bounds>, delta: f64) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for seg in straight_segments(points, walls, delta) {
        let run = &points[seg];
        if run.len() < 3 {
            continue;
        }
        let lengths: Vec<f64> = run.windows(2).map(|w| dist(&w[1], &w[0])).collect();
        for w in lengths.windows(2) {
            total += (w[1] - w[0]).abs();
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Mean distance from each estimated reflection point to the nearest wall.
///
/// The reflection point of a reversal at `t` is where the incoming line
/// through `t-2, t-1` meets the outgoing line through `t+1, t+2`, so sampled
/// positions on either side of a bounce do not bias it; the estimate is kept
/// within one incoming step of the turning sample. `None` when the path
/// has no reversal away from its ends.
pub fn reflection_to_wall(points: &[Point], walls: &Bounds) -> Option<f64> {
    let n = points.len();
    let mut distances = Vec::new();
    for (t, c) in direction_reversals(points) {
        if t < 2 || t + 2 >= n {
            continue;
        }
        let (x1, x2) = (points[t - 2][c], points[t - 1][c]);
        let (x3, x4) = (points[t + 1][c], points[t + 2][c]);
        let (a, b) = (x2 - x1, x4 - x3);
        let turn = points[t][c];
        let apex = if (a - b).abs() < 1e-15 {
            turn
        } else {
            // x2 + a (s - (t-1)) = x3 + b (s - (t+1)), solved with s measured from t-1
            let s = (x3 - x2 - 2.0 * b) / (a - b);
            // a bounce lies within one incoming step past the turning sample
            let reach = turn + a;
            (x2 + a * s).clamp(turn.min(reach), turn.max(reach))
        };
        let (lo, hi) = walls.axis(c);
        distances.push((apex - lo).abs().min((hi - apex).abs()));
    }
    (!distances.is_empty()).then(|| distances.iter().sum::<f64>() / distances.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentStats {
    pub path_length: f64,
    pub oob_rate: f64,
    pub path_difference: f64,
    /// `None` with fewer than two agents.
    pub player_distance: Option<f64>,
}

/// Path length, out-of-bounds rate, max-min path difference and mean pairwise
/// agent distance for one multi-agent sequence.
pub fn multi_agent_stats(sequence: &Sequence, court: &Bounds) -> AgentStats {
    let agents = agents(sequence);
    let lengths: Vec<f64> = agents.iter().map(|a| arclength(a)).collect();
    let steps = sequence.len();
    let outside = agents
        .iter()
        .flat_map(|a| a.iter())
        .filter(|p| !court.contains(p))
        .count();
    let total_points = agents.len() * steps;
    let player_distance = (agents.len() >= 2 && steps > 0).then(|| {
        let mut sum_t = 0.0;
        for t in 0..steps {
            let mut pair_sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..agents.len() {
                for j in i + 1..agents.len() {
                    pair_sum += dist(&agents[i][t], &agents[j][t]);
                    pairs += 1;
                }
            }
            sum_t += pair_sum / pairs as f64;
        }
        sum_t / steps as f64
    });
    let max = lengths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = lengths.iter().copied().fold(f64::INFINITY, f64::min);
    AgentStats {
        path_length: lengths.iter().sum::<f64>() / lengths.len().max(1) as f64,
        oob_rate: if total_points == 0 {
            0.0
        } else {
            outside as f64 / total_points as f64
        },
        path_difference: if lengths.is_empty() { 0.0 } else { max - min },
        player_distance,
    }
}

/// Named statistics a report can contain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    L2Loss,
    Sinuosity,
    StepChange,
    ReflectionToWall,
    PathLength,
    OobRate,
    PathDifference,
    PlayerDistance,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::L2Loss,
        Metric::Sinuosity,
        Metric::StepChange,
        Metric::ReflectionToWall,
        Metric::PathLength,
        Metric::OobRate,
        Metric::PathDifference,
        Metric::PlayerDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::L2Loss => "l2_loss",
            Metric::Sinuosity => "sinuosity",
            Metric::StepChange => "step_change",
            Metric::ReflectionToWall => "reflection_to_wall",
            Metric::PathLength => "path_length",
            Metric::OobRate => "oob_rate",
            Metric::PathDifference => "path_difference",
            Metric::PlayerDistance => "player_distance",
        }
    }

    pub fn valid_names() -> String {
        Metric::ALL.map(Metric::name).join(", ")
    }

    /// Parses `all` or a comma-separated list of names.
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        if s.trim() == "all" {
            return Ok(Metric::ALL.to_vec());
        }
        let mut out: Vec<Metric> = s
            .split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown metric {s:?}; valid names: {}",
                    Metric::valid_names()
                ))
            })
    }
}

/// One imputed sequence with its ground truth and the mask it was imputed under.
#[derive(Clone, Copy, Debug)]
pub struct Triple<'a> {
    pub imputed: &'a Sequence,
    pub truth: &'a Sequence,
    pub mask: &'a Mask,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Aggregate per metric; `None` where nothing could be computed.
    pub values: BTreeMap<String, Option<f64>>,
    /// Per-sequence values behind each aggregate, in input order.
    pub per_sequence: BTreeMap<String, Vec<Option<f64>>>,
    pub sequences: usize,
    /// Sequences with no straight segment long enough for sinuosity.
    pub sinuosity_failures: usize,
    /// Sequences without any detected reflection.
    pub reflection_free: usize,
    pub config: Option<MetricsConfig>,
}

impl MetricsReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values.get(metric.name()).copied().flatten()
    }

    /// Flat JSON object: metric names, counters and the thresholds used.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (k, v) in &self.values {
            map.insert(k.clone(), serde_json::json!(v));
        }
        map.insert("sequences".into(), self.sequences.into());
        map.insert("sinuosity_failures".into(), self.sinuosity_failures.into());
        map.insert("reflection_free".into(), self.reflection_free.into());
        if let Some(cfg) = &self.config {
            map.insert("wall_delta".into(), cfg.wall_delta.into());
            map.insert("wall_x_lo".into(), cfg.walls.x.0.into());
            map.insert("wall_x_hi".into(), cfg.walls.x.1.into());
            map.insert("wall_y_lo".into(), cfg.walls.y.0.into());
            map.insert("wall_y_hi".into(), cfg.walls.y.1.into());
        }
        serde_json::Value::Object(map)
    }

    /// Aligned two-column plain-text table.
    pub fn to_table(&self) -> String {
        let width = self.values.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}  value\n", "metric");
        for (k, v) in &self.values {
            let shown = v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6e}"));
            let _ = writeln!(out, "{k:<width$}  {shown}");
        }
        let _ = writeln!(out, "{:<width$}  {}", "sequences", self.sequences);
        out
    }

    /// Per-sequence values as CSV with one column per metric.
    pub fn to_csv(&self) -> String {
        let names: Vec<&String> = self.per_sequence.keys().collect();
        let mut out = String::from("sequence");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.sequences {
            let _ = write!(out, "{i}");
            for n in &names {
                let cell = self.per_sequence[*n][i].map_or_else(String::new, |v| v.to_string());
                let _ = write!(out, ",{cell}");
            }
            out.push('\n');
        }
        out
    }
}

fn order_free_mean(values: &[Option<f64>]) -> Option<f64> {
    let mut present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return None;
    }
    present.sort_by(f64::total_cmp);
    Some(present.iter().sum::<f64>() / present.len() as f64)
}

fn mean_over_agents(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn per_sequence(metric: Metric, triple: &Triple<'_>, cfg: &MetricsConfig) -> Result<Option<f64>> {
    let seq = triple.imputed;
    let walls = Some(&cfg.walls);
    Ok(match metric {
        Metric::L2Loss => {
            let l = loss::mse_loss(triple.imputed, triple.truth, triple.mask)?;
            Some(l.value)
        }
        Metric::Sinuosity => {
            mean_over_agents(agents(seq).iter().map(|a| sinuosity(a, walls, cfg.wall_delta)))
        }
        Metric::StepChange => mean_over_agents(agents(seq).iter().map(|a| Some(step_change(a)))),
        Metric::ReflectionToWall => {
            mean_over_agents(agents(seq).iter().map(|a| reflection_to_wall(a, &cfg.walls)))
        }
        Metric::PathLength => Some(multi_agent_stats(seq, &cfg.court).path_length),
        Metric::OobRate => Some(multi_agent_stats(seq, &cfg.court).oob_rate),
        Metric::PathDifference => Some(multi_agent_stats(seq, &cfg.court).path_difference),
        Metric::PlayerDistance => multi_agent_stats(seq, &cfg.court).player_distance,
    })
}

/// Computes `metrics` for every triple and aggregates them.
pub fn evaluate(
    triples: &[Triple<'_>],
    metrics: &[Metric],
    cfg: &MetricsConfig,
    exec: Execution,
) -> Result<MetricsReport> {
    for t in triples {
        if t.imputed.len() != t.truth.len() || t.imputed.dim() != t.truth.dim() {
            return Err(Error::Data("prediction and truth shapes differ".into()));
        }
    }
    let rows: Vec<Result<Vec<Option<f64>>>> = parallel::map_slice(exec, triples, |_, t| {
        metrics.iter().map(|&m| per_sequence(m, t, cfg)).collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport {
        sequences: triples.len(),
        config: Some(*cfg),
        ..Default::default()
    };
    for (k, &m) in metrics.iter().enumerate() {
        let column: Vec<Option<f64>> = rows.iter().map(|r| r[k]).collect();
        match m {
            Metric::Sinuosity => {
                report.sinuosity_failures = column.iter().filter(|v| v.is_none()).count()
            }
            Metric::ReflectionToWall => {
                report.reflection_free = column.iter().filter(|v| v.is_none()).count()
            }
            _ => {}
        }
        report.values.insert(m.name().into(), order_free_mean(&column));
        report.per_sequence.insert(m.name().into(), column);
    }
    Ok(report)
}

/// Mean [`loss::mse_loss`] over a set, skipping fully observed masks.
pub fn l2_loss(triples: &[Triple<'_>]) -> Result<f64> {
    let mut values = Vec::with_capacity(triples.len());
    for t in triples {
        let l = loss::mse_loss(t.imputed, t.truth, t.mask)?;
        values.push((!l.nothing_missing).then_some(l.value));
    }
    Ok(order_free_mean(&values).unwrap_or(0.0))
}
