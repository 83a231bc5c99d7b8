//! Frictionless single-ball billiards on the unit square.

use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::parallel::{self, Execution};
use crate::sequence::Sequence;
use crate::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BilliardsConfig {
    pub ball_radius: f64,
    /// Per-step displacement magnitude range.
    pub speed_min: f64,
    pub speed_max: f64,
    pub timesteps: usize,
    pub seed: u64,
}

impl Default for BilliardsConfig {
    fn default() -> Self {
        BilliardsConfig {
            ball_radius: 0.02,
            speed_min: 0.01,
            speed_max: 0.03,
            timesteps: 200,
            seed: 0,
        }
    }
}

impl BilliardsConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.ball_radius;
        if !(0.0..0.5).contains(&r) {
            return Err(Error::Config(format!("ball radius {r} must be in [0, 0.5)")));
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max) {
            return Err(Error::Config(format!(
                "speed range [{}, {}] must be positive and ordered",
                self.speed_min, self.speed_max
            )));
        }
        // one fold per step keeps the exact reflection formula valid
        if self.speed_max >= 1.0 - 2.0 * r {
            return Err(Error::Config(format!(
                "speed {} must stay below the free width {}",
                self.speed_max,
                1.0 - 2.0 * r
            )));
        }
        Ok(())
    }

    /// Allowed range for the ball centre on each axis.
    pub fn limits(&self) -> (f64, f64) {
        (self.ball_radius, 1.0 - self.ball_radius)
    }
}

/// Positions and the velocity in effect after each step.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn to_sequence(&self) -> Sequence {
        let data = self.positions.iter().flat_map(|p| p.iter().copied()).collect();
        Sequence::new(self.positions.len(), 2, data).expect("two values per position")
    }
}

/// Rolls out from an explicit start state.
pub fn rollout_from(config: &BilliardsConfig, start: [f64; 2], velocity: [f64; 2]) -> Trajectory {
    let (lo, hi) = config.limits();
    let mut p = start;
    let mut v = velocity;
    let mut positions = Vec::with_capacity(config.timesteps);
    let mut velocities = Vec::with_capacity(config.timesteps);
    for t in 0..config.timesteps {
        if t > 0 {
            for d in 0..2 {
                p[d] += v[d];
                if p[d] > hi {
                    p[d] = 2.0 * hi - p[d];
                    v[d] = -v[d];
                } else if p[d] < lo {
                    p[d] = 2.0 * lo - p[d];
                    v[d] = -v[d];
                }
            }
        }
        positions.push(p);
        velocities.push(v);
    }
    Trajectory {
        positions,
        velocities,
    }
}

/// Uniform start inside the limits, uniform heading, uniform speed.
pub fn rollout(config: &BilliardsConfig, rng: &mut Rng) -> Trajectory {
    let (lo, hi) = config.limits();
    let start = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let speed = rng.random_range(config.speed_min..=config.speed_max);
    rollout_from(config, start, [speed * heading.cos(), speed * heading.sin()])
}

/// `n` independent trajectories. Each rollout gets its own generator seeded
/// from `config.seed`, so the result does not depend on `exec`.
pub fn simulate(config: &BilliardsConfig, n: usize, exec: Execution) -> Result<Vec<Sequence>> {
    config.validate()?;
    let mut master = Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..n).map(|_| master.random()).collect();
    Ok(parallel::map_slice(exec, &seeds, |_, &seed| {
        rollout(config, &mut Rng::seed_from_u64(seed)).to_sequence()
    }))
}
