use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A `T x D` multivariate series stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    len: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Sequence {
    pub fn new(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if len * dim != data.len() {
            return Err(Error::Data(format!(
                "sequence of {len} steps x {dim} dims needs {} values, got {}",
                len * dim,
                data.len()
            )));
        }
        Ok(Sequence { len, dim, data })
    }

    pub fn zeros(len: usize, dim: usize) -> Self {
        Sequence {
            len,
            dim,
            data: vec![0.0; len * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Data("ragged rows in sequence".into()));
        }
        Ok(Sequence {
            len: rows.len(),
            dim,
            data: rows.concat(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn step_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1)).take(self.len)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Copy with every unobserved step set to zero.
    pub fn zero_filled(&self, mask: &Mask) -> Sequence {
        let mut out = self.clone();
        for t in 0..self.len {
            if !mask.is_observed(t) {
                out.step_mut(t).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        out
    }

    /// Column `d` as a vector.
    pub fn column(&self, d: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.data[t * self.dim + d]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Observation indicator per step: `true` means observed.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Mask(Vec<bool>);

impl From<Mask> for String {
    fn from(m: Mask) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for Mask {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    pub fn all_observed(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        bits.iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Mask(format!("mask entries must be 0 or 1, got {other}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Mask)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_observed(&self, t: usize) -> bool {
        self.0[t]
    }

    pub fn set_observed(&mut self, t: usize) {
        self.0[t] = true;
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn to_bits(&self) -> Vec<u8> {
        self.0.iter().map(|&b| u8::from(b)).collect()
    }

    pub fn missing_count(&self) -> usize {
        self.0.iter().filter(|&&b| !b).count()
    }

    pub fn is_complete(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn missing_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| !b).map(|(t, _)| t)
    }

    pub fn observed_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(t, _)| t)
    }

    /// Lengths of maximal runs of missing steps.
    pub fn gap_lengths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut run = 0;
        for &b in &self.0 {
            if b {
                if run > 0 {
                    out.push(run);
                }
                run = 0;
            } else {
                run += 1;
            }
        }
        if run > 0 {
            out.push(run);
        }
        out
    }
}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Mask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.trim()
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::Mask(format!("unexpected character {other:?} in mask"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_parse_and_display() {
        let m: Mask = "10010".parse().unwrap();
        assert_eq!(m.to_string(), "10010");
        assert_eq!(m.missing_count(), 3);
        assert_eq!(m.gap_lengths(), vec![2, 1]);
        assert!("10a".parse::<Mask>().is_err());
        assert!(Mask::from_bits(&[1, 2]).is_err());
    }

    #[test]
    fn zero_fill_masks_values() {
        let s = Sequence::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let m: Mask = "10".parse().unwrap();
        let z = s.zero_filled(&m);
        assert_eq!(z.step(0), &[1.0, 2.0]);
        assert_eq!(z.step(1), &[0.0, 0.0]);
    }

    #[test]
    fn sequence_shape_checked() {
        assert!(Sequence::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Sequence::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
