//! Flat parameter storage partitioned into named groups.
//!
//! Only groups flagged `controlled` take part in weight decay, norm control
//! and norm measurement. The loss-based update always touches every group.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub offset: usize,
    pub length: usize,
    pub controlled: bool,
}

impl ParamGroup {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.length
    }
}

/// Parameter vector with its group partition and the frozen norm of the
/// controlled subset at construction time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    theta: Vec<f64>,
    groups: Vec<ParamGroup>,
    initial_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    len: usize,
    initial_norm: f64,
    groups: Vec<ParamGroup>,
}

impl ParamStore {
    /// Builds a store from `theta` and groups that must tile it exactly, in
    /// order. The initial norm is measured here, once.
    pub fn new(theta: Vec<f64>, groups: Vec<ParamGroup>) -> Result<Self> {
        validate_tiling(&groups, theta.len())?;
        if let Some(index) = theta.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "parameter",
                index,
            });
        }
        let initial_norm = sum_squares_controlled(&theta, &groups).sqrt();
        Ok(Self {
            theta,
            groups,
            initial_norm,
        })
    }

    /// Convenience constructor from `(name, length, controlled)` triples laid
    /// out back to back.
    pub fn from_layout<S: AsRef<str>>(
        theta: Vec<f64>,
        layout: &[(S, usize, bool)],
    ) -> Result<Self> {
        let mut offset = 0;
        let groups = layout
            .iter()
            .map(|(name, length, controlled)| {
                let g = ParamGroup {
                    name: name.as_ref().to_string(),
                    offset,
                    length: *length,
                    controlled: *controlled,
                };
                offset += length;
                g
            })
            .collect();
        Self::new(theta, groups)
    }

    /// Single controlled group named "params".
    pub fn single(theta: Vec<f64>) -> Self {
        let n = theta.len();
        Self::from_layout(theta, &[("params", n, true)]).expect("one group always tiles")
    }

    pub fn empty() -> Self {
        Self {
            theta: Vec::new(),
            groups: Vec::new(),
            initial_norm: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Mutable access to the whole vector. Group structure and the initial
    /// norm are unaffected.
    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn initial_norm(&self) -> f64 {
        self.initial_norm
    }

    /// Per-element mask, `true` where the element belongs to a controlled group.
    pub fn controlled_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.theta.len()];
        for g in self.groups.iter().filter(|g| g.controlled) {
            mask[g.range()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// L2 norm over the controlled groups.
    pub fn controlled_norm(&self) -> f64 {
        sum_squares_controlled(&self.theta, &self.groups).sqrt()
    }

    /// Current controlled norm relative to the initial one.
    pub fn norm_ratio(&self) -> Result<f64> {
        if self.initial_norm == 0.0 {
            return Err(Error::DegenerateInit);
        }
        Ok(self.controlled_norm() / self.initial_norm)
    }

    pub fn snapshot(&self) -> ParamStore {
        self.clone()
    }

    /// Multiplies every controlled element by `factor`.
    pub fn scale_controlled(&mut self, factor: f64) {
        for g in &self.groups {
            if g.controlled {
                for x in &mut self.theta[g.range()] {
                    *x *= factor;
                }
            }
        }
    }

    /// Writes a JSON header line followed by the raw little-endian `f64`s.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let header = CheckpointHeader {
            len: self.theta.len(),
            initial_norm: self.initial_norm,
            groups: self.groups.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for x in &self.theta {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        validate_tiling(&header.groups, header.len)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if !(header.initial_norm.is_finite() && header.initial_norm >= 0.0) {
            return Err(Error::Checkpoint(format!(
                "bad initial_norm {}",
                header.initial_norm
            )));
        }
        let mut bytes = Vec::with_capacity(header.len * 8);
        r.read_to_end(&mut bytes)?;
        if bytes.len() != header.len * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} payload bytes, found {}",
                header.len * 8,
                bytes.len()
            )));
        }
        let theta = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self {
            theta,
            groups: header.groups,
            initial_norm: header.initial_norm,
        })
    }
}

fn validate_tiling(groups: &[ParamGroup], len: usize) -> Result<()> {
    let mut expected = 0;
    for g in groups {
        if g.offset != expected {
            return Err(Error::validation(
                "groups",
                format!(
                    "group '{}' starts at {} but previous groups end at {}",
                    g.name, g.offset, expected
                ),
            ));
        }
        expected += g.length;
    }
    if expected != len {
        return Err(Error::validation(
            "groups",
            format!("groups cover {expected} elements, parameter vector has {len}"),
        ));
    }
    Ok(())
}

/// Sequential compensated (Neumaier) sum of squares over controlled groups.
/// Order is fixed by the flat layout, so equal inputs give equal bits.
fn sum_squares_controlled(theta: &[f64], groups: &[ParamGroup]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for g in groups.iter().filter(|g| g.controlled) {
        for &x in &theta[g.range()] {
            let sq = x * x;
            let t = sum + sq;
            if sum.abs() >= sq {
                comp += (sum - t) + sq;
            } else {
                comp += (sq - t) + sum;
            }
            sum = t;
        }
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_of_three_four() {
        assert_eq!(ParamStore::single(vec![3.0, 4.0]).controlled_norm(), 5.0);
    }

    #[test]
    fn uncontrolled_groups_are_excluded() {
        let s = ParamStore::from_layout(vec![3.0, 4.0, 100.0], &[("w", 2, true), ("ln", 1, false)])
            .unwrap();
        assert_eq!(s.controlled_norm(), 5.0);
        assert_eq!(s.initial_norm(), 5.0);
    }

    #[test]
    fn zero_vector_has_zero_norm() {
        let s = ParamStore::single(vec![0.0; 7]);
        assert_eq!(s.controlled_norm(), 0.0);
        assert!(matches!(s.norm_ratio(), Err(Error::DegenerateInit)));
    }

    #[test]
    fn ratio_is_one_at_init_and_tracks_scaling() {
        let mut s = ParamStore::single(vec![3.0, 4.0]);
        assert_eq!(s.norm_ratio().unwrap(), 1.0);
        s.theta_mut().copy_from_slice(&[6.0, 8.0]);
        // sqrt(36 + 64) / sqrt(9 + 16) = 10 / 5
        assert_eq!(s.norm_ratio().unwrap(), 2.0);
        s.scale_controlled(0.5);
        assert_eq!(s.norm_ratio().unwrap(), 1.0);
    }

    #[test]
    fn snapshot_is_independent() {
        let s = ParamStore::single(vec![1.0, -2.0, 2.0]);
        let mut c = s.snapshot();
        c.theta_mut().iter_mut().for_each(|x| *x = 0.0);
        assert_eq!(s.controlled_norm(), 3.0);
        assert_eq!(c.initial_norm().to_bits(), s.initial_norm().to_bits());

        let e = ParamStore::empty();
        assert!(e.snapshot().is_empty());
    }

    #[test]
    fn tiling_is_enforced() {
        let gap = vec![
            ParamGroup {
                name: "a".into(),
                offset: 0,
                length: 2,
                controlled: true,
            },
            ParamGroup {
                name: "b".into(),
                offset: 3,
                length: 1,
                controlled: true,
            },
        ];
        assert!(ParamStore::new(vec![0.0; 4], gap).is_err());
        assert!(ParamStore::from_layout(vec![0.0; 4], &[("a", 3, true)]).is_err());
    }

    #[test]
    fn scale_skips_uncontrolled() {
        let mut s =
            ParamStore::from_layout(vec![1.0, 1.0, 1.0], &[("w", 2, true), ("b", 1, false)])
                .unwrap();
        s.scale_controlled(3.0);
        assert_eq!(s.theta(), &[3.0, 3.0, 1.0]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParamStore::from_layout(
            vec![0.1, -1e-300, 7.25, f64::MIN_POSITIVE],
            &[("w", 3, true), ("ln", 1, false)],
        )
        .unwrap();
        s.theta_mut()[0] = 0.3;
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(buf.len() - header_end - 1, 4 * 8);
        let back = ParamStore::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.initial_norm().to_bits(), s.initial_norm().to_bits());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let s = ParamStore::single(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        s.write_checkpoint(&mut buf).unwrap();
        buf.pop();
        assert!(matches!(
            ParamStore::read_checkpoint(&buf[..]),
            Err(Error::Checkpoint(_))
        ));
    }
}
