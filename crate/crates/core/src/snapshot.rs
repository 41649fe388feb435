//! Binary occupation snapshots `n_{x,y} ∈ {0, 1}` and their metadata.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One projective readout, row-major (`x + width·y`), 1 = Rydberg.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Snapshot {
    width: usize,
    height: usize,
    cells: Vec<u8>,
}

impl Snapshot {
    pub fn new(width: usize, height: usize, cells: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("snapshot dimensions must be positive"));
        }
        if cells.len() != width * height {
            return Err(Error::invalid(format!(
                "snapshot has {} cells, expected {}",
                cells.len(),
                width * height
            )));
        }
        if let Some(v) = cells.iter().find(|&&c| c > 1) {
            return Err(Error::invalid(format!("snapshot value {v} is not binary")));
        }
        Ok(Snapshot { width, height, cells })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Build from a predicate on `(x, y)`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let cells = (0..width * height)
            .map(|i| u8::from(f(i % width, i / width)))
            .collect();
        Self::new(width, height, cells)
    }

    /// Decode a basis-state index (bit `i` = site `i`).
    pub fn from_basis(width: usize, height: usize, basis: usize) -> Self {
        let cells = (0..width * height).map(|i| ((basis >> i) & 1) as u8).collect();
        Snapshot { width, height, cells }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.cells[x + self.width * y]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.cells[x + self.width * y] = u8::from(value);
    }

    pub fn rydberg_count(&self) -> usize {
        self.cells.iter().map(|&c| c as usize).sum()
    }
}

/// Provenance attached to a set of shots. Frequencies are in rad/μs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hold_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_over_omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// Nearest and next-nearest couplings in rad/μs, used by energy budgets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_nn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_nnn: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol: Option<String>,
    /// Per-shot preparation defect counts, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub defects: Option<Vec<u32>>,
    /// Sublattice sign convention of the staggered magnetization.
    #[serde(default = "default_convention")]
    pub convention: String,
}

fn default_convention() -> String {
    "AF1 = Rydberg on even x+y".to_string()
}

impl SnapshotMeta {
    pub fn new() -> Self {
        SnapshotMeta {
            convention: default_convention(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    width: usize,
    height: usize,
    shots: Vec<Snapshot>,
    pub meta: SnapshotMeta,
}

impl SnapshotSet {
    pub fn new(width: usize, height: usize, shots: Vec<Snapshot>, meta: SnapshotMeta) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("snapshot dimensions must be positive"));
        }
        if let Some(k) = shots
            .iter()
            .position(|s| s.width != width || s.height != height)
        {
            return Err(Error::invalid(format!("shot {k} does not match {width}x{height}")));
        }
        if let Some(d) = &meta.defects {
            if d.len() != shots.len() {
                return Err(Error::invalid("defect counts do not match shot count"));
            }
        }
        Ok(SnapshotSet {
            width,
            height,
            shots,
            meta,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn shots(&self) -> &[Snapshot] {
        &self.shots
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    /// Keep the shots with `keep[k]`, carrying defect counts along.
    pub fn select(&self, keep: &[bool]) -> SnapshotSet {
        let shots = self
            .shots
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(s, _)| s.clone())
            .collect();
        let mut meta = self.meta.clone();
        if let Some(d) = &self.meta.defects {
            meta.defects = Some(d.iter().zip(keep).filter(|(_, &k)| k).map(|(&c, _)| c).collect());
        }
        SnapshotSet {
            width: self.width,
            height: self.height,
            shots,
            meta,
        }
    }

    /// Per-site Rydberg frequency over shots.
    pub fn mean_occupation(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.width * self.height];
        for s in &self.shots {
            for (a, &c) in acc.iter_mut().zip(&s.cells) {
                *a += c as f64;
            }
        }
        let n = self.shots.len().max(1) as f64;
        acc.iter().map(|a| a / n).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_and_wrong_size() {
        assert!(Snapshot::new(2, 2, vec![0, 1, 2, 0]).is_err());
        assert!(Snapshot::new(2, 2, vec![0, 1, 0]).is_err());
        let a = Snapshot::filled(2, 2, 0).unwrap();
        let b = Snapshot::filled(3, 2, 0).unwrap();
        assert!(SnapshotSet::new(2, 2, vec![a, b], SnapshotMeta::new()).is_err());
    }

    #[test]
    fn basis_decoding_is_row_major() {
        // bit 1 → (1,0), bit 2 → (0,1)
        let s = Snapshot::from_basis(2, 2, 0b0110);
        assert_eq!(s.get(1, 0), 1);
        assert_eq!(s.get(0, 1), 1);
        assert_eq!(s.get(0, 0), 0);
        assert_eq!(s.get(1, 1), 0);
    }

    #[test]
    fn select_keeps_defects_aligned() {
        let shots = vec![Snapshot::filled(1, 1, 0).unwrap(), Snapshot::filled(1, 1, 1).unwrap()];
        let mut meta = SnapshotMeta::new();
        meta.defects = Some(vec![3, 7]);
        let set = SnapshotSet::new(1, 1, shots, meta).unwrap();
        let kept = set.select(&[false, true]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept.meta.defects, Some(vec![7]));
        assert_eq!(kept.mean_occupation(), vec![1.0]);
    }
}
