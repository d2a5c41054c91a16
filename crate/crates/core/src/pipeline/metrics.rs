use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::RasterGrid;
use crate::iip::{bin_class, IipMap};

/// Intersection over union of two binary grids; 1.0 when both are empty.
pub fn iou(a: &RasterGrid, b: &RasterGrid) -> Result<f64> {
    a.same_dims(b)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let (x, y) = (x != 0.0, y != 0.0);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Reference-vs-predicted class counts; `counts[reference][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; classes]; classes],
        }
    }

    /// Builds the matrix from paired class labels.
    pub fn from_labels(predicted: &[u16], reference: &[u16], classes: usize) -> Result<Self> {
        if predicted.len() != reference.len() {
            return Err(Error::DimMismatch {
                left: (predicted.len(), 1),
                right: (reference.len(), 1),
            });
        }
        let mut m = ConfusionMatrix::new(classes);
        for (&p, &r) in predicted.iter().zip(reference) {
            if p as usize >= classes || r as usize >= classes {
                return Err(Error::Range(format!(
                    "class {} outside 0..{classes}",
                    p.max(r)
                )));
            }
            m.counts[r as usize][p as usize] += 1;
        }
        Ok(m)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes)
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }

    /// Fraction of counts within `band` classes of the diagonal.
    pub fn band_mass(&self, band: usize) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let near: u64 = self
            .counts
            .iter()
            .enumerate()
            .flat_map(|(r, row)| {
                row.iter()
                    .enumerate()
                    .filter(move |(p, _)| r.abs_diff(*p) <= band)
                    .map(|(_, &c)| c)
            })
            .sum();
        near as f64 / total as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.band_mass(0)
    }

    /// `classes` rows of comma-separated counts.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in &self.counts {
            let line: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }
}

/// Confusion matrix of two IIP maps after binning both into `classes`.
pub fn confusion_matrix(pred: &IipMap, reference: &IipMap, classes: usize) -> Result<ConfusionMatrix> {
    pred.grid.same_dims(&reference.grid)?;
    let to_classes = |m: &IipMap| -> Result<Vec<u16>> {
        m.grid.values.iter().map(|&v| bin_class(v, classes)).collect()
    };
    ConfusionMatrix::from_labels(&to_classes(pred)?, &to_classes(reference)?, classes)
}
