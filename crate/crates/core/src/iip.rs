//! Inverse intensity profiles.
//!
//! An IIP map is the reference mask convolved with a nonnegative inverse
//! intensity kernel (IIK) and divided by the map's own maximum, giving a
//! continuous field in `[0, 1]` that grades the transitions of the binary
//! mask. Class binning turns that field into classifier labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checksum;
use crate::error::{Error, Result};
use crate::grid::{parse_key_values, sidecar_path, RasterGrid};
use crate::litho::{convolve, make_gaussian_kernel, Kernel};

pub type ClassId = u16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IikKind {
    Gaussian,
    /// Identity kernel; the IIP equals the mask.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IipConfig {
    pub num_classes: usize,
    pub iik_kind: IikKind,
    pub iik_sigma: f64,
    pub iik_radius: f64,
    pub threshold: f64,
}

impl Default for IipConfig {
    fn default() -> Self {
        IipConfig {
            num_classes: 100,
            iik_kind: IikKind::Gaussian,
            iik_sigma: 10.0,
            iik_radius: 30.0,
            threshold: 0.5,
        }
    }
}

impl IipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > u16::MAX as usize {
            return Err(Error::Config(format!(
                "iip.num_classes must lie in [2, 65535], got {}",
                self.num_classes
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "iip.threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn iik(&self, px_per_nm: f64) -> Result<Kernel> {
        make_iik(self.iik_kind, self.iik_sigma, self.iik_radius, px_per_nm)
    }
}

pub fn make_iik(kind: IikKind, sigma: f64, radius: f64, px_per_nm: f64) -> Result<Kernel> {
    match kind {
        IikKind::Gaussian => make_gaussian_kernel(sigma, radius, px_per_nm),
        IikKind::Delta => {
            if !(px_per_nm > 0.0) {
                return Err(Error::Param(format!("px_per_nm must be > 0, got {px_per_nm}")));
            }
            Ok(Kernel::delta(px_per_nm))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IipMap {
    pub grid: RasterGrid,
    pub source_mask_checksum: String,
    pub iik_checksum: String,
}

/// Normalized convolution of a binary mask with a nonnegative kernel.
/// An empty mask gives the all-zero map.
pub fn compute_iip(mask: &RasterGrid, iik: &Kernel) -> Result<IipMap> {
    if !mask.is_binary() {
        return Err(Error::Param("IIP source mask must be binary".into()));
    }
    if iik.values.iter().any(|&v| v < 0.0) {
        return Err(Error::Param("IIK weights must be nonnegative".into()));
    }
    let mut raw = convolve(mask, iik)?;
    // the exact result is nonnegative; only transform round-off goes below
    raw.values.iter_mut().for_each(|v| *v = v.max(0.0));
    let peak = raw.max_value();
    if peak > 0.0 {
        raw.values.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(IipMap {
        grid: raw,
        source_mask_checksum: mask.checksum(),
        iik_checksum: iik.checksum(),
    })
}

/// `floor(v * C)`, with `v = 1` folded into the top class.
pub fn bin_class(v: f64, classes: usize) -> Result<ClassId> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Range(format!("IIP value {v} outside [0, 1]")));
    }
    let c = ((v * classes as f64).floor() as usize).min(classes - 1);
    Ok(c as ClassId)
}

/// Bin midpoint `(c + 0.5) / C`.
pub fn class_value(c: ClassId, classes: usize) -> Result<f64> {
    if c as usize >= classes {
        return Err(Error::Range(format!("class {c} outside 0..{classes}")));
    }
    Ok((c as f64 + 0.5) / classes as f64)
}

pub fn threshold_iip(m: &IipMap, t: f64) -> Result<RasterGrid> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::Param(format!("IIP threshold must lie in (0, 1), got {t}")));
    }
    Ok(m.grid.with_values(
        m.grid
            .values
            .iter()
            .map(|&v| if v > t { 1.0 } else { 0.0 })
            .collect(),
    ))
}

impl IipMap {
    pub fn classes(&self, classes: usize) -> Result<Vec<ClassId>> {
        self.grid.values.iter().map(|&v| bin_class(v, classes)).collect()
    }

    /// Graymap preview at `path`, exact little-endian f64 values at
    /// `path.f64`, and a sidecar tying both to their sources.
    pub fn save(&self, path: &Path, classes: usize) -> Result<()> {
        let raw: Vec<u8> = self.grid.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let raw_path = raw_values_path(path);
        fs::write(&raw_path, &raw)?;
        self.grid.save_pgm(
            path,
            &[
                ("num_classes", classes.to_string()),
                ("iik_checksum", self.iik_checksum.clone()),
                ("mask_checksum", self.source_mask_checksum.clone()),
                ("values_checksum", checksum::digest_bytes(&raw)),
            ],
        )
    }

    pub fn load(path: &Path) -> Result<IipMap> {
        let preview = RasterGrid::load_pgm(path)?;
        let kv = parse_key_values(&fs::read_to_string(sidecar_path(path))?)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("IIP sidecar lacks {k}")))
        };
        let raw = fs::read(raw_values_path(path))?;
        let expected = get("values_checksum")?;
        let found = checksum::digest_bytes(&raw);
        if found != expected {
            return Err(Error::Checksum {
                what: raw_values_path(path).display().to_string(),
                expected,
                found,
            });
        }
        if raw.len() != preview.len() * 8 {
            return Err(Error::Format("IIP value file length does not match grid".into()));
        }
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(IipMap {
            grid: preview.with_values(values),
            source_mask_checksum: get("mask_checksum")?,
            iik_checksum: get("iik_checksum")?,
        })
    }
}

fn raw_values_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".f64");
    s.into()
}
