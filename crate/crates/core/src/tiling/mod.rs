//! Per-pixel windows and directional compression.
//!
//! Every pixel is described by the square window of design raster around it,
//! `2 * round(ID * px_per_nm) + 1` pixels on a side, zero-padded outside the
//! grid. Windows are trimmed at the far edge to a multiple of the compression
//! factor and reduced block by block: first down each column of the block
//! with the row reducer, then across the resulting row with the column
//! reducer. Distinct reducers keep horizontal and vertical structure apart.

mod dataset;
mod sampler;

pub use dataset::{
    build_dataset, load_dataset, merge_datasets, save_dataset, split_dataset, DatasetMeta,
    PixelDataset, PixelSample, SamplingConfig, SourceInfo, Split, DATASET_FORMAT_VERSION,
};
pub use sampler::WindowSampler;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RasterGrid;
use crate::layout::{BBox, LayoutPattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    Mean,
    Max,
    /// Triangular weights peaking at the block center.
    CenterWeighted,
}

impl Reducer {
    /// Reduces `values` in order.
    #[inline]
    pub fn reduce(self, values: impl Iterator<Item = f64>) -> f64 {
        match self {
            Reducer::Mean => {
                let (mut sum, mut n) = (0.0, 0usize);
                for v in values {
                    sum += v;
                    n += 1;
                }
                sum / n as f64
            }
            Reducer::Max => values.fold(f64::NEG_INFINITY, f64::max),
            Reducer::CenterWeighted => {
                let vals: Vec<f64> = values.collect();
                let n = vals.len();
                let (mut sum, mut wsum) = (0.0, 0.0);
                for (i, v) in vals.iter().enumerate() {
                    let w = (1 + i.min(n - 1 - i)) as f64;
                    sum += w * v;
                    wsum += w;
                }
                sum / wsum
            }
        }
    }
}

impl FromStr for Reducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Reducer::Mean),
            "max" => Ok(Reducer::Max),
            "center_weighted" => Ok(Reducer::CenterWeighted),
            _ => Err(Error::Param(format!("unknown reducer {s:?}"))),
        }
    }
}

impl fmt::Display for Reducer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Reducer::Mean => "mean",
            Reducer::Max => "max",
            Reducer::CenterWeighted => "center_weighted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilingConfig {
    /// Halo radius in nm.
    pub interaction_distance: f64,
    pub px_per_nm: f64,
    pub compression_factor: usize,
    pub row_reducer: Reducer,
    pub col_reducer: Reducer,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            interaction_distance: 400.0,
            px_per_nm: 2.0,
            compression_factor: 8,
            row_reducer: Reducer::Mean,
            col_reducer: Reducer::Max,
        }
    }
}

impl TilingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.interaction_distance > 0.0) {
            return Err(Error::Config(format!(
                "tiling.interaction_distance must be > 0, got {}",
                self.interaction_distance
            )));
        }
        if !(self.px_per_nm > 0.0) {
            return Err(Error::Config(format!(
                "tiling.px_per_nm must be > 0, got {}",
                self.px_per_nm
            )));
        }
        if self.compression_factor == 0 || self.compression_factor > self.window_side() {
            return Err(Error::Config(format!(
                "tiling.compression_factor must lie in [1, {}], got {}",
                self.window_side(),
                self.compression_factor
            )));
        }
        Ok(())
    }

    pub fn window_radius(&self) -> usize {
        (self.interaction_distance * self.px_per_nm).round() as usize
    }

    pub fn window_side(&self) -> usize {
        2 * self.window_radius() + 1
    }

    /// Side of the compressed image fed to the classifier.
    pub fn compressed_side(&self) -> usize {
        self.window_side() / self.compression_factor
    }

    /// Target bounding box grown by the interaction distance (whole nm), so
    /// that boundary pixels see their true dark surroundings.
    pub fn domain(&self, target: &LayoutPattern) -> Result<BBox> {
        let bbox = target
            .bbox()
            .ok_or_else(|| Error::Region("pattern is empty; no domain to raster".into()))?;
        Ok(bbox.expand(self.interaction_distance.ceil() as i64))
    }

    fn check_grid(&self, g: &RasterGrid) -> Result<()> {
        if (g.px_per_nm - self.px_per_nm).abs() > 1e-12 * self.px_per_nm {
            return Err(Error::ResolutionMismatch {
                left: g.px_per_nm,
                right: self.px_per_nm,
            });
        }
        Ok(())
    }
}

/// Window centered on pixel `coord`, zero-padded outside `g`.
pub fn extract_window(g: &RasterGrid, coord: (usize, usize), cfg: &TilingConfig) -> Result<RasterGrid> {
    cfg.check_grid(g)?;
    let (x, y) = coord;
    if x >= g.width || y >= g.height {
        return Err(Error::Coord(format!(
            "pixel ({x}, {y}) outside {}x{} grid",
            g.width, g.height
        )));
    }
    let r = cfg.window_radius();
    let side = cfg.window_side();
    let mut values = Vec::with_capacity(side * side);
    for wy in 0..side {
        let sy = y as isize - r as isize + wy as isize;
        for wx in 0..side {
            let sx = x as isize - r as isize + wx as isize;
            values.push(g.get_padded(sx, sy));
        }
    }
    let (cx, cy) = g.pixel_center(x, y);
    let half = r as f64 / g.px_per_nm;
    Ok(RasterGrid {
        width: side,
        height: side,
        origin: (cx - half, cy - half),
        px_per_nm: g.px_per_nm,
        values,
    })
}

/// Trims the far edge to a multiple of the factor and block-reduces.
/// Output is row-major, `side * side` values.
pub fn compress_window(w: &RasterGrid, cfg: &TilingConfig) -> Result<Vec<f32>> {
    if w.width != w.height {
        return Err(Error::Param(format!(
            "window must be square, got {}x{}",
            w.width, w.height
        )));
    }
    let f = cfg.compression_factor;
    if f == 0 || f > w.width {
        return Err(Error::Param(format!(
            "compression factor {f} invalid for window side {}",
            w.width
        )));
    }
    let side = w.width / f;
    let mut out = Vec::with_capacity(side * side);
    let mut column = Vec::with_capacity(f);
    for by in 0..side {
        for bx in 0..side {
            column.clear();
            for c in 0..f {
                let x = bx * f + c;
                column.push(cfg.row_reducer.reduce((0..f).map(|r| w.get(x, by * f + r))));
            }
            out.push(cfg.col_reducer.reduce(column.iter().copied()) as f32);
        }
    }
    Ok(out)
}
