use super::TilingConfig;
use crate::error::{Error, Result};
use crate::grid::RasterGrid;

/// Compressed windows for every pixel of one raster.
///
/// All blocks of all windows are reductions of the same block positions on
/// the padded raster, so the block values are computed once up front and a
/// window becomes a strided gather. The reductions see the same values in
/// the same order as [`super::compress_window`] on an extracted window, so
/// the two routes agree bit for bit.
pub struct WindowSampler {
    width: usize,
    height: usize,
    radius: usize,
    factor: usize,
    side: usize,
    /// Reduced block value keyed by block origin, offset by `radius`.
    blocks: Vec<f32>,
    stride: usize,
}

impl WindowSampler {
    pub fn new(raster: &RasterGrid, cfg: &TilingConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_grid(raster)?;
        let r = cfg.window_radius();
        let f = cfg.compression_factor;
        let (w, h) = raster.dims();
        let stride = w + 2 * r;
        let rows = h + 2 * r;
        let vlen = stride + f - 1;
        let mut blocks = vec![0.0f32; stride * rows];
        let mut column_reduced = vec![0.0f64; vlen];
        for by in 0..rows {
            let y0 = by as isize - r as isize;
            for (i, v) in column_reduced.iter_mut().enumerate() {
                let x = i as isize - r as isize;
                *v = cfg
                    .row_reducer
                    .reduce((0..f).map(|k| raster.get_padded(x, y0 + k as isize)));
            }
            let out = &mut blocks[by * stride..(by + 1) * stride];
            for (bx, o) in out.iter_mut().enumerate() {
                *o = cfg.col_reducer.reduce(column_reduced[bx..bx + f].iter().copied()) as f32;
            }
        }
        Ok(WindowSampler {
            width: w,
            height: h,
            radius: r,
            factor: f,
            side: cfg.compressed_side(),
            blocks,
            stride,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Writes the compressed window of pixel `(x, y)` into `out`.
    pub fn sample_into(&self, x: usize, y: usize, out: &mut Vec<f32>) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::Coord(format!(
                "pixel ({x}, {y}) outside {}x{} grid",
                self.width, self.height
            )));
        }
        out.clear();
        // block origin of window block (i, j) is (x - r + f j, y - r + f i),
        // stored at offset +r
        for i in 0..self.side {
            let row = (y + self.factor * i) * self.stride + x;
            for j in 0..self.side {
                out.push(self.blocks[row + self.factor * j]);
            }
        }
        Ok(())
    }

    pub fn sample(&self, x: usize, y: usize) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(self.side * self.side);
        self.sample_into(x, y, &mut out)?;
        Ok(out)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tiling::{compress_window, extract_window, Reducer};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_extract_then_compress_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = RasterGrid::from_values(
            23,
            17,
            (0.5, 0.5),
            1.0,
            (0..23 * 17).map(|_| (rng.gen::<f64>() < 0.3) as u8 as f64).collect(),
        )
        .unwrap();
        for (row, col, f) in [
            (Reducer::Mean, Reducer::Max, 3),
            (Reducer::Max, Reducer::Mean, 4),
            (Reducer::CenterWeighted, Reducer::Mean, 5),
            (Reducer::Mean, Reducer::Mean, 1),
        ] {
            let cfg = TilingConfig {
                interaction_distance: 7.0,
                px_per_nm: 1.0,
                compression_factor: f,
                row_reducer: row,
                col_reducer: col,
            };
            let s = WindowSampler::new(&g, &cfg).unwrap();
            for y in 0..g.height {
                for x in 0..g.width {
                    let direct = compress_window(&extract_window(&g, (x, y), &cfg).unwrap(), &cfg).unwrap();
                    assert_eq!(s.sample(x, y).unwrap(), direct, "({x},{y}) {row}/{col}/{f}");
                }
            }
        }
    }
}
