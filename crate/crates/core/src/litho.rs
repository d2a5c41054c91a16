//! Toy forward lithography: a Gaussian optical kernel followed by a
//! constant-threshold resist.
//!
//! Convolution has two independent routes, a direct sum and an FFT product,
//! which must agree to 1e-6. [`convolve`] picks one by kernel size; both are
//! public so each can be checked against the other.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::checksum;
use crate::error::{Error, Result};
use crate::grid::{parse_key_values, sidecar_path, RasterGrid};

/// Kernels up to this side length use the direct sum in [`convolve`].
pub const DIRECT_MAX_SIDE: usize = 11;

/// Odd-sided square weight array. `values[row * side + col]`, row 0 is the
/// most negative y offset.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub side: usize,
    pub values: Vec<f64>,
    pub px_per_nm: f64,
    pub sigma_nm: Option<f64>,
    pub radius_nm: Option<f64>,
}

impl Kernel {
    pub fn new(side: usize, values: Vec<f64>, px_per_nm: f64) -> Result<Self> {
        if side % 2 == 0 {
            return Err(Error::Param(format!("kernel side must be odd, got {side}")));
        }
        if values.len() != side * side {
            return Err(Error::Shape(format!(
                "{} kernel values for side {side}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range("kernel values must be finite".into()));
        }
        if !(px_per_nm > 0.0) {
            return Err(Error::Param(format!("px_per_nm must be > 0, got {px_per_nm}")));
        }
        Ok(Kernel {
            side,
            values,
            px_per_nm,
            sigma_nm: None,
            radius_nm: None,
        })
    }

    /// 1×1 identity kernel.
    pub fn delta(px_per_nm: f64) -> Self {
        Kernel::new(1, vec![1.0], px_per_nm).expect("valid delta kernel")
    }

    pub fn radius_px(&self) -> usize {
        self.side / 2
    }

    #[inline]
    pub fn at(&self, col: usize, row: usize) -> f64 {
        self.values[row * self.side + col]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Point-reflected kernel; convolving with it is the adjoint of
    /// convolving with `self`.
    pub fn flipped(&self) -> Kernel {
        let mut k = self.clone();
        k.values.reverse();
        k
    }

    pub fn checksum(&self) -> String {
        let mut bytes = (self.side as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(&self.px_per_nm.to_le_bytes());
        for v in &self.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        checksum::digest_bytes(&bytes)
    }

    /// Kernel weights as a grid, scaled so the peak maps to white.
    pub fn to_grid(&self) -> RasterGrid {
        let peak = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        let r = self.radius_px() as f64 / self.px_per_nm;
        RasterGrid {
            width: self.side,
            height: self.side,
            origin: (-r, -r),
            px_per_nm: self.px_per_nm,
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    /// Writes a graymap preview plus a sidecar with the generating
    /// parameters and a checksum of the exact weights.
    pub fn save(&self, path: &Path) -> Result<()> {
        let extra = [
            ("kernel_side", self.side.to_string()),
            ("sigma_nm", fmt_opt(self.sigma_nm)),
            ("radius_nm", fmt_opt(self.radius_nm)),
            ("kernel_checksum", self.checksum()),
        ];
        self.to_grid().save_pgm(path, &extra)
    }

    /// Reads back the generating parameters from a saved kernel sidecar and
    /// rebuilds the Gaussian, verifying the weight checksum.
    pub fn load_gaussian(path: &Path) -> Result<Kernel> {
        let text = fs::read_to_string(sidecar_path(path))?;
        let kv = parse_key_values(&text)?;
        let get = |k: &str| {
            kv.iter()
                .find(|(key, _)| key == k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| Error::Format(format!("kernel sidecar lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Format(format!("kernel sidecar field {k} is not a number")))
        };
        let k = make_gaussian_kernel(num("sigma_nm")?, num("radius_nm")?, num("px_per_nm")?)?;
        let expected = get("kernel_checksum")?;
        let found = k.checksum();
        if found != expected {
            return Err(Error::Checksum {
                what: path.display().to_string(),
                expected,
                found,
            });
        }
        Ok(k)
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".into(), |v| format!("{v:?}"))
}

/// Gaussian sampled at pixel centers, normalized to unit sum.
pub fn make_gaussian_kernel(sigma: f64, radius: f64, px_per_nm: f64) -> Result<Kernel> {
    if !(sigma > 0.0) || !(radius > 0.0) || !(px_per_nm > 0.0) {
        return Err(Error::Param(format!(
            "gaussian kernel needs sigma, radius, px_per_nm > 0 (got {sigma}, {radius}, {px_per_nm})"
        )));
    }
    let r = (radius * px_per_nm).round() as usize;
    let side = 2 * r + 1;
    let mut values = Vec::with_capacity(side * side);
    let two_s2 = 2.0 * sigma * sigma;
    for row in 0..side {
        let dy = (row as f64 - r as f64) / px_per_nm;
        for col in 0..side {
            let dx = (col as f64 - r as f64) / px_per_nm;
            values.push((-(dx * dx + dy * dy) / two_s2).exp());
        }
    }
    let total: f64 = values.iter().sum();
    values.iter_mut().for_each(|v| *v /= total);
    let mut k = Kernel::new(side, values, px_per_nm)?;
    k.sigma_nm = Some(sigma);
    k.radius_nm = Some(radius);
    Ok(k)
}

fn check_resolution(g: &RasterGrid, k: &Kernel) -> Result<()> {
    if (g.px_per_nm - k.px_per_nm).abs() > 1e-12 * g.px_per_nm {
        return Err(Error::ResolutionMismatch {
            left: g.px_per_nm,
            right: k.px_per_nm,
        });
    }
    Ok(())
}

/// Same-size convolution with zero padding.
pub fn convolve(g: &RasterGrid, k: &Kernel) -> Result<RasterGrid> {
    if k.side <= DIRECT_MAX_SIDE {
        convolve_direct(g, k)
    } else {
        convolve_fft(g, k)
    }
}

/// Direct summation. Each output pixel sums kernel rows then columns in a
/// fixed order, so results are bit-reproducible.
pub fn convolve_direct(g: &RasterGrid, k: &Kernel) -> Result<RasterGrid> {
    check_resolution(g, k)?;
    let (w, h) = (g.width as isize, g.height as isize);
    let r = k.radius_px() as isize;
    let mut out = vec![0.0; g.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for kr in 0..k.side as isize {
                let sy = y - (kr - r);
                if sy < 0 || sy >= h {
                    continue;
                }
                let row = &g.values[(sy * w) as usize..((sy + 1) * w) as usize];
                let krow = &k.values[kr as usize * k.side..(kr as usize + 1) * k.side];
                for (kc, &kv) in krow.iter().enumerate() {
                    let sx = x - (kc as isize - r);
                    if sx >= 0 && sx < w {
                        acc += kv * row[sx as usize];
                    }
                }
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    Ok(g.with_values(out))
}

/// Convolution as a pointwise product of 2D FFTs over a padded domain large
/// enough to avoid wrap-around.
pub fn convolve_fft(g: &RasterGrid, k: &Kernel) -> Result<RasterGrid> {
    check_resolution(g, k)?;
    let (w, h) = g.dims();
    if w == 0 || h == 0 {
        return Ok(g.clone());
    }
    let nx = fast_len(w + k.side - 1);
    let ny = fast_len(h + k.side - 1);
    let mut planner = FftPlanner::<f64>::new();

    let mut a = vec![Complex::new(0.0, 0.0); nx * ny];
    for y in 0..h {
        for x in 0..w {
            a[y * nx + x].re = g.values[y * w + x];
        }
    }
    let mut b = vec![Complex::new(0.0, 0.0); nx * ny];
    for row in 0..k.side {
        for col in 0..k.side {
            b[row * nx + col].re = k.at(col, row);
        }
    }
    fft2(&mut planner, &mut a, nx, ny, false);
    fft2(&mut planner, &mut b, nx, ny, false);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    fft2(&mut planner, &mut a, nx, ny, true);

    let scale = 1.0 / (nx * ny) as f64;
    let r = k.radius_px();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = a[(y + r) * nx + x + r].re * scale;
        }
    }
    Ok(g.with_values(out))
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex<f64>], nx: usize, ny: usize, inverse: bool) {
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(nx), planner.plan_fft_inverse(ny))
    } else {
        (planner.plan_fft_forward(nx), planner.plan_fft_forward(ny))
    };
    row_fft.process(data);
    let mut t = vec![Complex::new(0.0, 0.0); nx * ny];
    transpose(data, &mut t, nx, ny);
    col_fft.process(&mut t);
    transpose(&t, data, ny, nx);
}

/// `src` is `rows x cols` row-major; `dst` becomes `cols x rows`.
fn transpose(src: &[Complex<f64>], dst: &mut [Complex<f64>], cols: usize, rows: usize) {
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Smallest 2^a 3^b 5^c at or above `n`.
fn fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut v = m;
        for p in [2, 3, 5] {
            while v % p == 0 {
                v /= p;
            }
        }
        if v == 1 {
            return m;
        }
        m += 1;
    }
}

/// Parameters of the forward process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LithoConfig {
    /// Gaussian blur sigma in nm.
    pub optical_sigma: f64,
    /// Kernel half-width in nm.
    pub kernel_radius: f64,
    pub resist_threshold: f64,
}

impl Default for LithoConfig {
    fn default() -> Self {
        LithoConfig {
            optical_sigma: 25.0,
            kernel_radius: 75.0,
            resist_threshold: 0.5,
        }
    }
}

impl LithoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optical_sigma > 0.0) {
            return Err(Error::Config(format!(
                "litho.optical_sigma must be > 0, got {}",
                self.optical_sigma
            )));
        }
        if !(self.kernel_radius >= 2.0 * self.optical_sigma) {
            return Err(Error::Config(format!(
                "litho.kernel_radius ({}) must be at least 2 x litho.optical_sigma ({})",
                self.kernel_radius, self.optical_sigma
            )));
        }
        if !(self.resist_threshold > 0.0 && self.resist_threshold < 1.0) {
            return Err(Error::Config(format!(
                "litho.resist_threshold must lie in (0, 1), got {}",
                self.resist_threshold
            )));
        }
        Ok(())
    }

    pub fn kernel(&self, px_per_nm: f64) -> Result<Kernel> {
        make_gaussian_kernel(self.optical_sigma, self.kernel_radius, px_per_nm)
    }
}

/// Optical intensity of a mask (binary or relaxed) under the Gaussian
/// kernel, clamped to `[0, 1]` against transform round-off.
pub fn aerial_image(mask: &RasterGrid, cfg: &LithoConfig) -> Result<RasterGrid> {
    cfg.validate()?;
    let k = cfg.kernel(mask.px_per_nm)?;
    aerial_with_kernel(mask, &k)
}

pub fn aerial_with_kernel(mask: &RasterGrid, k: &Kernel) -> Result<RasterGrid> {
    let mut out = convolve(mask, k)?;
    out.values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// Constant-threshold resist: 1 where intensity is strictly above `threshold`.
pub fn print_image(intensity: &RasterGrid, threshold: f64) -> RasterGrid {
    intensity.with_values(
        intensity
            .values
            .iter()
            .map(|&v| if v > threshold { 1.0 } else { 0.0 })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(w: usize, h: usize, values: Vec<f64>) -> RasterGrid {
        RasterGrid::from_values(w, h, (0.5, 0.5), 1.0, values).unwrap()
    }

    #[test]
    fn narrow_gaussian_is_delta() {
        let k = make_gaussian_kernel(0.1, 1.0, 1.0).unwrap();
        assert_eq!(k.side, 3);
        assert!((k.at(1, 1) - 1.0).abs() < 1e-12);
        assert!((k.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn large_gaussian_is_normalized_and_symmetric() {
        let k = make_gaussian_kernel(25.0, 100.0, 2.0).unwrap();
        assert_eq!(k.side, 401);
        assert!((k.sum() - 1.0).abs() < 1e-9);
        for i in 0..k.side {
            for j in 0..k.side {
                assert_eq!(k.at(i, j), k.at(j, i));
            }
        }
        // direct sampling oracle at one off-axis offset
        let (dx, dy) = (3.0 / 2.0, -7.0 / 2.0);
        let raw = (-(dx * dx + dy * dy) / (2.0 * 625.0f64)).exp();
        let center_raw = 1.0;
        let ratio = k.at(200 + 3, 200 - 7) / k.at(200, 200);
        assert!((ratio - raw / center_raw).abs() < 1e-12);
    }

    #[test]
    fn gaussian_rejects_bad_params() {
        assert!(matches!(make_gaussian_kernel(-1.0, 3.0, 1.0), Err(Error::Param(_))));
        assert!(matches!(make_gaussian_kernel(1.0, 0.0, 1.0), Err(Error::Param(_))));
    }

    #[test]
    fn impulse_with_cross_kernel() {
        let mut v = vec![0.0; 25];
        v[12] = 1.0;
        let g = grid(5, 5, v);
        let cross = Kernel::new(3, vec![0., 1., 0., 1., 1., 1., 0., 1., 0.], 1.0).unwrap();
        let out = convolve_direct(&g, &cross).unwrap();
        let mut expected = vec![0.0; 25];
        for i in [7, 11, 12, 13, 17] {
            expected[i] = 1.0;
        }
        assert_eq!(out.values, expected);
        let fft = convolve_fft(&g, &cross).unwrap();
        for (a, b) in fft.values.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = grid(7, 4, (0..28).map(|_| rng.gen::<f64>()).collect());
        assert_eq!(convolve(&g, &Kernel::delta(1.0)).unwrap(), g);
    }

    #[test]
    fn uniform_kernel_on_ones_zero_padded() {
        let g = grid(4, 4, vec![1.0; 16]);
        let k = Kernel::new(3, vec![1.0 / 9.0; 9], 1.0).unwrap();
        let out = convolve_direct(&g, &k).unwrap();
        assert!((out.get(1, 1) - 1.0).abs() < 1e-15);
        assert!((out.get(2, 2) - 1.0).abs() < 1e-15);
        assert!((out.get(0, 0) - 4.0 / 9.0).abs() < 1e-15);
        assert!((out.get(3, 0) - 4.0 / 9.0).abs() < 1e-15);
        assert!((out.get(1, 0) - 6.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_kernel_orientation_matches_between_routes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = grid(9, 6, (0..54).map(|_| rng.gen::<f64>()).collect());
        let k = Kernel::new(5, (0..25).map(|_| rng.gen::<f64>() - 0.3).collect(), 1.0).unwrap();
        let a = convolve_direct(&g, &k).unwrap();
        let b = convolve_fft(&g, &k).unwrap();
        let diff = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
    }

    #[test]
    fn resolution_mismatch() {
        let g = grid(3, 3, vec![0.0; 9]);
        let k = Kernel::delta(2.0);
        assert!(matches!(convolve(&g, &k), Err(Error::ResolutionMismatch { .. })));
    }

    #[test]
    fn print_threshold_is_strict() {
        let g = grid(2, 2, vec![0.6; 4]);
        assert_eq!(print_image(&g, 0.5).values, vec![1.0; 4]);
        let g = grid(2, 2, vec![0.5; 4]);
        assert_eq!(print_image(&g, 0.5).values, vec![0.0; 4]);
    }

    #[test]
    fn aerial_of_trivial_masks() {
        let cfg = LithoConfig {
            optical_sigma: 3.0,
            kernel_radius: 9.0,
            resist_threshold: 0.5,
        };
        let zero = RasterGrid::zeros(40, 40, (0.5, 0.5), 1.0);
        assert!(aerial_image(&zero, &cfg).unwrap().values.iter().all(|&v| v == 0.0));
        let ones = RasterGrid::filled(40, 40, (0.5, 0.5), 1.0, 1.0);
        let a = aerial_image(&ones, &cfg).unwrap();
        assert!((a.get(20, 20) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fast_len_values() {
        assert_eq!(fast_len(7), 8);
        assert_eq!(fast_len(11), 12);
        assert_eq!(fast_len(1), 1);
        assert_eq!(fast_len(97), 100);
    }
}
