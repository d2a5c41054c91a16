//! Forward and backward passes, generic over the float type so the same
//! code runs at f32 for training and at f64 for gradient checks.

use num_traits::Float;

use super::{ArchDescriptor, Pool};
use crate::error::{Error, Result};
use crate::iip::ClassId;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayout {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_side: usize,
    pub out_side: usize,
    pub stride: usize,
    pub w_off: usize,
    pub b_off: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadLayout {
    pub features: usize,
    pub classes: usize,
    pub w_off: usize,
    pub b_off: usize,
}

/// Offsets of every tensor inside the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub input_side: usize,
    pub convs: Vec<ConvLayout>,
    pub head: HeadLayout,
    pub pool: Pool,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &ArchDescriptor) -> Result<Self> {
        arch.validate()?;
        let mut convs = Vec::with_capacity(arch.conv_blocks.len());
        let (mut side, mut channels, mut off) = (arch.input_side, 1usize, 0usize);
        for b in &arch.conv_blocks {
            let out_side = (side - 1) / b.stride + 1;
            let w_off = off;
            let b_off = w_off + b.filters * channels * 9;
            off = b_off + b.filters;
            convs.push(ConvLayout {
                in_channels: channels,
                out_channels: b.filters,
                in_side: side,
                out_side,
                stride: b.stride,
                w_off,
                b_off,
            });
            side = out_side;
            channels = b.filters;
        }
        let features = match arch.pool {
            Pool::GlobalAverage => channels,
            Pool::Flatten => channels * side * side,
        };
        let w_off = off;
        let b_off = w_off + features * arch.num_classes;
        let total = b_off + arch.num_classes;
        Ok(Layout {
            input_side: arch.input_side,
            convs,
            head: HeadLayout {
                features,
                classes: arch.num_classes,
                w_off,
                b_off,
            },
            pool: arch.pool,
            total,
        })
    }

    fn check(&self, weights_len: usize, image_len: usize) -> Result<()> {
        if weights_len != self.total {
            return Err(Error::Shape(format!(
                "{weights_len} weights, architecture needs {}",
                self.total
            )));
        }
        if image_len != self.input_side * self.input_side {
            return Err(Error::Shape(format!(
                "image has {image_len} pixels, model expects {0}x{0}",
                self.input_side
            )));
        }
        Ok(())
    }
}

pub struct ForwardOut<T> {
    /// Input followed by each block's post-ReLU activations.
    pub activations: Vec<Vec<T>>,
    pub features: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

pub type Gradients<T> = Vec<T>;

/// Patch matrix of a zero-padded 3x3 convolution: row `i * 9 + ky * 3 + kx`
/// holds, for every output position, the input value under tap
/// `(ky, kx)` of channel `i`.
fn im2col<T: Float>(c: &ConvLayout, input: &[T]) -> Vec<T> {
    let (n, os, s) = (c.in_side as isize, c.out_side, c.stride);
    let area = os * os;
    let mut cols = vec![T::zero(); c.in_channels * 9 * area];
    for i in 0..c.in_channels {
        let plane = &input[i * (n * n) as usize..(i + 1) * (n * n) as usize];
        for k in 0..9 {
            let (ky, kx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
            let row = &mut cols[(i * 9 + k) * area..(i * 9 + k + 1) * area];
            for oy in 0..os {
                let iy = (oy * s) as isize + ky;
                if iy < 0 || iy >= n {
                    continue;
                }
                for ox in 0..os {
                    let ix = (ox * s) as isize + kx;
                    if ix >= 0 && ix < n {
                        row[oy * os + ox] = plane[(iy * n + ix) as usize];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the
/// input.
fn col2im<T: Float>(c: &ConvLayout, dcols: &[T]) -> Vec<T> {
    let (n, os, s) = (c.in_side as isize, c.out_side, c.stride);
    let area = os * os;
    let mut out = vec![T::zero(); c.in_channels * (n * n) as usize];
    for i in 0..c.in_channels {
        let plane = &mut out[i * (n * n) as usize..(i + 1) * (n * n) as usize];
        for k in 0..9 {
            let (ky, kx) = ((k / 3) as isize - 1, (k % 3) as isize - 1);
            let row = &dcols[(i * 9 + k) * area..(i * 9 + k + 1) * area];
            for oy in 0..os {
                let iy = (oy * s) as isize + ky;
                if iy < 0 || iy >= n {
                    continue;
                }
                for ox in 0..os {
                    let ix = (ox * s) as isize + kx;
                    if ix >= 0 && ix < n {
                        let p = &mut plane[(iy * n + ix) as usize];
                        *p = *p + row[oy * os + ox];
                    }
                }
            }
        }
    }
    out
}

/// Dot product with eight fixed interleaved partial sums.
fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    for (l, (&x, &y)) in ra.iter().zip(rb).enumerate() {
        acc[l] = acc[l] + x * y;
    }
    acc.iter().fold(T::zero(), |s, &v| s + v)
}

/// 3x3 convolution with zero padding, stride `c.stride`, then ReLU. Each
/// output adds its bias and then the taps in (channel, row, column) order.
fn conv_forward<T: Float>(c: &ConvLayout, w: &[T], input: &[T]) -> Vec<T> {
    let area = c.out_side * c.out_side;
    let k = c.in_channels * 9;
    let cols = im2col(c, input);
    let mut out = vec![T::zero(); c.out_channels * area];
    for (o, plane) in out.chunks_exact_mut(area).enumerate() {
        plane.iter_mut().for_each(|v| *v = w[c.b_off + o]);
        let wrow = &w[c.w_off + o * k..c.w_off + (o + 1) * k];
        for (&wk, col) in wrow.iter().zip(cols.chunks_exact(area)) {
            for (d, &x) in plane.iter_mut().zip(col) {
                *d = *d + wk * x;
            }
        }
        plane.iter_mut().for_each(|v| {
            if !(*v > T::zero()) {
                *v = T::zero()
            }
        });
    }
    out
}

/// Forward pass of one image.
pub fn forward<T: Float>(layout: &Layout, weights: &[T], image: &[T]) -> Result<ForwardOut<T>> {
    layout.check(weights.len(), image.len())?;
    let mut activations = Vec::with_capacity(layout.convs.len() + 1);
    activations.push(image.to_vec());
    for c in &layout.convs {
        let next = conv_forward(c, weights, activations.last().expect("input present"));
        activations.push(next);
    }
    let last = activations.last().expect("at least one block");
    let features = match layout.pool {
        Pool::Flatten => last.clone(),
        Pool::GlobalAverage => {
            let c = layout.convs.last().expect("at least one block");
            let area = c.out_side * c.out_side;
            let inv = T::one() / T::from(area).expect("area fits");
            last.chunks_exact(area)
                .map(|ch| ch.iter().fold(T::zero(), |a, &v| a + v) * inv)
                .collect()
        }
    };
    let h = &layout.head;
    let logits: Vec<T> = (0..h.classes)
        .map(|k| {
            let row = &weights[h.w_off + k * h.features..h.w_off + (k + 1) * h.features];
            row.iter()
                .zip(&features)
                .fold(weights[h.b_off + k], |a, (&w, &f)| a + w * f)
        })
        .collect();
    let probs = softmax(&logits);
    Ok(ForwardOut {
        activations,
        features,
        logits,
        probs,
    })
}

fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum = exps.iter().fold(T::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of one sample from its logits, in f64.
fn cross_entropy<T: Float>(logits: &[T], label: ClassId) -> f64 {
    let l: Vec<f64> = logits.iter().map(|v| v.to_f64().expect("finite")).collect();
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + l.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    lse - l[label as usize]
}

fn check_label(layout: &Layout, label: ClassId) -> Result<()> {
    if label as usize >= layout.head.classes {
        return Err(Error::Shape(format!(
            "label {label} outside 0..{}",
            layout.head.classes
        )));
    }
    Ok(())
}

/// Mean cross-entropy over a batch.
pub fn loss<T: Float>(layout: &Layout, weights: &[T], batch: &[(&[T], ClassId)]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let mut total = 0.0;
    for &(image, label) in batch {
        check_label(layout, label)?;
        total += cross_entropy(&forward(layout, weights, image)?.logits, label);
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of the mean cross-entropy over `batch` with respect to every
/// weight, plus each sample's loss.
pub fn backward<T: Float>(
    layout: &Layout,
    weights: &[T],
    batch: &[(&[T], ClassId)],
) -> Result<(Gradients<T>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let scale = T::one() / T::from(batch.len()).expect("batch size fits");
    let mut grad = vec![T::zero(); layout.total];
    let mut losses = Vec::with_capacity(batch.len());
    let h = &layout.head;
    for &(image, label) in batch {
        check_label(layout, label)?;
        let fw = forward(layout, weights, image)?;
        losses.push(cross_entropy(&fw.logits, label));

        let dlogits: Vec<T> = fw
            .probs
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let y = if k == label as usize { T::one() } else { T::zero() };
                (p - y) * scale
            })
            .collect();
        let mut dfeatures = vec![T::zero(); h.features];
        for (k, &d) in dlogits.iter().enumerate() {
            grad[h.b_off + k] = grad[h.b_off + k] + d;
            let row = h.w_off + k * h.features;
            for (f, &x) in fw.features.iter().enumerate() {
                grad[row + f] = grad[row + f] + d * x;
                dfeatures[f] = dfeatures[f] + d * weights[row + f];
            }
        }

        let last = layout.convs.last().expect("at least one block");
        let mut dact = match layout.pool {
            Pool::Flatten => dfeatures,
            Pool::GlobalAverage => {
                let area = last.out_side * last.out_side;
                let inv = T::one() / T::from(area).expect("area fits");
                dfeatures
                    .iter()
                    .flat_map(|&d| std::iter::repeat(d * inv).take(area))
                    .collect()
            }
        };

        for (li, c) in layout.convs.iter().enumerate().rev() {
            let area = c.out_side * c.out_side;
            let k = c.in_channels * 9;
            // ReLU gate
            for (d, &y) in dact.iter_mut().zip(&fw.activations[li + 1]) {
                if !(y > T::zero()) {
                    *d = T::zero();
                }
            }
            let cols = im2col(c, &fw.activations[li]);
            let mut dcols = vec![T::zero(); cols.len()];
            for (o, dz) in dact.chunks_exact(area).enumerate() {
                grad[c.b_off + o] = dz.iter().fold(grad[c.b_off + o], |a, &v| a + v);
                let wbase = c.w_off + o * k;
                for (r, (col, dcol)) in cols.chunks_exact(area).zip(dcols.chunks_exact_mut(area)).enumerate() {
                    grad[wbase + r] = grad[wbase + r] + dot(dz, col);
                    if li == 0 {
                        continue;
                    }
                    let wk = weights[wbase + r];
                    for (d, &g) in dcol.iter_mut().zip(dz) {
                        *d = *d + g * wk;
                    }
                }
            }
            if li > 0 {
                dact = col2im(c, &dcols);
            }
        }
    }
    Ok((grad, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{init_model, ArchDescriptor, ConvBlock, Pool};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny(pool: Pool) -> ArchDescriptor {
        ArchDescriptor {
            input_side: 8,
            conv_blocks: vec![ConvBlock { filters: 3, stride: 2 }],
            pool,
            num_classes: 3,
        }
    }

    fn images(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..len).map(|_| rng.gen::<f64>()).collect()).collect()
    }

    /// Central differences in f64 against the analytic gradient.
    fn max_rel_error(arch: &ArchDescriptor, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = Layout::new(arch).unwrap();
        let w = init_model(arch, seed).unwrap().weights_f64();
        let imgs = images(&mut rng, 3, 64);
        let batch: Vec<(&[f64], ClassId)> = imgs
            .iter()
            .enumerate()
            .map(|(i, im)| (im.as_slice(), (i % 3) as ClassId))
            .collect();
        let (g, _) = backward(&layout, &w, &batch).unwrap();
        let h = 1e-6;
        let mut worst = 0.0f64;
        for i in 0..w.len() {
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            let fd = (loss(&layout, &p, &batch).unwrap() - loss(&layout, &m, &batch).unwrap()) / (2.0 * h);
            let denom = g[i].abs().max(fd.abs());
            if denom > 1e-7 {
                worst = worst.max((g[i] - fd).abs() / denom);
            }
        }
        worst
    }

    #[test]
    fn f64_gradients_match_finite_differences() {
        for seed in 0..4 {
            assert!(max_rel_error(&tiny(Pool::GlobalAverage), seed) < 1e-5);
            assert!(max_rel_error(&tiny(Pool::Flatten), seed) < 1e-5);
        }
    }

    #[test]
    fn duplicated_sample_matches_single() {
        let arch = tiny(Pool::Flatten);
        let layout = Layout::new(&arch).unwrap();
        let w = init_model(&arch, 2).unwrap().weights;
        let img: Vec<f32> = (0..64).map(|i| (i % 5) as f32 / 5.0).collect();
        let (g1, _) = backward(&layout, &w, &[(img.as_slice(), 1)]).unwrap();
        let (g2, _) = backward(&layout, &w, &[(img.as_slice(), 1), (img.as_slice(), 1)]).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-6), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_head_closed_form_gradient() {
        // uniform probs: dL/db_k = 1/C - [k == y], dL/dW_kf = (1/C - [k == y]) x_f
        let arch = tiny(Pool::GlobalAverage);
        let layout = Layout::new(&arch).unwrap();
        let mut m = init_model(&arch, 5).unwrap();
        m.zero_head().unwrap();
        let w = m.weights_f64();
        let img: Vec<f64> = (0..64).map(|i| ((i * 7) % 11) as f64 / 11.0).collect();
        let (g, losses) = backward(&layout, &w, &[(img.as_slice(), 2)]).unwrap();
        assert!((losses[0] - 3f64.ln()).abs() < 1e-12);
        let fw = forward(&layout, &w, &img).unwrap();
        let h = &layout.head;
        for k in 0..3 {
            let coef = 1.0 / 3.0 - if k == 2 { 1.0 } else { 0.0 };
            assert!((g[h.b_off + k] - coef).abs() < 1e-12);
            for f in 0..h.features {
                assert!((g[h.w_off + k * h.features + f] - coef * fw.features[f]).abs() < 1e-12);
            }
        }
        // a zero head passes no gradient into the conv stack
        assert!(g[..h.w_off].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn probs_form_simplex() {
        let arch = ArchDescriptor::default_for(12, 7);
        let layout = Layout::new(&arch).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for seed in 0..5 {
            let w = init_model(&arch, seed).unwrap().weights;
            let img: Vec<f32> = (0..144).map(|_| rng.gen::<f32>()).collect();
            let out = forward(&layout, &w, &img).unwrap();
            assert!(out.probs.iter().all(|&p| p >= 0.0));
            let s: f64 = out.probs.iter().map(|&p| p as f64).sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(out.logits.iter().all(|l| l.is_finite()));
        }
    }
}
