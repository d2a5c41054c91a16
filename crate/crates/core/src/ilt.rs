//! Pixel-based inverse lithography by sigmoid-relaxed gradient descent.
//!
//! The mask is parameterized by an unconstrained field `theta`:
//!
//! ```text
//! m = sigmoid(a_mask * theta)
//! i = m (*) k                         optical convolution
//! p = sigmoid(a_resist * (i - t_r))   relaxed resist
//! L = sum((p - T)^2) / N
//! ```
//!
//! The gradient is propagated back through both sigmoids; the adjoint of the
//! convolution is a convolution with the point-reflected kernel.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RasterGrid;
use crate::litho::{self, convolve, Kernel, LithoConfig};
use crate::pipeline::iou;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    TargetCopy,
    DilatedTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IltConfig {
    pub steps: usize,
    /// Largest per-pixel change of `theta` in one step; the gradient is
    /// rescaled so its largest entry moves exactly this far.
    pub learning_rate: f64,
    pub sigmoid_steepness_resist: f64,
    pub sigmoid_steepness_mask: f64,
    pub init_mode: InitMode,
    pub binarize_threshold: f64,
    /// Binarized candidates are scored every this many steps.
    pub eval_every: usize,
}

impl Default for IltConfig {
    fn default() -> Self {
        IltConfig {
            steps: 200,
            learning_rate: 0.2,
            sigmoid_steepness_resist: 25.0,
            sigmoid_steepness_mask: 4.0,
            init_mode: InitMode::TargetCopy,
            binarize_threshold: 0.5,
            eval_every: 5,
        }
    }
}

impl IltConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("ilt.steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("ilt.learning_rate must be > 0".into()));
        }
        if !(self.sigmoid_steepness_resist > 0.0 && self.sigmoid_steepness_mask > 0.0) {
            return Err(Error::Config("ilt sigmoid steepness values must be > 0".into()));
        }
        if !(self.binarize_threshold > 0.0 && self.binarize_threshold < 1.0) {
            return Err(Error::Config("ilt.binarize_threshold must lie in (0, 1)".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("ilt.eval_every must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IltResult {
    /// The binary reference mask M*.
    pub mask: RasterGrid,
    /// Relaxed loss before each step, plus the loss after the last step.
    pub loss_history: Vec<f64>,
    /// IoU of the printed image of `mask` against the target.
    pub final_fidelity: f64,
    /// IoU obtained when the target itself is used as the mask.
    pub initial_fidelity: f64,
    /// Step whose binarized iterate was kept.
    pub best_step: usize,
    /// Relaxed loss at the kept iterate.
    pub final_loss: f64,
}

impl IltResult {
    /// `step,loss` rows with a header line.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            let _ = writeln!(s, "{i},{l:e}");
        }
        s
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Loss and gradient with respect to `theta`.
pub fn ilt_loss(
    theta: &RasterGrid,
    target: &RasterGrid,
    litho: &LithoConfig,
    cfg: &IltConfig,
) -> Result<(f64, RasterGrid)> {
    litho.validate()?;
    let kernel = litho.kernel(target.px_per_nm)?;
    loss_with_kernel(theta, target, &kernel, &kernel.flipped(), litho.resist_threshold, cfg)
}

fn loss_with_kernel(
    theta: &RasterGrid,
    target: &RasterGrid,
    kernel: &Kernel,
    adjoint: &Kernel,
    resist_threshold: f64,
    cfg: &IltConfig,
) -> Result<(f64, RasterGrid)> {
    theta.same_dims(target)?;
    let (a_m, a_r) = (cfg.sigmoid_steepness_mask, cfg.sigmoid_steepness_resist);
    let n = target.len() as f64;
    let mask = theta.with_values(theta.values.iter().map(|&t| sigmoid(a_m * t)).collect());
    let intensity = convolve(&mask, kernel)?;
    let mut loss = 0.0;
    let mut d_intensity = Vec::with_capacity(target.len());
    for (&i, &t) in intensity.values.iter().zip(&target.values) {
        let p = sigmoid(a_r * (i - resist_threshold));
        let e = p - t;
        loss += e * e;
        d_intensity.push(2.0 * e / n * a_r * p * (1.0 - p));
    }
    let d_mask = convolve(&intensity.with_values(d_intensity), adjoint)?;
    let grad = d_mask
        .values
        .iter()
        .zip(&mask.values)
        .map(|(&g, &m)| g * a_m * m * (1.0 - m))
        .collect();
    Ok((loss / n, theta.with_values(grad)))
}

/// Printed image of a binary mask under the forward process.
pub fn print_mask(mask: &RasterGrid, litho: &LithoConfig) -> Result<RasterGrid> {
    let aerial = litho::aerial_image(mask, litho)?;
    Ok(litho::print_image(&aerial, litho.resist_threshold))
}

fn initial_theta(target: &RasterGrid, mode: InitMode) -> RasterGrid {
    let seed = match mode {
        InitMode::TargetCopy => target.clone(),
        InitMode::DilatedTarget => dilate(target),
    };
    seed.with_values(seed.values.iter().map(|&v| 2.0 * v - 1.0).collect())
}

/// One-pixel square dilation.
fn dilate(g: &RasterGrid) -> RasterGrid {
    let mut out = g.clone();
    for y in 0..g.height as isize {
        for x in 0..g.width as isize {
            let hit = (-1..=1).any(|dy| (-1..=1).any(|dx| g.get_padded(x + dx, y + dy) != 0.0));
            if hit {
                out.set(x as usize, y as usize, 1.0);
            }
        }
    }
    out
}

/// Runs gradient descent for `cfg.steps` and returns the best binarized
/// iterate, scored by printed-image IoU against the target, among iterates
/// whose relaxed loss does not exceed the initial loss. The unmodified
/// target is always a candidate, so the result never prints worse than the
/// uncorrected mask.
pub fn optimize_mask(target: &RasterGrid, litho: &LithoConfig, cfg: &IltConfig) -> Result<IltResult> {
    litho.validate()?;
    cfg.validate()?;
    if !target.is_binary() {
        return Err(Error::Param("ILT target must be binary".into()));
    }
    if target.is_empty() {
        return Err(Error::Region("ILT target grid is empty".into()));
    }
    let kernel = litho.kernel(target.px_per_nm)?;
    let adjoint = kernel.flipped();
    let binarize = |theta: &RasterGrid| {
        theta.with_values(
            theta
                .values
                .iter()
                .map(|&t| (sigmoid(cfg.sigmoid_steepness_mask * t) > cfg.binarize_threshold) as u8 as f64)
                .collect(),
        )
    };
    let fidelity = |mask: &RasterGrid| -> Result<f64> {
        let printed = litho::print_image(&litho::aerial_with_kernel(mask, &kernel)?, litho.resist_threshold);
        iou(&printed, target)
    };

    let initial_fidelity = fidelity(target)?;
    let mut theta = initial_theta(target, cfg.init_mode);
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut best: Option<(f64, usize, f64, RasterGrid)> = None;
    let mut initial_loss = f64::INFINITY;

    for step in 0..=cfg.steps {
        let (loss, grad) =
            loss_with_kernel(&theta, target, &kernel, &adjoint, litho.resist_threshold, cfg)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        history.push(loss);
        if step == 0 {
            initial_loss = loss;
        }
        let scored = step == 0 || step == cfg.steps || step % cfg.eval_every == 0;
        if scored && loss <= initial_loss {
            let mask = binarize(&theta);
            let f = fidelity(&mask)?;
            if best.as_ref().map_or(true, |(bf, ..)| f > *bf) {
                best = Some((f, step, loss, mask));
            }
        }
        if step == cfg.steps {
            break;
        }
        let peak = grad.values.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if peak == 0.0 {
            // stationary; remaining steps would not move theta
            continue;
        }
        let scale = cfg.learning_rate / peak;
        for (t, g) in theta.values.iter_mut().zip(&grad.values) {
            *t -= scale * g;
        }
    }

    let (mut final_fidelity, best_step, final_loss, mut mask) =
        best.expect("step 0 is always scored");
    // TargetCopy starts from the target itself; other modes may not.
    if initial_fidelity > final_fidelity {
        final_fidelity = initial_fidelity;
        mask = target.clone();
    }
    Ok(IltResult {
        mask,
        loss_history: history,
        final_fidelity,
        initial_fidelity,
        best_step,
        final_loss,
    })
}
