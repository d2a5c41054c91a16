//! Multi-stage flows shared by the command line and the test suites.

use crate::classifier::{init_model, train, ModelParams, TrainHistory};
use crate::config::RunConfig;
use crate::error::Result;
use crate::grid::RasterGrid;
use crate::ilt::{optimize_mask, IltResult};
use crate::layout::{rasterize, BBox, LayoutPattern};
use crate::pipeline::ConfusionMatrix;
use crate::tiling::{build_dataset, merge_datasets, split_dataset, PixelDataset, SamplingConfig, Split};

/// A target rasterized over its deployment domain with its ILT mask.
#[derive(Debug, Clone)]
pub struct Reference {
    pub domain: BBox,
    pub raster: RasterGrid,
    pub ilt: IltResult,
}

pub fn reference(target: &LayoutPattern, run: &RunConfig) -> Result<Reference> {
    let domain = run.tiling.domain(target)?;
    let raster = rasterize(target, run.tiling.px_per_nm, domain)?;
    let ilt = optimize_mask(&raster, &run.litho, &run.ilt)?;
    Ok(Reference { domain, raster, ilt })
}

/// Dataset over all training families, split into train, val and test.
/// Source `i` samples its pixels with seed `run.seed + i`.
pub fn prepare_dataset(run: &RunConfig) -> Result<(PixelDataset, Vec<Reference>)> {
    let mut parts = Vec::new();
    let mut refs = Vec::new();
    for (i, spec) in run.data.train_patterns.iter().enumerate() {
        let target = spec.generate()?;
        let r = reference(&target, run)?;
        let sampling = SamplingConfig {
            per_class_cap: run.data.per_class_cap,
            seed: run.seed.wrapping_add(i as u64),
        };
        parts.push(build_dataset(&target, &r.ilt.mask, &run.tiling, &run.iip, &sampling)?);
        refs.push(r);
    }
    let [t, v, s] = run.data.split;
    let d = split_dataset(merge_datasets(parts)?, (t, v, s), run.seed)?;
    Ok((d, refs))
}

/// Fresh model from `run.model` and `run.seed`, trained on `d`.
pub fn train_model(d: &PixelDataset, run: &RunConfig) -> Result<(ModelParams, TrainHistory)> {
    let m = init_model(&run.model, run.seed)?;
    train(&m, d, &run.train)
}

/// Reference-vs-predicted classes over one split.
pub fn split_confusion(m: &ModelParams, d: &PixelDataset, split: Split) -> Result<ConfusionMatrix> {
    let mut pred = Vec::new();
    let mut truth = Vec::new();
    for s in d.split(split) {
        pred.push(m.predict(&s.image)?);
        truth.push(s.label);
    }
    ConfusionMatrix::from_labels(&pred, &truth, d.meta.num_classes)
}
