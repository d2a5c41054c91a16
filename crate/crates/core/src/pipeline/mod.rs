//! Deployment: per-pixel inference over a whole target, map assembly,
//! thresholding, vectorization and cleanup.

mod metrics;
mod scaling;

pub use metrics::{confusion_matrix, iou, ConfusionMatrix};
pub use scaling::{plan_chunks, run_chunked, ScalingReport, ScalingRow, WorkChunk};

use serde::{Deserialize, Serialize};

use crate::classifier::{predict_with, Layout, ModelParams};
use crate::error::{Error, Result};
use crate::grid::RasterGrid;
use crate::iip::{class_value, threshold_iip, IipConfig, IipMap};
use crate::layout::{rasterize, vectorize, BBox, LayoutPattern};
use crate::tiling::{TilingConfig, WindowSampler};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanupConfig {
    /// nm²
    pub min_area: f64,
    /// nm
    pub min_edge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    pub tiling: TilingConfig,
    pub iip: IipConfig,
    pub workers: usize,
    /// Only pixels whose centers fall in one of these boxes are predicted;
    /// the rest keep value 0.
    #[serde(default)]
    pub region_filter: Option<Vec<BBox>>,
    pub cleanup: CleanupConfig,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        CorrectionConfig {
            tiling: TilingConfig::default(),
            iip: IipConfig::default(),
            workers: 1,
            region_filter: None,
            cleanup: CleanupConfig::default(),
        }
    }
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.tiling.validate()?;
        self.iip.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("correction.workers must be >= 1".into()));
        }
        let c = self.cleanup;
        if !(c.min_area >= 0.0 && c.min_edge >= 0.0) {
            return Err(Error::Config(
                "correction.cleanup.min_area and min_edge must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// The model must read this tiling's images and emit this many classes.
    pub fn check_model(&self, m: &ModelParams) -> Result<Layout> {
        if m.arch.input_side != self.tiling.compressed_side() {
            return Err(Error::Shape(format!(
                "model input side {} but tiling produces {}",
                m.arch.input_side,
                self.tiling.compressed_side()
            )));
        }
        if m.arch.num_classes != self.iip.num_classes {
            return Err(Error::Shape(format!(
                "model has {} classes but iip.num_classes is {}",
                m.arch.num_classes, self.iip.num_classes
            )));
        }
        m.layout()
    }
}

/// A rasterized target ready for inference.
pub struct Prepared {
    pub raster: RasterGrid,
    sampler: WindowSampler,
    layout: Layout,
}

impl Prepared {
    pub fn new(m: &ModelParams, target: &LayoutPattern, domain: BBox, cfg: &CorrectionConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = cfg.check_model(m)?;
        let raster = rasterize(target, cfg.tiling.px_per_nm, domain)?;
        let sampler = WindowSampler::new(&raster, &cfg.tiling)?;
        Ok(Prepared {
            raster,
            sampler,
            layout,
        })
    }

    /// Pixel indices (row-major, ascending) whose centers lie in any box.
    pub fn select(&self, regions: Option<&[BBox]>) -> Result<Vec<usize>> {
        let (w, h) = self.raster.dims();
        let Some(regions) = regions else {
            return Ok((0..w * h).collect());
        };
        for r in regions {
            check_region(&self.raster, r)?;
        }
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let (cx, cy) = self.raster.pixel_center(x, y);
                if regions.iter().any(|r| contains(r, cx, cy)) {
                    out.push(y * w + x);
                }
            }
        }
        Ok(out)
    }

    /// Class values for `pixels`, in the same order.
    pub fn infer(&self, m: &ModelParams, pixels: &[usize], workers: usize) -> Result<Vec<f64>> {
        let w = self.raster.width;
        let classes = m.arch.num_classes;
        run_chunked(pixels, workers, |input, output| {
            let mut img = Vec::with_capacity(self.sampler.side() * self.sampler.side());
            for (&p, o) in input.iter().zip(output) {
                self.sampler.sample_into(p % w, p / w, &mut img)?;
                *o = class_value(predict_with(&self.layout, &m.weights, &img)?, classes)?;
            }
            Ok(())
        })
    }
}

fn contains(r: &BBox, x: f64, y: f64) -> bool {
    r.xmin as f64 <= x && x < r.xmax as f64 && r.ymin as f64 <= y && y < r.ymax as f64
}

fn check_region(g: &RasterGrid, r: &BBox) -> Result<()> {
    let half = 0.5 / g.px_per_nm;
    let (x0, y0) = (g.origin.0 - half, g.origin.1 - half);
    let x1 = x0 + g.width as f64 / g.px_per_nm;
    let y1 = y0 + g.height as f64 / g.px_per_nm;
    let inside = r.xmin < r.xmax
        && r.ymin < r.ymax
        && r.xmin as f64 >= x0 - 1e-9
        && r.ymin as f64 >= y0 - 1e-9
        && r.xmax as f64 <= x1 + 1e-9
        && r.ymax as f64 <= y1 + 1e-9;
    if !inside {
        return Err(Error::Coord(format!(
            "region {r:?} outside map extent [{x0}, {x1}) x [{y0}, {y1})"
        )));
    }
    Ok(())
}

/// [`predict_map_in`] over the target's own deployment domain.
pub fn predict_map(m: &ModelParams, target: &LayoutPattern, cfg: &CorrectionConfig) -> Result<IipMap> {
    predict_map_in(m, target, cfg.tiling.domain(target)?, cfg)
}

/// Predicted IIP map of `target` rasterized over `domain`: every selected
/// pixel gets the class value of the model's prediction for its compressed
/// window. The result does not depend on `cfg.workers`.
pub fn predict_map_in(m: &ModelParams, target: &LayoutPattern, domain: BBox, cfg: &CorrectionConfig) -> Result<IipMap> {
    let prep = Prepared::new(m, target, domain, cfg)?;
    let pixels = prep.select(cfg.region_filter.as_deref())?;
    let values = prep.infer(m, &pixels, cfg.workers)?;
    let mut grid = prep.raster.with_values(vec![0.0; prep.raster.len()]);
    for (&p, v) in pixels.iter().zip(values) {
        grid.values[p] = v;
    }
    Ok(IipMap {
        source_mask_checksum: prep.raster.checksum(),
        iik_checksum: m.checksum(),
        grid,
    })
}

/// Drops polygons with area below `min_area` or any edge shorter than
/// `min_edge`.
pub fn cleanup(p: &LayoutPattern, min_area: f64, min_edge: f64) -> LayoutPattern {
    LayoutPattern {
        layer: p.layer,
        polygons: p
            .polygons
            .iter()
            .filter(|q| q.area() as f64 >= min_area && q.shortest_edge() as f64 >= min_edge)
            .cloned()
            .collect(),
    }
}

/// Every intermediate of one correction run.
#[derive(Debug, Clone)]
pub struct Correction {
    pub map: IipMap,
    pub thresholded: RasterGrid,
    pub pattern: LayoutPattern,
    /// `pattern` rasterized over the map's domain.
    pub cleaned: RasterGrid,
}

/// Predicts, thresholds, vectorizes and cleans up the mask for `target`.
pub fn correct_stages(target: &LayoutPattern, m: &ModelParams, cfg: &CorrectionConfig) -> Result<Correction> {
    correct_stages_in(target, m, cfg.tiling.domain(target)?, cfg)
}

pub fn correct_stages_in(target: &LayoutPattern, m: &ModelParams, domain: BBox, cfg: &CorrectionConfig) -> Result<Correction> {
    let map = predict_map_in(m, target, domain, cfg)?;
    let thresholded = threshold_iip(&map, cfg.iip.threshold)?;
    let mut pattern = cleanup(&vectorize(&thresholded), cfg.cleanup.min_area, cfg.cleanup.min_edge);
    pattern.layer = target.layer;
    let cleaned = rasterize(&pattern, cfg.tiling.px_per_nm, domain)?;
    Ok(Correction {
        map,
        thresholded,
        pattern,
        cleaned,
    })
}

/// The corrected photomask for `target`. An empty target has no domain and
/// corrects to an empty mask.
pub fn correct(target: &LayoutPattern, m: &ModelParams, cfg: &CorrectionConfig) -> Result<LayoutPattern> {
    if target.is_empty() {
        cfg.validate()?;
        cfg.check_model(m)?;
        return Ok(LayoutPattern::empty(target.layer));
    }
    Ok(correct_stages(target, m, cfg)?.pattern)
}

/// Re-predicts only the pixels inside `regions` with `m2` and splices them
/// into a copy of `prior`. `prior` must cover the target's deployment
/// domain.
pub fn recorrect(
    prior: &IipMap,
    target: &LayoutPattern,
    regions: &[BBox],
    m2: &ModelParams,
    cfg: &CorrectionConfig,
) -> Result<IipMap> {
    let mut out = prior.clone();
    if regions.is_empty() {
        return Ok(out);
    }
    let prep = Prepared::new(m2, target, cfg.tiling.domain(target)?, cfg)?;
    prep.raster.same_dims(&prior.grid)?;
    if prep.raster.origin != prior.grid.origin {
        return Err(Error::Coord(format!(
            "prior map origin {:?} does not match target domain origin {:?}",
            prior.grid.origin, prep.raster.origin
        )));
    }
    let pixels = prep.select(Some(regions))?;
    for (&p, v) in pixels.iter().zip(prep.infer(m2, &pixels, cfg.workers)?) {
        out.grid.values[p] = v;
    }
    Ok(out)
}

/// Times per-pixel inference over the target's whole domain at each worker
/// count (median of three runs; rasterization and model setup excluded)
/// and checks that every count yields the same map bit for bit.
pub fn bench_scaling(
    target: &LayoutPattern,
    m: &ModelParams,
    cfg: &CorrectionConfig,
    worker_counts: &[usize],
) -> Result<ScalingReport> {
    if worker_counts.is_empty() || worker_counts.contains(&0) {
        return Err(Error::Param("worker counts must be nonempty and >= 1".into()));
    }
    let prep = Prepared::new(m, target, cfg.tiling.domain(target)?, cfg)?;
    let pixels = prep.select(None)?;
    let (baseline, reference) = scaling::time_median(3, || prep.infer(m, &pixels, 1))?;
    let mut identical = true;
    let mut timings = Vec::with_capacity(worker_counts.len());
    for &w in worker_counts {
        let (t, out) = if w == 1 {
            (baseline, reference.clone())
        } else {
            scaling::time_median(3, || prep.infer(m, &pixels, w))?
        };
        identical &= out.iter().map(|v| v.to_bits()).eq(reference.iter().map(|v| v.to_bits()));
        timings.push((w, t));
    }
    Ok(ScalingReport {
        pixels: pixels.len(),
        rows: scaling::scaling_rows(baseline, &timings),
        outputs_identical: identical,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{init_model, ArchDescriptor};
    use crate::layout::Polygon;

    fn small_cfg() -> CorrectionConfig {
        CorrectionConfig {
            tiling: TilingConfig {
                interaction_distance: 12.0,
                px_per_nm: 1.0,
                compression_factor: 5,
                ..TilingConfig::default()
            },
            iip: IipConfig {
                num_classes: 6,
                ..IipConfig::default()
            },
            ..CorrectionConfig::default()
        }
    }

    fn model(cfg: &CorrectionConfig, seed: u64) -> ModelParams {
        let arch = ArchDescriptor::default_for(cfg.tiling.compressed_side(), cfg.iip.num_classes);
        init_model(&arch, seed).unwrap()
    }

    fn target() -> LayoutPattern {
        LayoutPattern::new(1, vec![Polygon::rect(0, 0, 6, 20), Polygon::rect(14, 4, 20, 9)]).unwrap()
    }

    #[test]
    fn worker_count_invariance() {
        let cfg = small_cfg();
        let m = model(&cfg, 3);
        let one = predict_map(&m, &target(), &cfg).unwrap();
        for workers in [2, 4, 8] {
            let c = CorrectionConfig { workers, ..cfg.clone() };
            assert_eq!(predict_map(&m, &target(), &c).unwrap(), one);
        }
    }

    #[test]
    fn zero_head_gives_class_zero_everywhere() {
        let cfg = small_cfg();
        let mut m = model(&cfg, 3);
        m.zero_head().unwrap();
        let map = predict_map(&m, &target(), &cfg).unwrap();
        let v0 = class_value(0, 6).unwrap();
        assert!(map.grid.values.iter().all(|&v| v == v0));
        assert!(correct(&target(), &m, &cfg).unwrap().is_empty());
        assert!(correct(&LayoutPattern::empty(1), &m, &cfg).unwrap().is_empty());
    }

    #[test]
    fn mismatched_model_is_shape_error() {
        let cfg = small_cfg();
        let m = init_model(&ArchDescriptor::default_for(7, 6), 1).unwrap();
        assert!(matches!(predict_map(&m, &target(), &cfg), Err(Error::Shape(_))));
    }

    #[test]
    fn cleanup_rules() {
        let p = LayoutPattern::new(
            0,
            vec![
                Polygon::rect(0, 0, 10, 10),
                Polygon::rect(20, 0, 120, 3),
                Polygon::rect(200, 0, 240, 40),
            ],
        )
        .unwrap();
        assert_eq!(cleanup(&p, 0.0, 0.0), p);
        assert_eq!(cleanup(&p, 200.0, 0.0).polygons, p.polygons[1..]);
        assert_eq!(cleanup(&p, 0.0, 5.0).polygons, [p.polygons[0].clone(), p.polygons[2].clone()]);
        assert!(cleanup(&p, 1e9, 0.0).is_empty());
    }

    #[test]
    fn recorrect_splices_exactly() {
        let cfg = small_cfg();
        let (m1, m2) = (model(&cfg, 3), model(&cfg, 4));
        let t = target();
        let prior = predict_map(&m1, &t, &cfg).unwrap();
        assert_eq!(recorrect(&prior, &t, &[], &m2, &cfg).unwrap(), prior);

        let domain = cfg.tiling.domain(&t).unwrap();
        let whole = recorrect(&prior, &t, &[domain], &m1, &cfg).unwrap();
        assert_eq!(whole, prior);

        let full2 = predict_map(&m2, &t, &cfg).unwrap();
        let region = BBox::new(-3, -2, 8, 10);
        let spliced = recorrect(&prior, &t, &[region], &m2, &cfg).unwrap();
        for y in 0..prior.grid.height {
            for x in 0..prior.grid.width {
                let (cx, cy) = prior.grid.pixel_center(x, y);
                let expect = if contains(&region, cx, cy) { &full2 } else { &prior };
                assert_eq!(spliced.grid.get(x, y).to_bits(), expect.grid.get(x, y).to_bits());
            }
        }
        let outside = BBox::new(-1000, 0, 5, 5);
        assert!(matches!(recorrect(&prior, &t, &[outside], &m2, &cfg), Err(Error::Coord(_))));
    }

    #[test]
    fn bench_reports_identical_outputs() {
        let cfg = small_cfg();
        let r = bench_scaling(&target(), &model(&cfg, 1), &cfg, &[1, 2]).unwrap();
        assert!(r.outputs_identical);
        assert_eq!(r.rows[0].speedup, 1.0);
        assert_eq!(r.to_csv().lines().count(), 3);
    }
}
