//! Training data: compressed design windows paired with IIP classes.
//!
//! On disk a dataset is a directory holding
//!
//! - `meta`: `key = value` text with the format version, every tiling field,
//!   class count, source checksums and a checksum of each binary file
//! - `images.f32`: little-endian f32 images, samples in coordinate order
//! - `labels.u16`: little-endian u16 class labels
//! - `index.bin`: per sample `source: u16, x: u32, y: u32, split: u8`

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TilingConfig, WindowSampler};
use crate::checksum;
use crate::error::{Error, Result};
use crate::grid::{parse_key_values, RasterGrid};
use crate::iip::{compute_iip, ClassId, IipConfig};
use crate::layout::{rasterize, LayoutPattern};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            _ => Err(Error::Format(format!("unknown split code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample {
    pub image: Vec<f32>,
    pub label: ClassId,
    /// Pixel index in the source raster.
    pub coord: (u32, u32),
    /// Index into [`DatasetMeta::sources`].
    pub source: u16,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceInfo {
    pub pattern_checksum: String,
    pub mask_checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub tiling: TilingConfig,
    pub num_classes: usize,
    pub iik_checksum: String,
    pub sources: Vec<SourceInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelDataset {
    pub image_side: usize,
    pub samples: Vec<PixelSample>,
    pub meta: DatasetMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub per_class_cap: usize,
    pub seed: u64,
}

impl PixelDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, s: Split) -> impl Iterator<Item = &PixelSample> {
        self.samples.iter().filter(move |x| x.split == s)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.meta.num_classes];
        for s in &self.samples {
            h[s.label as usize] += 1;
        }
        h
    }
}

/// Rasterizes `target` over its interaction-distance domain, computes the
/// IIP of `ref_mask`, picks up to `per_class_cap` pixels per class with a
/// seeded shuffle and pairs each picked pixel's compressed design window
/// with its class. All samples start in the train split.
pub fn build_dataset(
    target: &LayoutPattern,
    ref_mask: &RasterGrid,
    tiling: &TilingConfig,
    iip_cfg: &IipConfig,
    sampling: &SamplingConfig,
) -> Result<PixelDataset> {
    tiling.validate()?;
    iip_cfg.validate()?;
    if target.is_empty() {
        return Err(Error::EmptyDataset("target pattern has no polygons".into()));
    }
    if sampling.per_class_cap == 0 {
        return Err(Error::EmptyDataset("per_class_cap is 0".into()));
    }
    let raster = rasterize(target, tiling.px_per_nm, tiling.domain(target)?)?;
    raster.same_dims(ref_mask)?;
    let iik = iip_cfg.iik(tiling.px_per_nm)?;
    let iip = compute_iip(ref_mask, &iik)?;
    let classes = iip.classes(iip_cfg.num_classes)?;

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); iip_cfg.num_classes];
    for (i, &c) in classes.iter().enumerate() {
        by_class[c as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut picked = Vec::new();
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        picked.extend(members.iter().take(sampling.per_class_cap).copied());
    }
    if picked.is_empty() {
        return Err(Error::EmptyDataset("no pixels selected".into()));
    }
    picked.sort_unstable();

    let sampler = WindowSampler::new(&raster, tiling)?;
    let w = raster.width;
    let mut samples = Vec::with_capacity(picked.len());
    for idx in picked {
        let (x, y) = (idx % w, idx / w);
        samples.push(PixelSample {
            image: sampler.sample(x, y)?,
            label: classes[idx],
            coord: (x as u32, y as u32),
            source: 0,
            split: Split::Train,
        });
    }
    Ok(PixelDataset {
        image_side: tiling.compressed_side(),
        samples,
        meta: DatasetMeta {
            tiling: *tiling,
            num_classes: iip_cfg.num_classes,
            iik_checksum: iik.checksum(),
            sources: vec![SourceInfo {
                pattern_checksum: target.checksum(),
                mask_checksum: ref_mask.checksum(),
            }],
        },
    })
}

/// Concatenates datasets built with identical tiling and IIP settings,
/// renumbering sources in argument order.
pub fn merge_datasets(parts: Vec<PixelDataset>) -> Result<PixelDataset> {
    let mut iter = parts.into_iter();
    let mut merged = iter
        .next()
        .ok_or_else(|| Error::EmptyDataset("nothing to merge".into()))?;
    for part in iter {
        if part.meta.tiling != merged.meta.tiling
            || part.meta.num_classes != merged.meta.num_classes
            || part.meta.iik_checksum != merged.meta.iik_checksum
            || part.image_side != merged.image_side
        {
            return Err(Error::Config(
                "cannot merge datasets with different tiling/IIP settings".into(),
            ));
        }
        let offset = merged.meta.sources.len() as u16;
        merged.meta.sources.extend(part.meta.sources);
        merged
            .samples
            .extend(part.samples.into_iter().map(|mut s| {
                s.source += offset;
                s
            }));
    }
    Ok(merged)
}

/// Seeded per-class shuffle, then `round(n * train)` samples to train,
/// `round(n * val)` to val and the rest to test within each class.
pub fn split_dataset(mut d: PixelDataset, fractions: (f64, f64, f64), seed: u64) -> Result<PixelDataset> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!(
            "split fractions ({ft}, {fv}, {fs}) must be in [0, 1] and sum to 1"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.meta.num_classes];
    for (i, s) in d.samples.iter().enumerate() {
        by_class[s.label as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for members in by_class.iter_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_train = ((n as f64 * ft).round() as usize).min(n);
        let n_val = ((n as f64 * fv).round() as usize).min(n - n_train);
        for (k, &i) in members.iter().enumerate() {
            d.samples[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(d)
}

pub fn save_dataset(d: &PixelDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let images: Vec<u8> = d
        .samples
        .iter()
        .flat_map(|s| s.image.iter().flat_map(|v| v.to_le_bytes()))
        .collect();
    let labels: Vec<u8> = d.samples.iter().flat_map(|s| s.label.to_le_bytes()).collect();
    let mut index = Vec::with_capacity(d.samples.len() * 11);
    for s in &d.samples {
        index.extend_from_slice(&s.source.to_le_bytes());
        index.extend_from_slice(&s.coord.0.to_le_bytes());
        index.extend_from_slice(&s.coord.1.to_le_bytes());
        index.push(s.split.code());
    }
    let t = &d.meta.tiling;
    let mut meta = String::new();
    let _ = writeln!(meta, "format_version = {DATASET_FORMAT_VERSION}");
    let _ = writeln!(meta, "samples = {}", d.samples.len());
    let _ = writeln!(meta, "image_side = {}", d.image_side);
    let _ = writeln!(meta, "num_classes = {}", d.meta.num_classes);
    let _ = writeln!(meta, "interaction_distance = {:?}", t.interaction_distance);
    let _ = writeln!(meta, "px_per_nm = {:?}", t.px_per_nm);
    let _ = writeln!(meta, "compression_factor = {}", t.compression_factor);
    let _ = writeln!(meta, "row_reducer = {}", t.row_reducer);
    let _ = writeln!(meta, "col_reducer = {}", t.col_reducer);
    let _ = writeln!(meta, "iik_checksum = {}", d.meta.iik_checksum);
    for (i, s) in d.meta.sources.iter().enumerate() {
        let _ = writeln!(meta, "source.{i} = {} {}", s.pattern_checksum, s.mask_checksum);
    }
    let _ = writeln!(meta, "images_checksum = {}", checksum::digest_bytes(&images));
    let _ = writeln!(meta, "labels_checksum = {}", checksum::digest_bytes(&labels));
    let _ = writeln!(meta, "index_checksum = {}", checksum::digest_bytes(&index));
    fs::write(dir.join("images.f32"), images)?;
    fs::write(dir.join("labels.u16"), labels)?;
    fs::write(dir.join("index.bin"), index)?;
    fs::write(dir.join("meta"), meta)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<PixelDataset> {
    let kv = parse_key_values(&fs::read_to_string(dir.join("meta"))?)?;
    let get = |k: &str| -> Result<&str> {
        kv.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("dataset meta lacks {k}")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse::<f64>()
            .map_err(|_| Error::Format(format!("dataset meta field {k} is not a number")))
    };
    let version = num("format_version")? as u32;
    if version != DATASET_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "dataset format version {version}, expected {DATASET_FORMAT_VERSION}"
        )));
    }
    let read_checked = |file: &str, key: &str| -> Result<Vec<u8>> {
        let bytes = fs::read(dir.join(file))?;
        let expected = get(key)?.to_string();
        let found = checksum::digest_bytes(&bytes);
        if found != expected {
            return Err(Error::Checksum {
                what: dir.join(file).display().to_string(),
                expected,
                found,
            });
        }
        Ok(bytes)
    };
    let images = read_checked("images.f32", "images_checksum")?;
    let labels = read_checked("labels.u16", "labels_checksum")?;
    let index = read_checked("index.bin", "index_checksum")?;

    let n = num("samples")? as usize;
    let side = num("image_side")? as usize;
    let px = side * side;
    if images.len() != n * px * 4 || labels.len() != n * 2 || index.len() != n * 11 {
        return Err(Error::Format("dataset file sizes disagree with meta".into()));
    }
    let tiling = TilingConfig {
        interaction_distance: num("interaction_distance")?,
        px_per_nm: num("px_per_nm")?,
        compression_factor: num("compression_factor")? as usize,
        row_reducer: get("row_reducer")?.parse()?,
        col_reducer: get("col_reducer")?.parse()?,
    };
    let num_classes = num("num_classes")? as usize;
    let mut sources = Vec::new();
    while let Ok(v) = get(&format!("source.{}", sources.len())) {
        let (p, m) = v
            .split_once(' ')
            .ok_or_else(|| Error::Format(format!("bad source entry {v:?}")))?;
        sources.push(SourceInfo {
            pattern_checksum: p.to_string(),
            mask_checksum: m.to_string(),
        });
    }

    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let image = images[i * px * 4..(i + 1) * px * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        let label = u16::from_le_bytes([labels[2 * i], labels[2 * i + 1]]);
        if label as usize >= num_classes {
            return Err(Error::Format(format!("label {label} >= {num_classes} classes")));
        }
        let rec = &index[i * 11..(i + 1) * 11];
        samples.push(PixelSample {
            image,
            label,
            source: u16::from_le_bytes([rec[0], rec[1]]),
            coord: (
                u32::from_le_bytes(rec[2..6].try_into().expect("4 bytes")),
                u32::from_le_bytes(rec[6..10].try_into().expect("4 bytes")),
            ),
            split: Split::from_code(rec[10])?,
        });
    }
    Ok(PixelDataset {
        image_side: side,
        samples,
        meta: DatasetMeta {
            tiling,
            num_classes,
            iik_checksum: get("iik_checksum")?.to_string(),
            sources,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::{generate_test_pattern, Topology};
    use crate::tiling::Reducer;

    fn toy_tiling() -> TilingConfig {
        TilingConfig {
            interaction_distance: 24.0,
            px_per_nm: 1.0,
            compression_factor: 4,
            row_reducer: Reducer::Mean,
            col_reducer: Reducer::Max,
        }
    }

    fn toy_iip() -> IipConfig {
        IipConfig {
            num_classes: 10,
            iik_sigma: 3.0,
            iik_radius: 9.0,
            ..IipConfig::default()
        }
    }

    fn synthetic(n: usize, classes: usize) -> PixelDataset {
        PixelDataset {
            image_side: 2,
            samples: (0..n)
                .map(|i| PixelSample {
                    image: vec![i as f32; 4],
                    label: (i % classes) as u16,
                    coord: (i as u32, 0),
                    source: 0,
                    split: Split::Train,
                })
                .collect(),
            meta: DatasetMeta {
                tiling: toy_tiling(),
                num_classes: classes,
                iik_checksum: "x".into(),
                sources: vec![],
            },
        }
    }

    fn line_dataset(cap: usize) -> PixelDataset {
        let target = generate_test_pattern(Topology::IsolatedLine, 14, 0, 1, 40).unwrap();
        let tiling = toy_tiling();
        let mask = rasterize(&target, 1.0, tiling.domain(&target).unwrap()).unwrap();
        build_dataset(&target, &mask, &tiling, &toy_iip(), &SamplingConfig { per_class_cap: cap, seed: 1 })
            .unwrap()
    }

    #[test]
    fn empty_target_is_empty_dataset() {
        let mask = RasterGrid::zeros(4, 4, (0.5, 0.5), 1.0);
        let err = build_dataset(
            &LayoutPattern::empty(1),
            &mask,
            &toy_tiling(),
            &toy_iip(),
            &SamplingConfig { per_class_cap: 5, seed: 0 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyDataset(_)));
    }

    #[test]
    fn line_spans_dark_and_bright_classes_under_cap() {
        let d = line_dataset(10);
        let hist = d.class_histogram();
        assert!(hist[0] > 0 && hist[9] > 0, "{hist:?}");
        assert!(hist.iter().filter(|&&c| c > 0).count() >= 5, "{hist:?}");
        assert!(hist.iter().all(|&c| c <= 10));
        assert!(d.samples.windows(2).all(|w| (w[0].coord.1, w[0].coord.0) < (w[1].coord.1, w[1].coord.0)));
        assert!(d.samples.iter().all(|s| s.image.len() == d.image_side * d.image_side));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = split_dataset(synthetic(1000, 10), (0.8, 0.1, 0.1), 4).unwrap();
        assert_eq!(d.split(Split::Train).count(), 800);
        assert_eq!(d.split(Split::Val).count(), 100);
        assert_eq!(d.split(Split::Test).count(), 100);
        let again = split_dataset(synthetic(1000, 10), (0.8, 0.1, 0.1), 4).unwrap();
        assert_eq!(d, again);
        let all = split_dataset(synthetic(50, 3), (1.0, 0.0, 0.0), 4).unwrap();
        assert!(all.samples.iter().all(|s| s.split == Split::Train));
        assert!(matches!(
            split_dataset(synthetic(5, 2), (0.5, 0.2, 0.2), 0),
            Err(Error::Param(_))
        ));
    }

    #[test]
    fn save_load_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let d = split_dataset(line_dataset(6), (0.6, 0.2, 0.2), 2).unwrap();
        save_dataset(&d, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), d);

        let first = fs::read(dir.path().join("images.f32")).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        save_dataset(&d, dir2.path()).unwrap();
        assert_eq!(fs::read(dir2.path().join("images.f32")).unwrap(), first);

        let mut bad = first.clone();
        bad[10] ^= 0x40;
        fs::write(dir.path().join("images.f32"), bad).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Checksum { .. })));

        let meta = fs::read_to_string(dir2.path().join("meta")).unwrap();
        fs::write(dir2.path().join("meta"), meta.replace("format_version = 1", "format_version = 7")).unwrap();
        assert!(matches!(load_dataset(dir2.path()), Err(Error::Format(_))));
    }

    #[test]
    fn merge_renumbers_sources() {
        let a = line_dataset(3);
        let n = a.len();
        let m = merge_datasets(vec![a.clone(), a]).unwrap();
        assert_eq!(m.len(), 2 * n);
        assert_eq!(m.meta.sources.len(), 2);
        assert!(m.samples[n..].iter().all(|s| s.source == 1));
    }
}
