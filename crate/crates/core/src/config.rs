//! The aggregated run configuration: every stage's settings, the pattern
//! families used for data preparation and evaluation, and the global seed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{ArchDescriptor, ConvBlock, Pool, TrainConfig};
use crate::error::{Error, Result};
use crate::iip::IipConfig;
use crate::ilt::IltConfig;
use crate::layout::{generate_test_pattern, LayoutPattern, Topology};
use crate::litho::LithoConfig;
use crate::pipeline::{CleanupConfig, CorrectionConfig};
use crate::tiling::{Reducer, SamplingConfig, TilingConfig};

/// One generated test structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSpec {
    pub topology: Topology,
    /// nm
    pub width: i64,
    /// nm; line-space only
    #[serde(default)]
    pub pitch: i64,
    #[serde(default = "one")]
    pub count: usize,
    /// nm
    pub length: i64,
}

fn one() -> usize {
    1
}

impl PatternSpec {
    pub fn generate(&self) -> Result<LayoutPattern> {
        generate_test_pattern(self.topology, self.width, self.pitch, self.count, self.length)
    }

    /// Short file-name stem such as `line_space_w40_p80`.
    pub fn name(&self) -> String {
        match self.topology {
            Topology::LineSpace => format!("{}_w{}_p{}", self.topology, self.width, self.pitch),
            _ => format!("{}_w{}", self.topology, self.width),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Families whose pixels make up the training data.
    pub train_patterns: Vec<PatternSpec>,
    /// Families never seen in training, used to evaluate correction.
    pub eval_patterns: Vec<PatternSpec>,
    pub per_class_cap: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployConfig {
    pub workers: usize,
    #[serde(default)]
    pub region_filter: Option<Vec<crate::layout::BBox>>,
    pub cleanup: CleanupConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub litho: LithoConfig,
    pub ilt: IltConfig,
    pub iip: IipConfig,
    pub tiling: TilingConfig,
    pub model: ArchDescriptor,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub deploy: DeployConfig,
}

fn line(width: i64, length: i64) -> PatternSpec {
    PatternSpec {
        topology: Topology::IsolatedLine,
        width,
        pitch: 0,
        count: 1,
        length,
    }
}

fn line_space(width: i64, length: i64) -> PatternSpec {
    PatternSpec {
        topology: Topology::LineSpace,
        width,
        pitch: 2 * width,
        count: 3,
        length,
    }
}

fn square(width: i64) -> PatternSpec {
    PatternSpec {
        topology: Topology::Square,
        width,
        pitch: 0,
        count: 1,
        length: 0,
    }
}

impl Default for RunConfig {
    /// Full-resolution settings: 100 classes, 400 nm interaction distance,
    /// 2 px/nm, 8x directional compression.
    fn default() -> Self {
        let tiling = TilingConfig::default();
        let iip = IipConfig::default();
        RunConfig {
            seed: 1,
            out_dir: PathBuf::from("out"),
            litho: LithoConfig::default(),
            ilt: IltConfig::default(),
            iip,
            tiling,
            model: ArchDescriptor::default_for(tiling.compressed_side(), iip.num_classes),
            train: TrainConfig::default(),
            data: DataConfig {
                train_patterns: vec![line(40, 1000), line(140, 1000), line_space(40, 1000), line_space(140, 1000)],
                eval_patterns: vec![line(60, 1000), line(80, 1000), line(100, 1000), line(120, 1000)],
                per_class_cap: 2000,
                split: [0.7, 0.15, 0.15],
            },
            deploy: DeployConfig {
                workers: 1,
                region_filter: None,
                cleanup: CleanupConfig {
                    min_area: 400.0,
                    min_edge: 4.0,
                },
            },
        }
    }
}

impl RunConfig {
    /// Reduced profile for quick runs: 20 classes, 100 nm interaction
    /// distance, 1 px/nm.
    pub fn toy() -> Self {
        let tiling = TilingConfig {
            interaction_distance: 100.0,
            px_per_nm: 1.0,
            compression_factor: 8,
            row_reducer: Reducer::Max,
            col_reducer: Reducer::Mean,
        };
        let iip = IipConfig {
            num_classes: 20,
            ..IipConfig::default()
        };
        RunConfig {
            tiling,
            iip,
            model: ArchDescriptor {
                input_side: tiling.compressed_side(),
                conv_blocks: [8, 16, 32]
                    .into_iter()
                    .map(|filters| ConvBlock { filters, stride: 2 })
                    .collect(),
                pool: Pool::Flatten,
                num_classes: iip.num_classes,
            },
            data: DataConfig {
                train_patterns: vec![line(40, 400), line(140, 400), line_space(40, 400), line_space(140, 400)],
                eval_patterns: vec![line(60, 400), line(80, 400), line(100, 400), line(120, 400)],
                per_class_cap: 600,
                split: [0.7, 0.15, 0.15],
            },
            deploy: DeployConfig {
                workers: 1,
                region_filter: None,
                cleanup: CleanupConfig {
                    min_area: 100.0,
                    min_edge: 2.0,
                },
            },
            ..RunConfig::default()
        }
    }

    /// Every generated family: training, evaluation and squares.
    pub fn all_patterns(&self) -> Vec<PatternSpec> {
        let mut v = self.data.train_patterns.clone();
        v.extend(self.data.eval_patterns.iter().copied());
        v.push(square(2 * self.data.eval_patterns.first().map_or(60, |p| p.width)));
        v
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Per-section checks plus consistency across sections.
    pub fn validate(&self) -> Result<()> {
        self.litho.validate()?;
        self.ilt.validate()?;
        self.iip.validate()?;
        self.tiling.validate()?;
        self.train.validate()?;
        self.model.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
        self.correction().validate()?;
        if self.model.num_classes != self.iip.num_classes {
            return Err(Error::Config(format!(
                "model.num_classes = {} disagrees with iip.num_classes = {}",
                self.model.num_classes, self.iip.num_classes
            )));
        }
        if self.model.input_side != self.tiling.compressed_side() {
            return Err(Error::Config(format!(
                "model.input_side = {} disagrees with the tiling output side {} \
                 (tiling.interaction_distance, tiling.px_per_nm, tiling.compression_factor)",
                self.model.input_side,
                self.tiling.compressed_side()
            )));
        }
        let s = self.data.split;
        if s.iter().any(|f| !(0.0..=1.0).contains(f)) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("data.split {s:?} must be fractions summing to 1")));
        }
        if s[0] == 0.0 || s[1] == 0.0 {
            return Err(Error::Config("data.split needs nonzero train and val fractions".into()));
        }
        if self.data.per_class_cap == 0 {
            return Err(Error::Config("data.per_class_cap must be >= 1".into()));
        }
        for p in self.data.train_patterns.iter().chain(&self.data.eval_patterns) {
            p.generate()
                .map_err(|e| Error::Config(format!("data pattern {}: {e}", p.name())))?;
        }
        Ok(())
    }

    pub fn correction(&self) -> CorrectionConfig {
        CorrectionConfig {
            tiling: self.tiling,
            iip: self.iip,
            workers: self.deploy.workers,
            region_filter: self.deploy.region_filter.clone(),
            cleanup: self.deploy.cleanup,
        }
    }

    pub fn sampling(&self) -> SamplingConfig {
        SamplingConfig {
            per_class_cap: self.data.per_class_cap,
            seed: self.seed,
        }
    }

    /// Checks that a stored model fits this configuration.
    pub fn check_model_arch(&self, arch: &ArchDescriptor) -> Result<()> {
        if arch.num_classes != self.iip.num_classes {
            return Err(Error::Config(format!(
                "model file num_classes = {} disagrees with iip.num_classes = {}",
                arch.num_classes, self.iip.num_classes
            )));
        }
        if arch.input_side != self.tiling.compressed_side() {
            return Err(Error::Config(format!(
                "model file input_side = {} disagrees with the tiling output side {}",
                arch.input_side,
                self.tiling.compressed_side()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_are_valid_and_round_trip() {
        for c in [RunConfig::default(), RunConfig::toy()] {
            c.validate().unwrap();
            assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        }
        assert_eq!(RunConfig::default().model.input_side, 200);
        assert_eq!(RunConfig::toy().model.input_side, 25);
    }

    #[test]
    fn class_mismatch_names_both_fields() {
        let mut c = RunConfig::default();
        c.model.num_classes = 50;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("model.num_classes") && msg.contains("iip.num_classes"), "{msg}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = RunConfig::toy().to_toml().replace("seed = 1", "seed = 1\nbogus = 3");
        assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))));
    }
}
