//! Run configuration: a single JSON file whose keys mirror the struct
//! fields exactly; command-line flags override file values. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tan_core::data::{generate, ingest, load_dataset, resample_dataset, Dataset, GenSpec};
use tan_core::train::LrSchedule;
use tan_core::{ArchConfig, Result, TanError, Variant};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default = "default_gen_videos")]
    pub videos: usize,
    #[serde(default = "default_gen_seed")]
    pub seed: u64,
    /// Defaults to the architecture's temporal_len / input_spatial /
    /// num_classes when omitted.
    #[serde(default)]
    pub frames: Option<usize>,
    #[serde(default)]
    pub spatial: Option<usize>,
    #[serde(default)]
    pub classes: Option<usize>,
}

fn default_gen_videos() -> usize {
    200
}
fn default_gen_seed() -> u64 {
    7
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            videos: default_gen_videos(),
            seed: default_gen_seed(),
            frames: None,
            spatial: None,
            classes: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Directory of `*.bin` videos, or a frame-directory root with a
    /// `manifest.csv`.
    Path(PathBuf),
    Generator(GeneratorSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Generator(GeneratorSpec::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_input_spatial")]
    pub input_spatial: usize,
    #[serde(default = "d_temporal_len")]
    pub temporal_len: usize,
    #[serde(default = "d_channels")]
    pub channels: [usize; 4],
    #[serde(default = "d_blocks")]
    pub blocks_per_level: [usize; 4],
    #[serde(default = "d_ta_enabled")]
    pub ta_enabled: [bool; 4],
    #[serde(default = "d_dilations")]
    pub ta_dilations: Vec<usize>,
    #[serde(default = "d_classes")]
    pub num_classes: usize,
    #[serde(default = "d_variant")]
    pub variant: Variant,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// (epoch, learning rate) pairs; the last entry at or below the
    /// current epoch applies.
    #[serde(default)]
    pub lr_schedule: Option<Vec<(usize, f32)>>,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default = "d_factor")]
    pub sampling_factor: usize,
    #[serde(default = "d_outdir")]
    pub output_dir: PathBuf,
}

fn d_input_spatial() -> usize {
    32
}
fn d_temporal_len() -> usize {
    16
}
fn d_channels() -> [usize; 4] {
    [16, 32, 64, 128]
}
fn d_blocks() -> [usize; 4] {
    [2, 2, 2, 2]
}
fn d_ta_enabled() -> [bool; 4] {
    [true; 4]
}
fn d_dilations() -> Vec<usize> {
    vec![1, 2, 3]
}
fn d_classes() -> usize {
    8
}
fn d_variant() -> Variant {
    Variant::Tan
}
fn d_seed() -> u64 {
    7
}
fn d_epochs() -> usize {
    10
}
fn d_factor() -> usize {
    1
}
fn d_outdir() -> PathBuf {
    PathBuf::from("runs/out")
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| TanError::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| TanError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            input_spatial: self.input_spatial,
            temporal_len: self.temporal_len,
            channels: self.channels,
            blocks_per_level: self.blocks_per_level,
            ta_enabled: self.ta_enabled,
            ta_dilations: self.ta_dilations.clone(),
            num_classes: self.num_classes,
            variant: self.variant,
        }
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        match &self.lr_schedule {
            Some(pairs) => LrSchedule::new(pairs.clone()),
            None => Ok(LrSchedule::desk_default(self.epochs, 1e-3)),
        }
    }

    /// Paths named by the config must exist at parse/validate time.
    pub fn validate(&self) -> Result<()> {
        self.arch().validate()?;
        if self.sampling_factor == 0 {
            return Err(TanError::Config("sampling_factor must be >= 1".into()));
        }
        if let DatasetSpec::Path(p) = &self.dataset {
            if !p.exists() {
                return Err(TanError::Config(format!(
                    "dataset path {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn gen_spec(&self) -> GenSpec {
        let g = match &self.dataset {
            DatasetSpec::Generator(g) => g.clone(),
            DatasetSpec::Path(_) => GeneratorSpec::default(),
        };
        GenSpec::new(
            g.seed,
            g.videos,
            g.frames.unwrap_or(self.temporal_len),
            g.classes.unwrap_or(self.num_classes),
            g.spatial.unwrap_or(self.input_spatial),
        )
    }

    /// Load or generate the dataset, then apply the sampling factor.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let data = match &self.dataset {
            DatasetSpec::Generator(_) => generate(&self.gen_spec())?,
            DatasetSpec::Path(p) => {
                let has_bins = std::fs::read_dir(p)
                    .map_err(|e| TanError::io(p, e))?
                    .filter_map(|e| e.ok())
                    .any(|e| e.path().extension().is_some_and(|x| x == "bin"));
                if has_bins {
                    load_dataset(p)?
                } else {
                    ingest(p, &p.join("manifest.csv"), self.num_classes, self.input_spatial)?
                }
            }
        };
        if self.sampling_factor > 1 {
            resample_dataset(&data, self.sampling_factor)
        } else {
            Ok(data)
        }
    }
}
