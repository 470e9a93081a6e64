//! Full network assembly: stem, four levels of bottleneck blocks each
//! optionally capped by a temporal aggregation module, spatial
//! downsampling between levels, and the dense multi-label head.
//!
//! Owns the parameter registry (named tensors in deterministic creation
//! order), checkpoint save/load and spatial-only weight loading.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocks::{
    bottleneck_forward, ta_forward, BottleneckSpec, BottleneckWeights, TaModuleSpec, TaWeights,
};
use crate::checkpoint::Checkpoint;
use crate::error::{Result, TanError};
use crate::graph::Graph;
use crate::ops::{self, PoolGeom};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Tan,
    Res3d,
    Res2d,
    TanPlainconv,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Tan => "tan",
            Variant::Res3d => "res3d",
            Variant::Res2d => "res2d",
            Variant::TanPlainconv => "tan_plainconv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tan" => Ok(Variant::Tan),
            "res3d" => Ok(Variant::Res3d),
            "res2d" => Ok(Variant::Res2d),
            "tan_plainconv" => Ok(Variant::TanPlainconv),
            other => Err(TanError::Config(format!(
                "unknown variant '{other}' (expected tan, res3d, res2d or tan_plainconv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Square input side; divisible by 16 and at least 32 so the stem and
    /// the three inter-level pools can all halve it.
    #[serde(default = "default_input_spatial")]
    pub input_spatial: usize,
    #[serde(default = "default_temporal_len")]
    pub temporal_len: usize,
    #[serde(default = "default_channels")]
    pub channels: [usize; 4],
    #[serde(default = "default_blocks")]
    pub blocks_per_level: [usize; 4],
    #[serde(default = "default_ta_enabled")]
    pub ta_enabled: [bool; 4],
    #[serde(default = "default_dilations")]
    pub ta_dilations: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
}

fn default_input_spatial() -> usize {
    32
}
fn default_temporal_len() -> usize {
    16
}
fn default_channels() -> [usize; 4] {
    [16, 32, 64, 128]
}
fn default_blocks() -> [usize; 4] {
    [2, 2, 2, 2]
}
fn default_ta_enabled() -> [bool; 4] {
    [true; 4]
}
fn default_dilations() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_variant() -> Variant {
    Variant::Tan
}

impl ArchConfig {
    pub fn desk_default(num_classes: usize) -> Self {
        ArchConfig {
            input_spatial: default_input_spatial(),
            temporal_len: default_temporal_len(),
            channels: default_channels(),
            blocks_per_level: default_blocks(),
            ta_enabled: default_ta_enabled(),
            ta_dilations: default_dilations(),
            num_classes,
            variant: Variant::Tan,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(TanError::Config("num_classes must be >= 1".into()));
        }
        if self.temporal_len == 0 {
            return Err(TanError::Config("temporal_len must be >= 1".into()));
        }
        if self.input_spatial % 16 != 0 {
            return Err(TanError::Config(format!(
                "input_spatial must be divisible by 16, got {}",
                self.input_spatial
            )));
        }
        if self.input_spatial < 32 {
            return Err(TanError::Config(format!(
                "input_spatial must be at least 32 so every downsampling stage \
                 sees an extent >= its kernel, got {}",
                self.input_spatial
            )));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(TanError::Config("channels must be positive".into()));
        }
        if self.blocks_per_level.iter().any(|&b| b == 0) {
            return Err(TanError::Config("blocks_per_level must be positive".into()));
        }
        TaModuleSpec::new(self.channels[0], self.ta_dilations.clone()).validate()?;
        // res3d strides temporally at the stem pool and the level-1/2
        // pools; the clip must survive all three.
        if self.variant == Variant::Res3d {
            let mut t = self.temporal_len;
            for stage in ["stem pool", "level-1 pool", "level-2 pool"] {
                if t < 2 {
                    return Err(TanError::Config(format!(
                        "res3d: temporal extent shrinks to {t} before the {stage} \
                         (temporal_len {} is too small)",
                        self.temporal_len
                    )));
                }
                t = (t - 2) / 2 + 1;
            }
        }
        Ok(())
    }

    /// Temporal extent of the dense output (reduced only by res3d's
    /// temporally strided pools).
    pub fn output_t(&self) -> usize {
        let mut t = self.temporal_len;
        if self.variant == Variant::Res3d {
            for _ in 0..3 {
                t = (t - 2) / 2 + 1;
            }
        }
        t
    }

    /// Dilation set a level's temporal module uses, by variant; `None`
    /// when the level has no temporal module.
    pub fn level_dilations(&self, level: usize) -> Option<Vec<usize>> {
        let enabled = self.ta_enabled[level];
        match self.variant {
            Variant::Res2d => None,
            Variant::TanPlainconv => enabled.then(|| vec![1]),
            Variant::Tan | Variant::Res3d => enabled.then(|| self.ta_dilations.clone()),
        }
    }
}

struct LevelPlan {
    blocks: Vec<BottleneckSpec>,
    ta: Option<TaModuleSpec>,
    pool: Option<PoolGeom>,
}

struct ModelPlan {
    stem_pool: PoolGeom,
    levels: Vec<LevelPlan>,
}

fn make_plan(config: &ArchConfig) -> ModelPlan {
    let temporal_stem = config.variant == Variant::Res3d;
    let stem_pool = PoolGeom {
        kt: if temporal_stem { 2 } else { 1 },
        st: if temporal_stem { 2 } else { 1 },
        ks: 3,
        ss: 2,
        pad_s: 1,
    };
    let levels = (0..4)
        .map(|i| {
            let in_ch = if i == 0 { config.channels[0] } else { config.channels[i - 1] };
            let out_ch = config.channels[i];
            let blocks = (0..config.blocks_per_level[i])
                .map(|j| {
                    let bin = if j == 0 { in_ch } else { out_ch };
                    BottleneckSpec::with_default_mid(bin, out_ch, 1)
                })
                .collect();
            let ta = config
                .level_dilations(i)
                .map(|d| TaModuleSpec::new(out_ch, d));
            let pool = (i < 3).then(|| {
                let temporal = config.variant == Variant::Res3d && i < 2;
                PoolGeom {
                    kt: if temporal { 2 } else { 1 },
                    st: if temporal { 2 } else { 1 },
                    ks: 2,
                    ss: 2,
                    pad_s: 0,
                }
            });
            LevelPlan { blocks, ta, pool }
        })
        .collect();
    ModelPlan { stem_pool, levels }
}

pub struct Model<T: Scalar> {
    config: ArchConfig,
    plan: ModelPlan,
    params: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
    linearized: bool,
}

impl<T: Scalar> Model<T> {
    /// Build with He-normal initialization drawn from `seed`.
    pub fn build(config: ArchConfig, seed: u64) -> Result<Self> {
        Self::build_inner(config, Init::He(seed))
    }

    /// Linearized copy for receptive-field probes: all weights one,
    /// biases zero, ReLU replaced by identity, max pools by average pools.
    pub fn build_linearized(config: ArchConfig) -> Result<Self> {
        Self::build_inner(config, Init::Ones)
    }

    fn build_inner(config: ArchConfig, init: Init) -> Result<Self> {
        config.validate()?;
        let plan = make_plan(&config);
        let mut builder = Builder {
            rng: match init {
                Init::He(seed) => Some(SplitMix64::new(seed)),
                Init::Ones => None,
            },
            params: Vec::new(),
            index: HashMap::new(),
        };

        // Stem: 7x7 stride-2 conv applied per frame.
        builder.conv("stem.conv", vec![config.channels[0], 3, 7, 7], 3 * 49, 1.0)?;

        for (i, level) in plan.levels.iter().enumerate() {
            let lv = i + 1;
            for (j, spec) in level.blocks.iter().enumerate() {
                let p = format!("level{lv}.block{j}");
                let (cin, mid, cout) = (spec.in_channels, spec.mid_channels, spec.out_channels);
                builder.conv(&format!("{p}.reduce"), vec![mid, cin, 1, 1], cin, 1.0)?;
                if config.variant == Variant::Res3d {
                    builder.conv(&format!("{p}.conv"), vec![mid, mid, 3, 3, 3], mid * 27, 1.0)?;
                } else {
                    builder.conv(&format!("{p}.conv"), vec![mid, mid, 3, 3], mid * 9, 1.0)?;
                }
                builder.conv(&format!("{p}.expand"), vec![cout, mid, 1, 1], mid, 1.0)?;
                if spec.needs_projection() {
                    builder.conv(&format!("{p}.proj"), vec![cout, cin, 1, 1], cin, 1.0)?;
                }
            }
            if let Some(ta) = &level.ta {
                let c = ta.channels;
                let scale = 1.0 / ta.dilations.len() as f64;
                for (b, _) in ta.dilations.iter().enumerate() {
                    builder.conv(
                        &format!("level{lv}.ta.branch{b}"),
                        vec![c, c, ta.kernel],
                        c * ta.kernel,
                        scale,
                    )?;
                }
            }
        }

        builder.conv(
            "head",
            vec![config.num_classes, config.channels[3]],
            config.channels[3],
            1.0,
        )?;

        Ok(Model {
            linearized: matches!(init, Init::Ones),
            config,
            plan,
            params: builder.params,
            index: builder.index,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].1)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.params {
            t.zero_grad();
        }
    }

    fn weight(&self, name: &str) -> Tensor<T> {
        self.param(name)
            .unwrap_or_else(|| panic!("registry is missing '{name}'"))
            .clone()
    }

    fn bottleneck_weights(&self, level: usize, block: usize) -> BottleneckWeights<T> {
        let p = format!("level{}.block{}", level + 1, block);
        let spec = &self.plan.levels[level].blocks[block];
        BottleneckWeights {
            reduce_w: self.weight(&format!("{p}.reduce.weight")),
            reduce_b: self.weight(&format!("{p}.reduce.bias")),
            conv_w: self.weight(&format!("{p}.conv.weight")),
            conv_b: self.weight(&format!("{p}.conv.bias")),
            expand_w: self.weight(&format!("{p}.expand.weight")),
            expand_b: self.weight(&format!("{p}.expand.bias")),
            proj: spec.needs_projection().then(|| {
                (
                    self.weight(&format!("{p}.proj.weight")),
                    self.weight(&format!("{p}.proj.bias")),
                )
            }),
        }
    }

    fn ta_weights(&self, level: usize, spec: &TaModuleSpec) -> TaWeights<T> {
        TaWeights {
            branches: (0..spec.dilations.len())
                .map(|b| {
                    (
                        self.weight(&format!("level{}.ta.branch{b}.weight", level + 1)),
                        self.weight(&format!("level{}.ta.branch{b}.bias", level + 1)),
                    )
                })
                .collect(),
        }
    }

    fn pool(&self, g: &mut Graph<T>, x: &Tensor<T>, geom: PoolGeom) -> Result<Tensor<T>> {
        if self.linearized {
            ops::avgpool3d(g, x, geom)
        } else {
            ops::maxpool3d(g, x, geom)
        }
    }

    fn act(&self, g: &mut Graph<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.linearized {
            Ok(x.clone())
        } else {
            ops::relu(g, x)
        }
    }

    /// Feature extractor up to (not including) the head: returns the
    /// level-4 feature map [T', C4, H', W'].
    pub fn forward_trunk(&self, g: &mut Graph<T>, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let expect = [
            self.config.temporal_len,
            3,
            self.config.input_spatial,
            self.config.input_spatial,
        ];
        if clip.shape() != expect {
            return Err(TanError::shape(
                "forward",
                format!("clip shape {:?} does not match config {:?}", clip.shape(), expect),
            ));
        }
        let mut x = ops::conv2d_per_frame(
            g,
            clip,
            &self.weight("stem.conv.weight"),
            &self.weight("stem.conv.bias"),
            2,
            3,
        )?;
        x = self.act(g, &x)?;
        x = self.pool(g, &x, self.plan.stem_pool)?;

        for (i, level) in self.plan.levels.iter().enumerate() {
            for (j, spec) in level.blocks.iter().enumerate() {
                let w = self.bottleneck_weights(i, j);
                x = bottleneck_forward(g, &x, spec, &w, self.linearized)?;
            }
            if let Some(ta) = &level.ta {
                let w = self.ta_weights(i, ta);
                x = ta_forward(g, &x, ta, &w, self.linearized)?;
            }
            if let Some(pool) = level.pool {
                x = self.pool(g, &x, pool)?;
            }
        }
        Ok(x)
    }

    /// Per-frame logits [T', num_classes]; sigmoid of these are the dense
    /// multi-label scores.
    pub fn forward_dense(&self, g: &mut Graph<T>, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let trunk = self.forward_trunk(g, clip)?;
        let pooled = ops::spatial_avgpool(g, &trunk)?;
        ops::linear(g, &pooled, &self.weight("head.weight"), &self.weight("head.bias"))
    }
}

enum Init {
    He(u64),
    Ones,
}

struct Builder<T: Scalar> {
    rng: Option<SplitMix64>,
    params: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Builder<T> {
    /// Register `<prefix>.weight` (He-normal * scale, or ones) and
    /// `<prefix>.bias` (zeros). Bias length is the leading weight extent.
    fn conv(&mut self, prefix: &str, wshape: Vec<usize>, fan_in: usize, scale: f64) -> Result<()> {
        let cout = wshape[0];
        let n: usize = wshape.iter().product();
        let wdata: Vec<T> = match &mut self.rng {
            Some(rng) => {
                let std = (2.0 / fan_in as f64).sqrt() * scale;
                (0..n).map(|_| T::from_f64c(rng.next_normal() * std)).collect()
            }
            None => vec![T::one(); n],
        };
        self.push(format!("{prefix}.weight"), Tensor::param(wshape, wdata)?);
        self.push(
            format!("{prefix}.bias"),
            Tensor::param(vec![cout], vec![T::zero(); cout])?,
        );
        Ok(())
    }

    fn push(&mut self, name: String, t: Tensor<T>) {
        self.index.insert(name.clone(), self.params.len());
        self.params.push((name, t));
    }
}

/// Arithmetic mean of per-frame scores per class: [T,K] -> [K].
pub fn video_score<T: Scalar>(frame_scores: &Tensor<T>) -> Result<Tensor<T>> {
    if frame_scores.ndim() != 2 {
        return Err(TanError::shape(
            "video_score",
            format!("expected [T,K], got {:?}", frame_scores.shape()),
        ));
    }
    let (t, k) = (frame_scores.dim(0), frame_scores.dim(1));
    Ok(Tensor::from_vec(vec![k], mean_over_rows(&frame_scores.read(), t, k, 0, t - 1))?)
}

/// Column means of rows lo..=hi of a [T,K] matrix. Shared by
/// `video_score` and proposal scoring so a full-interval proposal with
/// actionness one reproduces the video score exactly.
pub(crate) fn mean_over_rows<T: Scalar>(data: &[T], _t: usize, k: usize, lo: usize, hi: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); k];
    for row in lo..=hi {
        for (a, &v) in acc.iter_mut().zip(&data[row * k..(row + 1) * k]) {
            *a = *a + v;
        }
    }
    let n = T::from_count(hi - lo + 1);
    acc.iter_mut().for_each(|a| *a = *a / n);
    acc
}

// --------------------------------------------------------------------------
// Checkpoint integration (f32 only; the on-disk format stores f32)
// --------------------------------------------------------------------------

/// Names loaded and model parameters left untouched by
/// [`Model::load_spatial_from_2d`].
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    pub skipped: Vec<String>,
}

impl Model<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        for (name, t) in &self.params {
            c.insert(name.clone(), t.shape().to_vec(), t.to_vec())
                .expect("registry names are unique");
        }
        c
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    /// Load a full checkpoint: names and shapes must match the registry
    /// exactly. Validates everything before mutating anything.
    pub fn load_checkpoint_struct(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let unknown: Vec<String> = ckpt
            .names()
            .filter(|n| !self.index.contains_key(*n))
            .map(str::to_string)
            .collect();
        if !unknown.is_empty() {
            return Err(TanError::CheckpointUnknownParams { names: unknown });
        }
        let missing: Vec<String> = self
            .params
            .iter()
            .filter(|(n, _)| ckpt.get(n).is_none())
            .map(|(n, _)| n.clone())
            .collect();
        if !missing.is_empty() {
            return Err(TanError::CheckpointMissingParams { names: missing });
        }
        for (name, t) in &self.params {
            let e = ckpt.get(name).expect("presence checked above");
            if e.dims != t.shape() {
                return Err(TanError::CheckpointShapeConflict {
                    name: name.clone(),
                    model: t.shape().to_vec(),
                    file: e.dims.clone(),
                });
            }
        }
        for (name, t) in &self.params {
            t.set_data(&ckpt.get(name).expect("validated").values);
        }
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint::load(path)?;
        self.load_checkpoint_struct(&ckpt)
    }

    /// Overwrite spatial conv/linear weights from a checkpoint that holds
    /// spatial-block parameters only (e.g. a res2d model); temporal branch
    /// weights are left untouched. Validates before mutating.
    pub fn load_spatial_from_2d(&mut self, ckpt: &Checkpoint) -> Result<LoadReport> {
        let is_temporal = |name: &str| name.contains(".ta.");
        let mut to_load = Vec::new();
        for e in ckpt.entries() {
            if is_temporal(&e.name) {
                continue; // temporal entries in the source are ignored
            }
            let Some(&i) = self.index.get(&e.name) else {
                return Err(TanError::CheckpointUnknownParams {
                    names: vec![e.name.clone()],
                });
            };
            let t = &self.params[i].1;
            if e.dims != t.shape() {
                return Err(TanError::CheckpointShapeConflict {
                    name: e.name.clone(),
                    model: t.shape().to_vec(),
                    file: e.dims.clone(),
                });
            }
            to_load.push(i);
        }
        let mut loaded = Vec::new();
        for &i in &to_load {
            let (name, t) = &self.params[i];
            t.set_data(&ckpt.get(name).expect("validated").values);
            loaded.push(name.clone());
        }
        let loaded_set: std::collections::HashSet<&str> =
            loaded.iter().map(String::as_str).collect();
        let skipped = self
            .params
            .iter()
            .map(|(n, _)| n.clone())
            .filter(|n| !loaded_set.contains(n.as_str()))
            .collect();
        Ok(LoadReport { loaded, skipped })
    }
}
