//! Static and empirical architecture analysis: receptive fields along
//! either axis, parameter counts, multiply-accumulate counts, and
//! cross-variant comparison tables.
//!
//! Two independent routes exist for each quantity and tests hold them
//! together: the jump-formula receptive field against a linearized
//! impulse probe, and analytic parameter/MAC formulas against registry
//! enumeration and a counting-instrumented forward pass.

use serde::Serialize;

use crate::blocks::{BottleneckSpec, TaModuleSpec};
use crate::error::{Result, TanError};
use crate::graph::Graph;
use crate::model::{ArchConfig, Model, Variant};
use crate::ops;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Spatial,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    Conv1dT,
    Pool2d,
    PoolT,
}

/// One geometric stage of the trunk. Spatio-temporal (3-D) convolutions
/// and pools are listed as a spatial descriptor followed by a temporal
/// one, which is exact for receptive-field purposes. Parallel temporal
/// branches collapse to a single descriptor at the maximum dilation
/// (union of footprints; the jump is unchanged since branches have
/// stride one).
#[derive(Debug, Clone, Copy)]
pub struct LayerDescriptor {
    pub kind: LayerKind,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl LayerDescriptor {
    fn geometry(&self, axis: Axis) -> (usize, usize, usize) {
        let active = match self.kind {
            LayerKind::Conv2d | LayerKind::Pool2d => axis == Axis::Spatial,
            LayerKind::Conv1dT | LayerKind::PoolT => axis == Axis::Temporal,
        };
        if active {
            (self.kernel, self.stride, self.dilation)
        } else {
            (1, 1, 1)
        }
    }
}

/// Jump-formula receptive field: r <- r + (k-1)*d*j, then j <- j*stride.
pub fn receptive_field(layers: &[LayerDescriptor], axis: Axis) -> usize {
    let mut r = 1usize;
    let mut j = 1usize;
    for layer in layers {
        let (k, s, d) = layer.geometry(axis);
        r += (k - 1) * d * j;
        j *= s;
    }
    r
}

/// Trunk layer sequence (stem through level 4, head excluded) for a
/// config. Residual shortcuts contribute nothing beyond the main path
/// and are omitted.
pub fn trunk_layers(config: &ArchConfig) -> Vec<LayerDescriptor> {
    let res3d = config.variant == Variant::Res3d;
    let mut layers = Vec::new();
    let conv2d = |kernel, stride, in_ch, out_ch| LayerDescriptor {
        kind: LayerKind::Conv2d,
        kernel,
        stride,
        dilation: 1,
        in_ch,
        out_ch,
    };
    let conv1dt = |kernel, dilation, ch| LayerDescriptor {
        kind: LayerKind::Conv1dT,
        kernel,
        stride: 1,
        dilation,
        in_ch: ch,
        out_ch: ch,
    };
    let pool2d = |kernel, stride| LayerDescriptor {
        kind: LayerKind::Pool2d,
        kernel,
        stride,
        dilation: 1,
        in_ch: 0,
        out_ch: 0,
    };
    let pool_t = |kernel, stride| LayerDescriptor {
        kind: LayerKind::PoolT,
        kernel,
        stride,
        dilation: 1,
        in_ch: 0,
        out_ch: 0,
    };

    layers.push(conv2d(7, 2, 3, config.channels[0]));
    layers.push(pool2d(3, 2));
    if res3d {
        layers.push(pool_t(2, 2));
    }
    for i in 0..4 {
        let in_ch = if i == 0 { config.channels[0] } else { config.channels[i - 1] };
        let out_ch = config.channels[i];
        for j in 0..config.blocks_per_level[i] {
            let bin = if j == 0 { in_ch } else { out_ch };
            let mid = (out_ch / 4).max(1);
            layers.push(conv2d(1, 1, bin, mid));
            layers.push(conv2d(3, 1, mid, mid));
            if res3d {
                layers.push(conv1dt(3, 1, mid));
            }
            layers.push(conv2d(1, 1, mid, out_ch));
        }
        if let Some(dilations) = config.level_dilations(i) {
            let dmax = *dilations.iter().max().expect("validated non-empty");
            layers.push(conv1dt(3, dmax, out_ch));
        }
        if i < 3 {
            layers.push(pool2d(2, 2));
            if res3d && i < 2 {
                layers.push(pool_t(2, 2));
            }
        }
    }
    layers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Extent(usize),
    /// Footprint reached the input border at the largest probe size.
    Saturated { input: usize },
}

/// Empirical receptive field oracle: a linearized copy of the trunk
/// (weights one, biases zero, ReLU as identity, pools averaged) is probed
/// by backpropagating a one-hot gradient from a center trunk unit and
/// measuring the nonzero footprint of the input gradient along `axis`.
/// The probe input grows until the footprint clears the borders.
pub fn impulse_probe(config: &ArchConfig, axis: Axis) -> Result<ProbeOutcome> {
    let res3d = config.variant == Variant::Res3d;
    let sizes: Vec<usize> = match axis {
        Axis::Temporal => vec![33, 65, 129, 257, 513, 1025],
        Axis::Spatial => vec![64, 128, 256, 512, 1024],
    };
    let mut last = 0usize;
    for size in sizes {
        last = size;
        let mut probe_cfg = config.clone();
        probe_cfg.channels = [1, 1, 1, 1];
        probe_cfg.num_classes = 1;
        match axis {
            Axis::Temporal => {
                probe_cfg.temporal_len = size;
                probe_cfg.input_spatial = 32;
            }
            Axis::Spatial => {
                probe_cfg.temporal_len = if res3d { 8 } else { 1 };
                probe_cfg.input_spatial = size;
            }
        }
        let model = Model::<f64>::build_linearized(probe_cfg.clone())?;

        let (t, s) = (probe_cfg.temporal_len, probe_cfg.input_spatial);
        let mut data = vec![0.0f64; t * 3 * s * s];
        data[((t / 2) * 3) * s * s + (s / 2) * s + s / 2] = 1.0;
        let clip = Tensor::new(vec![t, 3, s, s], data, true)?;

        let mut g = Graph::recording();
        let trunk = model.forward_trunk(&mut g, &clip)?;
        let (tp, c, hp, wp) = (trunk.dim(0), trunk.dim(1), trunk.dim(2), trunk.dim(3));
        let mut mask = vec![0.0f64; trunk.numel()];
        mask[(((tp / 2) * c) * hp + hp / 2) * wp + wp / 2] = 1.0;
        let mask = Tensor::from_vec(trunk.shape().to_vec(), mask)?;
        let picked = ops::mul(&mut g, &trunk, &mask)?;
        let loss = ops::sum(&mut g, &picked)?;
        g.backward(&loss)?;

        let grad = clip.grad().ok_or_else(|| {
            TanError::Autograd("probe input received no gradient".into())
        })?;
        let frame = 3 * s * s;
        let (mut lo, mut hi) = (None, None);
        match axis {
            Axis::Temporal => {
                for ti in 0..t {
                    if grad[ti * frame..(ti + 1) * frame].iter().any(|&v| v != 0.0) {
                        if lo.is_none() {
                            lo = Some(ti);
                        }
                        hi = Some(ti);
                    }
                }
            }
            Axis::Spatial => {
                for hi_row in 0..s {
                    let mut any = false;
                    for ti in 0..t {
                        for ci in 0..3 {
                            let base = (ti * 3 + ci) * s * s + hi_row * s;
                            if grad[base..base + s].iter().any(|&v| v != 0.0) {
                                any = true;
                                break;
                            }
                        }
                        if any {
                            break;
                        }
                    }
                    if any {
                        if lo.is_none() {
                            lo = Some(hi_row);
                        }
                        hi = Some(hi_row);
                    }
                }
            }
        }
        let (lo, hi) = match (lo, hi) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(TanError::Autograd("probe footprint is empty".into())),
        };
        let extent = match axis {
            Axis::Temporal => t,
            Axis::Spatial => s,
        };
        if lo > 0 && hi + 1 < extent {
            return Ok(ProbeOutcome::Extent(hi - lo + 1));
        }
    }
    Ok(ProbeOutcome::Saturated { input: last })
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelStats {
    pub level: usize,
    pub spatial_rf: usize,
    pub temporal_rf: usize,
    pub cum_params: usize,
    pub cum_macs: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub variant: String,
    pub per_level: Vec<LevelStats>,
    pub params: usize,
    /// Multiply-accumulates over one full clip, bias adds and activations
    /// excluded.
    pub macs: u64,
    pub macs_per_input_frame: u64,
    pub spatial_rf: usize,
    pub temporal_rf: usize,
    pub output_t: usize,
}

struct Extents {
    t: usize,
    h: usize,
    w: usize,
}

/// Analytic parameter and MAC accounting, cross-checked against the built
/// model's registry and a counting-instrumented forward pass; a mismatch
/// is an internal error.
pub fn count_params_flops(config: &ArchConfig) -> Result<AnalysisReport> {
    config.validate()?;
    let res3d = config.variant == Variant::Res3d;
    let conv_out = |e: usize, k: usize, s: usize, p: usize| (e + 2 * p - k) / s + 1;

    let mut params = 0usize;
    let mut macs = 0u64;
    let mut per_level = Vec::new();
    let layers = trunk_layers(config);
    let mut ext = Extents {
        t: config.temporal_len,
        h: config.input_spatial,
        w: config.input_spatial,
    };

    // Stem.
    params += config.channels[0] * 3 * 49 + config.channels[0];
    ext.h = conv_out(ext.h, 7, 2, 3);
    ext.w = conv_out(ext.w, 7, 2, 3);
    macs += (ext.t * config.channels[0] * ext.h * ext.w * 3 * 49) as u64;
    ext.h = conv_out(ext.h, 3, 2, 1);
    ext.w = conv_out(ext.w, 3, 2, 1);
    if res3d {
        ext.t = (ext.t - 2) / 2 + 1;
    }

    // Descriptor prefix length after each level, for per-level RF.
    let mut prefix = 2 + res3d as usize;

    for i in 0..4 {
        let in_ch = if i == 0 { config.channels[0] } else { config.channels[i - 1] };
        let out_ch = config.channels[i];
        for j in 0..config.blocks_per_level[i] {
            let bin = if j == 0 { in_ch } else { out_ch };
            let spec = BottleneckSpec::with_default_mid(bin, out_ch, 1);
            let mid = spec.mid_channels;
            let sites = (ext.t * ext.h * ext.w) as u64;
            if res3d {
                // 3x3 -> 3x3x3 relative to the 2-D analytic count.
                params += spec.param_count() + mid * mid * 18;
                macs += sites * (bin * mid) as u64; // reduce 1x1
                macs += sites * (mid * mid * 27) as u64; // 3x3x3
                macs += sites * (mid * out_ch) as u64; // expand 1x1
            } else {
                params += spec.param_count();
                macs += sites * (bin * mid) as u64;
                macs += sites * (mid * mid * 9) as u64;
                macs += sites * (mid * out_ch) as u64;
            }
            if spec.needs_projection() {
                macs += sites * (bin * out_ch) as u64;
            }
            prefix += 3 + res3d as usize;
        }
        if let Some(dilations) = config.level_dilations(i) {
            let ta = TaModuleSpec::new(out_ch, dilations);
            params += ta.param_count();
            let sites = (ext.t * ext.h * ext.w) as u64;
            macs += ta.dilations.len() as u64 * sites * (out_ch * out_ch * 3) as u64;
            prefix += 1;
        }
        if i < 3 {
            ext.h = (ext.h - 2) / 2 + 1;
            ext.w = (ext.w - 2) / 2 + 1;
            prefix += 1;
            if res3d && i < 2 {
                ext.t = (ext.t - 2) / 2 + 1;
                prefix += 1;
            }
        }
        per_level.push(LevelStats {
            level: i + 1,
            spatial_rf: receptive_field(&layers[..prefix], Axis::Spatial),
            temporal_rf: receptive_field(&layers[..prefix], Axis::Temporal),
            cum_params: params,
            cum_macs: macs,
        });
    }

    // Head.
    params += config.channels[3] * config.num_classes + config.num_classes;
    macs += (ext.t * config.num_classes * config.channels[3]) as u64;

    // Cross-checks: registry enumeration and an instrumented forward.
    let model = Model::<f32>::build(config.clone(), 0)?;
    if model.param_count() != params {
        return Err(TanError::Config(format!(
            "internal accounting error: analytic params {} vs registry {}",
            params,
            model.param_count()
        )));
    }
    let clip = Tensor::zeros(vec![
        config.temporal_len,
        3,
        config.input_spatial,
        config.input_spatial,
    ]);
    let mut g = Graph::inference();
    model.forward_dense(&mut g, &clip)?;
    if g.macs() != macs {
        return Err(TanError::Config(format!(
            "internal accounting error: analytic MACs {} vs instrumented forward {}",
            macs,
            g.macs()
        )));
    }

    Ok(AnalysisReport {
        variant: config.variant.as_str().to_string(),
        per_level,
        params,
        macs,
        macs_per_input_frame: macs / config.temporal_len as u64,
        spatial_rf: receptive_field(&layers, Axis::Spatial),
        temporal_rf: receptive_field(&layers, Axis::Temporal),
        output_t: config.output_t(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub variant: String,
    pub params: usize,
    pub macs: u64,
    pub temporal_rf: usize,
    pub spatial_rf: usize,
    pub output_t: usize,
}

pub fn compare_variants(configs: &[ArchConfig]) -> Result<Vec<ComparisonRow>> {
    if configs.is_empty() {
        return Err(TanError::Config("compare_variants needs at least one config".into()));
    }
    configs
        .iter()
        .map(|c| {
            let report = count_params_flops(c)?;
            Ok(ComparisonRow {
                variant: report.variant,
                params: report.params,
                macs: report.macs,
                temporal_rf: report.temporal_rf,
                spatial_rf: report.spatial_rf,
                output_t: report.output_t,
            })
        })
        .collect()
}

/// Machine contract: one line per row, fixed column order.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("variant,params,macs,temporal_rf,spatial_rf,output_t\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant, r.params, r.macs, r.temporal_rf, r.spatial_rf, r.output_t
        ));
    }
    out
}

/// Human-aligned table with the same columns as the CSV.
pub fn comparison_table(rows: &[ComparisonRow]) -> String {
    let headers = ["variant", "params", "macs", "temporal_rf", "spatial_rf", "output_t"];
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.variant.clone(),
                r.params.to_string(),
                r.macs.to_string(),
                r.temporal_rf.to_string(),
                r.spatial_rf.to_string(),
                r.output_t.to_string(),
            ]
        })
        .collect();
    let mut widths = [0usize; 6];
    for (i, h) in headers.iter().enumerate() {
        widths[i] = h.len();
        for row in &cells {
            widths[i] = widths[i].max(row[i].len());
        }
    }
    let mut out = String::new();
    for (i, h) in headers.iter().enumerate() {
        out.push_str(&format!("{:<w$}  ", h, w = widths[i]));
    }
    out.push('\n');
    for row in &cells {
        for (i, cell) in row.iter().enumerate() {
            out.push_str(&format!("{:<w$}  ", cell, w = widths[i]));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(kind: LayerKind, kernel: usize, stride: usize, dilation: usize) -> LayerDescriptor {
        LayerDescriptor {
            kind,
            kernel,
            stride,
            dilation,
            in_ch: 1,
            out_ch: 1,
        }
    }

    #[test]
    fn single_conv_rf_is_kernel() {
        let layers = [single(LayerKind::Conv2d, 3, 1, 1)];
        assert_eq!(receptive_field(&layers, Axis::Spatial), 3);
        assert_eq!(receptive_field(&layers, Axis::Temporal), 1);
    }

    #[test]
    fn stacked_threes_give_five() {
        let layers = [
            single(LayerKind::Conv2d, 3, 1, 1),
            single(LayerKind::Conv2d, 3, 1, 1),
        ];
        assert_eq!(receptive_field(&layers, Axis::Spatial), 5);
    }

    #[test]
    fn desk_tan_temporal_rf_is_25() {
        let cfg = ArchConfig::desk_default(8);
        assert_eq!(receptive_field(&trunk_layers(&cfg), Axis::Temporal), 25);
    }

    #[test]
    fn plainconv_temporal_rf_is_9_and_res2d_is_1() {
        let pc = ArchConfig::desk_default(8).with_variant(Variant::TanPlainconv);
        assert_eq!(receptive_field(&trunk_layers(&pc), Axis::Temporal), 9);
        let r2 = ArchConfig::desk_default(8).with_variant(Variant::Res2d);
        assert_eq!(receptive_field(&trunk_layers(&r2), Axis::Temporal), 1);
    }

    #[test]
    fn spatial_rf_identical_across_temporal_variants() {
        let tan = ArchConfig::desk_default(8);
        let pc = tan.clone().with_variant(Variant::TanPlainconv);
        let r2 = tan.clone().with_variant(Variant::Res2d);
        let rf = |c: &ArchConfig| receptive_field(&trunk_layers(c), Axis::Spatial);
        assert_eq!(rf(&tan), rf(&pc));
        assert_eq!(rf(&tan), rf(&r2));
    }

    #[test]
    fn temporal_rf_strictly_increases_with_max_dilation() {
        let mut prev = 0;
        for dmax in 1..=6 {
            let mut cfg = ArchConfig::desk_default(8);
            cfg.ta_dilations = (1..=dmax).collect();
            let rf = receptive_field(&trunk_layers(&cfg), Axis::Temporal);
            assert!(rf > prev, "dmax={dmax}: {rf} !> {prev}");
            prev = rf;
        }
    }
}
