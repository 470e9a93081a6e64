//! Receptive-field oracle agreement (jump formula vs linearized impulse
//! probe) and the three-way parameter/MAC accounting equality.

use tan_core::analysis::{
    compare_variants, comparison_csv, count_params_flops, impulse_probe, receptive_field,
    trunk_layers, Axis, ProbeOutcome,
};
use tan_core::{ArchConfig, Model, Variant};

fn probe_config(variant: Variant) -> ArchConfig {
    let mut c = ArchConfig::desk_default(4).with_variant(variant);
    c.channels = [8, 8, 16, 16];
    c.blocks_per_level = [2, 2, 2, 2];
    c
}

#[test]
fn probe_agrees_with_formula_on_the_temporal_axis() {
    for variant in [Variant::Tan, Variant::TanPlainconv, Variant::Res2d] {
        let cfg = probe_config(variant);
        let analytic = receptive_field(&trunk_layers(&cfg), Axis::Temporal);
        let probed = impulse_probe(&cfg, Axis::Temporal).unwrap();
        assert_eq!(
            probed,
            ProbeOutcome::Extent(analytic),
            "{variant:?}: analytic {analytic}, probe {probed:?}"
        );
    }
}

#[test]
fn default_temporal_rf_values_are_pinned() {
    let tan = ArchConfig::desk_default(8);
    assert_eq!(impulse_probe(&tan, Axis::Temporal).unwrap(), ProbeOutcome::Extent(25));
    let pc = tan.clone().with_variant(Variant::TanPlainconv);
    assert_eq!(impulse_probe(&pc, Axis::Temporal).unwrap(), ProbeOutcome::Extent(9));
    let r2 = tan.clone().with_variant(Variant::Res2d);
    assert_eq!(impulse_probe(&r2, Axis::Temporal).unwrap(), ProbeOutcome::Extent(1));
}

#[test]
fn probe_agrees_with_formula_on_the_spatial_axis() {
    for variant in [Variant::Tan, Variant::TanPlainconv, Variant::Res2d] {
        let cfg = probe_config(variant);
        let analytic = receptive_field(&trunk_layers(&cfg), Axis::Spatial);
        let probed = impulse_probe(&cfg, Axis::Spatial).unwrap();
        assert_eq!(
            probed,
            ProbeOutcome::Extent(analytic),
            "{variant:?}: analytic {analytic}, probe {probed:?}"
        );
    }
}

#[test]
fn res3d_probe_agrees_on_both_axes() {
    let cfg = probe_config(Variant::Res3d);
    let layers = trunk_layers(&cfg);
    assert_eq!(
        impulse_probe(&cfg, Axis::Temporal).unwrap(),
        ProbeOutcome::Extent(receptive_field(&layers, Axis::Temporal))
    );
    assert_eq!(
        impulse_probe(&cfg, Axis::Spatial).unwrap(),
        ProbeOutcome::Extent(receptive_field(&layers, Axis::Spatial))
    );
}

/// A deep config whose spatial RF exceeds the largest probe input reports
/// saturation instead of a number.
#[test]
fn oversized_footprint_reports_saturated() {
    let mut cfg = ArchConfig::desk_default(4);
    cfg.blocks_per_level = [24, 24, 24, 24];
    let analytic = receptive_field(&trunk_layers(&cfg), Axis::Spatial);
    assert!(analytic > 1024, "test premise: RF {analytic} must exceed probe cap");
    match impulse_probe(&cfg, Axis::Spatial).unwrap() {
        ProbeOutcome::Saturated { input } => assert_eq!(input, 1024),
        other => panic!("expected saturation, got {other:?}"),
    }
}

#[test]
fn analytic_params_and_macs_match_instrumented_model() {
    // count_params_flops cross-checks registry enumeration and an
    // instrumented forward internally; an accounting mismatch is an Err.
    for variant in [Variant::Tan, Variant::Res3d, Variant::Res2d, Variant::TanPlainconv] {
        let report = count_params_flops(&ArchConfig::desk_default(8).with_variant(variant)).unwrap();
        assert!(report.params > 0);
        assert!(report.macs > 0);
        // Checkpoint entry accounting equals the analytic total too.
        let model = Model::<f32>::build(ArchConfig::desk_default(8).with_variant(variant), 0).unwrap();
        assert_eq!(model.to_checkpoint().total_values(), report.params);
    }
}

#[test]
fn single_conv_counting_example() {
    // A 3x3 conv, 16 -> 16 channels, on a 16x16 map: 2320 params,
    // 2304 * 256 = 589,824 MACs per frame.
    let params = 16 * 16 * 9 + 16;
    assert_eq!(params, 2320);
    let macs_per_frame = (16 * 16 * 9) * (16 * 16);
    assert_eq!(macs_per_frame, 589_824);

    let mut g = tan_core::Graph::<f32>::inference();
    let x = tan_core::Tensor::zeros(vec![1, 16, 16, 16]);
    let w = tan_core::Tensor::zeros(vec![16, 16, 3, 3]);
    let b = tan_core::Tensor::zeros(vec![16]);
    tan_core::ops::conv2d_per_frame(&mut g, &x, &w, &b, 1, 1).unwrap();
    assert_eq!(g.macs(), 589_824);
}

#[test]
fn per_level_stats_are_monotone() {
    for variant in [Variant::Tan, Variant::Res3d] {
        let report = count_params_flops(&ArchConfig::desk_default(8).with_variant(variant)).unwrap();
        let mut prev_params = 0;
        let mut prev_macs = 0;
        let mut prev_srf = 0;
        let mut prev_trf = 0;
        for lv in &report.per_level {
            assert!(lv.cum_params > prev_params);
            assert!(lv.cum_macs > prev_macs);
            assert!(lv.spatial_rf > prev_srf, "spatial RF must grow each level");
            assert!(lv.temporal_rf >= prev_trf);
            prev_params = lv.cum_params;
            prev_macs = lv.cum_macs;
            prev_srf = lv.spatial_rf;
            prev_trf = lv.temporal_rf;
        }
    }
}

#[test]
fn desk_tan_params_below_res3d_with_ratio_recorded() {
    let tan = count_params_flops(&ArchConfig::desk_default(8)).unwrap();
    let res3d =
        count_params_flops(&ArchConfig::desk_default(8).with_variant(Variant::Res3d)).unwrap();
    let ratio = tan.params as f64 / res3d.params as f64;
    assert!(ratio < 1.0, "params(tan)/params(res3d) = {ratio}");
}

#[test]
fn comparison_rows_capture_structural_facts() {
    let base = ArchConfig::desk_default(8);
    let rows = compare_variants(&[
        base.clone(),
        base.clone().with_variant(Variant::Res3d),
        base.clone().with_variant(Variant::Res2d),
    ])
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2].temporal_rf, 1);
    assert!(rows[1].output_t < base.temporal_len);
    assert_eq!(rows[0].output_t, base.temporal_len);

    let single = compare_variants(&[base.clone()]).unwrap();
    assert_eq!(single.len(), 1);

    let pc = compare_variants(&[base.clone(), base.clone().with_variant(Variant::TanPlainconv)])
        .unwrap();
    assert_eq!(pc[0].spatial_rf, pc[1].spatial_rf);
    assert_eq!(pc[0].temporal_rf, 25);
    assert_eq!(pc[1].temporal_rf, 9);

    let csv = comparison_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "variant,params,macs,temporal_rf,spatial_rf,output_t"
    );
    assert_eq!(csv.lines().count(), 4);
}
