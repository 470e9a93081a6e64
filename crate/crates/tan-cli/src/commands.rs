//! Subcommand implementations. Every emitted file and table starts with
//! `#` header comments that echo the seed and the run context.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use tan_core::analysis::{
    compare_variants, comparison_csv, comparison_table, count_params_flops, impulse_probe, Axis,
    ProbeOutcome,
};
use tan_core::data::{save_dataset, Dataset};
use tan_core::eval::{metrics_from_scores, predictions_csv, score_dataset, EvalProtocol};
use tan_core::train::{train, TrainConfig};
use tan_core::{ArchConfig, Model, Result, TanError, Variant};

use crate::config::RunConfig;

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.arch().validate()?;
    let spec = cfg.gen_spec();
    let data = tan_core::data::generate(&spec)?;
    let comments = vec![
        format!("seed={}", spec.seed),
        format!(
            "videos={} frames={} classes={} spatial={}",
            spec.n_videos, spec.t, spec.k, spec.spatial
        ),
    ];
    save_dataset(&data, out, &comments)?;
    println!(
        "# seed={}\nwrote {} videos and manifest.csv to {}",
        spec.seed,
        data.len(),
        out.display()
    );
    Ok(())
}

/// Rows already present in an existing training log, for resume
/// numbering.
fn existing_log_epochs(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .map(|text| {
            text.lines()
                .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,") && !l.trim().is_empty())
                .count()
        })
        .unwrap_or(0)
}

pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let arch = effective_arch(cfg, &data)?;
    let mut model = Model::<f32>::build(arch.clone(), cfg.seed)?;

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| TanError::io(out, e))?;
    let log_path = out.join("train_log.csv");
    let ckpt_path = out.join("model.ckpt");

    let mut epoch_offset = 0;
    if let Some(ckpt) = resume {
        model.load_checkpoint(ckpt)?;
        epoch_offset = existing_log_epochs(&log_path);
    }

    let mut tcfg = TrainConfig::new(cfg.epochs, cfg.seed);
    tcfg.schedule = cfg.schedule()?;
    tcfg.init_head_prior = resume.is_none();
    let log = train(&mut model, &data, &tcfg, epoch_offset)?;

    model.save_checkpoint(&ckpt_path)?;
    let mut comments = vec![
        format!("seed={}", cfg.seed),
        format!("variant={}", arch.variant.as_str()),
        format!("epochs={} sampling_factor={}", cfg.epochs, cfg.sampling_factor),
    ];
    if arch.output_t() != arch.temporal_len {
        comments.push(format!(
            "output_t={} input_t={} (temporal downsampling)",
            arch.output_t(),
            arch.temporal_len
        ));
    }
    let csv = log.to_csv(&comments);
    if epoch_offset > 0 && log_path.exists() {
        // Continue the epoch numbering in the existing log.
        let body: String = csv
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("epoch,"))
            .map(|l| format!("{l}\n"))
            .collect();
        let mut existing =
            std::fs::read_to_string(&log_path).map_err(|e| TanError::io(&log_path, e))?;
        existing.push_str(&body);
        std::fs::write(&log_path, existing).map_err(|e| TanError::io(&log_path, e))?;
    } else {
        std::fs::write(&log_path, csv).map_err(|e| TanError::io(&log_path, e))?;
    }
    if let Some(last) = log.epochs.last() {
        println!(
            "# seed={}\nepoch {}: loss {:.4} frame_map {:.4} video_map {:.4}",
            cfg.seed, last.epoch, last.mean_loss, last.frame_map, last.video_map
        );
    }
    println!("checkpoint: {}", ckpt_path.display());
    println!("log: {}", log_path.display());
    Ok(())
}

/// The dataset may have been resampled; the model must match its actual
/// temporal extent and geometry.
fn effective_arch(cfg: &RunConfig, data: &Dataset) -> Result<ArchConfig> {
    let (t, h, _w) = data.validate_uniform_dims()?;
    let mut arch = cfg.arch();
    arch.temporal_len = t;
    arch.input_spatial = h;
    if data.num_classes != arch.num_classes {
        return Err(TanError::Config(format!(
            "dataset has {} classes but config expects {}",
            data.num_classes, arch.num_classes
        )));
    }
    arch.validate()?;
    Ok(arch)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    protocol: EvalProtocol,
    oracle: bool,
    csv_out: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let scores: Vec<Vec<f32>> = if oracle {
        data.videos.iter().map(|v| v.labels.clone()).collect()
    } else {
        let ckpt = checkpoint.ok_or_else(|| {
            TanError::Config("--checkpoint is required unless --oracle is given".into())
        })?;
        let arch = effective_arch(cfg, &data)?;
        let mut model = Model::<f32>::build(arch, cfg.seed)?;
        model.load_checkpoint(ckpt)?;
        score_dataset(&model, &data)?
    };
    let report = metrics_from_scores(&scores, &data, protocol)?;

    let comments = vec![
        format!("seed={}", cfg.seed),
        format!("protocol={}", report.protocol),
        format!("oracle={oracle}"),
    ];
    for c in &comments {
        println!("# {c}");
    }
    println!("frame_map {:.6}", report.frame_map);
    println!("video_map {:.6}", report.video_map);
    for (k, ap) in report.per_class_ap.iter().enumerate() {
        match ap {
            Some(v) => println!("class {k}: ap {v:.6}"),
            None => println!("class {k}: excluded (no positives)"),
        }
    }
    if let Some(path) = csv_out {
        std::fs::write(path, report.to_csv(&comments)).map_err(|e| TanError::io(path, e))?;
    }
    Ok(())
}

pub fn cmd_predict(cfg: &RunConfig, checkpoint: &Path, out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let arch = effective_arch(cfg, &data)?;
    let mut model = Model::<f32>::build(arch, cfg.seed)?;
    model.load_checkpoint(checkpoint)?;
    let scores = score_dataset(&model, &data)?;
    let csv = predictions_csv(&scores, &data, &[format!("seed={}", cfg.seed)]);
    match out {
        Some(path) => std::fs::write(path, csv).map_err(|e| TanError::io(path, e))?,
        None => print!("{csv}"),
    }
    Ok(())
}

pub fn cmd_analyze(cfg: &RunConfig, rf: Option<&str>, params: bool, csv: bool) -> Result<()> {
    let arch = cfg.arch();
    arch.validate()?;
    let report = count_params_flops(&arch)?;
    let mut rows: Vec<(String, String)> = Vec::new();
    if params || rf.is_none() {
        rows.push(("params".into(), report.params.to_string()));
        rows.push(("macs".into(), report.macs.to_string()));
        rows.push(("macs_per_input_frame".into(), report.macs_per_input_frame.to_string()));
        rows.push(("output_t".into(), report.output_t.to_string()));
        for lv in &report.per_level {
            rows.push((format!("level{}_params", lv.level), lv.cum_params.to_string()));
            rows.push((format!("level{}_macs", lv.level), lv.cum_macs.to_string()));
        }
    }
    let mut probe_axes: Vec<(Axis, &str)> = Vec::new();
    match rf {
        Some("temporal") => probe_axes.push((Axis::Temporal, "temporal_rf")),
        Some("spatial") => probe_axes.push((Axis::Spatial, "spatial_rf")),
        Some("both") => {
            probe_axes.push((Axis::Temporal, "temporal_rf"));
            probe_axes.push((Axis::Spatial, "spatial_rf"));
        }
        Some(other) => {
            return Err(TanError::Config(format!(
                "unknown axis '{other}' (expected temporal, spatial or both)"
            )))
        }
        None => {
            rows.push(("temporal_rf".into(), report.temporal_rf.to_string()));
            rows.push(("spatial_rf".into(), report.spatial_rf.to_string()));
        }
    }
    for (axis, name) in probe_axes {
        let analytic = match axis {
            Axis::Temporal => report.temporal_rf,
            Axis::Spatial => report.spatial_rf,
        };
        rows.push((name.into(), analytic.to_string()));
        match impulse_probe(&arch, axis)? {
            ProbeOutcome::Extent(e) => rows.push((format!("{name}_probe"), e.to_string())),
            ProbeOutcome::Saturated { input } => {
                rows.push((format!("{name}_probe"), format!("saturated@{input}")))
            }
        }
    }

    println!("# seed={} variant={}", cfg.seed, arch.variant.as_str());
    if csv {
        println!("metric,value");
        for (k, v) in &rows {
            println!("{k},{v}");
        }
    } else {
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        for (k, v) in &rows {
            println!("{k:<width$}  {v}");
        }
    }
    Ok(())
}

pub fn cmd_compare(cfg: &RunConfig, variants: &[String], csv: bool) -> Result<()> {
    let configs: Vec<ArchConfig> = variants
        .iter()
        .map(|v| Ok(cfg.arch().with_variant(Variant::parse(v)?)))
        .collect::<Result<_>>()?;
    let rows = compare_variants(&configs)?;
    println!("# seed={}", cfg.seed);
    if csv {
        print!("{}", comparison_csv(&rows));
    } else {
        print!("{}", comparison_table(&rows));
    }
    Ok(())
}

/// One row of the temporal-aggregation placement ladder.
struct AblationRow {
    label: &'static str,
    ta_enabled: [bool; 4],
    variant: Variant,
}

pub fn cmd_ablate(cfg: &RunConfig, seeds: usize, csv: bool, out: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    if seeds == 0 {
        return Err(TanError::Config("need at least one seed".into()));
    }
    let data = cfg.load_dataset()?;

    // Levels are listed 4..1 to mirror the placement ladder reading.
    let rows = [
        AblationRow {
            label: "lv4 only",
            ta_enabled: [false, false, false, true],
            variant: Variant::Tan,
        },
        AblationRow {
            label: "lv3-4",
            ta_enabled: [false, false, true, true],
            variant: Variant::Tan,
        },
        AblationRow {
            label: "lv2-4",
            ta_enabled: [false, true, true, true],
            variant: Variant::Tan,
        },
        AblationRow {
            label: "all levels",
            ta_enabled: [true, true, true, true],
            variant: Variant::Tan,
        },
        AblationRow {
            label: "no dilation",
            ta_enabled: [true, true, true, true],
            variant: Variant::TanPlainconv,
        },
    ];

    let jobs: Vec<(usize, u64)> = (0..rows.len())
        .flat_map(|r| (1..=seeds as u64).map(move |s| (r, s)))
        .collect();
    let results: Vec<(usize, u64, f64, f64)> = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let row = &rows[r];
            let mut arch = effective_arch(cfg, &data)?;
            arch.ta_enabled = row.ta_enabled;
            arch.variant = row.variant;
            let mut model = Model::<f32>::build(arch, seed)?;
            let mut tcfg = TrainConfig::new(cfg.epochs, seed);
            tcfg.schedule = cfg.schedule()?;
            let log = train(&mut model, &data, &tcfg, 0)?;
            let last = log.epochs.last().expect("epochs >= 1");
            Ok((r, seed, last.frame_map, last.video_map))
        })
        .collect::<Result<_>>()?;

    let median = |mut xs: Vec<f64>| {
        xs.sort_by(f64::total_cmp);
        xs[xs.len() / 2]
    };
    let mut table = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let fmaps: Vec<f64> = results
            .iter()
            .filter(|&&(rr, ..)| rr == r)
            .map(|&(_, _, f, _)| f)
            .collect();
        let vmaps: Vec<f64> = results
            .iter()
            .filter(|&&(rr, ..)| rr == r)
            .map(|&(.., v)| v)
            .collect();
        table.push((row, median(fmaps), median(vmaps)));
    }

    let mark = |b: bool, csv: bool| match (b, csv) {
        (true, true) => "yes",
        (false, true) => "no",
        (true, false) => "x",
        (false, false) => "-",
    };
    let mut text = format!(
        "# seed={} seeds={} epochs={} videos={}\n",
        cfg.seed,
        seeds,
        cfg.epochs,
        data.len()
    );
    if csv {
        text.push_str("lv4,lv3,lv2,lv1,dilation,frame_map,video_map\n");
        for (row, f, v) in &table {
            let dil = row.variant == Variant::Tan;
            text.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                mark(row.ta_enabled[3], true),
                mark(row.ta_enabled[2], true),
                mark(row.ta_enabled[1], true),
                mark(row.ta_enabled[0], true),
                mark(dil, true),
                f,
                v
            ));
        }
    } else {
        text.push_str(&format!(
            "{:<12} {:>3} {:>3} {:>3} {:>3} {:>8} {:>10} {:>10}\n",
            "placement", "lv4", "lv3", "lv2", "lv1", "dilation", "frame_map", "video_map"
        ));
        for (row, f, v) in &table {
            let dil = row.variant == Variant::Tan;
            text.push_str(&format!(
                "{:<12} {:>3} {:>3} {:>3} {:>3} {:>8} {:>10.4} {:>10.4}\n",
                row.label,
                mark(row.ta_enabled[3], false),
                mark(row.ta_enabled[2], false),
                mark(row.ta_enabled[1], false),
                mark(row.ta_enabled[0], false),
                mark(dil, false),
                f,
                v
            ));
        }
    }
    print!("{text}");
    if let Some(path) = out {
        std::fs::write(path, &text).map_err(|e| TanError::io(path, e))?;
    }
    Ok(())
}

pub fn override_output_dir(cfg: &mut RunConfig, out: Option<PathBuf>) {
    if let Some(out) = out {
        cfg.output_dir = out;
    }
}
