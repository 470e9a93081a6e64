//! Pilot run for the directional ablation: dataset statistics and final
//! frame mAP per variant over a few seeds.

use tan_core::data::{generate, GenSpec};
use tan_core::train::{train, LrSchedule, TrainConfig};
use tan_core::{ArchConfig, Model, Variant};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let videos: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(100);
    let epochs: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let base_lr: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let seeds: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2);

    let data = generate(&GenSpec::new(7, videos, 16, 8, 32)).unwrap();
    println!(
        "dataset: {} videos, mean labels/frame {:.3}",
        data.len(),
        data.mean_active_labels_per_frame()
    );
    for class in 0..8 {
        print!("run[{class}]={:.1} ", data.mean_label_run_length(class));
    }
    println!();

    for variant in [Variant::Tan, Variant::TanPlainconv, Variant::Res2d] {
        let mut maps = Vec::new();
        for seed in 1..=seeds {
            let mut cfg = ArchConfig::desk_default(8).with_variant(variant);
            cfg.channels = [8, 16, 32, 64];
            cfg.blocks_per_level = [1, 1, 1, 1];
            let mut model = Model::<f32>::build(cfg, seed).unwrap();
            let mut tcfg = TrainConfig::new(epochs, seed);
            tcfg.schedule = LrSchedule::desk_default(epochs, base_lr);
            let start = std::time::Instant::now();
            let log = train(&mut model, &data, &tcfg, 0).unwrap();
            let last = log.epochs.last().unwrap();
            println!(
                "{:>14} seed {seed}: frame_map {:.4} video_map {:.4} loss {:.4} ({:.0}s)",
                format!("{variant:?}"),
                last.frame_map,
                last.video_map,
                last.mean_loss,
                start.elapsed().as_secs_f64()
            );
            maps.push(last.frame_map);
        }
        maps.sort_by(f64::total_cmp);
        println!("{variant:?} median {:.4}", maps[maps.len() / 2]);
    }
}
