//! Rough training-step timing at candidate desk configs.

use std::time::Instant;

use tan_core::data::{generate, GenSpec};
use tan_core::train::{train, TrainConfig};
use tan_core::{ArchConfig, Model, Variant};

fn main() {
    let data = generate(&GenSpec::new(7, 16, 16, 8, 32)).unwrap();
    for (label, channels, blocks) in [
        ("tiny [4,8,16,32]x1", [4usize, 8, 16, 32], [1usize, 1, 1, 1]),
        ("small [8,16,32,64]x1", [8, 16, 32, 64], [1, 1, 1, 1]),
        ("desk [16,32,64,128]x2", [16, 32, 64, 128], [2, 2, 2, 2]),
    ] {
        for variant in [Variant::Tan, Variant::Res2d] {
            let mut cfg = ArchConfig::desk_default(8).with_variant(variant);
            cfg.channels = channels;
            cfg.blocks_per_level = blocks;
            let mut model = Model::<f32>::build(cfg, 1).unwrap();
            let tcfg = TrainConfig::new(1, 1);
            let start = Instant::now();
            train(&mut model, &data, &tcfg, 0).unwrap();
            let per_clip = start.elapsed().as_secs_f64() / 16.0;
            println!("{label} {variant:?}: {:.1} ms/clip (epoch {:.2}s)", per_clip * 1000.0, start.elapsed().as_secs_f64());
        }
    }
}
