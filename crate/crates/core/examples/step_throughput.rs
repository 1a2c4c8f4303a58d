//! Times training steps for each model kind.
//!
//! `cargo run --release --example step_throughput [conv64|conv16]`

use std::time::Instant;

use jl1vae::datasets::ThreeDots;
use jl1vae::train::{ModelKind, TrainConfig, Trainer};

fn main() -> jl1vae::Result<()> {
    let arch = std::env::args().nth(1).unwrap_or_else(|| "conv64".into());
    let dots = match arch.as_str() {
        "conv16" => ThreeDots::new(16, 16, 1.0)?,
        _ => ThreeDots::default(),
    };
    let size = dots.size;
    for kind in [ModelKind::BetaVae, ModelKind::Jl1Vae, ModelKind::Jl2Vae] {
        let cfg = TrainConfig {
            total_batches: 1000,
            anneal_batches: 0,
            architecture: arch.clone(),
            dataset: jl1vae::train::DatasetSpec::ThreeDots(dots),
            ..TrainConfig::new(kind)
        };
        let mut t = Trainer::new(cfg, [1, size, size])?;
        t.train_step(&dots)?;
        let start = Instant::now();
        let steps = 5;
        for _ in 0..steps {
            t.train_step(&dots)?;
        }
        let per = start.elapsed().as_secs_f64() / steps as f64;
        println!("{arch} {}: {per:.4} s/step, 30k batches = {:.2} h", kind.name(), per * 30_000.0 / 3600.0);
    }
    Ok(())
}
