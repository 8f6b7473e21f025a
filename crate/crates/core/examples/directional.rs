//! Weak-only versus WarpDDF+RegCut mean test Dice on the standard phantom.
//!
//! Usage: `cargo run --release -p swreg-core --example directional -- [epochs] [warmup] [alpha] [lr] [seeds]`

use std::time::Instant;

use swreg_core::evaluate::evaluate_pairs;
use swreg_core::model::AdamConfig;
use swreg_core::phantom::generate_dataset;
use swreg_core::train::{make_split, train};
use swreg_core::{Dims, ModelParams, PhantomConfig, Subject, TrainConfig, TrainMode};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).map_or(default, |s| {
        s.parse()
            .unwrap_or_else(|_| panic!("cannot parse argument {i}: {s}"))
    })
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let defaults = TrainConfig::default();
    let epochs = arg(&args, 1, defaults.epochs);
    let warmup = arg(&args, 2, defaults.warmup_epochs);
    let alpha = arg(&args, 3, 0.1);
    let lr = arg(&args, 4, defaults.adam.lr);
    let seeds: u64 = arg(&args, 5, 5);

    let dims = Dims::new(32, 32, 16);
    let phantom = PhantomConfig::standard(dims);
    for seed in 0..seeds {
        let ds = generate_dataset(&phantom, 54, 100 + seed, 40.0 / 54.0).expect("dataset");
        let train_subjects: Vec<Subject> =
            ds.train.iter().map(|&i| ds.subjects[i].clone()).collect();
        let split = make_split(&train_subjects, 0.1, seed).expect("split");
        let identity = ModelParams::init(defaults.arch(dims).expect("arch"), 0).expect("init");
        let base = evaluate_pairs(&identity, &ds.subjects, &ds.test_pairs()).expect("evaluate");
        let mut line = format!("seed {seed}: identity {:.3}", base.mean_dice());
        for mode in [TrainMode::WeakOnly, TrainMode::WarpDdfRegCut] {
            let started = Instant::now();
            let cfg = TrainConfig {
                epochs,
                warmup_epochs: warmup,
                alpha,
                mode,
                seed,
                adam: AdamConfig {
                    lr,
                    ..defaults.adam
                },
                ..defaults.clone()
            };
            let out = train(&cfg, &split).expect("train");
            let report =
                evaluate_pairs(&out.student, &ds.subjects, &ds.test_pairs()).expect("evaluate");
            line += &format!(
                ", {} {:.3} ({:.0}s)",
                mode.name(),
                report.mean_dice(),
                started.elapsed().as_secs_f64()
            );
        }
        println!("{line}");
    }
}
