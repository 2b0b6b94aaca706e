//! Runs one seed of the desk-scale experiment and prints its summary.
//!
//! ```text
//! cargo run --release --example desk_experiment -- [SEED] [BASE_WIDTH] [EPOCHS] [LR0]
//! ```

use std::time::Instant;
use uncertseg::experiment::{run_experiment, ExperimentConfig};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let seed: u64 = arg(0).map_or(1, |s| s.parse().expect("SEED"));
    let mut cfg = ExperimentConfig::desk(seed);
    if let Some(v) = arg(1) {
        cfg.train.base_width = v.parse().expect("BASE_WIDTH");
    }
    if let Some(v) = arg(2) {
        cfg.train.max_epochs = v.parse().expect("EPOCHS");
    }
    if let Some(v) = arg(3) {
        cfg.train.lr0 = v.parse().expect("LR0");
    }
    let start = Instant::now();
    let r = run_experiment(&cfg, |s| eprintln!("[{:>5.0}s] {s}", start.elapsed().as_secs_f64()))
        .unwrap_or_else(|e| {
            eprintln!("error: {e}");
            std::process::exit(1)
        });
    println!("seed {seed}: {:.0}s", start.elapsed().as_secs_f64());
    for (name, rep) in [("u2net T=10", &r.u2net), ("unet", &r.unet)] {
        println!(
            "{name:<11} dice {:.4} ± {:.4}  auc {:.4}  disruption auc {}",
            rep.dice_mean,
            rep.dice_std,
            rep.photoreceptor_auc,
            rep.disruption_auc.map_or("NA".into(), |v| format!("{v:.4}"))
        );
    }
    if let Some(f) = r.u2net.fit {
        println!(
            "dice vs mean uncertainty: slope {:.3} intercept {:.4} r2 {:.4}",
            f.slope, f.intercept, f.r_squared
        );
    }
    println!("boundary/interior std: u2net {:?} unet {:?}", r.u2net_boundary, r.unet_boundary);
    for row in &r.sweep {
        println!(
            "T={:<3} auc {:.5} disruption auc {}",
            row.samples,
            row.photoreceptor_auc,
            row.disruption_auc.map_or("NA".into(), |v| format!("{v:.4}"))
        );
    }
    for (id, (d, u)) in r.u2net.volume_ids.iter().zip(r.u2net.dice.iter().zip(&r.u2net.mean_uncertainty)) {
        println!("{id} dice {d:.4} mean_u {u:.5}");
    }
}
