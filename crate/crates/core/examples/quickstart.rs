//! Trains a small network on a coarse grid and prints the summary metrics.
//!
//! `cargo run --release -p adpinn --example quickstart [iterations]`

use adpinn::config::{OptimizerSettings, SamplingCounts, ScenarioConfig};
use adpinn::domain::GridSpec;
use adpinn::experiment::{run_scenario, RunOptions};
use adpinn::network::NetworkConfig;

fn main() -> adpinn::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(500);
    let cfg = ScenarioConfig {
        grid: GridSpec { nx: 26, ny: 26, nt: 25 },
        network: NetworkConfig::new(4, 32),
        sampling: SamplingCounts { ic_batch: 256, ..Default::default() },
        optimizer: OptimizerSettings { iterations, ..Default::default() },
        ..Default::default()
    };

    let mut progress = |i: usize, loss: f64| {
        if i.is_multiple_of(100) {
            println!("iter {i:>5}  loss {loss:.5e}");
        }
    };
    let r = run_scenario(&cfg, RunOptions { progress: Some(&mut progress), ..Default::default() })?;
    println!("{}", r.name);
    println!("final_loss={:.5e} rel_l2={:.5} ic_mse={:.3e}", r.final_loss, r.rel_l2_error, r.ic_mse);
    println!("train_s={:.2} fdm_s={:.4} infer_s={:.4}", r.train_time, r.fdm_time, r.inference_time);
    Ok(())
}
