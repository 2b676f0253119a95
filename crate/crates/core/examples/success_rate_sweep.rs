// Full-key success rate and mean correct-guess rank against the number of
// traces, at a noise level where the transition is visible.
//
// ```text
// cargo run -p midori-cpa --example success_rate_sweep
// ```

use anyhow::Result;
use midori_cpa::cipher::{self, MasterKey};
use midori_cpa::cpa;
use midori_cpa::leakage::LeakageConfig;

pub fn run_example() -> Result<()> {
    let key = MasterKey::from_hex("0F1E2D3C4B5A69788796A5B4C3D2E1F0")?;
    let cfg = LeakageConfig {
        noise_sigma: 1.5,
        seed: 3,
        ..Default::default()
    };
    println!("num_traces  success  mean_rank");
    for row in cpa::sweep(&cfg, &key, &[50, 150, 300], 5, &cipher::alpha0())? {
        println!(
            "{:>10}  {:>7.2}  {:>9.3}",
            row.num_traces, row.success_rate, row.mean_rank
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
