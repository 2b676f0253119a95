// Two-stage attack on 300 noisy traces: round 1 gives WK, round 2 gives
// RK0, and the round constant turns RK0 into k0.
//
// ```text
// cargo run -p midori-cpa --example full_key_recovery
// ```

use anyhow::{ensure, Result};
use midori_cpa::cipher::{self, block_to_hex, MasterKey};
use midori_cpa::cpa;
use midori_cpa::leakage::{simulate_campaign, LeakageConfig};

pub fn run_example() -> Result<()> {
    let key = MasterKey::from_hex("687DED3B3C85B3F35B1009863E2A8CBF")?;
    let cfg = LeakageConfig {
        noise_sigma: 1.0,
        seed: 2024,
        ..Default::default()
    };
    let ts = simulate_campaign(300, &key, &cfg)?;
    let result = cpa::attack_full(&ts, &cipher::alpha0())?;

    println!("WK  {}", result.wk);
    println!("RK0 {}", result.rk0);
    println!("k0  {}", block_to_hex(result.k0));
    println!("k1  {}", block_to_hex(result.k1));
    println!("recovered {}  (true {key})", result.key());
    println!("ciphertext check passed: {}", result.verified());
    let weakest = result
        .per_cell
        .iter()
        .min_by(|a, b| a.margin().total_cmp(&b.margin()))
        .expect("32 cells");
    println!(
        "smallest margin: round {} cell {} ({:.4})",
        weakest.round,
        weakest.cell,
        weakest.margin()
    );
    ensure!(result.key() == key, "key not recovered");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
