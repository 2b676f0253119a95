// Simulates a small campaign and shows where the leakage sits in a trace.
//
// ```text
// cargo run -p midori-cpa --example simulate_traces
// ```

use anyhow::{ensure, Result};
use midori_cpa::cipher::{self, MasterKey, ProbePoint};
use midori_cpa::leakage::{leak_value, simulate_campaign, LeakageConfig};

pub fn run_example() -> Result<()> {
    let key = MasterKey::from_hex("000102030405060708090A0B0C0D0E0F")?;

    let noiseless = LeakageConfig::noiseless();
    let ts = simulate_campaign(4, &key, &noiseless)?;
    let first = &ts.traces()[0];
    println!(
        "plaintext {:016X}, ciphertext {:016X}",
        first.plaintext, first.ciphertext
    );
    for cell in 0..4 {
        let probe = ProbePoint::new(1, cell).expect("valid probe");
        let v = cipher::intermediate(first.plaintext, &key, probe);
        let j = noiseless.poi_for(1, cell);
        println!(
            "round 1 cell {cell}: S-box out {v}  HW {}  sample[{j}] = {}",
            leak_value(v),
            first.samples[j]
        );
        ensure!(first.samples[j] == leak_value(v));
    }

    // One acquisition at SNR 1 against the oscilloscope's 256-fold average.
    for repeats in [1, 256] {
        let cfg = LeakageConfig {
            noise_sigma: 1.0,
            repeats,
            seed: 7,
            ..Default::default()
        };
        let ts = simulate_campaign(200, &key, &cfg)?;
        // Sample 0 carries no leakage, only noise.
        let xs: Vec<f64> = ts.traces().iter().map(|t| t.samples[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        println!(
            "repeats {repeats:>3}: noise std {:.4} (expected {:.4})",
            var.sqrt(),
            cfg.effective_noise_sigma()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
