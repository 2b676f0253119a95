// Writes a simulated campaign as a CSV trace file plus manifest, then loads
// it back and attacks the loaded copy.
//
// ```text
// cargo run -p midori-cpa --example trace_file_roundtrip
// ```

use anyhow::{ensure, Result};
use midori_cpa::cipher::{self, MasterKey};
use midori_cpa::cpa;
use midori_cpa::leakage::{simulate_campaign, LeakageConfig};
use midori_cpa::trace_io::{self, CampaignConfig, CampaignManifest};

pub fn run_example() -> Result<()> {
    let dir = tempfile::tempdir()?;
    let key = MasterKey::from_hex("00112233445566778899AABBCCDDEEFF")?;
    let config = CampaignConfig {
        leakage: LeakageConfig {
            noise_sigma: 0.5,
            samples_per_trace: 64,
            poi_offset: 1,
            poi_stride: 2,
            seed: 99,
            ..Default::default()
        },
        num_traces: 100,
    };
    let ts = simulate_campaign(config.num_traces, &key, &config.leakage)?;

    let trace_path = dir.path().join("campaign.csv");
    trace_io::write_traceset(&ts, &trace_path, "example campaign")?;
    let manifest_path = trace_io::manifest_path_for(&trace_path);
    trace_io::write_manifest(
        &CampaignManifest {
            config,
            trace_file: "campaign.csv".into(),
            true_key: Some(key),
        },
        &manifest_path,
    )?;
    println!("{}", std::fs::read_to_string(&manifest_path)?);

    let loaded = trace_io::load_campaign(&manifest_path)?;
    ensure!(
        loaded.traces() == ts.traces(),
        "round trip changed the traces"
    );
    let result = cpa::attack_full(&loaded, &cipher::alpha0())?;
    println!("recovered {} from the file (true {key})", result.key());
    ensure!(result.key() == key);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
