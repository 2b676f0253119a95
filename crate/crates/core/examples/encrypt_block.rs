// Encrypts the published Midori64 test vectors and prints the key schedule.
//
// ```text
// cargo run -p midori-cpa --example encrypt_block
// ```

use anyhow::{ensure, Result};
use midori_cpa::cipher::{self, block_to_hex, parse_block_hex, MasterKey};

pub fn run_example() -> Result<()> {
    let vectors = [
        (
            "00000000000000000000000000000000",
            "0000000000000000",
            "3C9CCEDA2BBD449A",
        ),
        (
            "687DED3B3C85B3F35B1009863E2A8CBF",
            "42C20FD3B586879E",
            "66BCDC6270D901CD",
        ),
    ];
    for (key, pt, ct) in vectors {
        let key = MasterKey::from_hex(key)?;
        let pt = parse_block_hex(pt)?;
        let got = cipher::encrypt(pt, &key);
        println!(
            "key {key}  pt {}  ->  ct {}",
            block_to_hex(pt),
            block_to_hex(got)
        );
        ensure!(block_to_hex(got) == ct, "expected {ct}");
        ensure!(
            cipher::decrypt(got, &key) == pt,
            "decryption does not invert"
        );
    }

    let key = MasterKey::from_hex("687DED3B3C85B3F35B1009863E2A8CBF")?;
    let ks = cipher::key_schedule(&key);
    println!("WK   {}", ks.wk);
    for (r, rk) in ks.round_keys.iter().enumerate() {
        println!("RK{r:<2} {rk}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
