//! The `midori-cpa` command line.
//!
//! Exit codes: 0 when the command completed (an attack that recovers the
//! wrong key still completed), 2 for usage errors, 1 for runtime and I/O
//! errors.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use crate::cipher::{self, block_to_hex, parse_block_hex, MasterKey, State};
use crate::cpa::{self, AttackError, CellResult};
use crate::leakage::simulate_campaign;
use crate::trace_io::{self, CampaignManifest};

#[derive(Debug, Parser)]
#[command(
    name = "midori-cpa",
    version,
    about = "Midori64 encryption, power-trace simulation and correlation power analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlphaTable {
    /// The Midori64 round constant α0.
    Builtin,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encrypt one block.
    Encrypt {
        #[arg(long, value_parser = parse_key)]
        key: MasterKey,
        #[arg(long, value_parser = parse_block)]
        pt: u64,
    },
    /// Decrypt one block.
    Decrypt {
        #[arg(long, value_parser = parse_key)]
        key: MasterKey,
        #[arg(long, value_parser = parse_block)]
        ct: u64,
    },
    /// Print the whitening key and the fifteen round keys.
    Keysched {
        #[arg(long, value_parser = parse_key)]
        key: MasterKey,
    },
    /// Simulate a trace campaign; writes the trace file and a manifest next to it.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_key)]
        key: MasterKey,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover the master key from a trace file.
    Attack {
        #[arg(long)]
        traces: PathBuf,
        /// α0 to remove from the recovered RK0.
        #[arg(long, value_parser = parse_block, conflicts_with = "alpha_table")]
        alpha0: Option<u64>,
        #[arg(long, value_enum)]
        alpha_table: Option<AlphaTable>,
        /// Manifest with the true key; defaults to the one next to the trace file.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write the per-cell report as CSV.
        #[arg(long)]
        report_csv: Option<PathBuf>,
    },
    /// Success rate and mean rank against the number of traces.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = parse_key)]
        key: MasterKey,
        /// Comma-separated trace counts, each >= 2.
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_grid_point)]
        d_grid: Vec<usize>,
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        trials: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_block)]
        alpha0: Option<u64>,
    },
    /// Peak |correlation| per key guess for one S-box.
    ExportCorr {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..16))]
        cell: u8,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        round: u8,
        #[arg(long)]
        out: PathBuf,
        /// Whitening key for round 2; recovered from the traces when omitted.
        #[arg(long, value_parser = parse_block)]
        wk: Option<u64>,
        /// Also write the full 16 x T correlation matrix.
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
}

fn parse_key(s: &str) -> Result<MasterKey, String> {
    MasterKey::from_hex(s).map_err(|e| format!("key must be 32 hex digits: {e}"))
}

fn parse_block(s: &str) -> Result<u64, String> {
    parse_block_hex(s).map_err(|e| format!("block must be 16 hex digits: {e}"))
}

fn parse_grid_point(s: &str) -> Result<usize, String> {
    match s.trim().parse::<usize>() {
        Ok(d) if d >= 2 => Ok(d),
        _ => Err(format!("{s:?} is not a trace count >= 2")),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return e.exit_code();
        }
    };
    match execute(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

pub fn execute(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Encrypt { key, pt } => {
            writeln!(out, "{}", block_to_hex(cipher::encrypt(pt, &key)))?;
        }
        Command::Decrypt { key, ct } => {
            writeln!(out, "{}", block_to_hex(cipher::decrypt(ct, &key)))?;
        }
        Command::Keysched { key } => keysched(&key, out)?,
        Command::Simulate {
            config,
            key,
            out: path,
        } => simulate(&config, &key, &path, out)?,
        Command::Attack {
            traces,
            alpha0,
            alpha_table: _,
            manifest,
            report_csv,
        } => {
            let alpha0 = alpha0.map_or_else(cipher::alpha0, State::from_block);
            attack(
                &traces,
                &alpha0,
                manifest.as_deref(),
                report_csv.as_deref(),
                out,
            )?;
        }
        Command::Sweep {
            config,
            key,
            d_grid,
            trials,
            out: path,
            alpha0,
        } => {
            let alpha0 = alpha0.map_or_else(cipher::alpha0, State::from_block);
            sweep(&config, &key, &d_grid, trials as usize, &alpha0, &path, out)?;
        }
        Command::ExportCorr {
            traces,
            cell,
            round,
            out: path,
            wk,
            matrix,
        } => export_corr(
            &traces,
            cell as usize,
            round,
            wk.map(State::from_block),
            &path,
            matrix.as_deref(),
            out,
        )?,
    }
    Ok(())
}

fn keysched(key: &MasterKey, out: &mut dyn Write) -> Result<()> {
    let ks = cipher::key_schedule(key);
    writeln!(out, "WK   {}", ks.wk)?;
    for (r, (rk, alpha)) in ks.round_keys.iter().zip(&ks.alphas).enumerate() {
        writeln!(out, "RK{r:<2} {rk}  alpha{r:<2} {alpha}")?;
    }
    Ok(())
}

fn simulate(config: &Path, key: &MasterKey, path: &Path, out: &mut dyn Write) -> Result<()> {
    let cfg = trace_io::load_config(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    let ts = simulate_campaign(cfg.num_traces, key, &cfg.leakage)?;
    let l = &cfg.leakage;
    let note = format!(
        "simulated noise_sigma={} repeats={} baseline={} seed={}",
        l.noise_sigma, l.repeats, l.baseline, l.seed
    );
    trace_io::write_traceset(&ts, path, &note)?;
    let manifest_path = trace_io::manifest_path_for(path);
    let manifest = CampaignManifest {
        config: cfg,
        trace_file: path
            .file_name()
            .map(PathBuf::from)
            .unwrap_or_else(|| path.to_path_buf()),
        true_key: Some(*key),
    };
    trace_io::write_manifest(&manifest, &manifest_path)?;
    writeln!(
        out,
        "wrote {} traces x {} samples to {}",
        ts.num_traces(),
        ts.samples_per_trace(),
        path.display()
    )?;
    writeln!(out, "manifest: {}", manifest_path.display())?;
    Ok(())
}

fn load_true_key(traces: &Path, manifest: Option<&Path>) -> Result<Option<MasterKey>> {
    let path = match manifest {
        Some(p) => p.to_path_buf(),
        None => {
            let p = trace_io::manifest_path_for(traces);
            if !p.exists() {
                return Ok(None);
            }
            p
        }
    };
    let m = trace_io::read_manifest(&path)
        .with_context(|| format!("reading manifest {}", path.display()))?;
    Ok(m.true_key)
}

fn too_few_traces_context(e: AttackError) -> anyhow::Error {
    match e {
        AttackError::TooFewTraces(d) => anyhow::anyhow!(
            "the trace file holds {d} trace(s); Pearson correlation needs D >= 2 traces"
        ),
        other => other.into(),
    }
}

fn nibble_label(c: &CellResult) -> String {
    format!(
        "{:>2} (0x{})",
        c.recovered_nibble.value(),
        c.recovered_nibble
    )
}

fn attack(
    traces: &Path,
    alpha0: &State,
    manifest: Option<&Path>,
    report_csv: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let ts = trace_io::read_traceset(traces)?;
    let true_key = load_true_key(traces, manifest)?;
    let result = cpa::attack_full(&ts, alpha0).map_err(too_few_traces_context)?;

    writeln!(
        out,
        "traces: {} x {} samples ({})",
        ts.num_traces(),
        ts.samples_per_trace(),
        traces.display()
    )?;
    writeln!(out, "alpha0: {alpha0}")?;
    writeln!(out, "WK:  {}", result.wk)?;
    writeln!(out, "RK0: {}", result.rk0)?;
    writeln!(out, "k0:  {}", block_to_hex(result.k0))?;
    writeln!(out, "k1:  {}", block_to_hex(result.k1))?;
    writeln!(out, "key: {}", result.key())?;
    match result.verification {
        cpa::KeyCheck::Match { trace_index } => {
            writeln!(out, "check: ciphertext of trace {trace_index} reproduced")?
        }
        cpa::KeyCheck::Mismatch {
            trace_index,
            recorded,
            computed,
        } => writeln!(
            out,
            "check: MISMATCH on trace {trace_index}: recorded {}, recovered key gives {}",
            block_to_hex(recorded),
            block_to_hex(computed)
        )?,
    }
    if result.low_confidence() {
        writeln!(out, "warning: low confidence (degenerate or tied cells)")?;
    }

    let truth = true_key.map(|k| crate::leakage::attack_targets(&k));
    writeln!(
        out,
        "round cell  recovered  peak|r|   sample  margin    true-rank"
    )?;
    for c in &result.per_cell {
        let rank = truth.map_or_else(
            || "-".to_string(),
            |(wk, rk0)| {
                let t = if c.round == 1 {
                    wk.cell(c.cell)
                } else {
                    rk0.cell(c.cell)
                };
                c.rank_of(t).to_string()
            },
        );
        writeln!(
            out,
            "{:>5} {:>4}  {}  {:.6}  {:>6}  {:.6}  {}",
            c.round,
            c.cell,
            nibble_label(c),
            c.peak_abs_correlation,
            c.peak_sample,
            c.margin(),
            rank
        )?;
    }
    if let Some(key) = true_key {
        writeln!(out, "true key: {key}")?;
        let verdict = if result.key() == key {
            "SUCCESS"
        } else {
            "FAILURE"
        };
        writeln!(out, "verdict: {verdict}")?;
    }
    if let Some(path) = report_csv {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(f);
        result.write_report_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn sweep(
    config: &Path,
    key: &MasterKey,
    grid: &[usize],
    trials: usize,
    alpha0: &State,
    path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let cfg = trace_io::load_config(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    let rows = cpa::sweep(&cfg.leakage, key, grid, trials, alpha0)?;
    let mut csv = String::from("num_traces,success_rate,mean_rank\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{}\n",
            r.num_traces, r.success_rate, r.mean_rank
        ));
    }
    std::fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
    out.write_all(csv.as_bytes())?;
    Ok(())
}

fn export_corr(
    traces: &Path,
    cell: usize,
    round: u8,
    wk: Option<State>,
    path: &Path,
    matrix: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let ts = trace_io::read_traceset(traces)?;
    if ts.num_traces() < 2 {
        return Err(too_few_traces_context(AttackError::TooFewTraces(
            ts.num_traces(),
        )));
    }
    let h = match round {
        1 => cpa::build_hypotheses_round1(&ts, cell)?,
        2 => {
            let wk = match wk {
                Some(wk) => wk,
                None => cpa::attack_round1(&ts)?.key,
            };
            cpa::build_hypotheses_round2(&ts, &wk, cell)?
        }
        r => bail!(AttackError::InvalidRound(r)),
    };
    let r = cpa::pearson(&h, &ts)?;
    let result = cpa::recover_cell(&r);

    let mut table = Vec::new();
    result.write_guess_table(&mut table)?;
    std::fs::write(path, &table).with_context(|| format!("writing {}", path.display()))?;
    if let Some(mpath) = matrix {
        let f = File::create(mpath).with_context(|| format!("creating {}", mpath.display()))?;
        let mut w = BufWriter::new(f);
        r.write_csv(&mut w)?;
        w.flush()?;
    }
    writeln!(
        out,
        "round {round} cell {cell}: best guess {} with peak |r| = {:.6} at sample {}",
        nibble_label(&result),
        result.peak_abs_correlation,
        result.peak_sample
    )?;
    if result.is_ambiguous() {
        writeln!(out, "warning: best guess tied with the runner-up")?;
    }
    Ok(())
}
