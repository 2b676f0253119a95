use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::attack::{attack_full, AttackResult};
use super::AttackError;
use crate::cipher::{MasterKey, State};
use crate::leakage::{attack_targets, simulate_campaign, LeakageConfig};

/// Success rate and correct-guess rank over repeated attacks on one key.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessReport {
    pub trials: usize,
    /// Fraction of trials recovering the full 128-bit key.
    pub full_key_success_rate: f64,
    /// Per attacked S-box (16 round-1 cells, then 16 round-2 cells).
    pub per_cell_success_rate: [f64; 32],
    /// Mean 1-based rank of the correct guess, per attacked S-box.
    pub mean_rank: [f64; 32],
}

impl SuccessReport {
    /// Mean rank averaged over all 32 S-boxes.
    pub fn mean_rank_overall(&self) -> f64 {
        self.mean_rank.iter().sum::<f64>() / 32.0
    }
}

pub fn success_metrics(
    experiments: &[AttackResult],
    true_key: &MasterKey,
) -> Result<SuccessReport, AttackError> {
    if experiments.is_empty() {
        return Err(AttackError::NoExperiments);
    }
    let (wk, rk0) = attack_targets(true_key);
    let correct = |index: usize| -> crate::cipher::Nibble {
        if index < 16 {
            wk.cell(index)
        } else {
            rk0.cell(index - 16)
        }
    };
    let n = experiments.len() as f64;
    let mut hits = [0usize; 32];
    let mut rank_sum = [0usize; 32];
    let mut full = 0usize;
    for e in experiments {
        if e.key() == *true_key {
            full += 1;
        }
        for (index, cell) in e.per_cell.iter().enumerate() {
            let truth = correct(index);
            hits[index] += usize::from(cell.recovered_nibble == truth);
            rank_sum[index] += cell.rank_of(truth);
        }
    }
    Ok(SuccessReport {
        trials: experiments.len(),
        full_key_success_rate: full as f64 / n,
        per_cell_success_rate: hits.map(|h| h as f64 / n),
        mean_rank: rank_sum.map(|r| r as f64 / n),
    })
}

/// One line of a success-rate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub num_traces: usize,
    pub trials: usize,
    pub success_rate: f64,
    pub mean_rank: f64,
}

impl SweepRow {
    /// Binomial standard error of the success rate.
    pub fn standard_error(&self) -> f64 {
        (self.success_rate * (1.0 - self.success_rate) / self.trials as f64).sqrt()
    }
}

/// Seed for trial `trial` at trace count `num_traces`, derived from the
/// base config seed.
pub fn trial_seed(base_seed: u64, num_traces: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(num_traces as u64);
    rng.set_word_pos(2 * trial as u128);
    rng.random()
}

/// For each trace count in `grid`, runs `trials` independently seeded
/// campaigns against `key` and attacks each one.
pub fn sweep(
    cfg: &LeakageConfig,
    key: &MasterKey,
    grid: &[usize],
    trials: usize,
    alpha0: &State,
) -> Result<Vec<SweepRow>, AttackError> {
    if trials == 0 {
        return Err(AttackError::NoTrials);
    }
    cfg.validate()?;
    grid.iter()
        .map(|&d| {
            let results = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let trial_cfg = LeakageConfig {
                        seed: trial_seed(cfg.seed, d, t),
                        ..*cfg
                    };
                    let ts = simulate_campaign(d, key, &trial_cfg)?;
                    attack_full(&ts, alpha0)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = success_metrics(&results, key)?;
            Ok(SweepRow {
                num_traces: d,
                trials,
                success_rate: report.full_key_success_rate,
                mean_rank: report.mean_rank_overall(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::{self, Nibble};
    use crate::cpa::attack::{CellResult, KeyCheck};

    fn cell(index: usize, ranking_head: u8) -> CellResult {
        let mut order: Vec<u8> = vec![ranking_head];
        order.extend((0..16).filter(|&g| g != ranking_head));
        let ranking: [Nibble; 16] = std::array::from_fn(|i| Nibble::new(order[i]).unwrap());
        CellResult {
            round: if index < 16 { 1 } else { 2 },
            cell: index % 16,
            recovered_nibble: ranking[0],
            peak_abs_correlation: 0.5,
            peak_sample: 0,
            ranking,
            scores: [0.0; 16],
            peak_samples: [0; 16],
            degenerate: false,
        }
    }

    /// A result whose cell `i` ranks `heads[i]` first.
    fn fixture(heads: [u8; 32], key: MasterKey) -> AttackResult {
        let per_cell = (0..32).map(|i| cell(i, heads[i])).collect();
        AttackResult {
            wk: State::ZERO,
            rk0: State::ZERO,
            k0: key.k0,
            k1: key.k1,
            per_cell,
            verification: KeyCheck::Match { trace_index: 0 },
            hypotheses_evaluated: [256, 256],
        }
    }

    #[test]
    fn hand_computed_ranks() {
        // Key with WK = 0 and RK0 = α0 ^ k0 = α0 (k0 = k1 = 0).
        let key = MasterKey::new(0, 0);
        let alpha = cipher::alpha0();
        let truth: [u8; 32] = std::array::from_fn(|i| {
            if i < 16 {
                0
            } else {
                alpha.cell(i - 16).value()
            }
        });

        // Trial A: all correct. Trial B: cell 0 ranks 3 first, so the true
        // nibble 0 sits at rank 2. Trial C: cell 0 ranks 15 first (truth
        // rank 2) and cell 1 ranks 1 first (truth 0 at rank 2).
        let a = fixture(truth, key);
        let mut heads = truth;
        heads[0] = 3;
        let b = fixture(heads, MasterKey::new(1, 0));
        let mut heads = truth;
        heads[0] = 15;
        heads[1] = 1;
        let c = fixture(heads, MasterKey::new(2, 0));

        let report = success_metrics(&[a, b, c], &key).unwrap();
        assert_eq!(report.trials, 3);
        assert!((report.full_key_success_rate - 1.0 / 3.0).abs() < 1e-15);
        assert!((report.mean_rank[0] - 5.0 / 3.0).abs() < 1e-15);
        assert!((report.mean_rank[1] - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.mean_rank[2], 1.0);
        assert!((report.per_cell_success_rate[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.per_cell_success_rate[31], 1.0);
        assert!((report.mean_rank_overall() - (32.0 + 1.0) / 32.0).abs() < 1e-15);
    }

    #[test]
    fn all_or_nothing_rates() {
        let key = MasterKey::new(0, 0);
        let good = fixture([0; 32], key);
        assert_eq!(
            success_metrics(&[good.clone(), good], &key)
                .unwrap()
                .full_key_success_rate,
            1.0
        );
        let bad = fixture([0; 32], MasterKey::new(5, 5));
        assert_eq!(
            success_metrics(&[bad], &key).unwrap().full_key_success_rate,
            0.0
        );
        assert_eq!(success_metrics(&[], &key), Err(AttackError::NoExperiments));
    }

    #[test]
    fn trial_seeds_differ() {
        let a = trial_seed(1, 100, 0);
        assert_eq!(a, trial_seed(1, 100, 0));
        assert_ne!(a, trial_seed(1, 100, 1));
        assert_ne!(a, trial_seed(1, 150, 0));
    }

    #[test]
    fn zero_trials_rejected() {
        let r = sweep(
            &LeakageConfig::default(),
            &MasterKey::default(),
            &[10],
            0,
            &cipher::alpha0(),
        );
        assert_eq!(r, Err(AttackError::NoTrials));
    }
}
