use std::io::{self, Write};

use super::pearson::{build_hypotheses_round1, build_hypotheses_round2, CenteredTraces};
use super::{AttackError, CorrelationMatrix, NUM_GUESSES};
use crate::cipher::{self, MasterKey, Nibble, State};
use crate::leakage::TraceSet;

/// Score gap at or below which the two best guesses count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Outcome of the attack on one S-box.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub round: u8,
    pub cell: usize,
    pub recovered_nibble: Nibble,
    pub peak_abs_correlation: f64,
    pub peak_sample: usize,
    /// Guesses by descending score, ties broken towards the smaller guess.
    pub ranking: [Nibble; NUM_GUESSES],
    /// `max_j |r[i][j]|` for every guess `i`.
    pub scores: [f64; NUM_GUESSES],
    /// Sample where each guess peaks.
    pub peak_samples: [usize; NUM_GUESSES],
    /// Zero-variance hypotheses, or no correlation anywhere.
    pub degenerate: bool,
}

impl CellResult {
    /// 1-based position of `guess` in the ranking.
    pub fn rank_of(&self, guess: Nibble) -> usize {
        self.ranking
            .iter()
            .position(|&g| g == guess)
            .expect("ranking is a permutation")
            + 1
    }

    /// Score difference between the winner and the runner-up.
    pub fn margin(&self) -> f64 {
        self.scores[self.ranking[0].value() as usize]
            - self.scores[self.ranking[1].value() as usize]
    }

    /// The runner-up scored the same as the winner (a ghost peak): the
    /// recovered nibble then only reflects the tie rule.
    pub fn is_ambiguous(&self) -> bool {
        self.margin() <= TIE_TOLERANCE
    }

    /// One row per guess: `guess,guess_hex,peak_abs_corr,peak_sample,rank`.
    pub fn write_guess_table<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "guess,guess_hex,peak_abs_corr,peak_sample,rank")?;
        for g in Nibble::all() {
            let i = g.value() as usize;
            writeln!(
                w,
                "{},{},{},{},{}",
                i,
                g,
                self.scores[i],
                self.peak_samples[i],
                self.rank_of(g)
            )?;
        }
        Ok(())
    }
}

/// Picks the guess whose correlation row reaches the largest absolute value.
pub fn recover_cell(r: &CorrelationMatrix) -> CellResult {
    let mut scores = [0.0; NUM_GUESSES];
    let mut peak_samples = [0usize; NUM_GUESSES];
    for i in 0..NUM_GUESSES {
        for (j, v) in r.row(i).iter().enumerate() {
            if v.abs() > scores[i] {
                scores[i] = v.abs();
                peak_samples[i] = j;
            }
        }
    }
    let mut order: [usize; NUM_GUESSES] = std::array::from_fn(|i| i);
    // Stable sort keeps ascending guess order among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let ranking = order.map(|i| Nibble::new(i as u8).expect("guess < 16"));
    let best = order[0];
    CellResult {
        round: r.target_round(),
        cell: r.target_cell(),
        recovered_nibble: ranking[0],
        peak_abs_correlation: scores[best],
        peak_sample: peak_samples[best],
        ranking,
        scores,
        peak_samples,
        degenerate: r.constant_guesses().iter().any(|&c| c) || scores[best] == 0.0,
    }
}

/// All sixteen cells of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundAttack {
    pub round: u8,
    pub cells: Vec<CellResult>,
    /// Recovered key material: `WK` for round 1, `RK0` for round 2.
    pub key: State,
    /// Number of (cell, guess) hypothesis columns evaluated.
    pub hypotheses_evaluated: usize,
}

impl RoundAttack {
    fn from_correlations(round: u8, rs: &[CorrelationMatrix]) -> RoundAttack {
        let cells: Vec<CellResult> = rs.iter().map(recover_cell).collect();
        let mut key = State::ZERO;
        for c in &cells {
            key.set_cell(c.cell, c.recovered_nibble);
        }
        RoundAttack {
            round,
            hypotheses_evaluated: rs.len() * NUM_GUESSES,
            cells,
            key,
        }
    }
}

fn check_traces(ts: &TraceSet) -> Result<(), AttackError> {
    if ts.num_traces() < 2 {
        Err(AttackError::TooFewTraces(ts.num_traces()))
    } else {
        Ok(())
    }
}

fn round1_with(centered: &CenteredTraces, ts: &TraceSet) -> Result<RoundAttack, AttackError> {
    let hs = (0..16)
        .map(|cell| build_hypotheses_round1(ts, cell))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RoundAttack::from_correlations(
        1,
        &centered.correlate_all(&hs)?,
    ))
}

fn round2_with(
    centered: &CenteredTraces,
    ts: &TraceSet,
    wk: &State,
) -> Result<RoundAttack, AttackError> {
    let hs = (0..16)
        .map(|cell| build_hypotheses_round2(ts, wk, cell))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RoundAttack::from_correlations(
        2,
        &centered.correlate_all(&hs)?,
    ))
}

/// Recovers the whitening key nibble by nibble from the first-round S-boxes.
pub fn attack_round1(ts: &TraceSet) -> Result<RoundAttack, AttackError> {
    check_traces(ts)?;
    round1_with(&CenteredTraces::new(ts), ts)
}

/// Recovers `RK0` from the second-round S-boxes, given the whitening key.
pub fn attack_round2(ts: &TraceSet, wk: &State) -> Result<RoundAttack, AttackError> {
    check_traces(ts)?;
    round2_with(&CenteredTraces::new(ts), ts, wk)
}

/// Result of re-encrypting a recorded plaintext under the recovered key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeyCheck {
    Match {
        trace_index: usize,
    },
    Mismatch {
        trace_index: usize,
        recorded: u64,
        computed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub wk: State,
    pub rk0: State,
    pub k0: u64,
    pub k1: u64,
    /// Sixteen round-1 cells followed by sixteen round-2 cells.
    pub per_cell: Vec<CellResult>,
    pub verification: KeyCheck,
    /// Hypothesis columns evaluated by stage one and stage two.
    pub hypotheses_evaluated: [usize; 2],
}

impl AttackResult {
    pub fn key(&self) -> MasterKey {
        MasterKey::new(self.k0, self.k1)
    }

    pub fn verified(&self) -> bool {
        matches!(self.verification, KeyCheck::Match { .. })
    }

    pub fn round_cells(&self, round: u8) -> &[CellResult] {
        match round {
            1 => &self.per_cell[..16],
            _ => &self.per_cell[16..],
        }
    }

    /// Cells whose top two guesses tied.
    pub fn ambiguous_cells(&self) -> impl Iterator<Item = &CellResult> {
        self.per_cell.iter().filter(|c| c.is_ambiguous())
    }

    /// Some cell was degenerate or tied, so the result rests on the tie rule.
    pub fn low_confidence(&self) -> bool {
        self.per_cell
            .iter()
            .any(|c| c.degenerate || c.is_ambiguous())
    }

    /// One row per attacked S-box.
    pub fn write_report_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "round,cell,recovered,recovered_hex,peak_abs_corr,peak_sample,margin,degenerate"
        )?;
        for c in &self.per_cell {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                c.round,
                c.cell,
                c.recovered_nibble.value(),
                c.recovered_nibble,
                c.peak_abs_correlation,
                c.peak_sample,
                c.margin(),
                c.degenerate
            )?;
        }
        Ok(())
    }
}

fn assemble(
    ts: &TraceSet,
    stage1: RoundAttack,
    stage2: RoundAttack,
    alpha0: &State,
) -> AttackResult {
    let k0 = (stage2.key ^ *alpha0).to_block();
    let k1 = stage1.key.to_block() ^ k0;
    let trace = &ts.traces()[0];
    let computed = cipher::encrypt(trace.plaintext, &MasterKey::new(k0, k1));
    let verification = if computed == trace.ciphertext {
        KeyCheck::Match { trace_index: 0 }
    } else {
        KeyCheck::Mismatch {
            trace_index: 0,
            recorded: trace.ciphertext,
            computed,
        }
    };
    AttackResult {
        wk: stage1.key,
        rk0: stage2.key,
        k0,
        k1,
        hypotheses_evaluated: [stage1.hypotheses_evaluated, stage2.hypotheses_evaluated],
        per_cell: stage1.cells.into_iter().chain(stage2.cells).collect(),
        verification,
    }
}

/// Full master-key recovery: round 1 gives `WK`, round 2 gives `RK0`, and
/// `alpha0` converts `RK0` into `k0`. The recovered key is checked against
/// the first trace's ciphertext; a mismatch is reported, not returned as
/// an error.
pub fn attack_full(ts: &TraceSet, alpha0: &State) -> Result<AttackResult, AttackError> {
    check_traces(ts)?;
    let centered = CenteredTraces::new(ts);
    let stage1 = round1_with(&centered, ts)?;
    let stage2 = round2_with(&centered, ts, &stage1.key)?;
    Ok(assemble(ts, stage1, stage2, alpha0))
}

/// Runs stage two on top of an existing (possibly externally supplied)
/// stage-one result.
pub fn attack_second_stage(
    ts: &TraceSet,
    stage1: RoundAttack,
    alpha0: &State,
) -> Result<AttackResult, AttackError> {
    let stage2 = attack_round2(ts, &stage1.key)?;
    Ok(assemble(ts, stage1, stage2, alpha0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::{simulate_campaign, LeakageConfig, Trace};

    fn single_peak(guess: usize, sample: usize) -> CorrelationMatrix {
        let t = 8;
        let mut values = vec![0.0; NUM_GUESSES * t];
        values[guess * t + sample] = -0.3;
        CorrelationMatrix::from_values(values, t, 4, 1)
    }

    #[test]
    fn unique_maximum_wins() {
        let c = recover_cell(&single_peak(5, 3));
        assert_eq!(c.recovered_nibble.value(), 5);
        assert_eq!(c.peak_sample, 3);
        assert_eq!(c.peak_abs_correlation, 0.3);
        assert_eq!(c.rank_of(Nibble::new(5).unwrap()), 1);
        assert_eq!(c.ranking[1].value(), 0);
        assert!(!c.is_ambiguous());
    }

    #[test]
    fn all_zero_ties_to_guess_zero() {
        let r = CorrelationMatrix::from_values(vec![0.0; NUM_GUESSES * 4], 4, 0, 1);
        let c = recover_cell(&r);
        assert_eq!(c.recovered_nibble, Nibble::ZERO);
        let expected: Vec<u8> = (0..16).collect();
        assert_eq!(c.ranking.map(Nibble::value).to_vec(), expected);
        assert!(c.degenerate);
        assert!(c.is_ambiguous());
    }

    #[test]
    fn degenerate_equal_plaintexts_complete_flagged() {
        let t = Trace {
            plaintext: 0x1234,
            ciphertext: 0,
            samples: vec![1.0, 2.0, 3.0],
        };
        let mut t2 = t.clone();
        t2.samples = vec![2.0, 1.0, 0.0];
        let ts = TraceSet::new(vec![t, t2], None, None).unwrap();
        let stage1 = attack_round1(&ts).unwrap();
        assert!(stage1.cells.iter().all(|c| c.degenerate));
        assert_eq!(stage1.key, State::ZERO);
        let full = attack_full(&ts, &cipher::alpha0()).unwrap();
        assert!(full.low_confidence());
        assert!(!full.verified());
    }

    #[test]
    fn noiseless_round1_recovers_whitening_key() {
        let key = MasterKey::new(0xA1B2_C3D4_E5F6_0718, 0x2939_4A5B_6C7D_8E9F);
        let ts = simulate_campaign(32, &key, &LeakageConfig::noiseless()).unwrap();
        let stage1 = attack_round1(&ts).unwrap();
        assert_eq!(stage1.key, key.whitening_key());
        assert_eq!(stage1.hypotheses_evaluated, 256);
        for c in &stage1.cells {
            assert_eq!(c.rank_of(key.whitening_key().cell(c.cell)), 1);
        }
    }

    #[test]
    fn tampered_whitening_key_fails_verification() {
        let key = MasterKey::new(0x0011_2233_4455_6677, 0x8899_AABB_CCDD_EEFF);
        let ts = simulate_campaign(32, &key, &LeakageConfig::noiseless()).unwrap();
        let mut stage1 = attack_round1(&ts).unwrap();
        let mut wk = stage1.key;
        wk.set_cell(6, wk.cell(6) ^ Nibble::new(0x9).unwrap());
        stage1.key = wk;
        let result = attack_second_stage(&ts, stage1, &cipher::alpha0()).unwrap();
        assert!(!result.verified());
        assert!(matches!(
            result.verification,
            KeyCheck::Mismatch { trace_index: 0, .. }
        ));
    }

    #[test]
    fn too_few_traces() {
        let key = MasterKey::default();
        let ts = simulate_campaign(1, &key, &LeakageConfig::noiseless()).unwrap();
        assert_eq!(attack_round1(&ts), Err(AttackError::TooFewTraces(1)));
        assert_eq!(
            attack_full(&ts, &cipher::alpha0()),
            Err(AttackError::TooFewTraces(1))
        );
    }

    #[test]
    fn report_csv_has_32_rows() {
        let key = MasterKey::new(1, 2);
        let ts = simulate_campaign(32, &key, &LeakageConfig::noiseless()).unwrap();
        let result = attack_full(&ts, &cipher::alpha0()).unwrap();
        let mut out = Vec::new();
        result.write_report_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 33);
        let mut out = Vec::new();
        result.per_cell[0].write_guess_table(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 17);
    }
}
