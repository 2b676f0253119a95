//! Hypothesis matrices and the Pearson correlation kernel.
//!
//! Correlation uses the two-pass form: column means first, then sums of
//! centred products. Traces are centred once ([`CenteredTraces`]) and reused
//! for every cell and both attack stages. The covariance kernel walks traces
//! in order and splits only the sample axis across threads, so each output
//! entry is accumulated in the same order whatever the thread count and the
//! results are bit-identical.

use std::io::{self, Write};

use rayon::prelude::*;

use super::{AttackError, NUM_GUESSES};
use crate::cipher::{self, Nibble, State};
use crate::leakage::TraceSet;

/// Predicted leakage `h[d][i]` of trace `d` under key guess `i`, stored
/// row-major (`D x 16`).
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisMatrix {
    values: Vec<f64>,
    num_traces: usize,
    target_cell: usize,
    target_round: u8,
}

impl HypothesisMatrix {
    /// A matrix from caller-supplied predictions, one row of 16 per trace.
    /// Useful for leakage models other than the Hamming weight.
    pub fn from_rows(
        rows: &[[f64; NUM_GUESSES]],
        cell: usize,
        round: u8,
    ) -> Result<HypothesisMatrix, AttackError> {
        check_cell(cell)?;
        if !(1..=2).contains(&round) {
            return Err(AttackError::InvalidRound(round));
        }
        Ok(HypothesisMatrix {
            values: rows.iter().flatten().copied().collect(),
            num_traces: rows.len(),
            target_cell: cell,
            target_round: round,
        })
    }

    pub fn num_traces(&self) -> usize {
        self.num_traces
    }

    pub fn target_cell(&self) -> usize {
        self.target_cell
    }

    pub fn target_round(&self) -> u8 {
        self.target_round
    }

    pub fn get(&self, trace: usize, guess: usize) -> f64 {
        self.values[trace * NUM_GUESSES + guess]
    }

    /// The 16 predictions for one trace.
    pub fn row(&self, trace: usize) -> &[f64] {
        &self.values[trace * NUM_GUESSES..(trace + 1) * NUM_GUESSES]
    }

    pub fn column(&self, guess: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(guess).step_by(NUM_GUESSES).copied()
    }

    fn from_targets(targets: impl Iterator<Item = Nibble>, cell: usize, round: u8) -> Self {
        let mut values = Vec::new();
        for x in targets {
            values.extend(Nibble::all().map(|g| f64::from(cipher::sbox(x ^ g).hamming_weight())));
        }
        HypothesisMatrix {
            num_traces: values.len() / NUM_GUESSES,
            values,
            target_cell: cell,
            target_round: round,
        }
    }
}

fn check_cell(cell: usize) -> Result<(), AttackError> {
    if cell < 16 {
        Ok(())
    } else {
        Err(AttackError::InvalidCell(cell))
    }
}

/// `h[d][i] = HW(S(p_d[cell] ^ i))`.
pub fn build_hypotheses_round1(
    ts: &TraceSet,
    cell: usize,
) -> Result<HypothesisMatrix, AttackError> {
    check_cell(cell)?;
    let targets = ts.plaintexts().map(|p| State::from_block(p).cell(cell));
    Ok(HypothesisMatrix::from_targets(targets, cell, 1))
}

/// `h[d][i] = HW(S(u_d[cell] ^ i))` with
/// `u_d = MixColumn(ShuffleCell(SubCell(p_d ^ wk)))`; guess `i` is the
/// candidate for cell `cell` of `RK0`.
pub fn build_hypotheses_round2(
    ts: &TraceSet,
    wk: &State,
    cell: usize,
) -> Result<HypothesisMatrix, AttackError> {
    check_cell(cell)?;
    let targets = ts
        .plaintexts()
        .map(|p| cipher::second_round_input(p, wk).cell(cell));
    Ok(HypothesisMatrix::from_targets(targets, cell, 2))
}

/// Correlations `r[i][j]` between guess `i` and sample `j`, stored
/// row-major (`16 x T`).
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    values: Vec<f64>,
    num_samples: usize,
    target_cell: usize,
    target_round: u8,
    constant_guesses: [bool; NUM_GUESSES],
    constant_samples: usize,
}

impl CorrelationMatrix {
    /// Builds a matrix from raw values; mostly useful for tests and
    /// for feeding externally computed correlations to `recover_cell`.
    ///
    /// # Panics
    /// If `values.len() != 16 * num_samples`.
    pub fn from_values(values: Vec<f64>, num_samples: usize, cell: usize, round: u8) -> Self {
        assert_eq!(values.len(), NUM_GUESSES * num_samples);
        CorrelationMatrix {
            values,
            num_samples,
            target_cell: cell,
            target_round: round,
            constant_guesses: [false; NUM_GUESSES],
            constant_samples: 0,
        }
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn target_cell(&self) -> usize {
        self.target_cell
    }

    pub fn target_round(&self) -> u8 {
        self.target_round
    }

    pub fn get(&self, guess: usize, sample: usize) -> f64 {
        self.values[guess * self.num_samples + sample]
    }

    pub fn row(&self, guess: usize) -> &[f64] {
        &self.values[guess * self.num_samples..(guess + 1) * self.num_samples]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Guesses whose hypothesis column had zero variance; their rows are 0.
    pub fn constant_guesses(&self) -> &[bool; NUM_GUESSES] {
        &self.constant_guesses
    }

    /// Number of trace sample columns with zero variance; their entries are 0.
    pub fn constant_samples(&self) -> usize {
        self.constant_samples
    }

    /// True if any zero-variance column forced sentinel entries.
    pub fn has_degenerate_columns(&self) -> bool {
        self.constant_samples > 0 || self.constant_guesses.iter().any(|&c| c)
    }

    /// Full matrix as CSV: a `guess,s0,s1,...` header then one row per guess.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "guess")?;
        for j in 0..self.num_samples {
            write!(w, ",s{j}")?;
        }
        writeln!(w)?;
        for i in 0..NUM_GUESSES {
            write!(w, "{i}")?;
            for v in self.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Mean-centred trace samples with per-sample norms, shared by every
/// correlation against the same trace set.
#[derive(Debug, Clone)]
pub struct CenteredTraces {
    data: Vec<f64>,
    num_traces: usize,
    num_samples: usize,
    norms: Vec<f64>,
    constant: Vec<bool>,
}

impl CenteredTraces {
    pub fn new(ts: &TraceSet) -> CenteredTraces {
        let d = ts.num_traces();
        let t = ts.samples_per_trace();
        let mut mean = vec![0.0; t];
        let mut min = vec![f64::INFINITY; t];
        let mut max = vec![f64::NEG_INFINITY; t];
        for tr in ts.traces() {
            for (j, &x) in tr.samples.iter().enumerate() {
                mean[j] += x;
                min[j] = min[j].min(x);
                max[j] = max[j].max(x);
            }
        }
        for m in mean.iter_mut() {
            *m /= d as f64;
        }
        let mut data = Vec::with_capacity(d * t);
        let mut sq = vec![0.0; t];
        for tr in ts.traces() {
            for (j, &x) in tr.samples.iter().enumerate() {
                let c = x - mean[j];
                sq[j] += c * c;
                data.push(c);
            }
        }
        let constant: Vec<bool> = min.iter().zip(&max).map(|(a, b)| a == b).collect();
        CenteredTraces {
            data,
            num_traces: d,
            num_samples: t,
            norms: sq.into_iter().map(f64::sqrt).collect(),
            constant,
        }
    }

    pub fn num_traces(&self) -> usize {
        self.num_traces
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn correlate(&self, h: &HypothesisMatrix) -> Result<CorrelationMatrix, AttackError> {
        Ok(self
            .correlate_all(std::slice::from_ref(h))?
            .pop()
            .expect("one matrix in, one out"))
    }

    /// Correlates several hypothesis matrices in one pass over the traces.
    pub fn correlate_all(
        &self,
        hs: &[HypothesisMatrix],
    ) -> Result<Vec<CorrelationMatrix>, AttackError> {
        if self.num_traces < 2 {
            return Err(AttackError::TooFewTraces(self.num_traces));
        }
        if let Some(h) = hs.iter().find(|h| h.num_traces != self.num_traces) {
            return Err(AttackError::LengthMismatch {
                hypotheses: h.num_traces,
                traces: self.num_traces,
            });
        }
        if hs.is_empty() {
            return Ok(Vec::new());
        }
        let centered = CenteredHypotheses::new(hs, self.num_traces);
        let cov = self.covariance(&centered);
        let constant_samples = self.constant.iter().filter(|&&c| c).count();
        let t = self.num_samples;

        Ok(hs
            .iter()
            .enumerate()
            .map(|(k, h)| {
                let mut values = vec![0.0; NUM_GUESSES * t];
                let mut constant_guesses = [false; NUM_GUESSES];
                for i in 0..NUM_GUESSES {
                    let g = k * NUM_GUESSES + i;
                    constant_guesses[i] = centered.constant[g];
                    if centered.constant[g] {
                        continue;
                    }
                    let row = &mut values[i * t..(i + 1) * t];
                    for (j, r) in row.iter_mut().enumerate() {
                        if !self.constant[j] {
                            let v = cov[g * t + j] / (centered.norms[g] * self.norms[j]);
                            *r = v.clamp(-1.0, 1.0);
                        }
                    }
                }
                CorrelationMatrix {
                    values,
                    num_samples: t,
                    target_cell: h.target_cell,
                    target_round: h.target_round,
                    constant_guesses,
                    constant_samples,
                }
            })
            .collect())
    }

    /// `cov[g][j] = sum_d hc[d][g] * tc[d][j]`, returned row-major `G x T`.
    fn covariance(&self, h: &CenteredHypotheses) -> Vec<f64> {
        let g_count = h.width;
        let t = self.num_samples;
        // Keep the per-block accumulator around 128 KiB.
        let block = (16 * 1024 / g_count).clamp(8, 1024);
        let blocks: Vec<(usize, Vec<f64>)> = (0..t)
            .step_by(block)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|j0| {
                let w = block.min(t - j0);
                let mut acc = vec![0.0; g_count * w];
                for d in 0..self.num_traces {
                    let trow = &self.data[d * t + j0..d * t + j0 + w];
                    let hrow = &h.data[d * g_count..(d + 1) * g_count];
                    for (hv, a) in hrow.iter().zip(acc.chunks_exact_mut(w)) {
                        for (a, &x) in a.iter_mut().zip(trow) {
                            *a += hv * x;
                        }
                    }
                }
                (j0, acc)
            })
            .collect();

        let mut cov = vec![0.0; g_count * t];
        for (j0, acc) in blocks {
            let w = acc.len() / g_count;
            for (g, a) in acc.chunks_exact(w).enumerate() {
                cov[g * t + j0..g * t + j0 + w].copy_from_slice(a);
            }
        }
        cov
    }
}

struct CenteredHypotheses {
    /// Row-major `D x width`.
    data: Vec<f64>,
    width: usize,
    norms: Vec<f64>,
    constant: Vec<bool>,
}

impl CenteredHypotheses {
    fn new(hs: &[HypothesisMatrix], d: usize) -> Self {
        let width = hs.len() * NUM_GUESSES;
        let mut mean = vec![0.0; width];
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for (k, h) in hs.iter().enumerate() {
            for row in 0..d {
                for (i, &x) in h.row(row).iter().enumerate() {
                    let g = k * NUM_GUESSES + i;
                    mean[g] += x;
                    min[g] = min[g].min(x);
                    max[g] = max[g].max(x);
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= d as f64;
        }
        let mut data = vec![0.0; d * width];
        let mut sq = vec![0.0; width];
        for row in 0..d {
            for (k, h) in hs.iter().enumerate() {
                for (i, &x) in h.row(row).iter().enumerate() {
                    let g = k * NUM_GUESSES + i;
                    let c = x - mean[g];
                    sq[g] += c * c;
                    data[row * width + g] = c;
                }
            }
        }
        CenteredHypotheses {
            data,
            width,
            norms: sq.into_iter().map(f64::sqrt).collect(),
            constant: min.iter().zip(&max).map(|(a, b)| a == b).collect(),
        }
    }
}

/// Pearson correlation of every hypothesis column against every sample
/// column. Zero-variance columns produce 0 and are flagged in the result.
pub fn pearson(h: &HypothesisMatrix, ts: &TraceSet) -> Result<CorrelationMatrix, AttackError> {
    if ts.num_traces() < 2 {
        return Err(AttackError::TooFewTraces(ts.num_traces()));
    }
    if h.num_traces != ts.num_traces() {
        return Err(AttackError::LengthMismatch {
            hypotheses: h.num_traces,
            traces: ts.num_traces(),
        });
    }
    CenteredTraces::new(ts).correlate(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leakage::Trace;

    fn traceset(samples: Vec<Vec<f64>>, plaintexts: &[u64]) -> TraceSet {
        let traces = samples
            .into_iter()
            .zip(plaintexts)
            .map(|(s, &p)| Trace {
                plaintext: p,
                ciphertext: 0,
                samples: s,
            })
            .collect();
        TraceSet::new(traces, None, None).unwrap()
    }

    #[test]
    fn round1_hypothesis_examples() {
        let ts = traceset(vec![vec![0.0]; 2], &[0, 0x5000_0000_0000_0000]);
        let h = build_hypotheses_round1(&ts, 0).unwrap();
        assert_eq!(h.get(0, 0), 2.0);
        // p_cell == guess always lands on S(0) = 0xC.
        assert_eq!(h.get(1, 5), 2.0);
        assert!(h.values.iter().all(|v| (0.0..=4.0).contains(v)));
        assert!(build_hypotheses_round1(&ts, 16).is_err());
    }

    #[test]
    fn perfect_correlation_and_anticorrelation() {
        let plaintexts: Vec<u64> = (0..20u64)
            .map(|i| i.wrapping_mul(0x9E37_79B9_7F4A_7C15))
            .collect();
        let probe = traceset(vec![vec![0.0]; 20], &plaintexts);
        let h = build_hypotheses_round1(&probe, 15).unwrap();
        let samples = (0..20)
            .map(|d| vec![h.get(d, 3), 7.0 - h.get(d, 3), 1.0])
            .collect();
        let ts = traceset(samples, &plaintexts);
        let r = pearson(&h, &ts).unwrap();
        assert!((r.get(3, 0) - 1.0).abs() < 1e-12);
        assert!((r.get(3, 1) + 1.0).abs() < 1e-12);
        // Constant sample column hits the sentinel.
        assert_eq!(r.get(3, 2), 0.0);
        assert_eq!(r.constant_samples(), 1);
    }

    #[test]
    fn single_trace_is_rejected() {
        let ts = traceset(vec![vec![1.0, 2.0]], &[0]);
        let h = build_hypotheses_round1(&ts, 0).unwrap();
        assert_eq!(pearson(&h, &ts), Err(AttackError::TooFewTraces(1)));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let a = traceset(vec![vec![1.0]; 3], &[0, 1, 2]);
        let b = traceset(vec![vec![1.0]; 2], &[0, 1]);
        let h = build_hypotheses_round1(&a, 0).unwrap();
        assert!(matches!(
            pearson(&h, &b),
            Err(AttackError::LengthMismatch {
                hypotheses: 3,
                traces: 2
            })
        ));
    }

    #[test]
    fn csv_export_shape() {
        let r = CorrelationMatrix::from_values(vec![0.5; 32], 2, 0, 1);
        let mut out = Vec::new();
        r.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[0], "guess,s0,s1");
        assert_eq!(lines[16], "15,0.5,0.5");
    }
}
