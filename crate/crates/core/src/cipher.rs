//! Midori64: 64-bit block, 128-bit key, 4-bit cells.
//!
//! A 64-bit block is read as 16 hex digits; digit 0 (the most significant)
//! is cell 0 of the [`State`]. Cells are laid out column-major, so cells
//! 0..4 form the first column.
//!
//! Besides plain encryption the module exposes the round intermediates the
//! leakage simulator and the attack need: the first-round S-box outputs and
//! the input to the second-round S-box layer.

use std::fmt;
use std::ops::BitXor;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

/// The Midori64 S-box (`Sb0`).
pub const SBOX: [u8; 16] = [
    0xC, 0xA, 0xD, 0x3, 0xE, 0xB, 0xF, 0x7, 0x8, 0x9, 0x1, 0x5, 0x0, 0x2, 0x4, 0x6,
];

/// ShuffleCell as a destination map: input cell `i` lands on output cell
/// `SHUFFLE_DESTINATION[i]`.
pub const SHUFFLE_DESTINATION: [usize; 16] = [0, 7, 14, 9, 5, 2, 11, 12, 15, 8, 1, 6, 10, 13, 4, 3];

/// Inverse of [`SHUFFLE_DESTINATION`]: output cell `i` is taken from input
/// cell `SHUFFLE_SOURCE[i]`.
pub const SHUFFLE_SOURCE: [usize; 16] = invert_permutation(&SHUFFLE_DESTINATION);

/// Number of keyed rounds (SubCell, ShuffleCell, MixColumn, round-key add).
pub const ROUNDS: usize = 15;

/// Round constants `α0..α14`, one bit per cell, written as blocks so that
/// each hex digit is the constant for that cell.
pub const ROUND_CONSTANTS: [u64; ROUNDS] = [
    0x0001_0101_1011_0011,
    0x0111_1000_1100_0000,
    0x1010_0100_0011_0101,
    0x0110_0010_0001_0011,
    0x0001_0000_0100_1111,
    0x1101_0001_0111_0000,
    0x0000_0010_0110_0110,
    0x0000_1011_1100_1100,
    0x1001_0100_1000_0001,
    0x0100_0000_1011_1000,
    0x0111_0001_1001_0111,
    0x0010_0010_1000_1110,
    0x0101_0001_0011_0000,
    0x1111_1000_1100_1010,
    0x1101_1111_1001_0000,
];

const fn invert_permutation(p: &[usize; 16]) -> [usize; 16] {
    let mut inv = [0usize; 16];
    let mut i = 0;
    while i < 16 {
        inv[p[i]] = i;
        i += 1;
    }
    inv
}

/// A 4-bit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Nibble(u8);

impl Nibble {
    pub const ZERO: Nibble = Nibble(0);

    /// Returns `None` when `value > 15`.
    pub const fn new(value: u8) -> Option<Nibble> {
        if value < 16 {
            Some(Nibble(value))
        } else {
            None
        }
    }

    /// Keeps the low four bits of `value`.
    pub const fn from_low_bits(value: u8) -> Nibble {
        Nibble(value & 0xF)
    }

    pub const fn value(self) -> u8 {
        self.0
    }

    pub const fn hamming_weight(self) -> u32 {
        self.0.count_ones()
    }

    /// All sixteen nibbles in ascending order.
    pub fn all() -> impl Iterator<Item = Nibble> {
        (0..16).map(Nibble)
    }
}

impl BitXor for Nibble {
    type Output = Nibble;

    fn bitxor(self, rhs: Nibble) -> Nibble {
        Nibble(self.0 ^ rhs.0)
    }
}

impl fmt::Display for Nibble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:X}", self.0)
    }
}

/// The 4x4 cell matrix every round transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct State([u8; 16]);

impl State {
    pub const ZERO: State = State([0; 16]);

    /// Returns `None` if any cell exceeds 15.
    pub fn from_cells(cells: [u8; 16]) -> Option<State> {
        cells.iter().all(|&c| c < 16).then_some(State(cells))
    }

    pub fn from_nibbles(cells: [Nibble; 16]) -> State {
        State(cells.map(Nibble::value))
    }

    pub const fn from_block(block: u64) -> State {
        let mut cells = [0u8; 16];
        let mut i = 0;
        while i < 16 {
            cells[i] = ((block >> (60 - 4 * i)) & 0xF) as u8;
            i += 1;
        }
        State(cells)
    }

    pub fn to_block(&self) -> u64 {
        self.0
            .iter()
            .fold(0u64, |acc, &c| (acc << 4) | u64::from(c))
    }

    pub fn cells(&self) -> &[u8; 16] {
        &self.0
    }

    /// # Panics
    /// If `index >= 16`.
    pub fn cell(&self, index: usize) -> Nibble {
        Nibble(self.0[index])
    }

    /// # Panics
    /// If `index >= 16`.
    pub fn set_cell(&mut self, index: usize, value: Nibble) {
        self.0[index] = value.value();
    }

    pub fn to_hex(&self) -> String {
        block_to_hex(self.to_block())
    }
}

impl BitXor for State {
    type Output = State;

    fn bitxor(self, rhs: State) -> State {
        let mut out = self.0;
        for (o, r) in out.iter_mut().zip(rhs.0) {
            *o ^= r;
        }
        State(out)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn sbox(x: Nibble) -> Nibble {
    Nibble(SBOX[x.value() as usize])
}

pub fn sub_cell(s: &State) -> State {
    State(s.0.map(|c| SBOX[c as usize]))
}

/// `out[SHUFFLE_DESTINATION[i]] = in[i]`.
pub fn shuffle_cell(s: &State) -> State {
    let mut out = [0u8; 16];
    for (i, &dest) in SHUFFLE_DESTINATION.iter().enumerate() {
        out[dest] = s.0[i];
    }
    State(out)
}

pub fn inv_shuffle_cell(s: &State) -> State {
    let mut out = [0u8; 16];
    for (i, &src) in SHUFFLE_SOURCE.iter().enumerate() {
        out[src] = s.0[i];
    }
    State(out)
}

/// Multiplies every column by the almost-MDS matrix (zero diagonal, ones
/// elsewhere): each output cell is the XOR of the other three cells of
/// its column. The map is an involution.
pub fn mix_column(s: &State) -> State {
    let mut out = s.0;
    for col in out.chunks_exact_mut(4) {
        let total = col[0] ^ col[1] ^ col[2] ^ col[3];
        for c in col.iter_mut() {
            *c ^= total;
        }
    }
    State(out)
}

/// The 128-bit master key `k0 || k1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MasterKey {
    pub k0: u64,
    pub k1: u64,
}

impl MasterKey {
    pub const fn new(k0: u64, k1: u64) -> MasterKey {
        MasterKey { k0, k1 }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> MasterKey {
        MasterKey::new(rng.random(), rng.random())
    }

    pub fn from_hex(hex: &str) -> Result<MasterKey, HexError> {
        check_hex(hex, 32)?;
        let k0 = u64::from_str_radix(&hex[..16], 16).expect("validated hex");
        let k1 = u64::from_str_radix(&hex[16..], 16).expect("validated hex");
        Ok(MasterKey::new(k0, k1))
    }

    /// 32 uppercase hex digits.
    pub fn to_hex(&self) -> String {
        format!("{:016X}{:016X}", self.k0, self.k1)
    }

    pub fn whitening_key(&self) -> State {
        State::from_block(self.k0 ^ self.k1)
    }
}

impl fmt::Display for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for MasterKey {
    type Err = HexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MasterKey::from_hex(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HexError {
    #[error("expected {expected} hex digits, found {found}")]
    Length { expected: usize, found: usize },
    #[error("invalid hex digit {digit:?} at position {position}")]
    InvalidDigit { digit: char, position: usize },
}

fn check_hex(hex: &str, width: usize) -> Result<(), HexError> {
    if let Some((position, digit)) = hex
        .chars()
        .enumerate()
        .find(|(_, c)| !c.is_ascii_hexdigit())
    {
        return Err(HexError::InvalidDigit { digit, position });
    }
    if hex.len() != width {
        return Err(HexError::Length {
            expected: width,
            found: hex.len(),
        });
    }
    Ok(())
}

/// Parses exactly 16 hex digits (either case).
pub fn parse_block_hex(hex: &str) -> Result<u64, HexError> {
    check_hex(hex, 16)?;
    Ok(u64::from_str_radix(hex, 16).expect("validated hex"))
}

/// 16 uppercase hex digits.
pub fn block_to_hex(block: u64) -> String {
    format!("{block:016X}")
}

/// Whitening key plus the fifteen round keys, with the constants used to
/// derive them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeySchedule {
    pub wk: State,
    pub round_keys: [State; ROUNDS],
    pub alphas: [State; ROUNDS],
}

/// `WK = k0 ^ k1`, `RK_r = (r even ? k0 : k1) ^ α_r`.
pub fn key_schedule(key: &MasterKey) -> KeySchedule {
    let halves = [State::from_block(key.k0), State::from_block(key.k1)];
    let alphas = round_constants();
    let round_keys = std::array::from_fn(|r| halves[r % 2] ^ alphas[r]);
    KeySchedule {
        wk: halves[0] ^ halves[1],
        round_keys,
        alphas,
    }
}

pub fn round_constants() -> [State; ROUNDS] {
    ROUND_CONSTANTS.map(State::from_block)
}

/// `α0` as a state; the second-round attack removes it from `RK0` to get `k0`.
pub fn alpha0() -> State {
    State::from_block(ROUND_CONSTANTS[0])
}

pub fn encrypt(plaintext: u64, key: &MasterKey) -> u64 {
    encrypt_with_schedule(plaintext, &key_schedule(key))
}

pub fn encrypt_with_schedule(plaintext: u64, ks: &KeySchedule) -> u64 {
    encrypt_observed(plaintext, ks, |_, _| {})
}

/// Encrypts while handing every S-box layer output to `observer`, together
/// with its 1-based round number (1..=16).
pub fn encrypt_observed<F>(plaintext: u64, ks: &KeySchedule, mut observer: F) -> u64
where
    F: FnMut(usize, &State),
{
    let mut s = State::from_block(plaintext) ^ ks.wk;
    for (r, rk) in ks.round_keys.iter().enumerate() {
        s = sub_cell(&s);
        observer(r + 1, &s);
        s = mix_column(&shuffle_cell(&s)) ^ *rk;
    }
    s = sub_cell(&s);
    observer(ROUNDS + 1, &s);
    (s ^ ks.wk).to_block()
}

pub fn decrypt(ciphertext: u64, key: &MasterKey) -> u64 {
    decrypt_with_schedule(ciphertext, &key_schedule(key))
}

pub fn decrypt_with_schedule(ciphertext: u64, ks: &KeySchedule) -> u64 {
    let mut s = sub_cell(&(State::from_block(ciphertext) ^ ks.wk));
    for rk in ks.round_keys.iter().rev() {
        s = inv_shuffle_cell(&mix_column(&(s ^ *rk)));
        s = sub_cell(&s);
    }
    (s ^ ks.wk).to_block()
}

/// A leaking S-box evaluation targeted by the attack: the S-box output of
/// `cell` in round 1 or round 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbePoint {
    round: u8,
    cell: u8,
}

impl ProbePoint {
    /// Returns `None` unless `round` is 1 or 2 and `cell < 16`.
    pub fn new(round: u8, cell: usize) -> Option<ProbePoint> {
        ((1..=2).contains(&round) && cell < 16).then_some(ProbePoint {
            round,
            cell: cell as u8,
        })
    }

    pub fn round(&self) -> u8 {
        self.round
    }

    pub fn cell(&self) -> usize {
        self.cell as usize
    }
}

/// All sixteen first-round S-box outputs: `S(p ^ WK)`.
pub fn first_round_sbox_output(plaintext: u64, wk: &State) -> State {
    sub_cell(&(State::from_block(plaintext) ^ *wk))
}

/// The state entering the second-round key addition:
/// `MixColumn(ShuffleCell(SubCell(p ^ WK)))`.
pub fn second_round_input(plaintext: u64, wk: &State) -> State {
    mix_column(&shuffle_cell(&first_round_sbox_output(plaintext, wk)))
}

/// All sixteen second-round S-box outputs: `S(u ^ RK0)`.
pub fn second_round_sbox_output(plaintext: u64, wk: &State, rk0: &State) -> State {
    sub_cell(&(second_round_input(plaintext, wk) ^ *rk0))
}

/// The S-box output at `probe` when encrypting `plaintext` under `key`.
pub fn intermediate(plaintext: u64, key: &MasterKey, probe: ProbePoint) -> Nibble {
    let wk = key.whitening_key();
    match probe.round {
        1 => sbox(State::from_block(plaintext).cell(probe.cell()) ^ wk.cell(probe.cell())),
        _ => {
            let rk0 = State::from_block(key.k0) ^ alpha0();
            let u = second_round_input(plaintext, &wk);
            sbox(u.cell(probe.cell()) ^ rk0.cell(probe.cell()))
        }
    }
}
