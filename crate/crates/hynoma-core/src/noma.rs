//! Code-domain NOMA building blocks: sparse codebooks, dense complex
//! spreading codes, symbol mapping and frame assembly.
//!
//! Both schemes are normalized so a user's mean codeword energy equals the
//! code length, i.e. unit average energy per chip. Overloading is then purely
//! a matter of how many users share the same chips.

use crate::{c64, CMat, CVec, C64};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;

/// Invalid codebook or code set construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodebookError {
    /// What was wrong.
    pub message: String,
}

impl core::fmt::Display for CodebookError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "codebook error: {}", self.message)
    }
}

impl core::error::Error for CodebookError {}

fn err<T>(message: String) -> Result<T, CodebookError> {
    Err(CodebookError { message })
}

/// Gray-mapped QPSK point for a symbol index in `0..4`, unit energy.
pub fn gray_qpsk(symbol: usize) -> C64 {
    let b0 = (symbol >> 1) & 1;
    let b1 = symbol & 1;
    c64(
        (1.0 - 2.0 * b0 as f64) * core::f64::consts::FRAC_1_SQRT_2,
        (1.0 - 2.0 * b1 as f64) * core::f64::consts::FRAC_1_SQRT_2,
    )
}

/// Bit errors between two symbol indices.
pub fn hamming(a: usize, b: usize) -> u32 {
    (a ^ b).count_ones()
}

/// Sparse codebook with one codeword per user and symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmaCodebook {
    code_length: usize,
    alphabet: usize,
    codewords: Vec<Vec<CVec>>,
    occupancy: Vec<Vec<usize>>,
    resource_users: Vec<Vec<usize>>,
}

impl ScmaCodebook {
    /// Validates and normalizes raw codewords, `codewords[user][symbol]`.
    ///
    /// Each user's codewords are rescaled so their mean energy equals the
    /// code length. Occupancy is the union of nonzero chip positions over
    /// the alphabet.
    pub fn new(codewords: Vec<Vec<CVec>>) -> Result<Self, CodebookError> {
        if codewords.is_empty() {
            return err(format!("no users"));
        }
        let alphabet = codewords[0].len();
        if alphabet < 2 || !alphabet.is_power_of_two() {
            return err(format!("alphabet size {alphabet} is not a power of two >= 2"));
        }
        let code_length = codewords[0].first().map_or(0, |c| c.len());
        if code_length == 0 {
            return err(format!("empty codewords"));
        }
        let mut codewords = codewords;
        let mut occupancy = Vec::with_capacity(codewords.len());
        for (u, per_user) in codewords.iter_mut().enumerate() {
            if per_user.len() != alphabet {
                return err(format!(
                    "user {u} has {} codewords, expected {alphabet}",
                    per_user.len()
                ));
            }
            let mut energy = 0.0;
            let mut occ = Vec::new();
            for cw in per_user.iter() {
                if cw.len() != code_length {
                    return err(format!("user {u} codeword length {} != {code_length}", cw.len()));
                }
                energy += cw.norm_squared();
                for (i, chip) in cw.iter().enumerate() {
                    if chip.norm_sqr() > 1e-24 && !occ.contains(&i) {
                        occ.push(i);
                    }
                }
            }
            if occ.is_empty() {
                return err(format!("user {u} has all-zero codewords"));
            }
            occ.sort_unstable();
            occupancy.push(occ);
            let scale = libm::sqrt(code_length as f64 * alphabet as f64 / energy);
            for cw in per_user.iter_mut() {
                *cw = cw.scale(scale);
            }
        }
        let resource_users = (0..code_length)
            .map(|r| {
                (0..codewords.len()).filter(|&u| occupancy[u].contains(&r)).collect()
            })
            .collect();
        Ok(Self { code_length, alphabet, codewords, occupancy, resource_users })
    }

    /// Built-in 150%-loaded codebook: 6 users on 4 resources, 4-ary
    /// alphabet, each user occupying 2 resources, 3 users per resource.
    ///
    /// Codewords repeat a QPSK point on both occupied resources with a
    /// per-resource phase rotation that separates the users sharing it.
    pub fn bundled() -> Self {
        let pairs: [[usize; 2]; 6] = [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]];
        let mut slots = [0usize; 4];
        let mut codewords = Vec::with_capacity(6);
        for pair in pairs {
            let rotations: Vec<f64> = pair
                .iter()
                .map(|&r| {
                    let phi = slots[r] as f64 * core::f64::consts::FRAC_PI_6;
                    slots[r] += 1;
                    phi
                })
                .collect();
            let mut per_user = Vec::with_capacity(4);
            for m in 0..4 {
                let q = gray_qpsk(m) * c64(core::f64::consts::SQRT_2, 0.0);
                let mut cw = CVec::zeros(4);
                for (slot, &r) in pair.iter().enumerate() {
                    let phi = rotations[slot];
                    cw[r] = q * c64(libm::cos(phi), libm::sin(phi));
                }
                per_user.push(cw);
            }
            codewords.push(per_user);
        }
        Self::new(codewords).expect("bundled codebook is valid")
    }

    /// Minimal cycle-free codebook: 3 binary users on 2 resources. User 0
    /// spans both resources, users 1 and 2 one each, so the factor graph is
    /// a tree and message passing is exact.
    pub fn toy_tree() -> Self {
        let mk = |chips: [[C64; 2]; 2]| {
            chips.iter().map(|c| CVec::from_row_slice(c)).collect::<Vec<_>>()
        };
        let z = c64(0.0, 0.0);
        let codewords = alloc::vec![
            mk([[c64(1.0, 0.0), c64(1.0, 0.0)], [c64(-1.0, 0.0), c64(-1.0, 0.0)]]),
            mk([[c64(1.0, 1.0), z], [c64(-1.0, -1.0), z]]),
            mk([[z, c64(1.0, 1.0)], [z, c64(-1.0, -1.0)]]),
        ];
        Self::new(codewords).expect("toy codebook is valid")
    }

    /// Number of users the codebook serves.
    pub fn users(&self) -> usize {
        self.codewords.len()
    }

    /// Chips per codeword.
    pub fn code_length(&self) -> usize {
        self.code_length
    }

    /// Symbols per user.
    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    /// Codeword of a user and symbol.
    pub fn codeword(&self, user: usize, symbol: usize) -> &CVec {
        &self.codewords[user][symbol]
    }

    /// One chip of a codeword.
    pub fn chip(&self, user: usize, symbol: usize, resource: usize) -> C64 {
        self.codewords[user][symbol][resource]
    }

    /// Resources occupied by a user, ascending.
    pub fn occupancy(&self, user: usize) -> &[usize] {
        &self.occupancy[user]
    }

    /// Users occupying a resource, ascending.
    pub fn resource_users(&self, resource: usize) -> &[usize] {
        &self.resource_users[resource]
    }

    /// Mean squared chip per resource and user, `[resource][user]`.
    pub fn chip_variances(&self) -> Vec<Vec<f64>> {
        (0..self.code_length)
            .map(|r| {
                (0..self.users())
                    .map(|u| {
                        self.codewords[u].iter().map(|cw| cw[r].norm_sqr()).sum::<f64>()
                            / self.alphabet as f64
                    })
                    .collect()
            })
            .collect()
    }
}

/// Chip alphabet for dense spreading codes: zero plus the eight points of
/// the unit square ring.
pub const MUSA_ALPHABET: [(f64, f64); 9] = [
    (0.0, 0.0),
    (1.0, 0.0),
    (1.0, 1.0),
    (0.0, 1.0),
    (-1.0, 1.0),
    (-1.0, 0.0),
    (-1.0, -1.0),
    (0.0, -1.0),
    (1.0, -1.0),
];

/// Dense complex spreading codes, one per user, drawn from [`MUSA_ALPHABET`]
/// and normalized to squared norm equal to the code length.
#[derive(Debug, Clone, PartialEq)]
pub struct MusaCodeSet {
    code_length: usize,
    codes: Vec<CVec>,
}

impl MusaCodeSet {
    /// Draws distinct nonzero codes for `users` users.
    pub fn generate<R: Rng + ?Sized>(
        users: usize,
        code_length: usize,
        rng: &mut R,
    ) -> Result<Self, CodebookError> {
        if code_length == 0 || users == 0 {
            return err(format!("need at least one user and one chip"));
        }
        let capacity = 9u128.checked_pow(code_length.min(40) as u32).unwrap_or(u128::MAX) - 1;
        if users as u128 > capacity {
            return err(format!(
                "{users} users exceed the {capacity} distinct nonzero codes of length {code_length}"
            ));
        }
        let mut patterns: Vec<Vec<u8>> = Vec::with_capacity(users);
        while patterns.len() < users {
            let p: Vec<u8> = (0..code_length).map(|_| rng.random_range(0..9u8)).collect();
            if p.iter().all(|&x| x == 0) || patterns.contains(&p) {
                continue;
            }
            patterns.push(p);
        }
        let codes = patterns
            .iter()
            .map(|p| {
                CVec::from_iterator(
                    code_length,
                    p.iter().map(|&i| {
                        let (re, im) = MUSA_ALPHABET[i as usize];
                        c64(re, im)
                    }),
                )
            })
            .collect();
        Self::from_codes(codes)
    }

    /// Validates and normalizes explicit codes.
    pub fn from_codes(codes: Vec<CVec>) -> Result<Self, CodebookError> {
        if codes.is_empty() {
            return err(format!("no codes"));
        }
        let code_length = codes[0].len();
        let mut codes = codes;
        for (u, code) in codes.iter_mut().enumerate() {
            if code.len() != code_length {
                return err(format!("code {u} length {} != {code_length}", code.len()));
            }
            let energy = code.norm_squared();
            if energy < 1e-24 {
                return err(format!("code {u} is all zero"));
            }
            *code = code.scale(libm::sqrt(code_length as f64 / energy));
        }
        for u in 0..codes.len() {
            for v in (u + 1)..codes.len() {
                if (&codes[u] - &codes[v]).norm_squared() < 1e-20 {
                    return err(format!("codes {u} and {v} coincide"));
                }
            }
        }
        Ok(Self { code_length, codes })
    }

    /// Number of codes.
    pub fn users(&self) -> usize {
        self.codes.len()
    }

    /// Chips per code.
    pub fn code_length(&self) -> usize {
        self.code_length
    }

    /// Normalized code of a user.
    pub fn code(&self, user: usize) -> &CVec {
        &self.codes[user]
    }

    /// Spread chips of one symbol: code times the Gray QPSK point.
    pub fn chips(&self, user: usize, symbol: usize) -> CVec {
        self.codes[user].scale_complex(gray_qpsk(symbol))
    }

    /// Mean squared chip per resource and user, `[resource][user]`.
    pub fn chip_variances(&self) -> Vec<Vec<f64>> {
        (0..self.code_length)
            .map(|r| self.codes.iter().map(|c| c[r].norm_sqr()).collect())
            .collect()
    }
}

trait ScaleComplex {
    fn scale_complex(&self, s: C64) -> Self;
}

impl ScaleComplex for CVec {
    fn scale_complex(&self, s: C64) -> Self {
        CVec::from_iterator(self.len(), self.iter().map(|v| v * s))
    }
}

/// Chip-level mapping of one group's scheme.
#[derive(Debug, Clone)]
pub enum ChipMapper {
    /// Sparse codebook mapping.
    Scma(ScmaCodebook),
    /// Dense spreading of Gray QPSK.
    Musa(MusaCodeSet),
    /// No spreading: one Gray QPSK chip per symbol.
    Direct,
}

impl ChipMapper {
    /// Chips per symbol.
    pub fn code_length(&self) -> usize {
        match self {
            ChipMapper::Scma(cb) => cb.code_length(),
            ChipMapper::Musa(cs) => cs.code_length(),
            ChipMapper::Direct => 1,
        }
    }

    /// Symbols per user.
    pub fn alphabet(&self) -> usize {
        match self {
            ChipMapper::Scma(cb) => cb.alphabet(),
            _ => 4,
        }
    }

    /// Chip sequence of one user symbol.
    pub fn chips(&self, user: usize, symbol: usize) -> CVec {
        match self {
            ChipMapper::Scma(cb) => cb.codeword(user, symbol).clone(),
            ChipMapper::Musa(cs) => cs.chips(user, symbol),
            ChipMapper::Direct => CVec::from_element(1, gray_qpsk(symbol)),
        }
    }

    /// Mean squared chip per resource and user for `users` users.
    pub fn chip_variances(&self, users: usize) -> Vec<Vec<f64>> {
        match self {
            ChipMapper::Scma(cb) => cb.chip_variances(),
            ChipMapper::Musa(cs) => cs.chip_variances(),
            ChipMapper::Direct => alloc::vec![alloc::vec![1.0; users]],
        }
    }
}

/// Uniform random symbol indices, `[user][slot]`.
pub fn draw_symbols<R: Rng + ?Sized>(
    rng: &mut R,
    users: usize,
    slots: usize,
    alphabet: usize,
) -> Vec<Vec<usize>> {
    (0..users)
        .map(|_| (0..slots).map(|_| rng.random_range(0..alphabet)).collect())
        .collect()
}

/// Lays out per-user chip streams for a frame of symbols: a
/// `users x (slots * code_length)` matrix, row per user.
pub fn assemble_frame(mapper: &ChipMapper, symbols: &[Vec<usize>]) -> CMat {
    let users = symbols.len();
    let slots = symbols[0].len();
    let nc = mapper.code_length();
    let mut frame = CMat::zeros(users, slots * nc);
    for (u, per_user) in symbols.iter().enumerate() {
        for (t, &sym) in per_user.iter().enumerate() {
            let chips = mapper.chips(u, sym);
            for i in 0..nc {
                frame[(u, t * nc + i)] = chips[i];
            }
        }
    }
    frame
}
