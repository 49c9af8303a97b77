//! Square binary code tables and rotation-aware matching.

use std::fmt;

use super::MarkerError;

/// Square bit matrix up to 8x8, row-major with the most significant used bit
/// at the top-left cell. `true`/1 is a white cell.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct BitMatrix {
    size: usize,
    bits: u64,
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{}", self.size, self.size)?;
        for r in 0..self.size {
            let row: String = (0..self.size)
                .map(|c| if self.get(r, c) { '#' } else { '.' })
                .collect();
            writeln!(f, "  {row}")?;
        }
        Ok(())
    }
}

impl BitMatrix {
    pub fn new(size: usize, bits: u64) -> Self {
        assert!((1..=8).contains(&size), "bit matrix size {size} unsupported");
        let mask = if size == 8 { u64::MAX } else { (1u64 << (size * size)) - 1 };
        Self {
            size,
            bits: bits & mask,
        }
    }

    pub fn zeros(size: usize) -> Self {
        Self::new(size, 0)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    #[inline]
    fn shift(&self, r: usize, c: usize) -> usize {
        self.size * self.size - 1 - (r * self.size + c)
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        (self.bits >> self.shift(r, c)) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, v: bool) {
        let s = self.shift(r, c);
        if v {
            self.bits |= 1 << s;
        } else {
            self.bits &= !(1 << s);
        }
    }

    pub fn flip(&mut self, r: usize, c: usize) {
        let v = self.get(r, c);
        self.set(r, c, !v);
    }

    /// 90 degree clockwise rotation (as seen in an image with `y` down).
    pub fn rotate_cw(&self) -> Self {
        let n = self.size;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for c in 0..n {
                out.set(r, c, self.get(n - 1 - c, r));
            }
        }
        out
    }

    pub fn rotate_cw_times(&self, times: usize) -> Self {
        (0..times % 4).fold(*self, |m, _| m.rotate_cw())
    }

    pub fn hamming(&self, other: &Self) -> u32 {
        debug_assert_eq!(self.size, other.size);
        (self.bits ^ other.bits).count_ones()
    }
}

/// Result of a dictionary lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DictionaryMatch {
    pub id: u32,
    /// Clockwise rotation of the observed pattern relative to the stored code,
    /// in multiples of 90 degrees.
    pub quarter_turns: usize,
    pub distance: u32,
}

impl DictionaryMatch {
    pub fn rotation_deg(&self) -> u32 {
        self.quarter_turns as u32 * 90
    }
}

/// Fixed table of marker codes with a guaranteed rotation-aware minimum
/// Hamming distance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerDictionary {
    grid: usize,
    codes: Vec<(u32, BitMatrix)>,
    min_hamming: u32,
}

const BUILTIN_4X4_50: &str = include_str!("../../assets/dict_4x4_50_v1.txt");

impl MarkerDictionary {
    /// Builds a dictionary, computing its minimum distance. Fails when two
    /// codes (or a code and its own rotation) collide.
    pub fn new(grid: usize, codes: Vec<(u32, BitMatrix)>) -> Result<Self, MarkerError> {
        if codes.is_empty() {
            return Err(MarkerError::Dictionary("no codes".into()));
        }
        if codes.iter().any(|(_, c)| c.size() != grid) {
            return Err(MarkerError::Dictionary("code size differs from grid".into()));
        }
        let min_hamming = min_rotational_distance(&codes);
        if min_hamming == 0 {
            return Err(MarkerError::Dictionary(
                "codes are not distinct under rotation".into(),
            ));
        }
        Ok(Self {
            grid,
            codes,
            min_hamming,
        })
    }

    /// Parses the text asset format: `#` comments, then one hexadecimal code
    /// per line; ids are assigned by line order starting at 0.
    pub fn parse(grid: usize, text: &str) -> Result<Self, MarkerError> {
        let mut codes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bits = u64::from_str_radix(line, 16).map_err(|e| {
                MarkerError::Dictionary(format!("line {}: {e}", lineno + 1))
            })?;
            if grid < 8 && bits >> (grid * grid) != 0 {
                return Err(MarkerError::Dictionary(format!(
                    "line {}: code wider than {grid}x{grid}",
                    lineno + 1
                )));
            }
            codes.push((codes.len() as u32, BitMatrix::new(grid, bits)));
        }
        Self::new(grid, codes)
    }

    /// The embedded 4x4, 50-code table (`assets/dict_4x4_50_v1.txt`).
    pub fn builtin_4x4_50() -> Self {
        Self::parse(4, BUILTIN_4X4_50).expect("embedded dictionary is valid")
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn min_hamming(&self) -> u32 {
        self.min_hamming
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[(u32, BitMatrix)] {
        &self.codes
    }

    pub fn code(&self, id: u32) -> Option<BitMatrix> {
        self.codes.iter().find(|(i, _)| *i == id).map(|(_, c)| *c)
    }

    /// Largest number of bit errors that is still corrected.
    pub fn correction_bound(&self) -> u32 {
        (self.min_hamming - 1) / 2
    }
}

fn min_rotational_distance(codes: &[(u32, BitMatrix)]) -> u32 {
    let mut best = u32::MAX;
    for (i, (_, a)) in codes.iter().enumerate() {
        for r in 1..4 {
            best = best.min(a.hamming(&a.rotate_cw_times(r)));
        }
        for (_, b) in &codes[i + 1..] {
            for r in 0..4 {
                best = best.min(a.hamming(&b.rotate_cw_times(r)));
            }
        }
    }
    best
}

/// Nearest code over all four rotations, accepted within the correction bound.
pub fn match_dictionary(
    bits: &BitMatrix,
    dict: &MarkerDictionary,
) -> Result<DictionaryMatch, MarkerError> {
    if bits.size() != dict.grid() {
        return Err(MarkerError::GridMismatch {
            expected: dict.grid(),
            found: bits.size(),
        });
    }
    let mut best: Option<DictionaryMatch> = None;
    for turns in 0..4 {
        // Undo a clockwise rotation of `turns` quarter turns.
        let unrotated = bits.rotate_cw_times((4 - turns) % 4);
        for (id, code) in dict.codes() {
            let distance = unrotated.hamming(code);
            if best.is_none_or(|b| distance < b.distance) {
                best = Some(DictionaryMatch {
                    id: *id,
                    quarter_turns: turns,
                    distance,
                });
            }
        }
    }
    match best {
        Some(m) if m.distance <= dict.correction_bound() => Ok(m),
        _ => Err(MarkerError::NoMatch),
    }
}
