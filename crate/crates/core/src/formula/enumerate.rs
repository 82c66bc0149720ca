//! Exhaustive enumeration of formulas by length.
//!
//! Order: ascending length. Length 1 lists the variables then the constants.
//! Within a longer length `n`, unary formulas come first (child-major, then
//! operator), then binary formulas grouped by left length `1..=n-2`, then
//! left formula, right formula and operator.

use super::expr::{Formula, BINARY_OPS, CONSTANTS, UNARY_OPS, VARIABLES};

/// The length-1 formulas in enumeration order.
pub fn atoms() -> Vec<Formula> {
    VARIABLES
        .iter()
        .map(|&v| Formula::var(v))
        .chain(CONSTANTS.iter().map(|&c| Formula::constant(c)))
        .collect()
}

/// Number of formulas of each length `0..=max_len` (index 0 is 0).
pub fn count_by_length(max_len: usize) -> Vec<u64> {
    let mut a = vec![0u64; max_len + 1];
    if max_len >= 1 {
        a[1] = (VARIABLES.len() + CONSTANTS.len()) as u64;
    }
    for n in 2..=max_len {
        let mut binary = 0u64;
        for i in 1..n.saturating_sub(1) {
            binary += a[i] * a[n - 1 - i];
        }
        a[n] = UNARY_OPS.len() as u64 * a[n - 1] + BINARY_OPS.len() as u64 * binary;
    }
    a
}

/// Number of formulas of length at most `max_len`.
pub fn count_formulas(max_len: usize) -> u64 {
    count_by_length(max_len).iter().sum()
}

/// Position of the first binary formula with left length `i` among the
/// length-`n` formulas.
pub(crate) fn binary_offset(counts: &[u64], n: usize, i: usize) -> u64 {
    let mut off = UNARY_OPS.len() as u64 * counts[n - 1];
    for j in 1..i {
        off += BINARY_OPS.len() as u64 * counts[j] * counts[n - 1 - j];
    }
    off
}

/// Lazily yields every formula of length `1..=max_len` exactly once.
///
/// Formulas shorter than `max_len` are kept in memory since longer formulas
/// are built from them; formulas of length `max_len` are produced on the fly.
pub struct FormulaEnumerator {
    max_len: usize,
    levels: Vec<Vec<Formula>>,
    n: usize,
    stage: usize,
    a: usize,
    b: usize,
    op: usize,
}

pub fn enumerate_formulas(max_len: usize) -> FormulaEnumerator {
    FormulaEnumerator {
        max_len,
        levels: vec![Vec::new(), atoms()],
        n: 1,
        stage: 0,
        a: 0,
        b: 0,
        op: 0,
    }
}

impl FormulaEnumerator {
    fn advance_level(&mut self) {
        self.n += 1;
        self.stage = 0;
        self.a = 0;
        self.b = 0;
        self.op = 0;
        if self.n < self.max_len {
            self.levels.push(Vec::new());
        }
    }

    fn produce(&mut self) -> Option<Formula> {
        let n = self.n;
        if n == 1 {
            let f = self.levels[1].get(self.a).cloned();
            self.a += 1;
            return f;
        }
        loop {
            if self.stage == 0 {
                if let Some(child) = self.levels[n - 1].get(self.a) {
                    let f = Formula::unary(UNARY_OPS[self.op], child);
                    self.op += 1;
                    if self.op == UNARY_OPS.len() {
                        self.op = 0;
                        self.a += 1;
                    }
                    return Some(f);
                }
            } else if self.stage + 1 < n {
                let i = self.stage;
                let (left, right) = (&self.levels[i], &self.levels[n - 1 - i]);
                if self.a < left.len() && !right.is_empty() {
                    let f = Formula::binary(BINARY_OPS[self.op], &left[self.a], &right[self.b]);
                    self.op += 1;
                    if self.op == BINARY_OPS.len() {
                        self.op = 0;
                        self.b += 1;
                        if self.b == right.len() {
                            self.b = 0;
                            self.a += 1;
                        }
                    }
                    return Some(f);
                }
            } else {
                return None;
            }
            self.stage += 1;
            self.a = 0;
            self.b = 0;
            self.op = 0;
        }
    }
}

impl Iterator for FormulaEnumerator {
    type Item = Formula;

    fn next(&mut self) -> Option<Formula> {
        while self.n <= self.max_len {
            if let Some(f) = self.produce() {
                if self.n > 1 && self.n < self.max_len {
                    self.levels[self.n].push(f.clone());
                }
                return Some(f);
            }
            self.advance_level();
        }
        None
    }
}
