//! Grouping formulas into rank-equivalence classes.
//!
//! [`partition`] walks the enumeration one formula at a time. [`partition_fast`]
//! gives the same result without touching every formula: formulas of one
//! length that agree on every sample point are merged into a value class
//! first, and longer formulas are only built from class representatives,
//! weighted by class sizes. That keeps the full `L = 7` space (33.5M
//! formulas) within minutes and a few GB.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use super::enumerate::{atoms, binary_offset, count_by_length, enumerate_formulas};
use super::expr::{BinaryOp, Formula, BINARY_OPS, UNARY_OPS};
use super::signature::{dense_ranks_into, rank_digest, signature_with_ranks, SamplePoint, Signature};
use crate::error::{Error, Result};

/// One equivalence class: its shortest (then earliest) member and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormulaClass {
    pub expr: Formula,
    pub length: usize,
    pub class_size: u64,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub max_len: usize,
    /// Formulas enumerated per length (index 0 unused).
    pub enumerated: Vec<u64>,
    /// Formulas invalid on some sample, per length.
    pub invalid: Vec<u64>,
    /// Classes ordered by representative length then enumeration order.
    pub classes: Vec<FormulaClass>,
}

impl Partition {
    pub fn total_enumerated(&self) -> u64 {
        self.enumerated.iter().sum()
    }

    pub fn total_invalid(&self) -> u64 {
        self.invalid.iter().sum()
    }

    pub fn representatives(&self) -> Vec<Formula> {
        self.classes.iter().map(|c| c.expr.clone()).collect()
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        write_classes(&self.classes, path)
    }
}

pub fn write_classes(classes: &[FormulaClass], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for c in classes {
        serde_json::to_writer(&mut w, c)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_classes(path: &Path) -> Result<Vec<FormulaClass>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

struct SigEntry {
    rep: Formula,
    len: usize,
    ordinal: u64,
    size: u64,
    ranks: Box<[u16]>,
}

/// Signature classes keyed by digest, with one stored rank vector per class
/// to detect digest collisions.
#[derive(Default)]
struct SigTable {
    index: HashMap<u128, u32>,
    entries: Vec<SigEntry>,
}

impl SigTable {
    fn insert(
        &mut self,
        sig: Signature,
        ranks: &[u16],
        len: usize,
        ordinal: u64,
        mult: u64,
        rep: impl FnOnce() -> Formula,
    ) -> Result<u32> {
        if let Some(&id) = self.index.get(&sig.0) {
            let e = &mut self.entries[id as usize];
            if *e.ranks != *ranks {
                return Err(Error::SignatureCollision {
                    first: e.rep.to_string(),
                    second: rep().to_string(),
                });
            }
            e.size += mult;
            if (len, ordinal) < (e.len, e.ordinal) {
                e.rep = rep();
                e.len = len;
                e.ordinal = ordinal;
            }
            return Ok(id);
        }
        let id = self.entries.len() as u32;
        self.entries.push(SigEntry {
            rep: rep(),
            len,
            ordinal,
            size: mult,
            ranks: ranks.into(),
        });
        self.index.insert(sig.0, id);
        Ok(id)
    }

    fn add(&mut self, id: u32, mult: u64) {
        self.entries[id as usize].size += mult;
    }

    fn finish(self) -> Vec<FormulaClass> {
        let mut digests = vec![0u128; self.entries.len()];
        for (d, id) in self.index {
            digests[id as usize] = d;
        }
        let mut classes: Vec<(u64, FormulaClass)> = self
            .entries
            .into_iter()
            .zip(digests)
            .map(|(e, d)| {
                (
                    e.ordinal,
                    FormulaClass {
                        length: e.len,
                        expr: e.rep,
                        class_size: e.size,
                        signature: Signature(d),
                    },
                )
            })
            .collect();
        classes.sort_by_key(|(ord, c)| (c.length, *ord));
        classes.into_iter().map(|(_, c)| c).collect()
    }
}

fn check_samples(samples: &[SamplePoint]) -> Result<()> {
    if samples.is_empty() || samples.len() > u16::MAX as usize + 1 {
        return Err(Error::Config(format!(
            "partitioning needs 1..=65536 samples, got {}",
            samples.len()
        )));
    }
    Ok(())
}

/// Streams every formula of length `<= max_len` through its signature.
pub fn partition(max_len: usize, samples: &[SamplePoint]) -> Result<Partition> {
    check_samples(samples)?;
    let enumerated = count_by_length(max_len);
    let mut valid = vec![0u64; max_len + 1];
    let mut ordinals = vec![0u64; max_len + 1];
    let mut table = SigTable::default();
    let mut formulas = enumerate_formulas(max_len).peekable();
    const BATCH: usize = 8192;
    while formulas.peek().is_some() {
        let batch: Vec<Formula> = formulas.by_ref().take(BATCH).collect();
        let sigs: Vec<_> = batch
            .par_iter()
            .map(|f| signature_with_ranks(f, samples))
            .collect();
        for (f, sig) in batch.into_iter().zip(sigs) {
            let len = f.len();
            let ordinal = ordinals[len];
            ordinals[len] += 1;
            if let Some((sig, ranks)) = sig {
                valid[len] += 1;
                table.insert(sig, &ranks, len, ordinal, 1, || f)?;
            }
        }
    }
    let invalid = enumerated.iter().zip(&valid).map(|(a, v)| a - v).collect();
    Ok(Partition {
        max_len,
        enumerated,
        invalid,
        classes: table.finish(),
    })
}

/// Formulas of one length grouped by exact value vector on the samples.
#[derive(Default)]
struct ValueLevel {
    values: Vec<f64>,
    reps: Vec<Formula>,
    mults: Vec<u64>,
    ordinals: Vec<u64>,
    sig_ids: Vec<u32>,
    index: HashMap<u128, u32>,
}

impl ValueLevel {
    fn len(&self) -> usize {
        self.reps.len()
    }

    fn row(&self, d: usize, i: usize) -> &[f64] {
        &self.values[i * d..(i + 1) * d]
    }
}

/// A value class of length `max_len - 1`: its signature and the signatures
/// of its unary extensions (`None` where invalid).
struct TailClass {
    sig: u32,
    children: [Option<u32>; 5],
}

fn value_digest(values: &[f64], bytes: &mut Vec<u8>) -> u128 {
    bytes.clear();
    for v in values {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    xxh3_128(bytes)
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

struct Ranker {
    order: Vec<u32>,
    ranks: Vec<u16>,
}

impl Ranker {
    fn sign(&mut self, values: &[f64]) -> Signature {
        dense_ranks_into(values, &mut self.order, &mut self.ranks);
        rank_digest(&self.ranks)
    }
}

/// Shared mutable state of [`partition_fast`].
struct Fast<'a> {
    max_len: usize,
    valid: Vec<u64>,
    table: SigTable,
    tail: HashMap<u128, TailClass>,
    last: HashMap<u128, u32>,
    ranker: Ranker,
    bytes: Vec<u8>,
    child: Vec<f64>,
    samples: &'a [SamplePoint],
}

impl Fast<'_> {
    /// A formula of the maximal length.
    fn emit_last(
        &mut self,
        values: &[f64],
        ordinal: u64,
        mult: u64,
        rep: impl FnOnce() -> Formula,
    ) -> Result<Option<u32>> {
        if !all_finite(values) {
            return Ok(None);
        }
        let n = self.max_len;
        self.valid[n] += mult;
        let h = value_digest(values, &mut self.bytes);
        if let Some(&id) = self.last.get(&h) {
            self.table.add(id, mult);
            return Ok(Some(id));
        }
        let sig = self.ranker.sign(values);
        let id = self.table.insert(sig, &self.ranker.ranks, n, ordinal, mult, rep)?;
        self.last.insert(h, id);
        Ok(Some(id))
    }

    /// A formula of length `max_len - 1`; its unary extensions are handled
    /// right away so that its values need not be kept.
    fn emit_tail(
        &mut self,
        values: &[f64],
        ordinal: u64,
        mult: u64,
        rep: impl FnOnce() -> Formula,
    ) -> Result<()> {
        if !all_finite(values) {
            return Ok(());
        }
        let n = self.max_len - 1;
        self.valid[n] += mult;
        let h = value_digest(values, &mut self.bytes);
        if let Some(tc) = self.tail.get(&h) {
            let (sig, children) = (tc.sig, tc.children);
            self.table.add(sig, mult);
            for c in children.into_iter().flatten() {
                self.table.add(c, mult);
            }
            self.valid[n + 1] += mult * children.iter().flatten().count() as u64;
            return Ok(());
        }
        let rep = rep();
        let sig = self.ranker.sign(values);
        let sig_id = self.table.insert(sig, &self.ranker.ranks, n, ordinal, mult, || rep.clone())?;
        let mut children = [None; 5];
        let mut child = std::mem::take(&mut self.child);
        for (k, op) in UNARY_OPS.iter().enumerate() {
            child.clear();
            child.extend(values.iter().map(|&x| op.eval_raw(x)));
            let ord = ordinal * UNARY_OPS.len() as u64 + k as u64;
            children[k] = self.emit_last(&child, ord, mult, || Formula::unary(*op, &rep))?;
        }
        self.child = child;
        self.tail.insert(h, TailClass { sig: sig_id, children });
        Ok(())
    }

    /// A formula of a stored length.
    fn emit_stored(
        &mut self,
        n: usize,
        level: &mut ValueLevel,
        values: &[f64],
        ordinal: u64,
        mult: u64,
        rep: impl FnOnce() -> Formula,
    ) -> Result<()> {
        if !all_finite(values) {
            return Ok(());
        }
        let h = value_digest(values, &mut self.bytes);
        self.valid[n] += mult;
        if let Some(&c) = level.index.get(&h) {
            level.mults[c as usize] += mult;
            self.table.add(level.sig_ids[c as usize], mult);
            return Ok(());
        }
        let rep = rep();
        let sig = self.ranker.sign(values);
        let sig_id = self
            .table
            .insert(sig, &self.ranker.ranks, n, ordinal, mult, || rep.clone())?;
        level.index.insert(h, level.len() as u32);
        level.values.extend_from_slice(values);
        level.reps.push(rep);
        level.mults.push(mult);
        level.ordinals.push(ordinal);
        level.sig_ids.push(sig_id);
        Ok(())
    }

    /// Routes a formula of length `n` to the right handler.
    fn emit(
        &mut self,
        n: usize,
        level: &mut ValueLevel,
        values: &[f64],
        ordinal: u64,
        mult: u64,
        rep: impl FnOnce() -> Formula,
    ) -> Result<()> {
        if n == self.max_len {
            self.emit_last(values, ordinal, mult, rep).map(|_| ())
        } else if n + 1 == self.max_len {
            self.emit_tail(values, ordinal, mult, rep)
        } else {
            self.emit_stored(n, level, values, ordinal, mult, rep)
        }
    }

    fn atom_values(&self, f: &Formula) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| f.eval(&s.point()).expect("atoms are finite"))
            .collect()
    }
}

fn binary_into(op: BinaryOp, a: &[f64], b: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(a.iter().zip(b).map(|(&x, &y)| op.eval_raw(x, y)));
}

/// Same result as [`partition`], computed over value classes.
pub fn partition_fast(max_len: usize, samples: &[SamplePoint]) -> Result<Partition> {
    check_samples(samples)?;
    let counts = count_by_length(max_len);
    let d = samples.len();
    let mut fast = Fast {
        max_len,
        valid: vec![0; max_len + 2],
        table: SigTable::default(),
        tail: HashMap::new(),
        last: HashMap::new(),
        ranker: Ranker {
            order: Vec::new(),
            ranks: Vec::new(),
        },
        bytes: Vec::with_capacity(d * 8),
        child: Vec::with_capacity(d),
        samples,
    };
    // levels[n] holds value classes of length n for n <= max_len - 2.
    let mut levels: Vec<ValueLevel> = vec![ValueLevel::default()];
    let mut buf = Vec::with_capacity(d);
    for n in 1..=max_len {
        let mut level = ValueLevel::default();
        if n == 1 {
            for (i, f) in atoms().into_iter().enumerate() {
                let values = fast.atom_values(&f);
                fast.emit(n, &mut level, &values, i as u64, 1, || f)?;
            }
        } else {
            if n + 1 <= max_len {
                // Unary formulas over a stored level; at the maximal length
                // they were produced together with their children.
                let prev = &levels[n - 1];
                for c in 0..prev.len() {
                    for (k, op) in UNARY_OPS.iter().enumerate() {
                        buf.clear();
                        buf.extend(prev.row(d, c).iter().map(|&x| op.eval_raw(x)));
                        let ord = prev.ordinals[c] * UNARY_OPS.len() as u64 + k as u64;
                        let rep = || Formula::unary(*op, &prev.reps[c]);
                        fast.emit(n, &mut level, &buf, ord, prev.mults[c], rep)?;
                    }
                }
            }
            for i in 1..n.saturating_sub(1) {
                let (left, right) = (&levels[i], &levels[n - 1 - i]);
                let offset = binary_offset(&counts, n, i);
                let right_count = counts[n - 1 - i];
                for a in 0..left.len() {
                    for b in 0..right.len() {
                        let mult = left.mults[a] * right.mults[b];
                        let base = (left.ordinals[a] * right_count + right.ordinals[b])
                            * BINARY_OPS.len() as u64;
                        for (k, op) in BINARY_OPS.iter().enumerate() {
                            binary_into(*op, left.row(d, a), right.row(d, b), &mut buf);
                            let rep = || Formula::binary(*op, &left.reps[a], &right.reps[b]);
                            fast.emit(n, &mut level, &buf, offset + base + k as u64, mult, rep)?;
                        }
                    }
                }
            }
        }
        levels.push(level);
    }
    let valid = &fast.valid;
    let invalid = (0..=max_len).map(|n| counts[n] - valid[n]).collect();
    Ok(Partition {
        max_len,
        enumerated: counts,
        invalid,
        classes: fast.table.finish(),
    })
}

/// The rank vector of a formula on the samples, for verification.
pub fn ranks_of(f: &Formula, samples: &[SamplePoint]) -> Option<Vec<u16>> {
    signature_with_ranks(f, samples).map(|(_, r)| r)
}
