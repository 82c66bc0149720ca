//! Generic exploration/exploitation strategies behind the [`Policy`] trait.
//!
//! Index policies compute one score per arm from `(ArmStats, t)` and play the
//! arm with the largest score. Scores that are not finite numbers rank below
//! every finite score, so out-of-domain parameters degrade the policy instead
//! of crashing it. UCB1-Normal, UCB2 and epsilon_n-greedy add their own
//! selection rules on top.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::bandit::ArmStats;
use crate::error::{Error, Result};
use crate::formula::{Formula, FormulaIndex};
use crate::numeric::{PowerIndex, ThetaVector};
use crate::rng::StreamRng;

/// An episode-scoped arm selection procedure.
///
/// The episode driver plays every arm once before the first call to
/// [`Policy::select`], so every arm has `plays >= 1` there.
pub trait Policy {
    /// Clears all episode state.
    fn reset(&mut self, arms: usize);

    /// Picks the arm to play at round `t` (1-based).
    fn select(&mut self, t: u64, stats: &[ArmStats], rng: &mut StreamRng) -> usize;

    /// Rounds since the last reset in which an index was not finite.
    fn index_failures(&self) -> u64 {
        0
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn reset(&mut self, arms: usize) {
        (**self).reset(arms)
    }
    fn select(&mut self, t: u64, stats: &[ArmStats], rng: &mut StreamRng) -> usize {
        (**self).select(t, stats, rng)
    }
    fn index_failures(&self) -> u64 {
        (**self).index_failures()
    }
}

/// A score for one arm given its statistics and the current round.
pub trait IndexFunction {
    fn index(&self, stats: &ArmStats, t: u64) -> f64;
}

/// Argmax over `values` with uniform tie-breaking. Non-finite values lose to
/// every finite value; if no value is finite, all arms tie.
pub fn select_arm(values: &[f64], rng: &mut StreamRng) -> usize {
    let mut best = f64::NEG_INFINITY;
    let mut ties = 0usize;
    for &v in values {
        let v = if v.is_finite() { v } else { f64::NEG_INFINITY };
        if v > best {
            best = v;
            ties = 1;
        } else if v == best {
            ties += 1;
        }
    }
    if ties == 0 {
        // every value is -inf or NaN
        return rng.random_range(0..values.len());
    }
    let mut pick = if ties > 1 { rng.random_range(0..ties) } else { 0 };
    for (k, &v) in values.iter().enumerate() {
        let v = if v.is_finite() { v } else { f64::NEG_INFINITY };
        if v == best {
            if pick == 0 {
                return k;
            }
            pick -= 1;
        }
    }
    unreachable!("tie count and scan disagree")
}

/// Plays the argmax of an [`IndexFunction`].
#[derive(Debug, Clone)]
pub struct IndexPolicy<F> {
    index: F,
    scores: Vec<f64>,
    failures: u64,
}

impl<F: IndexFunction> IndexPolicy<F> {
    pub fn new(index: F) -> Self {
        IndexPolicy {
            index,
            scores: Vec::new(),
            failures: 0,
        }
    }

    pub fn index_fn(&self) -> &F {
        &self.index
    }
}

impl<F: IndexFunction> Policy for IndexPolicy<F> {
    fn reset(&mut self, arms: usize) {
        self.scores.clear();
        self.scores.resize(arms, 0.0);
        self.failures = 0;
    }

    fn select(&mut self, t: u64, stats: &[ArmStats], rng: &mut StreamRng) -> usize {
        self.scores.resize(stats.len(), 0.0);
        let mut failed = false;
        for (score, s) in self.scores.iter_mut().zip(stats) {
            *score = self.index.index(s, t);
            failed |= !score.is_finite();
        }
        self.failures += failed as u64;
        select_arm(&self.scores, rng)
    }

    fn index_failures(&self) -> u64 {
        self.failures
    }
}

pub fn index_ucb1(stats: &ArmStats, t: u64, c: f64) -> f64 {
    stats.mean + (c * (t as f64).ln() / stats.plays as f64).sqrt()
}

/// UCB1-Tuned with the standard deviation inside the `min` (as commonly
/// printed); `variance_form` switches to the variance used by Auer et al.
pub fn index_ucb1_tuned(stats: &ArmStats, t: u64, variance_form: bool) -> f64 {
    let ln_t = (t as f64).ln();
    let n = stats.plays as f64;
    let spread = if variance_form {
        stats.stddev * stats.stddev
    } else {
        stats.stddev
    };
    stats.mean + (ln_t / n * f64::min(0.25, spread + (2.0 * ln_t / n).sqrt())).sqrt()
}

/// Requires `stats.plays >= 2`.
pub fn index_ucb1_normal(stats: &ArmStats, t: u64) -> f64 {
    let n = stats.plays as f64;
    let q = n * stats.stddev * stats.stddev / (n - 1.0);
    stats.mean + (16.0 * q * ((t - 1) as f64).ln() / n).sqrt()
}

pub fn index_ucbv(stats: &ArmStats, t: u64, zeta: f64, c: f64) -> f64 {
    let ln_t = (t as f64).ln();
    let n = stats.plays as f64;
    let var = stats.stddev * stats.stddev;
    stats.mean + (2.0 * var * zeta * ln_t / n).sqrt() + c * 3.0 * zeta * ln_t / n
}

/// Bernoulli Kullback-Leibler divergence `kl(p, q)` with `0 ln 0 = 0`.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    fn term(a: f64, b: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    }
    term(p, q) + term(1.0 - p, 1.0 - q)
}

/// Exploration budget `ln t + c ln ln t` of KL-UCB; the `ln ln t` term is
/// dropped for `t < 3` where it is negative or undefined.
pub fn klucb_budget(t: u64, c: f64) -> f64 {
    let ln_t = (t as f64).ln();
    if t < 3 {
        ln_t
    } else {
        ln_t + c * ln_t.ln()
    }
}

pub const KLUCB_MAX_ITERATIONS: usize = 100;
pub const KLUCB_TOLERANCE: f64 = 1e-9;

/// Largest `q` in `[mean, 1]` with `plays * kl(mean, q) <= budget`, by bisection.
/// A negative budget admits no `q`; the empirical mean is returned then.
pub fn klucb_upper(mean: f64, plays: u64, budget: f64) -> f64 {
    let mean = mean.clamp(0.0, 1.0);
    let n = plays as f64;
    if !(budget > 0.0) || mean >= 1.0 {
        return mean;
    }
    let (mut lo, mut hi) = (mean, 1.0);
    for _ in 0..KLUCB_MAX_ITERATIONS {
        if hi - lo <= KLUCB_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if n * kl_bernoulli(mean, mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn index_klucb(stats: &ArmStats, t: u64, c: f64) -> f64 {
    klucb_upper(stats.mean, stats.plays, klucb_budget(t, c))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ucb1 {
    pub c: f64,
}

impl IndexFunction for Ucb1 {
    fn index(&self, s: &ArmStats, t: u64) -> f64 {
        index_ucb1(s, t, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Ucb1Tuned {
    pub variance_form: bool,
}

impl IndexFunction for Ucb1Tuned {
    fn index(&self, s: &ArmStats, t: u64) -> f64 {
        index_ucb1_tuned(s, t, self.variance_form)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UcbV {
    pub zeta: f64,
    pub c: f64,
}

impl IndexFunction for UcbV {
    fn index(&self, s: &ArmStats, t: u64) -> f64 {
        index_ucbv(s, t, self.zeta, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlUcb {
    pub c: f64,
}

impl IndexFunction for KlUcb {
    fn index(&self, s: &ArmStats, t: u64) -> f64 {
        index_klucb(s, t, self.c)
    }
}

/// UCB1-Normal: arms played fewer than `ceil(8 ln t)` times are played first
/// (lowest arm number), otherwise the index decides.
#[derive(Debug, Clone, Default)]
pub struct Ucb1Normal {
    inner: IndexPolicy<Ucb1NormalIndex>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Ucb1NormalIndex;

impl IndexFunction for Ucb1NormalIndex {
    fn index(&self, s: &ArmStats, t: u64) -> f64 {
        index_ucb1_normal(s, t)
    }
}

impl Default for IndexPolicy<Ucb1NormalIndex> {
    fn default() -> Self {
        IndexPolicy::new(Ucb1NormalIndex)
    }
}

/// Minimum play count enforced by UCB1-Normal at round `t`.
pub fn ucb1_normal_min_plays(t: u64) -> u64 {
    (8.0 * (t as f64).ln()).ceil() as u64
}

impl Policy for Ucb1Normal {
    fn reset(&mut self, arms: usize) {
        self.inner.reset(arms);
    }

    fn select(&mut self, t: u64, stats: &[ArmStats], rng: &mut StreamRng) -> usize {
        let min_plays = ucb1_normal_min_plays(t);
        if let Some(k) = stats.iter().position(|s| s.plays < min_plays) {
            return k;
        }
        self.inner.select(t, stats, rng)
    }

    fn index_failures(&self) -> u64 {
        self.inner.index_failures()
    }
}

/// Epoch length bookkeeping of UCB2: `tau(r) = ceil((1 + alpha)^r)`.
pub fn ucb2_tau(alpha: f64, r: u64) -> u64 {
    let v = (1.0 + alpha).powf(r as f64).ceil();
    if v.is_nan() || v < 1.0 {
        1
    } else if v >= u64::MAX as f64 {
        u64::MAX
    } else {
        v as u64
    }
}

/// Returns `(r', len)`: the epoch counter after the next epoch with positive
/// length starting from `r`, and that length. Zero-length epochs leave every
/// index unchanged, so they are skipped in one step.
fn ucb2_next_epoch(alpha: f64, r: u64) -> (u64, u64) {
    let base = 1.0 + alpha;
    if !(base > 1.0) || !base.is_finite() {
        return (r + 1, 1);
    }
    let current = ucb2_tau(alpha, r);
    let mut next = r + 1;
    if ucb2_tau(alpha, next) == current {
        let guess = ((current as f64).ln() / base.ln()).floor() as u64;
        next = next.max(guess.saturating_sub(1));
        while ucb2_tau(alpha, next) == current {
            next += 1;
        }
    }
    (next, ucb2_tau(alpha, next).saturating_sub(current).max(1))
}

#[derive(Debug, Clone)]
pub struct Ucb2 {
    pub alpha: f64,
    epochs: Vec<u64>,
    scores: Vec<f64>,
    /// `(arm, remaining plays)` of the running epoch.
    pending: Option<(usize, u64)>,
    failures: u64,
}

impl Ucb2 {
    pub fn new(alpha: f64) -> Self {
        Ucb2 {
            alpha,
            epochs: Vec::new(),
            scores: Vec::new(),
            pending: None,
            failures: 0,
        }
    }

    pub fn epochs(&self) -> &[u64] {
        &self.epochs
    }

    fn index(&self, s: &ArmStats, t: u64, r: u64) -> f64 {
        let tau = ucb2_tau(self.alpha, r) as f64;
        let a = self.alpha;
        s.mean + ((1.0 + a) * (std::f64::consts::E * t as f64 / tau).ln() / (2.0 * tau)).sqrt()
    }
}

impl Policy for Ucb2 {
    fn reset(&mut self, arms: usize) {
        self.epochs = vec![0; arms];
        self.scores = vec![0.0; arms];
        self.pending = None;
        self.failures = 0;
    }

    fn select(&mut self, t: u64, stats: &[ArmStats], rng: &mut StreamRng) -> usize {
        if let Some((arm, remaining)) = self.pending {
            if remaining > 0 {
                self.pending = Some((arm, remaining - 1));
                return arm;
            }
        }
        let mut failed = false;
        for (k, s) in stats.iter().enumerate() {
            self.scores[k] = self.index(s, t, self.epochs[k]);
            failed |= !self.scores[k].is_finite();
        }
        self.failures += failed as u64;
        let arm = select_arm(&self.scores, rng);
        let (next, len) = ucb2_next_epoch(self.alpha, self.epochs[arm]);
        self.epochs[arm] = next;
        self.pending = Some((arm, len - 1));
        arm
    }

    fn index_failures(&self) -> u64 {
        self.failures
    }
}

/// Exploration probability of epsilon_n-greedy: `min(1, cK / (d^2 t))`.
pub fn epsgreedy_epsilon(c: f64, d: f64, arms: usize, t: u64) -> f64 {
    f64::min(1.0, c * arms as f64 / (d * d * t as f64))
}

#[derive(Debug, Clone)]
pub struct EpsGreedy {
    pub c: f64,
    pub d: f64,
    means: Vec<f64>,
}

impl EpsGreedy {
    pub fn new(c: f64, d: f64) -> Self {
        EpsGreedy {
            c,
            d,
            means: Vec::new(),
        }
    }
}

impl Policy for EpsGreedy {
    fn reset(&mut self, arms: usize) {
        self.means = vec![0.0; arms];
    }

    fn select(&mut self, t: u64, stats: &[ArmStats], rng: &mut StreamRng) -> usize {
        let eps = epsgreedy_epsilon(self.c, self.d, stats.len(), t);
        if rng.random::<f64>() < eps {
            return rng.random_range(0..stats.len());
        }
        self.means.clear();
        self.means.extend(stats.iter().map(|s| s.mean));
        select_arm(&self.means, rng)
    }
}

/// A policy by name and parameters, as written in configs and on the CLI:
/// `ucb1:C=2`, `ucb1tuned`, `ucb1normal`, `ucb2:alpha=0.001`,
/// `ucbv:zeta=1,c=1`, `klucb:c=0`, `epsgreedy:c=1,d=1`, `formula:<expr>`,
/// `power:P=1,theta=@theta.json` (or inline `theta=v0;v1;...`).
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Ucb1 { c: f64 },
    Ucb1Tuned { variance_form: bool },
    Ucb1Normal,
    Ucb2 { alpha: f64 },
    UcbV { zeta: f64, c: f64 },
    KlUcb { c: f64 },
    EpsGreedy { c: f64, d: f64 },
    Formula(Formula),
    Power(ThetaVector),
}

impl PolicySpec {
    /// Builds a fresh episode-local policy.
    pub fn build(&self) -> Box<dyn Policy + Send> {
        match self {
            PolicySpec::Ucb1 { c } => Box::new(IndexPolicy::new(Ucb1 { c: *c })),
            PolicySpec::Ucb1Tuned { variance_form } => Box::new(IndexPolicy::new(Ucb1Tuned {
                variance_form: *variance_form,
            })),
            PolicySpec::Ucb1Normal => Box::new(Ucb1Normal::default()),
            PolicySpec::Ucb2 { alpha } => Box::new(Ucb2::new(*alpha)),
            PolicySpec::UcbV { zeta, c } => Box::new(IndexPolicy::new(UcbV { zeta: *zeta, c: *c })),
            PolicySpec::KlUcb { c } => Box::new(IndexPolicy::new(KlUcb { c: *c })),
            PolicySpec::EpsGreedy { c, d } => Box::new(EpsGreedy::new(*c, *d)),
            PolicySpec::Formula(f) => Box::new(IndexPolicy::new(FormulaIndex::new(f.clone()))),
            PolicySpec::Power(theta) => Box::new(IndexPolicy::new(PowerIndex::new(theta.clone()))),
        }
    }

    /// Tunable parameters, in a fixed order per kind.
    pub fn params(&self) -> Vec<f64> {
        match self {
            PolicySpec::Ucb1 { c } => vec![*c],
            PolicySpec::Ucb2 { alpha } => vec![*alpha],
            PolicySpec::UcbV { zeta, c } => vec![*zeta, *c],
            PolicySpec::KlUcb { c } => vec![*c],
            PolicySpec::EpsGreedy { c, d } => vec![*c, *d],
            PolicySpec::Power(theta) => theta.values().to_vec(),
            PolicySpec::Ucb1Tuned { .. } | PolicySpec::Ucb1Normal | PolicySpec::Formula(_) => {
                Vec::new()
            }
        }
    }

    /// Same kind with parameters replaced; `params` must have the length of
    /// [`PolicySpec::params`].
    pub fn with_params(&self, params: &[f64]) -> PolicySpec {
        assert_eq!(params.len(), self.params().len(), "parameter count mismatch");
        match self {
            PolicySpec::Ucb1 { .. } => PolicySpec::Ucb1 { c: params[0] },
            PolicySpec::Ucb2 { .. } => PolicySpec::Ucb2 { alpha: params[0] },
            PolicySpec::UcbV { .. } => PolicySpec::UcbV {
                zeta: params[0],
                c: params[1],
            },
            PolicySpec::KlUcb { .. } => PolicySpec::KlUcb { c: params[0] },
            PolicySpec::EpsGreedy { .. } => PolicySpec::EpsGreedy {
                c: params[0],
                d: params[1],
            },
            PolicySpec::Power(theta) => PolicySpec::Power(
                ThetaVector::new(theta.degree(), params.to_vec()).expect("length checked above"),
            ),
            other => other.clone(),
        }
    }
}

fn fmt_list(f: &mut fmt::Formatter<'_>, values: &[f64]) -> fmt::Result {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            f.write_str(";")?;
        }
        write!(f, "{v}")?;
    }
    Ok(())
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Ucb1 { c } => write!(f, "ucb1:C={c}"),
            PolicySpec::Ucb1Tuned { variance_form: false } => f.write_str("ucb1tuned"),
            PolicySpec::Ucb1Tuned { variance_form: true } => f.write_str("ucb1tuned:variance=true"),
            PolicySpec::Ucb1Normal => f.write_str("ucb1normal"),
            PolicySpec::Ucb2 { alpha } => write!(f, "ucb2:alpha={alpha}"),
            PolicySpec::UcbV { zeta, c } => write!(f, "ucbv:zeta={zeta},c={c}"),
            PolicySpec::KlUcb { c } => write!(f, "klucb:c={c}"),
            PolicySpec::EpsGreedy { c, d } => write!(f, "epsgreedy:c={c},d={d}"),
            PolicySpec::Formula(expr) => write!(f, "formula:{expr}"),
            PolicySpec::Power(theta) => {
                write!(f, "power:P={},theta=", theta.degree())?;
                fmt_list(f, theta.values())
            }
        }
    }
}

struct Params<'a> {
    spec: &'a str,
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Params<'a> {
    fn parse(spec: &'a str, body: &'a str) -> Result<Self> {
        let mut pairs = Vec::new();
        for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| Error::PolicySpec {
                spec: spec.to_string(),
                reason: format!("expected key=value, got `{part}`"),
            })?;
            pairs.push((k.trim(), v.trim()));
        }
        Ok(Params { spec, pairs })
    }

    fn err(&self, reason: String) -> Error {
        Error::PolicySpec {
            spec: self.spec.to_string(),
            reason,
        }
    }

    fn raw(&self, names: &[&str]) -> Option<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| names.contains(k))
            .map(|(_, v)| *v)
    }

    fn num(&self, names: &[&str], default: f64) -> Result<f64> {
        match self.raw(names) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|e| self.err(format!("bad value for {}: {e}", names[0]))),
        }
    }

    fn check_known(&self, known: &[&str]) -> Result<()> {
        for (k, _) in &self.pairs {
            if !known.contains(k) {
                return Err(self.err(format!("unknown parameter `{k}`")));
            }
        }
        Ok(())
    }
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, body) = s.split_once(':').unwrap_or((s, ""));
        let name_lc = name.trim().to_ascii_lowercase();
        if name_lc == "formula" {
            return Ok(PolicySpec::Formula(body.parse()?));
        }
        let p = Params::parse(s, body)?;
        let spec = match name_lc.as_str() {
            "ucb1" => {
                p.check_known(&["C", "c"])?;
                PolicySpec::Ucb1 { c: p.num(&["C", "c"], 2.0)? }
            }
            "ucb1tuned" | "ucb1-tuned" => {
                p.check_known(&["variance"])?;
                let variance_form = match p.raw(&["variance"]) {
                    None | Some("false") | Some("0") => false,
                    Some("true") | Some("1") => true,
                    Some(v) => return Err(p.err(format!("variance must be true/false, got `{v}`"))),
                };
                PolicySpec::Ucb1Tuned { variance_form }
            }
            "ucb1normal" | "ucb1-normal" => {
                p.check_known(&[])?;
                PolicySpec::Ucb1Normal
            }
            "ucb2" => {
                p.check_known(&["alpha"])?;
                PolicySpec::Ucb2 { alpha: p.num(&["alpha"], 0.001)? }
            }
            "ucbv" | "ucb-v" => {
                p.check_known(&["zeta", "c"])?;
                PolicySpec::UcbV {
                    zeta: p.num(&["zeta"], 1.0)?,
                    c: p.num(&["c"], 1.0)?,
                }
            }
            "klucb" | "kl-ucb" => {
                p.check_known(&["c"])?;
                PolicySpec::KlUcb { c: p.num(&["c"], 0.0)? }
            }
            "epsgreedy" | "eps-greedy" => {
                p.check_known(&["c", "d"])?;
                PolicySpec::EpsGreedy {
                    c: p.num(&["c"], 1.0)?,
                    d: p.num(&["d"], 1.0)?,
                }
            }
            "power" => {
                p.check_known(&["P", "p", "theta"])?;
                let degree = p.num(&["P", "p"], 1.0)?;
                if degree < 0.0 || degree.fract() != 0.0 {
                    return Err(p.err(format!("P must be a nonnegative integer, got {degree}")));
                }
                let degree = degree as usize;
                let theta = match p.raw(&["theta"]) {
                    None => ThetaVector::zeros(degree),
                    Some(v) if v.starts_with('@') => {
                        let t = ThetaVector::load(std::path::Path::new(&v[1..]))?;
                        if t.degree() != degree {
                            return Err(p.err(format!(
                                "theta file has P={}, spec says P={degree}",
                                t.degree()
                            )));
                        }
                        t
                    }
                    Some(v) => {
                        let values = v
                            .split(';')
                            .map(|x| x.trim().parse::<f64>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|e| p.err(format!("bad theta list: {e}")))?;
                        ThetaVector::new(degree, values)?
                    }
                };
                PolicySpec::Power(theta)
            }
            other => return Err(p.err(format!("unknown policy `{other}`"))),
        };
        Ok(spec)
    }
}

impl serde::Serialize for PolicySpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for PolicySpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
