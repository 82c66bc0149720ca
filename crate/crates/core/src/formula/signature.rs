//! Random evaluation points and rank signatures.
//!
//! Two index formulas induce the same policy when they order every possible
//! statistic tuple the same way. This is approximated on a finite set of
//! random points: a formula's signature is the dense ranking of its values on
//! those points, hashed to 128 bits.

use std::fmt;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_128;

use super::expr::{Formula, Point};
use crate::error::{Error, Result};
use crate::rng::StreamSeed;

/// Relative tolerance below which two values share a rank.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// How `(rbar, sbar)` are drawn once `(t, tk)` are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticsLaw {
    /// `rbar ~ U[0, rbar_max]`, `sbar ~ U[0, sbar_max]`, independently.
    Uniform,
    /// Statistics of `tk` Bernoulli(p) rewards with `p ~ U[0, 1]`:
    /// `rbar = successes / tk`, `sbar = sqrt(rbar (1 - rbar))`. Boundary
    /// values such as `rbar = 0` or `sbar = 0` then occur with positive
    /// probability, as they do in real episodes.
    #[default]
    Bernoulli,
}

/// Ranges from which the statistic tuples are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDomain {
    pub count: usize,
    pub rbar_max: f64,
    pub sbar_max: f64,
    pub t_min: u64,
    pub t_max: u64,
    #[serde(default)]
    pub law: StatisticsLaw,
}

impl Default for SampleDomain {
    fn default() -> Self {
        SampleDomain {
            count: 1024,
            rbar_max: 1.0,
            sbar_max: 0.5,
            t_min: 2,
            t_max: 10_000,
            law: StatisticsLaw::Bernoulli,
        }
    }
}

impl SampleDomain {
    pub fn with_count(count: usize) -> Self {
        SampleDomain {
            count,
            ..SampleDomain::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || self.count > u16::MAX as usize + 1 {
            return Err(Error::Config(format!(
                "sample count must be in 1..=65536, got {}",
                self.count
            )));
        }
        if !(self.rbar_max >= 0.0 && self.sbar_max >= 0.0) || self.t_min < 1 || self.t_max < self.t_min {
            return Err(Error::Config("invalid sample domain".into()));
        }
        Ok(())
    }
}

/// One random statistic tuple. `t ~ U{t_min..=t_max}` and `tk ~ U{1..=t}`;
/// `rbar` and `sbar` follow the domain's [`StatisticsLaw`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub rbar: f64,
    pub sbar: f64,
    pub tk: u64,
    pub t: u64,
}

impl SamplePoint {
    pub fn point(&self) -> Point {
        Point {
            rk: self.rbar,
            sk: self.sbar,
            tk: self.tk as f64,
            t: self.t as f64,
        }
    }
}

pub fn draw_samples(domain: &SampleDomain, seed: StreamSeed) -> Vec<SamplePoint> {
    let mut rng = seed.rng();
    (0..domain.count)
        .map(|_| match domain.law {
            StatisticsLaw::Uniform => {
                let rbar = rng.random::<f64>() * domain.rbar_max;
                let sbar = rng.random::<f64>() * domain.sbar_max;
                let t = rng.random_range(domain.t_min..=domain.t_max);
                let tk = rng.random_range(1..=t);
                SamplePoint { rbar, sbar, tk, t }
            }
            StatisticsLaw::Bernoulli => {
                let t = rng.random_range(domain.t_min..=domain.t_max);
                let tk = rng.random_range(1..=t);
                let p: f64 = rng.random();
                let successes = Binomial::new(tk, p).expect("p in [0, 1]").sample(&mut rng);
                let rbar = successes as f64 / tk as f64;
                let sbar = (rbar * (1.0 - rbar)).sqrt();
                SamplePoint { rbar, sbar, tk, t }
            }
        })
        .collect()
}

/// 128-bit digest of a dense rank vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature(pub u128);

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl std::str::FromStr for Signature {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        u128::from_str_radix(s, 16)
            .map(Signature)
            .map_err(|e| Error::Config(format!("bad signature `{s}`: {e}")))
    }
}

impl Serialize for Signature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs())
}

/// Dense ranks (0 = smallest) of finite `values`; neighbours in sorted order
/// within [`TIE_TOLERANCE`] relative share a rank. `order` is scratch space.
pub fn dense_ranks_into(values: &[f64], order: &mut Vec<u32>, ranks: &mut Vec<u16>) {
    order.clear();
    order.extend(0..values.len() as u32);
    order.sort_unstable_by(|&i, &j| values[i as usize].total_cmp(&values[j as usize]));
    ranks.clear();
    ranks.resize(values.len(), 0);
    let mut rank = 0u16;
    for w in 0..order.len() {
        let i = order[w] as usize;
        if w > 0 && !tied(values[order[w - 1] as usize], values[i]) {
            rank += 1;
        }
        ranks[i] = rank;
    }
}

pub fn dense_ranks(values: &[f64]) -> Vec<u16> {
    let mut ranks = Vec::new();
    dense_ranks_into(values, &mut Vec::new(), &mut ranks);
    ranks
}

pub fn rank_digest(ranks: &[u16]) -> Signature {
    let mut bytes = Vec::with_capacity(ranks.len() * 2);
    for r in ranks {
        bytes.extend_from_slice(&r.to_le_bytes());
    }
    Signature(xxh3_128(&bytes))
}

/// Values of `f` on every sample, or `None` if any is invalid.
pub fn eval_on_samples(f: &Formula, samples: &[SamplePoint]) -> Option<Vec<f64>> {
    samples.iter().map(|s| f.eval(&s.point())).collect()
}

/// Signature of `f` with its rank vector, or `None` if `f` is invalid on
/// some sample.
pub fn signature_with_ranks(f: &Formula, samples: &[SamplePoint]) -> Option<(Signature, Vec<u16>)> {
    let values = eval_on_samples(f, samples)?;
    let ranks = dense_ranks(&values);
    Some((rank_digest(&ranks), ranks))
}

pub fn signature_of(f: &Formula, samples: &[SamplePoint]) -> Option<Signature> {
    signature_with_ranks(f, samples).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(s: &str, samples: &[SamplePoint]) -> Option<Signature> {
        signature_of(&s.parse().unwrap(), samples)
    }

    #[test]
    fn samples_respect_domains() {
        for law in [StatisticsLaw::Uniform, StatisticsLaw::Bernoulli] {
            let domain = SampleDomain { law, ..SampleDomain::default() };
            let samples = draw_samples(&domain, StreamSeed::new(1));
            assert_eq!(samples.len(), 1024);
            for s in &samples {
                assert!((0.0..=1.0).contains(&s.rbar));
                assert!((0.0..=0.5).contains(&s.sbar));
                assert!((2..=10_000).contains(&s.t));
                assert!(s.tk >= 1 && s.tk <= s.t);
            }
            assert_eq!(samples, draw_samples(&domain, StreamSeed::new(1)));
        }
    }

    #[test]
    fn bernoulli_law_reaches_boundaries() {
        let samples = draw_samples(&SampleDomain::with_count(20_000), StreamSeed::new(8));
        assert!(samples.iter().any(|s| s.rbar == 0.0 && s.sbar == 0.0));
        assert!(samples.iter().any(|s| s.rbar == 1.0));
        for s in &samples {
            let successes = s.rbar * s.tk as f64;
            assert!((successes - successes.round()).abs() < 1e-6);
            assert_eq!(s.sbar, (s.rbar * (1.0 - s.rbar)).sqrt());
        }
    }

    #[test]
    fn ranks() {
        assert_eq!(dense_ranks(&[3.0, 1.0, 2.0, 1.0]), vec![2, 0, 1, 0]);
        assert_eq!(dense_ranks(&[1.0, 1.0 + 1e-12, 2.0]), vec![0, 0, 1]);
        assert_eq!(dense_ranks(&[0.0, 1e-300]), vec![0, 1]);
        assert_eq!(dense_ranks(&[5.0; 4]), vec![0; 4]);
    }

    #[test]
    fn equivalences() {
        let samples = draw_samples(&SampleDomain::default(), StreamSeed::new(2));
        assert_eq!(sig("1", &samples), sig("7", &samples));
        let greedy = sig("rk", &samples);
        assert!(greedy.is_some());
        assert_eq!(sig("mul(rk,2)", &samples), greedy);
        assert_eq!(sig("sqrt(rk)", &samples), greedy);
        assert_eq!(sig("add(rk,rk)", &samples), greedy);
        assert_ne!(sig("neg(rk)", &samples), greedy);
        assert_eq!(sig("ln(tk)", &samples), sig("tk", &samples));
        assert_eq!(sig("sqrt(tk)", &samples), sig("tk", &samples));
        assert_ne!(sig("tk", &samples), sig("1", &samples));
        assert_eq!(sig("ln(sub(rk,2))", &samples), None);
    }

    #[test]
    fn signature_text() {
        let s = Signature(0xabc);
        assert_eq!(s.to_string(), "00000000000000000000000000000abc");
        assert_eq!(s.to_string().parse::<Signature>().unwrap(), s);
    }
}
