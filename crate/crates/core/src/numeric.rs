//! Power-P index functions: linear combinations of every monomial of degree
//! at most `P` per variable in `(sqrt(ln t), 1/sqrt(t_k), r_k, sigma_k)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::ArmStats;
use crate::error::{Error, Result};
use crate::policies::IndexFunction;

/// Number of Power-P features, `(P + 1)^4`.
pub fn feature_count(degree: usize) -> usize {
    (degree + 1).pow(4)
}

/// Position of monomial `(i, j, k, l)` in row-major order.
pub fn feature_position(degree: usize, i: usize, j: usize, k: usize, l: usize) -> usize {
    let n = degree + 1;
    ((i * n + j) * n + k) * n + l
}

/// Power-P features of one arm, row-major over exponents `(i, j, k, l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    degree: usize,
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.values[feature_position(self.degree, i, j, k, l)]
    }
}

/// Powers `v^0 ..= v^degree` with `0^0 = 1`.
fn powers(v: f64, degree: usize, out: &mut [f64]) {
    out[0] = 1.0;
    for e in 1..=degree {
        out[e] = out[e - 1] * v;
    }
}

fn variables(stats: &ArmStats, t: u64) -> [f64; 4] {
    [
        (t as f64).ln().sqrt(),
        1.0 / (stats.plays as f64).sqrt(),
        stats.mean,
        stats.stddev,
    ]
}

pub fn compute_features(stats: &ArmStats, t: u64, degree: usize) -> FeatureVector {
    let vars = variables(stats, t);
    let n = degree + 1;
    let mut pw = vec![0.0; 4 * n];
    for (v, chunk) in vars.iter().zip(pw.chunks_mut(n)) {
        powers(*v, degree, chunk);
    }
    let mut values = Vec::with_capacity(feature_count(degree));
    for i in 0..n {
        for j in 0..n {
            let ij = pw[i] * pw[n + j];
            for k in 0..n {
                let ijk = ij * pw[2 * n + k];
                for l in 0..n {
                    values.push(ijk * pw[3 * n + l]);
                }
            }
        }
    }
    FeatureVector { degree, values }
}

/// Learned coefficients of a Power-P index, serialized as
/// `{"P": 1, "theta": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThetaRecord", into = "ThetaRecord")]
pub struct ThetaVector {
    degree: usize,
    theta: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ThetaRecord {
    #[serde(rename = "P")]
    degree: usize,
    theta: Vec<f64>,
}

impl TryFrom<ThetaRecord> for ThetaVector {
    type Error = Error;
    fn try_from(r: ThetaRecord) -> Result<Self> {
        ThetaVector::new(r.degree, r.theta)
    }
}

impl From<ThetaVector> for ThetaRecord {
    fn from(t: ThetaVector) -> Self {
        ThetaRecord {
            degree: t.degree,
            theta: t.theta,
        }
    }
}

impl ThetaVector {
    pub fn new(degree: usize, theta: Vec<f64>) -> Result<Self> {
        let expected = feature_count(degree);
        if theta.len() != expected {
            return Err(Error::Theta(format!(
                "P={degree} needs {expected} coefficients, got {}",
                theta.len()
            )));
        }
        Ok(ThetaVector { degree, theta })
    }

    pub fn zeros(degree: usize) -> Self {
        ThetaVector {
            degree,
            theta: vec![0.0; feature_count(degree)],
        }
    }

    /// The Power-1 coefficients that reproduce UCB1 with constant `c`.
    pub fn ucb1(c: f64) -> Self {
        let mut t = ThetaVector::zeros(1);
        t.theta[feature_position(1, 1, 1, 0, 0)] = c.sqrt();
        t.theta[feature_position(1, 0, 0, 1, 0)] = 1.0;
        t
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn values(&self) -> &[f64] {
        &self.theta
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn index_power(theta: &ThetaVector, stats: &ArmStats, t: u64) -> f64 {
    compute_features(stats, t, theta.degree)
        .values
        .iter()
        .zip(&theta.theta)
        .map(|(f, w)| f * w)
        .sum()
}

/// [`IndexFunction`] adapter for a Power-P policy, with preallocated buffers.
#[derive(Debug, Clone)]
pub struct PowerIndex {
    theta: ThetaVector,
}

impl PowerIndex {
    pub fn new(theta: ThetaVector) -> Self {
        PowerIndex { theta }
    }

    pub fn theta(&self) -> &ThetaVector {
        &self.theta
    }
}

impl IndexFunction for PowerIndex {
    fn index(&self, stats: &ArmStats, t: u64) -> f64 {
        // Same summation order as `index_power`, without allocating.
        let degree = self.theta.degree;
        let n = degree + 1;
        let vars = variables(stats, t);
        let mut pw = [[0.0; 8]; 4];
        if n > 8 {
            return index_power(&self.theta, stats, t);
        }
        for (v, row) in vars.iter().zip(pw.iter_mut()) {
            powers(*v, degree, &mut row[..n]);
        }
        let mut acc = 0.0;
        let mut w = self.theta.theta.iter();
        for i in 0..n {
            for j in 0..n {
                let ij = pw[0][i] * pw[1][j];
                for k in 0..n {
                    let ijk = ij * pw[2][k];
                    for l in 0..n {
                        acc += ijk * pw[3][l] * w.next().expect("length checked");
                    }
                }
            }
        }
        acc
    }
}
