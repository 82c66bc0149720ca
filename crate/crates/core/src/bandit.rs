//! K-armed bandit problems, per-arm statistics and the episode driver.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policies::Policy;
use crate::rng::StreamRng;

/// Upper bound on rejection-sampling attempts for one truncated Gaussian draw.
pub const REJECTION_CAP: u64 = 1_000_000;

/// Reward law of a single arm. All laws are supported on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArmDistribution {
    Bernoulli { p: f64 },
    /// Normal(mu, sigma) conditioned on landing in `[0, 1]`.
    TruncatedGaussian { mu: f64, sigma: f64 },
}

impl ArmDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArmDistribution::Bernoulli { p } if (0.0..=1.0).contains(&p) => Ok(()),
            ArmDistribution::Bernoulli { p } => {
                Err(Error::InvalidArm(format!("bernoulli p = {p} outside [0, 1]")))
            }
            ArmDistribution::TruncatedGaussian { mu, sigma }
                if (0.0..=1.0).contains(&mu) && sigma >= 0.0 && sigma.is_finite() =>
            {
                Ok(())
            }
            ArmDistribution::TruncatedGaussian { mu, sigma } => Err(Error::InvalidArm(format!(
                "truncated gaussian mu = {mu}, sigma = {sigma} (need mu in [0, 1], sigma >= 0)"
            ))),
        }
    }

    /// Expected reward of the law (for truncated Gaussians, of the truncated law).
    pub fn mean(&self) -> f64 {
        match *self {
            ArmDistribution::Bernoulli { p } => p,
            ArmDistribution::TruncatedGaussian { mu, sigma } => truncated_mean(mu, sigma),
        }
    }

    /// Location parameter of the law: `p` for Bernoulli, the untruncated `mu`
    /// for truncated Gaussians.
    pub fn nominal_mean(&self) -> f64 {
        match *self {
            ArmDistribution::Bernoulli { p } => p,
            ArmDistribution::TruncatedGaussian { mu, .. } => mu,
        }
    }

    /// True when every draw returns the same value.
    pub fn is_deterministic(&self) -> bool {
        match *self {
            ArmDistribution::Bernoulli { p } => p == 0.0 || p == 1.0,
            ArmDistribution::TruncatedGaussian { sigma, .. } => sigma == 0.0,
        }
    }
}

/// Draws one reward in `[0, 1]`.
pub fn sample_reward(dist: &ArmDistribution, rng: &mut StreamRng) -> Result<f64> {
    match *dist {
        ArmDistribution::Bernoulli { p } => Ok(if rng.random::<f64>() < p { 1.0 } else { 0.0 }),
        ArmDistribution::TruncatedGaussian { mu, sigma } => {
            if sigma == 0.0 {
                return Ok(mu);
            }
            for _ in 0..REJECTION_CAP {
                let z: f64 = rng.sample(StandardNormal);
                let x = mu + sigma * z;
                if (0.0..=1.0).contains(&x) {
                    return Ok(x);
                }
            }
            Err(Error::RejectionLimit(REJECTION_CAP))
        }
    }
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Mean of Normal(mu, sigma) conditioned on `[0, 1]`.
pub fn truncated_mean(mu: f64, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return mu;
    }
    let a = (0.0 - mu) / sigma;
    let b = (1.0 - mu) / sigma;
    // erf differences stay accurate when both bounds are near zero (large sigma).
    let mass = 0.5 * (libm::erf(b / std::f64::consts::SQRT_2) - libm::erf(a / std::f64::consts::SQRT_2));
    mu + sigma * (std_normal_pdf(a) - std_normal_pdf(b)) / mass
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProblemRecord {
    arms: Vec<ArmDistribution>,
}

/// A K-armed bandit problem together with the expected reward of each arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemRecord", into = "ProblemRecord")]
pub struct BanditProblem {
    arms: Vec<ArmDistribution>,
    true_means: Vec<f64>,
    best_mean: f64,
}

impl BanditProblem {
    pub fn new(arms: Vec<ArmDistribution>) -> Result<Self> {
        if arms.len() < 2 {
            return Err(Error::TooFewArms(arms.len()));
        }
        for arm in &arms {
            arm.validate()?;
        }
        let true_means: Vec<f64> = arms.iter().map(ArmDistribution::mean).collect();
        let best_mean = true_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(BanditProblem {
            arms,
            true_means,
            best_mean,
        })
    }

    pub fn bernoulli(ps: &[f64]) -> Result<Self> {
        Self::new(ps.iter().map(|&p| ArmDistribution::Bernoulli { p }).collect())
    }

    pub fn arms(&self) -> &[ArmDistribution] {
        &self.arms
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn true_means(&self) -> &[f64] {
        &self.true_means
    }

    pub fn best_mean(&self) -> f64 {
        self.best_mean
    }

    /// Expected regret implied by a pull-count vector: `sum_k T_k (mu* - mu_k)`.
    pub fn pseudo_regret(&self, pulls: &[u64]) -> f64 {
        pulls
            .iter()
            .zip(&self.true_means)
            .map(|(&n, &m)| n as f64 * (self.best_mean - m))
            .sum()
    }

    /// `sum_k T_k (mu* - mu_k)` with the arms' nominal means
    /// ([`ArmDistribution::nominal_mean`]) in place of their true means.
    pub fn nominal_regret(&self, pulls: &[u64]) -> f64 {
        let best = self.arms.iter().map(ArmDistribution::nominal_mean).fold(f64::NEG_INFINITY, f64::max);
        pulls
            .iter()
            .zip(&self.arms)
            .map(|(&n, a)| n as f64 * (best - a.nominal_mean()))
            .sum()
    }
}

impl TryFrom<ProblemRecord> for BanditProblem {
    type Error = Error;
    fn try_from(r: ProblemRecord) -> Result<Self> {
        BanditProblem::new(r.arms)
    }
}

impl From<BanditProblem> for ProblemRecord {
    fn from(p: BanditProblem) -> Self {
        ProblemRecord { arms: p.arms }
    }
}

/// Running reward statistics of one arm.
///
/// `stddev` is the population (divide-by-n) standard deviation, so a single
/// observation has a standard deviation of 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ArmStats {
    pub plays: u64,
    pub sum: f64,
    pub sum_sq: f64,
    pub mean: f64,
    pub stddev: f64,
}

impl ArmStats {
    pub fn update(&mut self, reward: f64) {
        self.plays += 1;
        self.sum += reward;
        self.sum_sq += reward * reward;
        let n = self.plays as f64;
        self.mean = self.sum / n;
        self.stddev = (self.sum_sq / n - self.mean * self.mean).max(0.0).sqrt();
    }

    /// Builds statistics directly from summary values (used by tests and
    /// formula sampling).
    pub fn from_summary(plays: u64, mean: f64, stddev: f64) -> Self {
        let n = plays as f64;
        ArmStats {
            plays,
            sum: mean * n,
            sum_sq: (stddev * stddev + mean * mean) * n,
            mean,
            stddev,
        }
    }
}

/// Functional form of [`ArmStats::update`].
pub fn update_stats(mut stats: ArmStats, reward: f64) -> ArmStats {
    stats.update(reward);
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    /// `T * mu* - sum of collected rewards`.
    pub regret: f64,
    /// `sum_k T_k(T) (mu* - mu_k)` for the realized pull counts.
    pub pseudo_regret: f64,
    /// Like `pseudo_regret`, with nominal instead of true means.
    pub nominal_regret: f64,
    pub pulls: Vec<u64>,
    pub cumulative_reward: f64,
    /// Number of rounds in which some arm's index was not a finite number.
    pub index_failures: u64,
}

/// Plays one episode of `horizon` rounds: each arm once in order, then the
/// policy's choice for rounds `K+1..=T`.
pub fn run_episode<P: Policy + ?Sized>(
    problem: &BanditProblem,
    policy: &mut P,
    horizon: u64,
    rng: &mut StreamRng,
) -> Result<EpisodeResult> {
    simulate(problem, policy, horizon, rng, |_, _| {})
}

/// Like [`run_episode`], additionally recording the realized regret after
/// each round listed in `checkpoints` (rounds beyond `horizon` are ignored).
pub fn run_episode_with_checkpoints<P: Policy + ?Sized>(
    problem: &BanditProblem,
    policy: &mut P,
    horizon: u64,
    checkpoints: &[u64],
    rng: &mut StreamRng,
) -> Result<(EpisodeResult, Vec<f64>)> {
    let mut marks = Vec::with_capacity(checkpoints.len());
    let best = problem.best_mean();
    let result = simulate(problem, policy, horizon, rng, |t, cumulative| {
        if checkpoints.contains(&t) {
            marks.push(t as f64 * best - cumulative);
        }
    })?;
    Ok((result, marks))
}

fn simulate<P: Policy + ?Sized>(
    problem: &BanditProblem,
    policy: &mut P,
    horizon: u64,
    rng: &mut StreamRng,
    mut on_round: impl FnMut(u64, f64),
) -> Result<EpisodeResult> {
    let k = problem.num_arms();
    if horizon < k as u64 {
        return Err(Error::HorizonTooShort { horizon, arms: k });
    }
    policy.reset(k);
    let mut stats = vec![ArmStats::default(); k];
    let mut cumulative = 0.0;
    for t in 1..=horizon {
        let arm = if t <= k as u64 {
            (t - 1) as usize
        } else {
            policy.select(t, &stats, rng)
        };
        let reward = sample_reward(&problem.arms[arm], rng)?;
        stats[arm].update(reward);
        cumulative += reward;
        on_round(t, cumulative);
    }
    let pulls: Vec<u64> = stats.iter().map(|s| s.plays).collect();
    Ok(EpisodeResult {
        regret: horizon as f64 * problem.best_mean() - cumulative,
        pseudo_regret: problem.pseudo_regret(&pulls),
        nominal_regret: problem.nominal_regret(&pulls),
        pulls,
        cumulative_reward: cumulative,
        index_failures: policy.index_failures(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{IndexPolicy, Ucb1};
    use crate::rng::StreamSeed;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    struct Greedy;
    impl crate::policies::IndexFunction for Greedy {
        fn index(&self, s: &ArmStats, _t: u64) -> f64 {
            s.mean
        }
    }

    #[test]
    fn degenerate_arms_sample_exactly() {
        let mut rng = StreamSeed::new(1).rng();
        for _ in 0..1000 {
            let b = sample_reward(&ArmDistribution::Bernoulli { p: 1.0 }, &mut rng).unwrap();
            assert_eq!(b, 1.0);
            let g = sample_reward(&ArmDistribution::TruncatedGaussian { mu: 0.5, sigma: 0.0 }, &mut rng)
                .unwrap();
            assert_eq!(g, 0.5);
        }
    }

    #[test]
    fn bernoulli_sample_mean() {
        let mut rng = StreamSeed::new(2).rng();
        let d = ArmDistribution::Bernoulli { p: 0.7 };
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_reward(&d, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 0.7).abs() < 0.01, "{mean}");
    }

    #[test]
    fn truncated_gaussian_stays_in_unit_interval() {
        let mut rng = StreamSeed::new(3).rng();
        for &(mu, sigma) in &[(0.0, 1.0), (1.0, 0.05), (0.3, 0.7)] {
            let d = ArmDistribution::TruncatedGaussian { mu, sigma };
            for _ in 0..10_000 {
                let x = sample_reward(&d, &mut rng).unwrap();
                assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    /// Composite Simpson quadrature of the truncated density; independent of
    /// the closed form.
    fn truncated_mean_by_quadrature(mu: f64, sigma: f64) -> f64 {
        let n = 20_000;
        let h = 1.0 / n as f64;
        let dens = |x: f64| (-0.5 * ((x - mu) / sigma).powi(2)).exp();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let x = i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            num += w * x * dens(x);
            den += w * dens(x);
        }
        num / den
    }

    #[test]
    fn truncated_mean_closed_form() {
        assert_eq!(truncated_mean(0.5, 0.0), 0.5);
        for s in [0.01, 0.3, 1.0, 7.0] {
            assert_abs_diff_eq!(truncated_mean(0.5, s), 0.5, epsilon = 1e-12);
        }
        for &(mu, s) in &[(0.9, 0.5), (0.1, 0.2), (0.0, 1.0), (1.0, 0.05), (0.7, 0.9)] {
            let q = truncated_mean_by_quadrature(mu, s);
            assert_abs_diff_eq!(truncated_mean(mu, s), q, epsilon = 1e-6);
        }
        // Frozen from the quadrature oracle.
        assert_abs_diff_eq!(truncated_mean(0.9, 0.5), 0.612_796_195_8, epsilon = 1e-9);
    }

    #[test]
    fn truncated_mean_matches_sampling() {
        let mut rng = StreamSeed::new(4).rng();
        let d = ArmDistribution::TruncatedGaussian { mu: 0.2, sigma: 0.6 };
        let n = 200_000;
        let m: f64 = (0..n).map(|_| sample_reward(&d, &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((m - d.mean()).abs() < 0.003, "{m} vs {}", d.mean());
    }

    #[test]
    fn stats_updates() {
        let s = update_stats(ArmStats::default(), 1.0);
        assert_eq!((s.plays, s.mean, s.stddev), (1, 1.0, 0.0));
        let s = [0.0, 1.0].iter().fold(ArmStats::default(), |s, &r| update_stats(s, r));
        assert_eq!((s.mean, s.stddev), (0.5, 0.5));
        let s = [1.0; 3].iter().fold(ArmStats::default(), |s, &r| update_stats(s, r));
        assert_eq!((s.plays, s.mean, s.stddev), (3, 1.0, 0.0));
    }

    proptest! {
        #[test]
        fn stats_stay_in_range(rewards in proptest::collection::vec(0.0f64..=1.0, 1..200)) {
            let s = rewards.iter().fold(ArmStats::default(), |s, &r| update_stats(s, r));
            let n = rewards.len() as f64;
            let mean = rewards.iter().sum::<f64>() / n;
            prop_assert!((s.mean - mean).abs() < 1e-12);
            prop_assert!(s.mean >= 0.0 && s.mean <= 1.0 + 1e-15);
            prop_assert!(s.stddev >= 0.0 && s.stddev <= 0.5 + 1e-9);
        }
    }

    #[test]
    fn problem_json_round_trip() {
        let json = r#"{"arms":[{"kind":"bernoulli","p":0.7},{"kind":"truncated_gaussian","mu":0.4,"sigma":0.2}]}"#;
        let p: BanditProblem = serde_json::from_str(json).unwrap();
        assert_eq!(p.num_arms(), 2);
        assert_eq!(p.true_means()[0], 0.7);
        assert_abs_diff_eq!(p.true_means()[1], truncated_mean(0.4, 0.2), epsilon = 0.0);
        assert_eq!(serde_json::to_string(&p).unwrap(), json);
        assert!(serde_json::from_str::<BanditProblem>(r#"{"arms":[{"kind":"bernoulli","p":0.7}]}"#).is_err());
        assert!(serde_json::from_str::<BanditProblem>(
            r#"{"arms":[{"kind":"bernoulli","p":1.7},{"kind":"bernoulli","p":0.1}]}"#
        )
        .is_err());
    }

    #[test]
    fn greedy_trace() {
        let p = BanditProblem::bernoulli(&[1.0, 0.0]).unwrap();
        let mut pol = IndexPolicy::new(Greedy);
        let r = run_episode(&p, &mut pol, 10, &mut StreamSeed::new(5).rng()).unwrap();
        assert_eq!(r.regret, 1.0);
        assert_eq!(r.pulls, vec![9, 1]);
    }

    #[test]
    fn horizon_equal_to_arms_is_initialization_only() {
        let p = BanditProblem::bernoulli(&[0.9, 0.2, 0.5]).unwrap();
        let mut pol = IndexPolicy::new(Greedy);
        let r = run_episode(&p, &mut pol, 3, &mut StreamSeed::new(6).rng()).unwrap();
        assert_eq!(r.pulls, vec![1, 1, 1]);
        assert_abs_diff_eq!(r.pseudo_regret, 0.7 + 0.4, epsilon = 1e-12);
        assert!(matches!(
            run_episode(&p, &mut pol, 2, &mut StreamSeed::new(6).rng()),
            Err(Error::HorizonTooShort { horizon: 2, arms: 3 })
        ));
    }

    #[test]
    fn episodes_are_deterministic() {
        let p = BanditProblem::bernoulli(&[0.4, 0.6]).unwrap();
        let run = || {
            let mut pol = IndexPolicy::new(Ucb1 { c: 2.0 });
            run_episode(&p, &mut pol, 500, &mut StreamSeed::new(77).child(3).rng()).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn episode_accounting() {
        let p = BanditProblem::bernoulli(&[0.35, 0.65]).unwrap();
        let seed = StreamSeed::new(8);
        for i in 0..200 {
            let mut pol = IndexPolicy::new(Ucb1 { c: 2.0 });
            let r = run_episode(&p, &mut pol, 50, &mut seed.child(i).rng()).unwrap();
            assert_eq!(r.pulls.iter().sum::<u64>(), 50);
            assert_eq!(r.regret, 50.0 * p.best_mean() - r.cumulative_reward);
        }
    }

    #[test]
    fn nominal_regret_uses_location_parameters() {
        let b = BanditProblem::bernoulli(&[0.2, 0.7]).unwrap();
        assert_eq!(b.nominal_regret(&[3, 5]), b.pseudo_regret(&[3, 5]));
        let g = BanditProblem::new(vec![
            ArmDistribution::TruncatedGaussian { mu: 0.9, sigma: 0.8 },
            ArmDistribution::TruncatedGaussian { mu: 0.4, sigma: 0.1 },
        ])
        .unwrap();
        assert_abs_diff_eq!(g.nominal_regret(&[2, 4]), 4.0 * 0.5, epsilon = 1e-12);
        // Truncation pulls the wide arm's mean toward 1/2, shrinking the gap.
        assert!(g.pseudo_regret(&[2, 4]) < g.nominal_regret(&[2, 4]));
    }

    #[test]
    fn checkpoints_match_prefix_episodes() {
        let p = BanditProblem::bernoulli(&[0.3, 0.5]).unwrap();
        let seed = StreamSeed::new(10);
        let mut pol = IndexPolicy::new(Ucb1 { c: 2.0 });
        let (full, marks) =
            run_episode_with_checkpoints(&p, &mut pol, 100, &[10, 100], &mut seed.rng()).unwrap();
        let short = run_episode(&p, &mut pol, 10, &mut seed.rng()).unwrap();
        assert_eq!(marks, vec![short.regret, full.regret]);
    }
}
