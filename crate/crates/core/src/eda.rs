//! Univariate marginal Gaussian EDA.
//!
//! Each iteration samples `n_p` candidates coordinate-wise from
//! `Normal(mean_j, var_j)`, scores them, keeps the `b` lowest scores and
//! refits every mean and variance (population variance, divide by `b`) on
//! those elites. The best candidate ever scored is returned.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::BanditProblem;
use crate::error::{Error, Result};
use crate::harness::mean_regret;
use crate::policies::PolicySpec;
use crate::rng::StreamSeed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaConfig {
    pub i_max: usize,
    pub n_p: usize,
    pub b: usize,
    pub dim: usize,
    pub init_means: Vec<f64>,
    pub init_variances: Vec<f64>,
    pub seed: StreamSeed,
}

impl EdaConfig {
    /// Defaults: 100 iterations, `n_p = max(8 dim, 40)`, `b = n_p / 4`,
    /// initial distributions `Normal(0, 1)`.
    pub fn new(dim: usize, seed: StreamSeed) -> Self {
        let n_p = (8 * dim).max(40);
        EdaConfig {
            i_max: 100,
            n_p,
            b: n_p / 4,
            dim,
            init_means: vec![0.0; dim],
            init_variances: vec![1.0; dim],
            seed,
        }
    }

    pub fn with_init_means(mut self, means: Vec<f64>) -> Self {
        self.dim = means.len();
        self.init_variances.resize(self.dim, 1.0);
        self.init_means = means;
        self
    }

    pub fn with_iterations(mut self, i_max: usize) -> Self {
        self.i_max = i_max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("EDA dimension must be at least 1".into()));
        }
        if self.b == 0 || self.b > self.n_p {
            return Err(Error::Config(format!(
                "elite count must satisfy 1 <= b <= n_p, got b={} n_p={}",
                self.b, self.n_p
            )));
        }
        if self.init_means.len() != self.dim || self.init_variances.len() != self.dim {
            return Err(Error::Config("initial distribution does not match dimension".into()));
        }
        if self.init_variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("initial variances must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Search distribution after one iteration, with the running best score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaIteration {
    pub iteration: usize,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub iteration_best: f64,
    pub best_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdaResult {
    pub best_theta: Vec<f64>,
    pub best_score: f64,
    pub trace: Vec<EdaIteration>,
}

/// Minimizes `objective(theta, episode_seed)`. Non-finite scores count as
/// `+inf`. The result depends only on the objective and `config.seed`.
pub fn eda_optimize<F>(objective: F, config: &EdaConfig) -> Result<EdaResult>
where
    F: Fn(&[f64], StreamSeed) -> f64 + Sync,
{
    config.validate()?;
    let d = config.dim;
    let sample_root = config.seed.child(0);
    let eval_root = config.seed.child(1);
    let mut means = config.init_means.clone();
    let mut variances = config.init_variances.clone();
    let mut best_theta: Option<Vec<f64>> = None;
    let mut best_score = f64::INFINITY;
    let mut trace = Vec::with_capacity(config.i_max);

    for it in 0..config.i_max {
        let mut rng = sample_root.child(it as u64).rng();
        let candidates: Vec<Vec<f64>> = (0..config.n_p)
            .map(|_| {
                (0..d)
                    .map(|j| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        means[j] + variances[j].sqrt() * z
                    })
                    .collect()
            })
            .collect();
        let iter_seed = eval_root.child(it as u64);
        let scores: Vec<f64> = candidates
            .par_iter()
            .enumerate()
            .map(|(c, theta)| {
                let s = objective(theta, iter_seed.child(c as u64));
                if s.is_finite() {
                    s
                } else {
                    f64::INFINITY
                }
            })
            .collect();

        if best_theta.is_none() {
            best_theta = Some(candidates[0].clone());
        }
        for (theta, &s) in candidates.iter().zip(&scores) {
            if s < best_score {
                best_score = s;
                best_theta = Some(theta.clone());
            }
        }

        let mut order: Vec<usize> = (0..config.n_p).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        let elites = &order[..config.b];
        let nb = config.b as f64;
        for j in 0..d {
            let m = elites.iter().map(|&e| candidates[e][j]).sum::<f64>() / nb;
            let v = elites
                .iter()
                .map(|&e| (candidates[e][j] - m).powi(2))
                .sum::<f64>()
                / nb;
            means[j] = m;
            variances[j] = v;
        }
        trace.push(EdaIteration {
            iteration: it,
            means: means.clone(),
            variances: variances.clone(),
            iteration_best: scores[order[0]],
            best_score,
        });
    }

    Ok(EdaResult {
        best_theta: best_theta.unwrap_or_else(|| config.init_means.clone()),
        best_score,
        trace,
    })
}

/// Empirical mean regret of `spec` over `problems`: each problem is played
/// `runs` times (seeded per problem and run) and the per-problem means are
/// averaged. `runs = 1` is a single trajectory per problem.
pub fn evaluate_delta(
    spec: &PolicySpec,
    problems: &[BanditProblem],
    horizon: u64,
    runs: u64,
    seed: StreamSeed,
) -> Result<f64> {
    let per_problem = mean_regret(|_| spec.build(), problems, horizon, runs, seed)?;
    Ok(per_problem.iter().sum::<f64>() / per_problem.len() as f64)
}

/// Tunes the parameters of `base` (or learns Power-P coefficients) by
/// minimizing [`evaluate_delta`] on the training problems. The EDA starts
/// from `base`'s parameter values.
pub fn tune_policy(
    base: &PolicySpec,
    problems: &[BanditProblem],
    horizon: u64,
    runs: u64,
    config: &EdaConfig,
) -> Result<(PolicySpec, EdaResult)> {
    if problems.is_empty() {
        return Err(Error::Config("tuning needs at least one training problem".into()));
    }
    let init = base.params();
    if init.is_empty() {
        return Err(Error::Config(format!("policy `{base}` has no tunable parameters")));
    }
    if init.len() != config.dim {
        return Err(Error::Config(format!(
            "policy `{base}` has {} parameters, EDA dimension is {}",
            init.len(),
            config.dim
        )));
    }
    let config = config.clone().with_init_means(init);
    let objective = |theta: &[f64], seed: StreamSeed| {
        evaluate_delta(&base.with_params(theta), problems, horizon, runs, seed)
            .unwrap_or(f64::INFINITY)
    };
    let result = eda_optimize(objective, &config)?;
    Ok((base.with_params(&result.best_theta), result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{run_episode, ArmStats};
    use crate::harness::ProblemDistribution;
    use crate::policies::{select_arm, Policy};
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn quadratic(theta: &[f64], _: StreamSeed) -> f64 {
        (theta[0] - 1.0).powi(2) + (theta[1] + 0.5).powi(2)
    }

    #[test]
    fn defaults() {
        let c = EdaConfig::new(1, StreamSeed::new(0));
        assert_eq!((c.i_max, c.n_p, c.b), (100, 40, 10));
        let c = EdaConfig::new(16, StreamSeed::new(0));
        assert_eq!((c.n_p, c.b), (128, 32));
        let c = EdaConfig::new(81, StreamSeed::new(0));
        assert_eq!((c.n_p, c.b), (648, 162));
    }

    #[test]
    fn finds_quadratic_minimum() {
        let r = eda_optimize(quadratic, &EdaConfig::new(2, StreamSeed::new(4))).unwrap();
        assert!((r.best_theta[0] - 1.0).abs() < 0.05, "{:?}", r.best_theta);
        assert!((r.best_theta[1] + 0.5).abs() < 0.05, "{:?}", r.best_theta);
    }

    #[test]
    fn no_selection_pressure_still_terminates() {
        let mut c = EdaConfig::new(2, StreamSeed::new(5));
        c.b = c.n_p;
        c.i_max = 10;
        let r = eda_optimize(quadratic, &c).unwrap();
        assert_eq!(r.trace.len(), 10);
        assert!(r.best_score.is_finite());
    }

    #[test]
    fn constant_objective_keeps_first_candidate() {
        let c = EdaConfig::new(3, StreamSeed::new(6));
        let r = eda_optimize(|_: &[f64], _| 0.0, &c).unwrap();
        assert_eq!(r.best_score, 0.0);
        let mut rng = c.seed.child(0).child(0).rng();
        let first: Vec<f64> = (0..3)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            })
            .collect();
        assert_eq!(r.best_theta, first);
    }

    #[test]
    fn non_finite_scores_lose() {
        let c = EdaConfig::new(1, StreamSeed::new(7)).with_iterations(5);
        let r = eda_optimize(|t: &[f64], _| if t[0] > 0.0 { f64::NAN } else { -t[0] }, &c).unwrap();
        assert!(r.best_theta[0] <= 0.0);
        assert!(r.best_score.is_finite());
    }

    #[test]
    fn collapsed_elites_freeze_coordinate() {
        // The objective only looks at coordinate 0; coordinate 1 starts with
        // zero variance and must stay exactly at its mean.
        let mut c = EdaConfig::new(2, StreamSeed::new(8)).with_iterations(6);
        c.init_means = vec![0.0, 1.25];
        c.init_variances = vec![1.0, 0.0];
        let seen = std::sync::Mutex::new(Vec::new());
        eda_optimize(
            |t: &[f64], _| {
                seen.lock().unwrap().push(t[1]);
                t[0].abs()
            },
            &c,
        )
        .unwrap();
        assert!(seen.into_inner().unwrap().iter().all(|&v| v == 1.25));
    }

    #[test]
    fn deterministic_traces() {
        let c = EdaConfig::new(2, StreamSeed::new(9)).with_iterations(20);
        let noisy = |t: &[f64], s: StreamSeed| quadratic(t, s) + (s.value() % 1000) as f64 * 1e-6;
        let a = eda_optimize(noisy, &c).unwrap();
        let b = eda_optimize(noisy, &c).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn best_score_is_running_minimum(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let c = EdaConfig::new(2, StreamSeed::new(seed)).with_iterations(12);
            let r = eda_optimize(|t: &[f64], _| (t[0] - shift).powi(2) + t[1].abs(), &c).unwrap();
            for w in r.trace.windows(2) {
                prop_assert!(w[1].best_score <= w[0].best_score);
                prop_assert!(w[1].best_score <= w[1].iteration_best);
            }
            for it in &r.trace {
                prop_assert!(it.variances.iter().all(|&v| v >= 0.0));
            }
            prop_assert_eq!(r.best_score, r.trace.last().unwrap().best_score);
        }
    }

    #[test]
    fn sphere_sixteen_dimensions() {
        // Optimum away from the initial mean so the search has to move.
        let center: Vec<f64> = (0..16).map(|j| 0.5 - 0.0625 * j as f64).collect();
        let sphere = |t: &[f64], _| t.iter().zip(&center).map(|(x, c)| (x - c).powi(2)).sum::<f64>();
        let hits = (0..10)
            .filter(|&s| {
                let r = eda_optimize(sphere, &EdaConfig::new(16, StreamSeed::new(100 + s))).unwrap();
                r.best_score < 1e-2
            })
            .count();
        assert!(hits >= 9, "{hits}/10");
    }

    /// Plays the arm with the highest true mean.
    struct MeanOracle(Vec<f64>);

    impl Policy for MeanOracle {
        fn reset(&mut self, _arms: usize) {}
        fn select(&mut self, _t: u64, _stats: &[ArmStats], rng: &mut StreamRng) -> usize {
            select_arm(&self.0, rng)
        }
    }

    #[test]
    fn oracle_regret_is_the_forced_pull() {
        let problem = BanditProblem::bernoulli(&[1.0, 0.0]).unwrap();
        let oracle = |p: &BanditProblem| -> Box<dyn Policy + Send> {
            Box::new(MeanOracle(p.true_means().to_vec()))
        };
        let per = mean_regret(oracle, &[problem], 10, 1, StreamSeed::new(1)).unwrap();
        assert_eq!(per, vec![1.0]);
    }

    #[test]
    fn copies_average_distinct_episodes() {
        let problem = BanditProblem::bernoulli(&[0.3, 0.6]).unwrap();
        let spec = PolicySpec::Ucb1 { c: 2.0 };
        let seed = StreamSeed::new(12);
        let copies = vec![problem.clone(); 5];
        let delta = evaluate_delta(&spec, &copies, 50, 1, seed).unwrap();
        let manual: f64 = (0..5)
            .map(|i| {
                let mut pol = spec.build();
                run_episode(&problem, &mut pol, 50, &mut seed.child(i).child(0).rng())
                    .unwrap()
                    .regret
            })
            .sum::<f64>()
            / 5.0;
        assert_eq!(delta, manual);
    }

    #[test]
    fn ucb1_training_delta() {
        let dist = ProblemDistribution::bernoulli(2);
        let problems = dist.sample_set(100, StreamSeed::new(13));
        let delta =
            evaluate_delta(&PolicySpec::Ucb1 { c: 2.0 }, &problems, 100, 100, StreamSeed::new(14)).unwrap();
        assert!((delta - 5.6).abs() <= 0.8, "{delta}");
    }

    #[test]
    fn tuning_rejects_fixed_policies() {
        let problems = ProblemDistribution::bernoulli(2).sample_set(3, StreamSeed::new(1));
        let c = EdaConfig::new(1, StreamSeed::new(0));
        assert!(tune_policy(&PolicySpec::Ucb1Tuned { variance_form: false }, &problems, 10, 1, &c).is_err());
    }
}
