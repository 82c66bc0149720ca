//! Train/test experiment protocol: problem distributions, Monte Carlo policy
//! evaluation, win rates and reproducible reports.
//!
//! Every random stream is derived from the experiment's master seed:
//! training problems, test problems, per-policy evaluation episodes and
//! optimizer draws each live under their own label, so adding a policy or a
//! horizon never changes the numbers of the others.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{run_episode, run_episode_with_checkpoints, ArmDistribution, BanditProblem, EpisodeResult};
use crate::eda::{tune_policy, EdaConfig, EdaIteration};
use crate::error::{Error, Result};
use crate::policies::{Policy, PolicySpec};
use crate::rng::{domain, StreamRng, StreamSeed};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "BANDIT_META_THREADS";

/// Sizes the global worker pool from [`THREADS_ENV`] if set. Results do not
/// depend on the thread count.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    if n == 0 {
        return Err(Error::Config(format!("{THREADS_ENV} must be at least 1")));
    }
    // A second initialization attempt (e.g. in tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    /// Every arm Bernoulli(p) with `p ~ U[0, 1]`.
    BernoulliUniform,
    /// Every arm a Gaussian(mu, sigma) truncated to `[0, 1]` with
    /// `mu, sigma ~ U[0, 1]`.
    TruncGaussianUniform,
}

/// A prior over bandit problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemDistribution {
    pub kind: DistributionKind,
    #[serde(default = "default_arms")]
    pub arms: usize,
}

fn default_arms() -> usize {
    2
}

impl ProblemDistribution {
    pub fn bernoulli(arms: usize) -> Self {
        ProblemDistribution {
            kind: DistributionKind::BernoulliUniform,
            arms,
        }
    }

    pub fn truncated_gaussian(arms: usize) -> Self {
        ProblemDistribution {
            kind: DistributionKind::TruncGaussianUniform,
            arms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.arms < 2 {
            return Err(Error::TooFewArms(self.arms));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Result<BanditProblem> {
        let arms = (0..self.arms)
            .map(|_| match self.kind {
                DistributionKind::BernoulliUniform => ArmDistribution::Bernoulli { p: rng.random() },
                DistributionKind::TruncGaussianUniform => ArmDistribution::TruncatedGaussian {
                    mu: rng.random(),
                    sigma: rng.random(),
                },
            })
            .collect();
        BanditProblem::new(arms)
    }

    /// `n` problems; problem `i` is drawn from stream `seed.child(i)`.
    pub fn sample_set(&self, n: usize, seed: StreamSeed) -> Vec<BanditProblem> {
        (0..n)
            .map(|i| {
                self.sample(&mut seed.child(i as u64).rng())
                    .expect("sampled parameters are valid")
            })
            .collect()
    }
}

/// Which per-episode quantity is averaged into "regret".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretMeasure {
    /// `T mu* - sum of collected rewards`.
    #[default]
    Realized,
    /// `sum_k T_k (mu* - mu_k)` with the arms' true means.
    Pseudo,
    /// `sum_k T_k (mu* - mu_k)` with nominal means: the untruncated `mu` of
    /// truncated-Gaussian arms. This is how the published Gaussian
    /// robustness figures are scored.
    Nominal,
}

impl RegretMeasure {
    pub fn of(self, episode: &EpisodeResult) -> f64 {
        match self {
            RegretMeasure::Realized => episode.regret,
            RegretMeasure::Pseudo => episode.pseudo_regret,
            RegretMeasure::Nominal => episode.nominal_regret,
        }
    }
}

/// Mean realized regret per problem over `runs` episodes; episode `(i, j)`
/// uses the stream `seed.child(i).child(j)`. `make` builds a fresh policy
/// per episode.
pub fn mean_regret<F>(
    make: F,
    problems: &[BanditProblem],
    horizon: u64,
    runs: u64,
    seed: StreamSeed,
) -> Result<Vec<f64>>
where
    F: Fn(&BanditProblem) -> Box<dyn Policy + Send> + Sync,
{
    mean_regret_measured(make, problems, horizon, runs, seed, RegretMeasure::Realized)
}

/// [`mean_regret`] for an arbitrary [`RegretMeasure`].
pub fn mean_regret_measured<F>(
    make: F,
    problems: &[BanditProblem],
    horizon: u64,
    runs: u64,
    seed: StreamSeed,
    measure: RegretMeasure,
) -> Result<Vec<f64>>
where
    F: Fn(&BanditProblem) -> Box<dyn Policy + Send> + Sync,
{
    if problems.is_empty() {
        return Err(Error::Config("no problems to evaluate".into()));
    }
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    problems
        .par_iter()
        .enumerate()
        .map(|(i, problem)| {
            let stream = seed.child(i as u64);
            let mut total = 0.0;
            for j in 0..runs {
                let mut policy = make(problem);
                total += measure.of(&run_episode(problem, &mut policy, horizon, &mut stream.child(j).rng())?);
            }
            Ok(total / runs as f64)
        })
        .collect()
}

/// Mean and standard error of a set of per-problem regrets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub mean: f64,
    pub std_error: f64,
    pub per_problem: Vec<f64>,
}

impl PolicyEvaluation {
    pub fn from_per_problem(per_problem: Vec<f64>) -> Self {
        let n = per_problem.len() as f64;
        let mean = per_problem.iter().sum::<f64>() / n;
        let var = if per_problem.len() > 1 {
            per_problem.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        PolicyEvaluation {
            mean,
            std_error: (var / n).sqrt(),
            per_problem,
        }
    }
}

/// Stream for evaluating `spec` at `horizon` below an evaluation root.
pub fn evaluation_seed(root: StreamSeed, spec: &PolicySpec, horizon: u64) -> StreamSeed {
    root.child_str(&spec.to_string()).child(horizon)
}

pub fn evaluate_policy(
    spec: &PolicySpec,
    problems: &[BanditProblem],
    horizon: u64,
    runs: u64,
    seed: StreamSeed,
) -> Result<PolicyEvaluation> {
    evaluate_policy_measured(spec, problems, horizon, runs, seed, RegretMeasure::Realized)
}

pub fn evaluate_policy_measured(
    spec: &PolicySpec,
    problems: &[BanditProblem],
    horizon: u64,
    runs: u64,
    seed: StreamSeed,
    measure: RegretMeasure,
) -> Result<PolicyEvaluation> {
    Ok(PolicyEvaluation::from_per_problem(mean_regret_measured(
        |_| spec.build(),
        problems,
        horizon,
        runs,
        seed,
        measure,
    )?))
}

/// Percentage of problems where `policy` has strictly lower mean regret than
/// `baseline`.
pub fn percent_wins(policy: &[f64], baseline: &[f64]) -> f64 {
    assert_eq!(policy.len(), baseline.len(), "per-problem vectors differ in length");
    let wins = policy.iter().zip(baseline).filter(|(p, b)| p < b).count();
    100.0 * wins as f64 / policy.len() as f64
}

/// Evaluates both policies on `problems` (each on its own stream below
/// `seed`) and returns the win percentage of `policy` over `baseline`.
pub fn percent_wins_policies(
    policy: &PolicySpec,
    baseline: &PolicySpec,
    problems: &[BanditProblem],
    horizon: u64,
    runs: u64,
    seed: StreamSeed,
) -> Result<f64> {
    let a = evaluate_policy(policy, problems, horizon, runs, evaluation_seed(seed, policy, horizon))?;
    let b = evaluate_policy(baseline, problems, horizon, runs, evaluation_seed(seed, baseline, horizon))?;
    Ok(percent_wins(&a.per_problem, &b.per_problem))
}

/// Mean regret at each checkpoint horizon, from shared episodes of length
/// `max(checkpoints)`.
pub fn regret_series(
    spec: &PolicySpec,
    problems: &[BanditProblem],
    checkpoints: &[u64],
    runs: u64,
    seed: StreamSeed,
) -> Result<Vec<(u64, f64)>> {
    let horizon = *checkpoints
        .iter()
        .max()
        .ok_or_else(|| Error::Config("no checkpoints given".into()))?;
    let per_problem: Vec<Vec<f64>> = problems
        .par_iter()
        .enumerate()
        .map(|(i, problem)| {
            let stream = seed.child(i as u64);
            let mut totals = vec![0.0; checkpoints.len()];
            for j in 0..runs {
                let mut policy = spec.build();
                let (_, at) = run_episode_with_checkpoints(
                    problem,
                    &mut policy,
                    horizon,
                    checkpoints,
                    &mut stream.child(j).rng(),
                )?;
                for (t, r) in totals.iter_mut().zip(at) {
                    *t += r;
                }
            }
            Ok(totals.into_iter().map(|t| t / runs as f64).collect())
        })
        .collect::<Result<_>>()?;
    let n = problems.len() as f64;
    Ok(checkpoints
        .iter()
        .enumerate()
        .map(|(c, &t)| (t, per_problem.iter().map(|p| p[c]).sum::<f64>() / n))
        .collect())
}

/// How a policy is trained before testing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStage {
    pub horizon: u64,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    /// Episodes per training problem inside the objective; defaults to the
    /// experiment's `runs_per_problem`.
    #[serde(default)]
    pub runs: Option<u64>,
}

fn default_i_max() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    #[serde(default)]
    pub name: Option<String>,
    pub policy: PolicySpec,
    #[serde(default)]
    pub train: Option<TrainingStage>,
}

impl PolicyEntry {
    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.policy.to_string())
    }
}

/// A complete train/test experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub train_distribution: ProblemDistribution,
    pub test_distribution: ProblemDistribution,
    #[serde(default = "default_n_train")]
    pub n_train: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_runs")]
    pub runs_per_problem: u64,
    pub horizons: Vec<u64>,
    pub policies: Vec<PolicyEntry>,
    /// Win rates are reported against this policy when set.
    #[serde(default)]
    pub baseline: Option<PolicySpec>,
    /// How test regret is scored (training always uses realized regret).
    #[serde(default)]
    pub regret: RegretMeasure,
    pub master_seed: u64,
}

fn default_n_train() -> usize {
    100
}

fn default_n_test() -> usize {
    1000
}

fn default_runs() -> u64 {
    100
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.train_distribution.validate()?;
        self.test_distribution.validate()?;
        if self.n_train == 0 || self.n_test == 0 || self.runs_per_problem == 0 {
            return Err(Error::Config("n_train, n_test and runs_per_problem must be >= 1".into()));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|&t| (t as usize) < self.test_distribution.arms) {
            return Err(Error::Config("horizons must be non-empty and at least the arm count".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("no policies given".into()));
        }
        for p in &self.policies {
            if let Some(stage) = &p.train {
                if p.policy.params().is_empty() {
                    return Err(Error::Config(format!("policy `{}` has nothing to train", p.policy)));
                }
                if stage.i_max == 0 || (stage.horizon as usize) < self.train_distribution.arms {
                    return Err(Error::Config(format!("bad training stage for `{}`", p.label())));
                }
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn seeds(&self) -> ExperimentSeeds {
        let master = StreamSeed::new(self.master_seed);
        ExperimentSeeds {
            master: self.master_seed,
            train_problems: master.child(domain::TRAIN_PROBLEMS),
            test_problems: master.child(domain::TEST_PROBLEMS),
            evaluation: master.child(domain::EVALUATION),
            optimizer: master.child(domain::OPTIMIZER),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSeeds {
    pub master: u64,
    pub train_problems: StreamSeed,
    pub test_problems: StreamSeed,
    pub evaluation: StreamSeed,
    pub optimizer: StreamSeed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: String,
    pub spec: PolicySpec,
    pub train_horizon: Option<u64>,
    pub horizon: u64,
    pub mean_regret: f64,
    pub std_error: f64,
    pub wins_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub policy: String,
    pub train_horizon: u64,
    pub result: PolicySpec,
    pub best_score: f64,
    pub trace: Vec<EdaIteration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub seeds: ExperimentSeeds,
    pub tuning: Vec<TuningRecord>,
    pub rows: Vec<ReportRow>,
    /// False when a stage failed; the rows computed before the failure are kept.
    pub complete: bool,
    pub error: Option<String>,
}

impl ExperimentReport {
    pub fn row(&self, policy: &str, horizon: u64) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.policy == policy && r.horizon == horizon)
    }

    /// One CSV row per policy and horizon.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "policy",
            "spec",
            "train_horizon",
            "horizon",
            "mean_regret",
            "std_error",
            "wins_vs_baseline",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.policy.clone(),
                r.spec.to_string(),
                r.train_horizon.map(|t| t.to_string()).unwrap_or_default(),
                r.horizon.to_string(),
                r.mean_regret.to_string(),
                r.std_error.to_string(),
                r.wins_vs_baseline.map(|w| w.to_string()).unwrap_or_default(),
            ])?;
        }
        if !self.complete {
            w.write_record(["# partial report", "", "", "", "", "", ""])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

/// Runs training stages, then evaluates every policy on the test set at
/// every horizon. A failing stage stops the run and yields a partial report.
pub fn run_experiment(spec: &ExperimentSpec) -> ExperimentReport {
    let mut report = ExperimentReport {
        spec: spec.clone(),
        seeds: spec.seeds(),
        tuning: Vec::new(),
        rows: Vec::new(),
        complete: false,
        error: None,
    };
    if let Err(e) = run_stages(spec, &mut report) {
        report.error = Some(e.to_string());
        return report;
    }
    report.complete = true;
    report
}

fn run_stages(spec: &ExperimentSpec, report: &mut ExperimentReport) -> Result<()> {
    spec.validate()?;
    let seeds = spec.seeds();
    let train = spec.train_distribution.sample_set(spec.n_train, seeds.train_problems);
    let test = spec.test_distribution.sample_set(spec.n_test, seeds.test_problems);

    let mut finals = Vec::with_capacity(spec.policies.len());
    for entry in &spec.policies {
        let label = entry.label();
        let Some(stage) = &entry.train else {
            finals.push((label, entry.policy.clone(), None));
            continue;
        };
        let dim = entry.policy.params().len();
        let config = EdaConfig::new(dim, seeds.optimizer.child_str(&label).child(stage.horizon))
            .with_iterations(stage.i_max);
        let runs = stage.runs.unwrap_or(spec.runs_per_problem);
        let (tuned, result) = tune_policy(&entry.policy, &train, stage.horizon, runs, &config)?;
        report.tuning.push(TuningRecord {
            policy: label.clone(),
            train_horizon: stage.horizon,
            result: tuned.clone(),
            best_score: result.best_score,
            trace: result.trace,
        });
        finals.push((label, tuned, Some(stage.horizon)));
    }

    for &horizon in &spec.horizons {
        let baseline = match &spec.baseline {
            Some(b) => Some(evaluate_policy_measured(
                b,
                &test,
                horizon,
                spec.runs_per_problem,
                evaluation_seed(seeds.evaluation, b, horizon),
                spec.regret,
            )?),
            None => None,
        };
        for (label, policy, train_horizon) in &finals {
            let eval = evaluate_policy_measured(
                policy,
                &test,
                horizon,
                spec.runs_per_problem,
                evaluation_seed(seeds.evaluation, policy, horizon),
                spec.regret,
            )?;
            report.rows.push(ReportRow {
                policy: label.clone(),
                spec: policy.clone(),
                train_horizon: *train_horizon,
                horizon,
                mean_regret: eval.mean,
                std_error: eval.std_error,
                wins_vs_baseline: baseline
                    .as_ref()
                    .map(|b| percent_wins(&eval.per_problem, &b.per_problem)),
            });
        }
    }
    Ok(())
}
