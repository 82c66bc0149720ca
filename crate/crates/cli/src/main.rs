use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use bandit_meta::eda::{tune_policy, EdaConfig};
use bandit_meta::formula::{
    count_by_length, draw_samples, enumerate_formulas, partition_fast, read_classes, SampleDomain,
    StatisticsLaw,
};
use bandit_meta::harness::{
    configure_threads, evaluate_policy_measured, evaluation_seed, percent_wins, regret_series,
    run_experiment, ExperimentReport, ExperimentSpec, ProblemDistribution, RegretMeasure,
};
use bandit_meta::rng::domain;
use bandit_meta::search::{search_best, SearchConfig, SearchStrategy};
use bandit_meta::{BanditProblem, PolicySpec, StreamSeed, ThetaVector};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Meta-learning of exploration/exploitation strategies for multi-armed
/// bandits.
#[derive(Parser)]
#[command(name = "bandit-meta", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw bandit problems and write them as JSON lines.
    SampleProblems {
        #[command(flatten)]
        problems: ProblemArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy on test problems.
    EvalPolicy {
        /// Policy spec, e.g. `ucb1:C=2`, `ucb1tuned`, `formula:add(rk,inv(tk))`.
        #[arg(long)]
        policy: PolicySpec,
        /// Horizons (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        horizon: Vec<u64>,
        #[command(flatten)]
        problems: ProblemArgs,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        /// Also report win percentage against this policy.
        #[arg(long)]
        baseline: Option<PolicySpec>,
        /// Per-episode regret: realized, pseudo (true means) or nominal
        /// (untruncated Gaussian means).
        #[arg(long, value_enum, default_value_t = Measure::Realized)]
        regret: Measure,
        /// Write the regret-vs-T curve at these checkpoints (comma separated)
        /// instead of one row per horizon.
        #[arg(long, value_delimiter = ',')]
        series: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tune a policy's parameters with the EDA on training problems.
    Tune {
        #[arg(long)]
        policy: PolicySpec,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn a Power-P index policy with the EDA.
    LearnNumeric {
        #[arg(long, default_value_t = 1)]
        degree: usize,
        #[command(flatten)]
        train: TrainArgs,
        /// Where to write the learned theta (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Count (or list) all formulas up to a maximal length.
    EnumerateFormulas {
        #[arg(long)]
        max_len: usize,
        /// Write every formula, one per line.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Partition formulas into equivalence classes and write representatives.
    ClusterFormulas {
        #[arg(long)]
        max_len: usize,
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = Law::Bernoulli)]
        law: Law,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Race formula representatives with a meta-level bandit.
    SearchFormula {
        /// Representatives JSONL written by `cluster-formulas`.
        #[arg(long)]
        representatives: PathBuf,
        #[arg(long)]
        horizon: u64,
        #[arg(long)]
        budget: u64,
        #[arg(long, value_enum, default_value_t = Dist::Bernoulli)]
        distribution: Dist,
        #[arg(long, default_value_t = 2)]
        arms: usize,
        #[arg(long, default_value_t = 100)]
        n_train: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Arms pulled per round (1 = sequential).
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long)]
        round_robin: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full train/test experiment described by a JSON file.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        /// Use 10000 test problems instead of the configured count.
        #[arg(long)]
        full_scale: bool,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Render a JSON report as a table.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, value_enum, default_value_t = Dist::Bernoulli)]
    distribution: Dist,
    #[arg(long, default_value_t = 2)]
    arms: usize,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train_horizon: u64,
    #[arg(long, default_value_t = 100)]
    i_max: usize,
    #[arg(long, default_value_t = 100)]
    n_train: usize,
    /// Episodes per training problem inside the objective.
    #[arg(long, default_value_t = 100)]
    runs: u64,
    #[arg(long, value_enum, default_value_t = Dist::Bernoulli)]
    distribution: Dist,
    #[arg(long, default_value_t = 2)]
    arms: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Bernoulli,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Law {
    Bernoulli,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum Measure {
    Realized,
    Pseudo,
    Nominal,
}

impl From<Measure> for RegretMeasure {
    fn from(m: Measure) -> Self {
        match m {
            Measure::Realized => RegretMeasure::Realized,
            Measure::Pseudo => RegretMeasure::Pseudo,
            Measure::Nominal => RegretMeasure::Nominal,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Csv,
}

impl Dist {
    fn distribution(self, arms: usize) -> Result<ProblemDistribution> {
        let d = match self {
            Dist::Bernoulli => ProblemDistribution::bernoulli(arms),
            Dist::Gaussian => ProblemDistribution::truncated_gaussian(arms),
        };
        d.validate().map_err(config)?;
        Ok(d)
    }
}

/// Marks an error as a configuration problem (exit code 2).
#[derive(Debug)]
struct ConfigError(anyhow::Error);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config(e: impl Into<anyhow::Error>) -> anyhow::Error {
    ConfigError(e.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    use bandit_meta::Error as E;
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<E>() {
        Some(
            E::TooFewArms(_)
            | E::HorizonTooShort { .. }
            | E::PolicySpec { .. }
            | E::Theta(_)
            | E::FormulaParse { .. }
            | E::BudgetTooSmall { .. }
            | E::InvalidArm(_)
            | E::Config(_),
        ) => 2,
        _ => 3,
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn training_set(train: &TrainArgs) -> Result<(Vec<BanditProblem>, StreamSeed)> {
    let master = StreamSeed::new(train.seed);
    let dist = train.distribution.distribution(train.arms)?;
    if train.n_train == 0 {
        return Err(config(anyhow::anyhow!("--n-train must be at least 1")));
    }
    Ok((dist.sample_set(train.n_train, master.child(domain::TRAIN_PROBLEMS)), master))
}

fn tune(spec: &PolicySpec, train: &TrainArgs) -> Result<(PolicySpec, bandit_meta::eda::EdaResult)> {
    let (problems, master) = training_set(train)?;
    let dim = spec.params().len();
    let eda = EdaConfig::new(dim, master.child(domain::OPTIMIZER).child_str(&spec.to_string()))
        .with_iterations(train.i_max);
    let (tuned, result) = tune_policy(spec, &problems, train.train_horizon, train.runs, &eda).map_err(|e| match e {
        bandit_meta::Error::Config(_) => config(e),
        other => other.into(),
    })?;
    Ok((tuned, result))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads().map_err(config)?;
    match cli.command {
        Command::SampleProblems { problems, out } => {
            let dist = problems.distribution.distribution(problems.arms)?;
            let set = dist.sample_set(problems.count, StreamSeed::new(problems.seed).child(domain::TEST_PROBLEMS));
            let mut w = output(out.as_deref())?;
            for p in &set {
                serde_json::to_writer(&mut w, p)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
        Command::EvalPolicy {
            policy,
            horizon,
            problems,
            runs,
            baseline,
            regret,
            series,
            out,
        } => {
            let measure = RegretMeasure::from(regret);
            if runs == 0 || problems.count == 0 {
                return Err(config(anyhow::anyhow!("--runs and --count must be at least 1")));
            }
            let master = StreamSeed::new(problems.seed);
            let dist = problems.distribution.distribution(problems.arms)?;
            let set = dist.sample_set(problems.count, master.child(domain::TEST_PROBLEMS));
            let eval_root = master.child(domain::EVALUATION);
            let mut w = output(out.as_deref())?;
            if !series.is_empty() {
                writeln!(w, "policy,horizon,mean_regret")?;
                let points = regret_series(&policy, &set, &series, runs, eval_root.child_str(&policy.to_string()))?;
                for (t, r) in points {
                    writeln!(w, "\"{policy}\",{t},{r}")?;
                }
            } else {
                writeln!(w, "policy,horizon,mean_regret,std_error,wins_vs_baseline")?;
                for &t in &horizon {
                    let e = evaluate_policy_measured(&policy, &set, t, runs, evaluation_seed(eval_root, &policy, t), measure)?;
                    let wins = match &baseline {
                        Some(b) => {
                            let base = evaluate_policy_measured(b, &set, t, runs, evaluation_seed(eval_root, b, t), measure)?;
                            percent_wins(&e.per_problem, &base.per_problem).to_string()
                        }
                        None => String::new(),
                    };
                    writeln!(w, "\"{policy}\",{t},{},{},{wins}", e.mean, e.std_error)?;
                }
            }
            w.flush()?;
        }
        Command::Tune { policy, train, out } => {
            let (tuned, result) = tune(&policy, &train)?;
            let record = serde_json::json!({
                "policy": policy,
                "tuned": tuned,
                "train_horizon": train.train_horizon,
                "best_score": result.best_score,
                "trace": result.trace,
            });
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &record)?;
            writeln!(w)?;
            w.flush()?;
        }
        Command::LearnNumeric { degree, train, out } => {
            let base = PolicySpec::Power(ThetaVector::zeros(degree));
            let (tuned, result) = tune(&base, &train)?;
            let PolicySpec::Power(theta) = tuned else {
                unreachable!("tuning keeps the policy family")
            };
            theta.save(&out)?;
            println!("best training regret {} after {} iterations", result.best_score, result.trace.len());
        }
        Command::EnumerateFormulas { max_len, out } => {
            if max_len == 0 {
                return Err(config(anyhow::anyhow!("--max-len must be at least 1")));
            }
            let counts = count_by_length(max_len);
            for (len, c) in counts.iter().enumerate().skip(1) {
                println!("length {len}: {c}");
            }
            println!("total: {}", counts.iter().sum::<u64>());
            if let Some(path) = out {
                let mut w = output(Some(&path))?;
                for f in enumerate_formulas(max_len) {
                    writeln!(w, "{f}")?;
                }
                w.flush()?;
            }
        }
        Command::ClusterFormulas {
            max_len,
            samples,
            law,
            seed,
            out,
        } => {
            let law = match law {
                Law::Bernoulli => StatisticsLaw::Bernoulli,
                Law::Uniform => StatisticsLaw::Uniform,
            };
            let domain_cfg = SampleDomain {
                law,
                ..SampleDomain::with_count(samples)
            };
            domain_cfg.validate().map_err(config)?;
            let points = draw_samples(&domain_cfg, StreamSeed::new(seed).child(domain::FORMULA_SAMPLES));
            let p = partition_fast(max_len, &points)?;
            p.write_jsonl(&out)?;
            println!(
                "enumerated {} formulas, {} invalid, {} classes",
                p.total_enumerated(),
                p.total_invalid(),
                p.classes.len()
            );
        }
        Command::SearchFormula {
            representatives,
            horizon,
            budget,
            distribution,
            arms,
            n_train,
            seed,
            batch,
            round_robin,
            out,
        } => {
            let classes = read_classes(&representatives).map_err(config)?;
            let formulas = classes.into_iter().map(|c| c.expr).collect();
            let master = StreamSeed::new(seed);
            let train_seed = master.child(domain::TRAIN_PROBLEMS);
            let problems = distribution.distribution(arms)?.sample_set(n_train, train_seed);
            let cfg = SearchConfig {
                horizon,
                budget,
                seed: master.child(domain::META_SEARCH),
                strategy: if round_robin {
                    SearchStrategy::RoundRobin
                } else {
                    SearchStrategy::Ucb1Tuned
                },
                batch,
            };
            let result = search_best(formulas, problems, &cfg)?;
            result.write_jsonl(&out, Some(train_seed), n_train)?;
            let best = result.best();
            println!("best: {} (mean reward {}, {} pulls)", best.expr, best.mean_reward, best.pulls);
        }
        Command::Benchmark {
            config: path,
            full_scale,
            csv,
            json,
        } => {
            let mut spec = ExperimentSpec::from_json_file(&path)
                .map_err(config)
                .with_context(|| format!("loading {}", path.display()))?;
            if full_scale {
                spec.n_test = 10_000;
            }
            let report = run_experiment(&spec);
            let mut w = output(csv.as_deref())?;
            report.write_csv(&mut w)?;
            w.flush()?;
            if let Some(p) = json {
                report.write_json(&p)?;
            }
            if let Some(e) = report.error {
                anyhow::bail!("experiment stopped early: {e}");
            }
        }
        Command::Report { input, format } => {
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let report: ExperimentReport = serde_json::from_str(&text).map_err(config)?;
            match format {
                Format::Csv => report.write_csv(std::io::stdout().lock())?,
                Format::Markdown => print_markdown(&report),
            }
        }
    }
    Ok(())
}

fn print_markdown(report: &ExperimentReport) {
    println!("| policy | train T | T | mean regret | std. error | wins (%) |");
    println!("|---|---|---|---|---|---|");
    for r in &report.rows {
        println!(
            "| {} | {} | {} | {:.3} | {:.3} | {} |",
            r.policy,
            r.train_horizon.map(|t| t.to_string()).unwrap_or_else(|| "-".into()),
            r.horizon,
            r.mean_regret,
            r.std_error,
            r.wins_vs_baseline.map(|w| format!("{w:.1}")).unwrap_or_else(|| "-".into()),
        );
    }
    if !report.complete {
        println!("\npartial report: {}", report.error.as_deref().unwrap_or("unknown error"));
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
