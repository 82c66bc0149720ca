//! Head-to-head: adaptive meta-search against uniform round-robin on the
//! task of separating the top decile of a 100-formula sample from its bottom
//! decile at 95% confidence.

use bandit_meta::formula::{draw_samples, partition_fast, SampleDomain};
use bandit_meta::harness::ProblemDistribution;
use bandit_meta::rng::domain;
use bandit_meta::search::{run_search, MetaBandit, SearchConfig, SearchStrategy};
use bandit_meta::{ArmStats, BanditProblem, Formula, StreamSeed};
use rand::seq::SliceRandom;

const HORIZON: u64 = 100;
const ARMS: usize = 100;
const DECILE: usize = ARMS / 10;
const ORACLE_PULLS: u64 = 1000;
const STEP: u64 = 100;
const CAP: u64 = 200_000;
const SEEDS: u64 = 5;
const REQUIRED_SPEEDUP: f64 = 5.0;

/// Normal 95% interval on the mean reward; unbounded below two pulls.
fn interval(s: &ArmStats) -> (f64, f64) {
    if s.plays < 2 {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let n = s.plays as f64;
    let var = ((s.sum_sq - s.sum * s.sum / n) / (n - 1.0)).max(0.0);
    let h = 1.96 * (var / n).sqrt();
    (s.mean - h, s.mean + h)
}

fn separated(stats: &[ArmStats], top: &[usize], bottom: &[usize]) -> bool {
    let highest_bottom = bottom.iter().map(|&j| interval(&stats[j]).1).fold(f64::NEG_INFINITY, f64::max);
    top.iter().all(|&i| interval(&stats[i]).0 > highest_bottom)
}

struct Setup {
    formulas: Vec<Formula>,
    problems: Vec<BanditProblem>,
    top: Vec<usize>,
    bottom: Vec<usize>,
}

fn setup() -> Setup {
    let samples = draw_samples(&SampleDomain::with_count(256), StreamSeed::new(7).child(domain::FORMULA_SAMPLES));
    let mut formulas = partition_fast(5, &samples).unwrap().representatives();
    formulas.shuffle(&mut StreamSeed::new(8).rng());
    formulas.truncate(ARMS);
    let problems = ProblemDistribution::bernoulli(2).sample_set(100, StreamSeed::new(9).child(domain::TRAIN_PROBLEMS));

    // Deciles come from a long uniform run on an independent stream.
    let seed = StreamSeed::new(10);
    let mut oracle = MetaBandit::new(formulas.clone(), problems.clone(), HORIZON, seed).unwrap();
    let mut config = SearchConfig::new(HORIZON, ORACLE_PULLS * ARMS as u64, seed);
    config.strategy = SearchStrategy::RoundRobin;
    run_search(&mut oracle, &config).unwrap();
    let truth: Vec<f64> = oracle.stats().iter().map(|s| s.mean).collect();
    let mut order: Vec<usize> = (0..ARMS).collect();
    order.sort_by(|&a, &b| truth[b].total_cmp(&truth[a]).then(a.cmp(&b)));
    Setup {
        formulas,
        problems,
        top: order[..DECILE].to_vec(),
        bottom: order[ARMS - DECILE..].to_vec(),
    }
}

/// Episodes until separation, checked every `STEP` pulls; `None` past `CAP`.
fn episodes_to_separate(s: &Setup, strategy: SearchStrategy, seed: StreamSeed) -> Option<u64> {
    let mut meta = MetaBandit::new(s.formulas.clone(), s.problems.clone(), HORIZON, seed).unwrap();
    let mut config = SearchConfig::new(HORIZON, ARMS as u64, seed);
    config.strategy = strategy;
    while config.budget <= CAP {
        run_search(&mut meta, &config).unwrap();
        if separated(meta.stats(), &s.top, &s.bottom) {
            return Some(config.budget);
        }
        config.budget += STEP;
    }
    None
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn adaptive_search_separates_deciles_faster_than_round_robin() {
    let s = setup();
    let mut adaptive = Vec::new();
    let mut uniform = Vec::new();
    for i in 0..SEEDS {
        let seed = StreamSeed::new(100).child(i);
        let a = episodes_to_separate(&s, SearchStrategy::Ucb1Tuned, seed);
        let u = episodes_to_separate(&s, SearchStrategy::RoundRobin, seed);
        println!("seed {i}: ucb1-tuned {a:?}, round-robin {u:?}");
        adaptive.push(a.map_or(f64::INFINITY, |x| x as f64));
        uniform.push(u.map_or(f64::INFINITY, |x| x as f64));
    }
    let speedup = median(uniform) / median(adaptive);
    println!("median speedup {speedup:.2}");
    assert!(speedup >= REQUIRED_SPEEDUP, "speedup {speedup:.2} < {REQUIRED_SPEEDUP}");
}
