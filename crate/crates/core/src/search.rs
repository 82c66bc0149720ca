//! Best-formula identification as a pure-exploration bandit.
//!
//! Every candidate formula is a meta-arm. Pulling arm `k` runs one episode of
//! the formula's index policy on the next training problem in arm `k`'s
//! cycle and returns `1 - R/T` clipped to `[0, 1]`. Arms are initialized once
//! each and then chosen by UCB1-Tuned.
//!
//! Exact UCB1-Tuned selection over ~10^5 arms is done with a max-heap keyed by
//! each arm's index evaluated at the end of the current time window. The index
//! is nondecreasing in `t`, so those keys are upper bounds for the whole
//! window, and popping until the best exact value beats the next key yields
//! the same arm as a full scan.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{run_episode, ArmStats, BanditProblem};
use crate::error::{Error, Result};
use crate::formula::{Formula, FormulaIndex};
use crate::policies::{index_ucb1_tuned, IndexPolicy};
use crate::rng::StreamSeed;

/// Reward of one meta-pull given the realized regret and whether the formula
/// produced a non-finite index during the episode.
pub fn normalized_reward(regret: f64, horizon: u64, failed: bool) -> f64 {
    if failed {
        return 0.0;
    }
    (1.0 - regret / horizon as f64).clamp(0.0, 1.0)
}

/// The meta-bandit over candidate formulas.
#[derive(Debug, Clone)]
pub struct MetaBandit {
    formulas: Vec<Formula>,
    problems: Vec<BanditProblem>,
    horizon: u64,
    seed: StreamSeed,
    stats: Vec<ArmStats>,
    failed_pulls: Vec<u64>,
}

impl MetaBandit {
    /// Episode `j` of arm `k` draws its randomness from
    /// `seed.child(k).child(j)`.
    pub fn new(formulas: Vec<Formula>, problems: Vec<BanditProblem>, horizon: u64, seed: StreamSeed) -> Result<Self> {
        if formulas.is_empty() {
            return Err(Error::Config("no candidate formulas".into()));
        }
        if problems.is_empty() {
            return Err(Error::Config("no training problems".into()));
        }
        if let Some(p) = problems.iter().find(|p| horizon < p.num_arms() as u64) {
            return Err(Error::HorizonTooShort {
                horizon,
                arms: p.num_arms(),
            });
        }
        let m = formulas.len();
        Ok(MetaBandit {
            formulas,
            problems,
            horizon,
            seed,
            stats: vec![ArmStats::default(); m],
            failed_pulls: vec![0; m],
        })
    }

    pub fn num_arms(&self) -> usize {
        self.formulas.len()
    }

    pub fn stats(&self) -> &[ArmStats] {
        &self.stats
    }

    pub fn total_pulls(&self) -> u64 {
        self.stats.iter().map(|s| s.plays).sum()
    }

    /// Training problem used by the next pull of arm `k`.
    pub fn next_problem(&self, k: usize) -> usize {
        (self.stats[k].plays % self.problems.len() as u64) as usize
    }

    /// Reward the next pull of arm `k` would yield, without recording it.
    fn simulate(&self, k: usize) -> Result<(f64, bool)> {
        let problem = &self.problems[self.next_problem(k)];
        let mut policy = IndexPolicy::new(FormulaIndex::new(self.formulas[k].clone()));
        let mut rng = self.seed.child(k as u64).child(self.stats[k].plays).rng();
        let episode = run_episode(problem, &mut policy, self.horizon, &mut rng)?;
        let failed = episode.index_failures > 0;
        Ok((normalized_reward(episode.regret, self.horizon, failed), failed))
    }

    fn record(&mut self, k: usize, reward: f64, failed: bool) {
        self.stats[k].update(reward);
        self.failed_pulls[k] += failed as u64;
    }

    /// Pulls arm `k` once and returns the normalized reward.
    pub fn meta_pull(&mut self, k: usize) -> Result<f64> {
        if k >= self.num_arms() {
            return Err(Error::Config(format!("arm {k} out of range")));
        }
        let (reward, failed) = self.simulate(k)?;
        self.record(k, reward, failed);
        Ok(reward)
    }

    /// Pulls every arm in `arms` (distinct) as if in sequence; episodes run
    /// in parallel.
    fn pull_batch(&mut self, arms: &[usize]) -> Result<()> {
        let outcomes: Vec<(f64, bool)> = arms.par_iter().map(|&k| self.simulate(k)).collect::<Result<_>>()?;
        for (&k, (reward, failed)) in arms.iter().zip(outcomes) {
            self.record(k, reward, failed);
        }
        Ok(())
    }

    /// Arms sorted by empirical mean reward (descending), then pulls
    /// (descending), then index.
    pub fn ranking(&self) -> Vec<RankedFormula> {
        let mut order: Vec<usize> = (0..self.num_arms()).collect();
        order.sort_by(|&a, &b| {
            let (sa, sb) = (&self.stats[a], &self.stats[b]);
            sb.mean
                .total_cmp(&sa.mean)
                .then(sb.plays.cmp(&sa.plays))
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .enumerate()
            .map(|(rank, k)| RankedFormula {
                rank: rank + 1,
                arm: k,
                expr: self.formulas[k].clone(),
                mean_reward: self.stats[k].mean,
                reward_stddev: self.stats[k].stddev,
                pulls: self.stats[k].plays,
                failed_pulls: self.failed_pulls[k],
            })
            .collect()
    }
}

/// Meta-level arm selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStrategy {
    #[default]
    Ucb1Tuned,
    /// Uniform allocation, arms in index order; the reference point for the
    /// adaptive search.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub horizon: u64,
    pub budget: u64,
    pub seed: StreamSeed,
    #[serde(default)]
    pub strategy: SearchStrategy,
    /// Arms pulled per selection round; 1 is the sequential algorithm.
    #[serde(default = "default_batch")]
    pub batch: usize,
}

fn default_batch() -> usize {
    1
}

impl SearchConfig {
    pub fn new(horizon: u64, budget: u64, seed: StreamSeed) -> Self {
        SearchConfig {
            horizon,
            budget,
            seed,
            strategy: SearchStrategy::Ucb1Tuned,
            batch: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFormula {
    pub rank: usize,
    /// Position of the formula in the candidate list.
    pub arm: usize,
    pub expr: Formula,
    pub mean_reward: f64,
    pub reward_stddev: f64,
    pub pulls: u64,
    pub failed_pulls: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub ranking: Vec<RankedFormula>,
    pub budget: u64,
    pub horizon: u64,
    pub seed: StreamSeed,
}

impl SearchResult {
    pub fn best(&self) -> &RankedFormula {
        &self.ranking[0]
    }

    /// One JSON object per formula, best first. `train_seed` is the seed the
    /// training problems were drawn from (problem `i` uses its child `i`).
    pub fn write_jsonl(&self, path: &Path, train_seed: Option<StreamSeed>, n_train: usize) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            #[serde(flatten)]
            formula: &'a RankedFormula,
            horizon: u64,
            budget: u64,
            search_seed: StreamSeed,
            #[serde(skip_serializing_if = "Option::is_none")]
            train_seed: Option<StreamSeed>,
            n_train: usize,
        }
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        for r in &self.ranking {
            let line = Line {
                formula: r,
                horizon: self.horizon,
                budget: self.budget,
                search_seed: self.seed,
                train_seed,
                n_train,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads ranked formulas back from [`SearchResult::write_jsonl`] output.
pub fn read_ranking(path: &Path) -> Result<Vec<RankedFormula>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64, Reverse<usize>);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn meta_index(stats: &ArmStats, t: u64) -> f64 {
    index_ucb1_tuned(stats, t, false)
}

/// Exact UCB1-Tuned argmax (ties to the lowest arm index) via upper-bound
/// keys valid until `window_end`.
struct LazyArgmax {
    heap: BinaryHeap<Key>,
    window_end: u64,
}

impl LazyArgmax {
    fn new() -> Self {
        LazyArgmax {
            heap: BinaryHeap::new(),
            window_end: 0,
        }
    }

    fn rebuild(&mut self, stats: &[ArmStats], t: u64) {
        self.window_end = t + t / 8 + 1;
        let end = self.window_end;
        self.heap = stats
            .iter()
            .enumerate()
            .map(|(k, s)| Key(meta_index(s, end), Reverse(k)))
            .collect();
    }

    /// Removes and returns the best arm among those in the heap at round `t`.
    fn pop_best(&mut self, stats: &[ArmStats], t: u64) -> usize {
        debug_assert!(t <= self.window_end);
        let mut best: Option<Key> = None;
        let mut popped: Vec<Key> = Vec::new();
        while let Some(&top) = self.heap.peek() {
            if let Some(b) = best {
                if top < b {
                    break;
                }
            }
            self.heap.pop();
            let k = top.1 .0;
            let exact = Key(meta_index(&stats[k], t), Reverse(k));
            if best.is_none_or(|b| exact > b) {
                best = Some(exact);
            }
            popped.push(top);
        }
        let chosen = best.expect("heap is not empty").1 .0;
        for key in popped {
            if key.1 .0 != chosen {
                self.heap.push(key);
            }
        }
        chosen
    }

    fn insert(&mut self, stats: &[ArmStats], k: usize) {
        self.heap.push(Key(meta_index(&stats[k], self.window_end), Reverse(k)));
    }
}

/// Reference implementation of the selection rule: full scan, ties to the
/// lowest index.
pub fn ucb1_tuned_scan(stats: &[ArmStats], t: u64) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (k, s) in stats.iter().enumerate() {
        let v = meta_index(s, t);
        if v > best_value {
            best = k;
            best_value = v;
        }
    }
    best
}

/// Runs the meta-bandit for exactly `config.budget` pulls and ranks the
/// formulas by empirical mean reward.
pub fn search_best(
    formulas: Vec<Formula>,
    problems: Vec<BanditProblem>,
    config: &SearchConfig,
) -> Result<SearchResult> {
    let mut meta = MetaBandit::new(formulas, problems, config.horizon, config.seed)?;
    run_search(&mut meta, config)?;
    Ok(SearchResult {
        ranking: meta.ranking(),
        budget: config.budget,
        horizon: config.horizon,
        seed: config.seed,
    })
}

/// Advances `meta` to `config.budget` total pulls.
pub fn run_search(meta: &mut MetaBandit, config: &SearchConfig) -> Result<()> {
    let m = meta.num_arms() as u64;
    if config.budget < m {
        return Err(Error::BudgetTooSmall {
            budget: config.budget,
            arms: m as usize,
        });
    }
    if config.batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let batch = config.batch as u64;

    // Initialization: every arm once, in order.
    let mut next = meta.total_pulls();
    while next < m.min(config.budget) {
        let end = (next + batch).min(m);
        let arms: Vec<usize> = (next as usize..end as usize).collect();
        meta.pull_batch(&arms)?;
        next = end;
    }

    let mut done = meta.total_pulls();
    match config.strategy {
        SearchStrategy::RoundRobin => {
            while done < config.budget {
                let take = batch.min(config.budget - done);
                let arms: Vec<usize> = (0..take).map(|i| ((done + i) % m) as usize).collect();
                meta.pull_batch(&arms)?;
                done += take;
            }
        }
        SearchStrategy::Ucb1Tuned => {
            let mut argmax = LazyArgmax::new();
            while done < config.budget {
                let t = done + 1;
                if t > argmax.window_end {
                    argmax.rebuild(meta.stats(), t);
                }
                let take = batch.min(config.budget - done).min(m) as usize;
                let arms: Vec<usize> = (0..take).map(|_| argmax.pop_best(meta.stats(), t)).collect();
                meta.pull_batch(&arms)?;
                for &k in &arms {
                    argmax.insert(meta.stats(), k);
                }
                done += take as u64;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_formula;
    use crate::harness::ProblemDistribution;
    use proptest::prelude::*;

    fn f(s: &str) -> Formula {
        parse_formula(s).unwrap()
    }

    #[test]
    fn reward_normalization() {
        assert_eq!(normalized_reward(0.0, 10, false), 1.0);
        assert_eq!(normalized_reward(1.0, 10, false), 0.9);
        assert_eq!(normalized_reward(-3.0, 10, false), 1.0);
        assert_eq!(normalized_reward(12.0, 10, false), 0.0);
        assert_eq!(normalized_reward(0.0, 10, true), 0.0);
    }

    #[test]
    fn greedy_on_deterministic_problem() {
        // Arm 0 pays 1, arm 1 pays 0: the forced pull of arm 1 costs 1, then
        // greedy stays on arm 0.
        let problem = BanditProblem::bernoulli(&[1.0, 0.0]).unwrap();
        let mut meta = MetaBandit::new(vec![f("rk")], vec![problem], 10, StreamSeed::new(1)).unwrap();
        assert!((meta.meta_pull(0).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn problems_cycle_per_arm() {
        let problems = ProblemDistribution::bernoulli(2).sample_set(3, StreamSeed::new(2));
        let mut meta = MetaBandit::new(vec![f("rk"), f("1")], problems, 5, StreamSeed::new(3)).unwrap();
        let mut seen = Vec::new();
        for _ in 0..7 {
            seen.push(meta.next_problem(0));
            meta.meta_pull(0).unwrap();
        }
        assert_eq!(seen, vec![0, 1, 2, 0, 1, 2, 0]);
        assert_eq!(meta.next_problem(1), 0);
    }

    #[test]
    fn invalid_formula_scores_zero() {
        // 1/(tk - 1) divides by zero right after initialization.
        let problems = ProblemDistribution::bernoulli(2).sample_set(2, StreamSeed::new(4));
        let mut meta = MetaBandit::new(vec![f("inv(sub(tk,1))")], problems, 20, StreamSeed::new(5)).unwrap();
        assert_eq!(meta.meta_pull(0).unwrap(), 0.0);
        assert_eq!(meta.ranking()[0].failed_pulls, 1);
    }

    #[test]
    fn greedy_beats_uniform_random() {
        let problem = BanditProblem::bernoulli(&[0.9, 0.1]).unwrap();
        let config = SearchConfig::new(100, 2000, StreamSeed::new(6));
        let r = search_best(vec![f("1"), f("rk")], vec![problem], &config).unwrap();
        assert_eq!(r.best().expr.to_string(), "rk");
        assert!(r.ranking[0].mean_reward - r.ranking[1].mean_reward >= 0.2);
        assert_eq!(r.ranking.iter().map(|x| x.pulls).sum::<u64>(), 2000);
    }

    #[test]
    fn budget_must_cover_initialization() {
        let problems = ProblemDistribution::bernoulli(2).sample_set(2, StreamSeed::new(7));
        let formulas = vec![f("rk"), f("tk"), f("1")];
        assert!(search_best(formulas.clone(), problems.clone(), &SearchConfig::new(10, 2, StreamSeed::new(1))).is_err());
        let r = search_best(formulas, problems, &SearchConfig::new(10, 3, StreamSeed::new(1))).unwrap();
        assert!(r.ranking.iter().all(|x| x.pulls == 1));
        let means: Vec<f64> = r.ranking.iter().map(|x| x.mean_reward).collect();
        assert!(means.windows(2).all(|w| w[0] >= w[1]));
    }

    fn candidates() -> Vec<Formula> {
        [
            "rk", "1", "tk", "sk", "neg(rk)", "add(rk,inv(tk))", "add(rk,sk)", "sub(rk,sk)",
            "add(rk,inv(sqrt(tk)))", "mul(sqrt(tk),sub(rk,inv(2)))", "max(rk,sk)", "min(rk,inv(tk))",
        ]
        .iter()
        .map(|s| f(s))
        .collect()
    }

    #[test]
    fn deterministic_and_batch_consistent() {
        let problems = ProblemDistribution::bernoulli(2).sample_set(10, StreamSeed::new(8));
        let config = SearchConfig::new(20, 500, StreamSeed::new(9));
        let a = search_best(candidates(), problems.clone(), &config).unwrap();
        let b = search_best(candidates(), problems.clone(), &config).unwrap();
        assert_eq!(a, b);
        let batched = search_best(candidates(), problems, &SearchConfig { batch: 4, ..config }).unwrap();
        assert_eq!(batched.ranking.iter().map(|x| x.pulls).sum::<u64>(), 500);
    }

    #[test]
    fn heap_matches_full_scan() {
        let problems = ProblemDistribution::bernoulli(2).sample_set(10, StreamSeed::new(10));
        let config = SearchConfig::new(20, candidates().len() as u64, StreamSeed::new(11));
        let mut heap_meta = MetaBandit::new(candidates(), problems.clone(), 20, config.seed).unwrap();
        run_search(&mut heap_meta, &config).unwrap();
        let mut scan_meta = heap_meta.clone();
        let mut argmax = LazyArgmax::new();
        for done in candidates().len() as u64..3000 {
            let t = done + 1;
            if t > argmax.window_end {
                argmax.rebuild(heap_meta.stats(), t);
            }
            let k = argmax.pop_best(heap_meta.stats(), t);
            assert_eq!(k, ucb1_tuned_scan(scan_meta.stats(), t), "round {t}");
            heap_meta.meta_pull(k).unwrap();
            scan_meta.meta_pull(k).unwrap();
            argmax.insert(heap_meta.stats(), k);
        }
    }

    proptest! {
        #[test]
        fn lazy_argmax_is_exact(
            arms in prop::collection::vec((1u64..50, 0.0f64..1.0, 0.0f64..0.5), 1..40),
            t0 in 100u64..10_000,
            steps in 1u64..200,
        ) {
            let stats: Vec<ArmStats> = arms.iter().map(|&(n, m, s)| ArmStats::from_summary(n, m, s)).collect();
            let mut argmax = LazyArgmax::new();
            argmax.rebuild(&stats, t0);
            let t = (t0 + steps).min(argmax.window_end);
            let k = argmax.pop_best(&stats, t);
            prop_assert_eq!(k, ucb1_tuned_scan(&stats, t));
        }

        #[test]
        fn pulls_sum_to_budget(budget in 12u64..200, batch in 1usize..6) {
            let problems = ProblemDistribution::bernoulli(2).sample_set(3, StreamSeed::new(12));
            let config = SearchConfig { batch, ..SearchConfig::new(10, budget, StreamSeed::new(13)) };
            let r = search_best(candidates(), problems, &config).unwrap();
            prop_assert_eq!(r.ranking.iter().map(|x| x.pulls).sum::<u64>(), budget);
        }
    }
}
