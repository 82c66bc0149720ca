//! Meta-learning of exploration/exploitation strategies for finite-horizon
//! multi-armed bandits.
//!
//! The crate provides bandit simulation ([`bandit`]), a catalogue of index
//! policies ([`policies`]), learnable Power-P policies ([`numeric`]), a
//! univariate Gaussian EDA optimizer ([`eda`]), a grammar of index formulas
//! with equivalence clustering ([`formula`]), a bandit-based search over
//! formulas ([`search`]) and the train/test experiment harness ([`harness`]).

pub mod bandit;
pub mod eda;
pub mod error;
pub mod formula;
pub mod harness;
pub mod numeric;
pub mod policies;
pub mod rng;
pub mod search;

pub use bandit::{run_episode, ArmDistribution, ArmStats, BanditProblem, EpisodeResult};
pub use error::{Error, Result};
pub use formula::{parse_formula, Formula};
pub use numeric::ThetaVector;
pub use policies::{Policy, PolicySpec};
pub use rng::{StreamRng, StreamSeed};
