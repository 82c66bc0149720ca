use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid arm distribution: {0}")]
    InvalidArm(String),

    #[error("a bandit problem needs at least two arms, got {0}")]
    TooFewArms(usize),

    #[error("horizon {horizon} is shorter than the number of arms {arms}")]
    HorizonTooShort { horizon: u64, arms: usize },

    #[error("rejection sampling gave up after {0} draws")]
    RejectionLimit(u64),

    #[error("invalid policy `{spec}`: {reason}")]
    PolicySpec { spec: String, reason: String },

    #[error("invalid theta: {0}")]
    Theta(String),

    #[error("cannot parse formula `{input}` at byte {pos}: {reason}")]
    FormulaParse {
        input: String,
        pos: usize,
        reason: String,
    },

    #[error("budget {budget} cannot initialize {arms} arms")]
    BudgetTooSmall { budget: u64, arms: usize },

    #[error("signature collision between `{first}` and `{second}`")]
    SignatureCollision { first: String, second: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
