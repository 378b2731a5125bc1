use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vehicles {ego} and {other} are registered at different intersections")]
    Classification { ego: u32, other: u32 },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("time {t} outside plan validity window [{from}, {until}]")]
    OutOfRange { t: f64, from: f64, until: f64 },

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("safety halt at t={time:.3}: {detail}")]
    SafetyHalt { time: f64, detail: String },

    #[error("connecting road over capacity at t={time:.3}: {count} vehicles on {length} m")]
    Capacity { time: f64, count: usize, length: f64 },

    #[error("scenario schema error: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
