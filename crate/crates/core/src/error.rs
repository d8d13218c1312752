use thiserror::Error;

/// Errors raised while configuring or running a simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(
        "cluster {cluster} holds {size} UEs but only {tau_u} UL pilot slots exist (max_l |K_l| <= tau_u violated)"
    )]
    PilotCapacity { cluster: usize, size: usize, tau_u: usize },

    #[error("clustering failed: {0}")]
    Clustering(String),

    #[error("instant {t} is not part of the resource block sample (available: {available})")]
    InstantOutOfRange { t: usize, available: String },

    #[error("precoder normalization undefined for AP {m}, UE {k}: estimate covariance has zero trace")]
    Normalization { m: usize, k: usize },

    #[error("statistics error: {0}")]
    Statistics(String),

    #[error(
        "closed-form statistic {name} disagrees with the Monte Carlo oracle: closed {closed:.6e}, oracle {oracle:.6e}, relative error {rel:.4}"
    )]
    StatsMismatch {
        name: String,
        closed: f64,
        oracle: f64,
        rel: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
