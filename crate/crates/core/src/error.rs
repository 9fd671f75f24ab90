use thiserror::Error;

use crate::expr::ExprError;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("Newton iteration did not converge at t = {time}: residual {residual:.3e} after {iterations} iterations")]
    NewtonDivergence {
        time: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("solution blow-up at t = {time}: |u| reached {magnitude:.3e}")]
    BlowUp { time: f64, magnitude: f64 },

    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),

    #[error("unsupported boundary configuration: {0}")]
    UnsupportedBc(String),

    #[error("rank deficient least-squares system: {0}")]
    RankDeficient(String),

    #[error("ill-conditioned fit: {0}")]
    IllConditioned(String),

    #[error("degenerate data range for species {species}: [{lo}, {hi}]")]
    DegenerateRange { species: usize, lo: f64, hi: f64 },

    #[error("interaction multiplier for species {species} is zero")]
    ZeroMultiplier { species: usize },

    #[error("forward solve failed: {0}")]
    ForwardFailure(Box<Error>),

    #[error("reaction slope is positive ({slope:.3e}) at {at}, dissipativity bound undefined")]
    NotDissipative { at: f64, slope: f64 },

    #[error(transparent)]
    Expr(#[from] ExprError),
}

impl Error {
    /// True for errors raised by the forward solver itself.
    pub fn is_forward_failure(&self) -> bool {
        matches!(
            self,
            Error::NewtonDivergence { .. } | Error::BlowUp { .. } | Error::ForwardFailure(_)
        )
    }
}
