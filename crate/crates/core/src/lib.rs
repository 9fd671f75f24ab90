//! Forward simulation of two-species reaction-diffusion systems on an
//! interval and fixed-point reconstruction of their unknown reaction or
//! interaction terms from final-time or boundary time-trace data.

pub mod data;
pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod forward;
pub mod function_repr;
pub mod inversion;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod presets;

pub use error::{Error, Result};
pub use expr::{Env, Expr, ExprError, Var};
pub use forward::{
    solve_forward, BoundaryCondition, Grid, Nonlinearity, Reaction, Side, SpeciesBc, SystemSpec,
    Trajectory,
};
pub use function_repr::{BasisConfig, RangeInterval, RangedFn, Ridge, StoredProfile};
