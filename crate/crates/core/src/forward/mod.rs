//! Finite-difference forward solver for the coupled two-species system
//!
//! ```text
//! u_t = a u_xx - q(x) u + R_u(x, t, u, v)
//! v_t = a v_xx - q(x) v + R_v(x, t, u, v)
//! ```
//!
//! on `(0, L) x (0, T)` with Dirichlet, Neumann or Robin conditions at each
//! end. The reaction part is either `f_i(u_i) + beta * w(u, v) + r_i` (the
//! reaction pair is the unknown) or `f_i(u_i) + beta_i * phi_i(w(u, v)) + r_i`
//! (the interaction pair is the unknown).

mod eigen;
mod extract;
mod solver;

pub use eigen::{eigenpair, EigenBasis, EigenPattern};
pub use extract::{
    boundary_flux, laplacian_at_boundary, time_derivative_at_end, time_derivative_field,
};
pub(crate) use extract::{differentiate_uniform, interpolate_uniform};
pub use solver::{
    cn_step, solve_crank_nicolson, solve_forward, solve_forward_with, ForwardOptions,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr, Var};
use crate::function_repr::RangedFn;
use crate::linalg::Mat2;

/// Uniform space-time grid on `[0, L] x [0, T]`, boundary nodes included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nx: usize,
    nt: usize,
    length: f64,
    horizon: f64,
}

impl Grid {
    pub const MIN_NODES: usize = 9;

    pub fn new(nx: usize, nt: usize, length: f64, horizon: f64) -> Result<Grid> {
        if nx < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "nx = {nx}, need at least {}",
                Self::MIN_NODES
            )));
        }
        if nt < 2 {
            return Err(Error::InvalidGrid(format!("nt = {nt}, need at least 2")));
        }
        if !(length > 0.0 && length.is_finite() && horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "length and horizon must be positive, got L = {length}, T = {horizon}"
            )));
        }
        Ok(Grid {
            nx,
            nt,
            length,
            horizon,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dx(&self) -> f64 {
        self.length / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.nt - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.nx {
            self.length
        } else {
            i as f64 * self.dx()
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        if k + 1 == self.nt {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..self.nt).map(|k| self.t(k)).collect()
    }

    /// Grid with both steps halved.
    pub fn refined(&self) -> Grid {
        Grid {
            nx: 2 * self.nx - 1,
            nt: 2 * self.nt - 1,
            ..*self
        }
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Grid> {
        Grid::new(self.nx, self.nt, self.length, horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Boundary condition `du/dnu + gamma u = theta(t)` with outward normal
/// `nu`; Dirichlet imposes the value directly.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition {
    Dirichlet(Expr),
    Neumann(Expr),
    Robin { gamma: f64, flux: Expr },
}

impl BoundaryCondition {
    pub fn homogeneous_dirichlet() -> Self {
        BoundaryCondition::Dirichlet(Expr::constant(0.0))
    }

    pub fn homogeneous_neumann() -> Self {
        BoundaryCondition::Neumann(Expr::constant(0.0))
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryCondition::Dirichlet(_))
    }

    fn data(&self) -> &Expr {
        match self {
            BoundaryCondition::Dirichlet(e) | BoundaryCondition::Neumann(e) => e,
            BoundaryCondition::Robin { flux, .. } => flux,
        }
    }

    /// Boundary datum (value or flux) at time `t`.
    pub fn datum(&self, t: f64) -> f64 {
        self.data().eval(&Env::xt(0.0, t))
    }

    /// Impedance coefficient; zero for Neumann.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            BoundaryCondition::Dirichlet(_) => None,
            BoundaryCondition::Neumann(_) => Some(0.0),
            BoundaryCondition::Robin { gamma, .. } => Some(*gamma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesBc {
    pub left: BoundaryCondition,
    pub right: BoundaryCondition,
}

impl SpeciesBc {
    pub fn at(&self, side: Side) -> &BoundaryCondition {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// Homogeneous Dirichlet at `x = 0`, homogeneous Neumann at `x = L`.
    pub fn dirichlet_neumann() -> Self {
        SpeciesBc {
            left: BoundaryCondition::homogeneous_dirichlet(),
            right: BoundaryCondition::homogeneous_neumann(),
        }
    }

    pub fn neumann_neumann() -> Self {
        SpeciesBc {
            left: BoundaryCondition::homogeneous_neumann(),
            right: BoundaryCondition::homogeneous_neumann(),
        }
    }
}

/// A univariate nonlinearity: either known in closed form or a current
/// iterate of an unknown.
#[derive(Debug, Clone, PartialEq)]
pub enum Nonlinearity {
    Known(Expr),
    Ranged(RangedFn),
}

impl Nonlinearity {
    pub fn known(source: &str) -> Result<Self> {
        Ok(Nonlinearity::Known(Expr::parse_with(
            source,
            &[Var::U, Var::V, Var::W],
        )?))
    }

    pub fn eval(&self, xi: f64) -> f64 {
        match self {
            Nonlinearity::Known(e) => e.eval1(xi),
            Nonlinearity::Ranged(f) => f.eval(xi),
        }
    }

    /// Exact derivative.
    pub fn slope(&self, xi: f64) -> f64 {
        match self {
            Nonlinearity::Known(e) => e.eval1_slope(xi).1,
            Nonlinearity::Ranged(f) => f.derivative(xi),
        }
    }

    #[inline]
    fn eval_slope(&self, xi: f64, stats: &mut EvalStats) -> (f64, f64) {
        match self {
            Nonlinearity::Known(e) => e.eval1_slope(xi),
            Nonlinearity::Ranged(f) => {
                stats.unknown_evals += 1;
                if !f.interval().contains(xi) {
                    stats.clamped_evals += 1;
                }
                f.eval_with_slope(xi)
            }
        }
    }
}

/// Which pair of functions carries the (possibly unknown) nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub enum Reaction {
    /// `R_i = f_i(u_i) + beta * w(u, v) + r_i`.
    FPair { f: [Nonlinearity; 2], beta: f64 },
    /// `R_i = f_i(u_i) + beta_i * phi_i(w(u, v)) + r_i`.
    PhiPair {
        f: [Nonlinearity; 2],
        phi: [Nonlinearity; 2],
        beta: [f64; 2],
    },
}

/// Counters gathered while evaluating unknown nonlinearities.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub unknown_evals: u64,
    /// Evaluations whose raw argument fell outside the function's range and
    /// was clamped.
    pub clamped_evals: u64,
}

impl EvalStats {
    fn merge(&mut self, other: EvalStats) {
        self.unknown_evals += other.unknown_evals;
        self.clamped_evals += other.clamped_evals;
    }
}

/// Complete description of a forward problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub diffusion: f64,
    /// `q(x)`.
    pub potential: Expr,
    /// `u_0(x), v_0(x)`.
    pub initial: [Expr; 2],
    /// `r_u(x, t, u, v), r_v(x, t, u, v)`.
    pub sources: [Expr; 2],
    /// `w(u, v)`.
    pub coupling: Expr,
    pub reaction: Reaction,
    pub boundary: [SpeciesBc; 2],
}

impl SystemSpec {
    /// Checks variable usage of every expression and the coefficient signs.
    pub fn validate(&self) -> Result<()> {
        if !(self.diffusion > 0.0 && self.diffusion.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "diffusion coefficient must be positive, got {}",
                self.diffusion
            )));
        }
        self.potential.restrict(&[Var::X])?;
        for e in &self.initial {
            e.restrict(&[Var::X])?;
        }
        for e in &self.sources {
            e.restrict(&[Var::X, Var::T, Var::U, Var::V])?;
        }
        self.coupling.restrict(&[Var::U, Var::V])?;
        for bc in &self.boundary {
            for side in [Side::Left, Side::Right] {
                let c = bc.at(side);
                c.data().restrict(&[Var::T])?;
                if let BoundaryCondition::Robin { gamma, .. } = c {
                    if !gamma.is_finite() {
                        return Err(Error::InvalidInput(
                            "Robin coefficient must be finite".into(),
                        ));
                    }
                }
            }
        }
        match &self.reaction {
            Reaction::FPair { beta, .. } if !beta.is_finite() => {
                Err(Error::InvalidInput("beta must be finite".into()))
            }
            Reaction::PhiPair { beta, .. } if !beta.iter().all(|b| b.is_finite()) => {
                Err(Error::InvalidInput("beta_u, beta_v must be finite".into()))
            }
            _ => Ok(()),
        }
    }

    /// Coupling value and gradient `(w, [w_u, w_v])`.
    pub fn coupling_grad(&self, u: f64, v: f64) -> (f64, [f64; 2]) {
        self.coupling.eval_grad(&Env::state(0.0, 0.0, u, v))
    }

    pub fn source(&self, species: usize, x: f64, t: f64, u: f64, v: f64) -> f64 {
        self.sources[species].eval(&Env::state(x, t, u, v))
    }

    /// Reaction values and their Jacobian with respect to `(u, v)`.
    pub fn reaction_with_jacobian(
        &self,
        x: f64,
        t: f64,
        u: f64,
        v: f64,
        stats: &mut EvalStats,
    ) -> ([f64; 2], Mat2) {
        let env = Env::state(x, t, u, v);
        let (ru, gru) = self.sources[0].eval_grad(&env);
        let (rv, grv) = self.sources[1].eval_grad(&env);
        let (w, gw) = self.coupling.eval_grad(&env);
        match &self.reaction {
            Reaction::FPair { f, beta } => {
                let (fu, dfu) = f[0].eval_slope(u, stats);
                let (fv, dfv) = f[1].eval_slope(v, stats);
                let bw = beta * w;
                (
                    [fu + bw + ru, fv + bw + rv],
                    [
                        [dfu + beta * gw[0] + gru[0], beta * gw[1] + gru[1]],
                        [beta * gw[0] + grv[0], dfv + beta * gw[1] + grv[1]],
                    ],
                )
            }
            Reaction::PhiPair { f, phi, beta } => {
                let (fu, dfu) = f[0].eval_slope(u, stats);
                let (fv, dfv) = f[1].eval_slope(v, stats);
                let (p1, dp1) = phi[0].eval_slope(w, stats);
                let (p2, dp2) = phi[1].eval_slope(w, stats);
                let s1 = beta[0] * dp1;
                let s2 = beta[1] * dp2;
                (
                    [fu + beta[0] * p1 + ru, fv + beta[1] * p2 + rv],
                    [
                        [dfu + s1 * gw[0] + gru[0], s1 * gw[1] + gru[1]],
                        [s2 * gw[0] + grv[0], dfv + s2 * gw[1] + grv[1]],
                    ],
                )
            }
        }
    }

    /// Replaces the unknown pair (f for [`Reaction::FPair`], phi for
    /// [`Reaction::PhiPair`]).
    pub fn with_unknowns(&self, unknowns: [Nonlinearity; 2]) -> SystemSpec {
        let mut spec = self.clone();
        match &mut spec.reaction {
            Reaction::FPair { f, .. } => *f = unknowns,
            Reaction::PhiPair { phi, .. } => *phi = unknowns,
        }
        spec
    }

    /// The same system with the two species relabelled.
    pub fn swapped(&self) -> SystemSpec {
        let swap_vars = |e: &Expr| -> Expr {
            // textual relabelling u <-> v
            let src: String = e
                .source()
                .chars()
                .map(|c| match c {
                    'u' => '\u{0}',
                    _ => c,
                })
                .map(|c| match c {
                    'v' => 'u',
                    '\u{0}' => 'v',
                    _ => c,
                })
                .collect();
            Expr::parse(&src).expect("relabelled expression parses")
        };
        let reaction = match &self.reaction {
            Reaction::FPair { f, beta } => Reaction::FPair {
                f: [f[1].clone(), f[0].clone()],
                beta: *beta,
            },
            Reaction::PhiPair { f, phi, beta } => Reaction::PhiPair {
                f: [f[1].clone(), f[0].clone()],
                phi: [phi[1].clone(), phi[0].clone()],
                beta: [beta[1], beta[0]],
            },
        };
        SystemSpec {
            diffusion: self.diffusion,
            potential: self.potential.clone(),
            initial: [self.initial[1].clone(), self.initial[0].clone()],
            sources: [swap_vars(&self.sources[1]), swap_vars(&self.sources[0])],
            coupling: swap_vars(&self.coupling),
            reaction,
            boundary: [self.boundary[1].clone(), self.boundary[0].clone()],
        }
    }
}

/// Dense space-time solution `values[species][time][space]` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    values: [Vec<f64>; 2],
    stats: EvalStats,
}

impl Trajectory {
    pub(crate) fn from_parts(grid: Grid, values: [Vec<f64>; 2], stats: EvalStats) -> Trajectory {
        debug_assert_eq!(values[0].len(), grid.nx() * grid.nt());
        Trajectory {
            grid,
            values,
            stats,
        }
    }

    /// Builds a trajectory from a closed-form field (tests, oracles).
    pub fn from_fn(grid: Grid, f: impl Fn(usize, f64, f64) -> f64) -> Trajectory {
        let mut values = [Vec::new(), Vec::new()];
        for (s, vals) in values.iter_mut().enumerate() {
            vals.reserve(grid.nx() * grid.nt());
            for k in 0..grid.nt() {
                for i in 0..grid.nx() {
                    vals.push(f(s, grid.x(i), grid.t(k)));
                }
            }
        }
        Trajectory::from_parts(grid, values, EvalStats::default())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn stats(&self) -> EvalStats {
        self.stats
    }

    pub fn value(&self, species: usize, k: usize, i: usize) -> f64 {
        self.values[species][k * self.grid.nx() + i]
    }

    /// Spatial field of one species at time level `k`.
    pub fn slice(&self, species: usize, k: usize) -> &[f64] {
        let nx = self.grid.nx();
        &self.values[species][k * nx..(k + 1) * nx]
    }

    pub fn final_slice(&self, species: usize) -> &[f64] {
        self.slice(species, self.grid.nt() - 1)
    }

    /// Time series of one species at node `i`.
    pub fn node_series(&self, species: usize, i: usize) -> Vec<f64> {
        (0..self.grid.nt())
            .map(|k| self.value(species, k, i))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Min and max of one species over the whole space-time grid.
    pub fn extrema(&self, species: usize) -> (f64, f64) {
        self.values[species]
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_invariants() {
        assert!(Grid::new(8, 10, 1.0, 1.0).is_err());
        assert!(Grid::new(9, 1, 1.0, 1.0).is_err());
        assert!(Grid::new(9, 10, 0.0, 1.0).is_err());
        let g = Grid::new(11, 21, 2.0, 1.0).unwrap();
        assert_eq!(g.dx(), 0.2);
        assert_eq!(g.dt(), 0.05);
        assert_eq!(g.x(10), 2.0);
        assert_eq!(g.t(20), 1.0);
        let r = g.refined();
        assert_eq!((r.nx(), r.nt()), (21, 41));
        assert_eq!(r.x(2 * 3), g.x(3));
    }

    #[test]
    fn reaction_jacobian_matches_finite_differences() {
        let spec = SystemSpec {
            diffusion: 1.0,
            potential: Expr::constant(0.0),
            initial: [Expr::constant(0.0), Expr::constant(0.0)],
            sources: [
                Expr::parse("x*t*u^2 + v").unwrap(),
                Expr::parse("sin(u*v) + t").unwrap(),
            ],
            coupling: Expr::parse("u^2*v").unwrap(),
            reaction: Reaction::PhiPair {
                f: [
                    Nonlinearity::known("u*(1-u)").unwrap(),
                    Nonlinearity::known("v*(2-v)").unwrap(),
                ],
                phi: [
                    Nonlinearity::known("atan(w)").unwrap(),
                    Nonlinearity::known("exp(-w)").unwrap(),
                ],
                beta: [0.7, -1.3],
            },
            boundary: [
                SpeciesBc::dirichlet_neumann(),
                SpeciesBc::dirichlet_neumann(),
            ],
        };
        let mut st = EvalStats::default();
        let (x, t, u, v) = (0.3, 0.5, 0.8, 1.7);
        let (_, jac) = spec.reaction_with_jacobian(x, t, u, v, &mut st);
        let h = 1e-6;
        let mut s = EvalStats::default();
        let rp = spec.reaction_with_jacobian(x, t, u + h, v, &mut s).0;
        let rm = spec.reaction_with_jacobian(x, t, u - h, v, &mut s).0;
        let sp = spec.reaction_with_jacobian(x, t, u, v + h, &mut s).0;
        let sm = spec.reaction_with_jacobian(x, t, u, v - h, &mut s).0;
        for i in 0..2 {
            let du = (rp[i] - rm[i]) / (2.0 * h);
            let dv = (sp[i] - sm[i]) / (2.0 * h);
            assert!(
                (jac[i][0] - du).abs() < 1e-6,
                "d{i}/du {} vs {du}",
                jac[i][0]
            );
            assert!(
                (jac[i][1] - dv).abs() < 1e-6,
                "d{i}/dv {} vs {dv}",
                jac[i][1]
            );
        }
    }

    #[test]
    fn swapped_relabels_expressions() {
        let spec = SystemSpec {
            diffusion: 1.0,
            potential: Expr::constant(0.0),
            initial: [Expr::parse("x").unwrap(), Expr::parse("1-x").unwrap()],
            sources: [Expr::parse("u + 2*v").unwrap(), Expr::parse("t").unwrap()],
            coupling: Expr::parse("u^2*v").unwrap(),
            reaction: Reaction::FPair {
                f: [
                    Nonlinearity::known("u").unwrap(),
                    Nonlinearity::known("-v").unwrap(),
                ],
                beta: 0.5,
            },
            boundary: [SpeciesBc::dirichlet_neumann(), SpeciesBc::neumann_neumann()],
        };
        let sw = spec.swapped();
        assert_eq!(sw.sources[1].source(), "v + 2*u");
        assert_eq!(sw.coupling.source(), "v^2*u");
        assert_eq!(sw.initial[0].source(), "1-x");
        assert_eq!(sw.boundary[0], SpeciesBc::neumann_neumann());
        assert_eq!(sw.swapped(), spec);
    }
}
