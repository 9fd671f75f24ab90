//! Closed-form eigenpairs of `-(a d^2/dx^2) + q` on `(0, L)` with constant
//! coefficients, `L^2`-normalized.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};

use super::{BoundaryCondition, Grid, SpeciesBc};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenPattern {
    DirichletNeumann,
    NeumannDirichlet,
    NeumannNeumann,
    DirichletDirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenBasis {
    pattern: EigenPattern,
    length: f64,
    diffusion: f64,
    potential: f64,
}

impl EigenBasis {
    pub fn new(bc: &SpeciesBc, length: f64, diffusion: f64, potential: &Expr) -> Result<Self> {
        if !potential.is_constant() {
            return Err(Error::UnsupportedBc(format!(
                "closed-form eigenpairs need a constant potential, got `{potential}`"
            )));
        }
        use BoundaryCondition::*;
        let pattern = match (&bc.left, &bc.right) {
            (Dirichlet(_), Neumann(_)) => EigenPattern::DirichletNeumann,
            (Neumann(_), Dirichlet(_)) => EigenPattern::NeumannDirichlet,
            (Neumann(_), Neumann(_)) => EigenPattern::NeumannNeumann,
            (Dirichlet(_), Dirichlet(_)) => EigenPattern::DirichletDirichlet,
            _ => {
                return Err(Error::UnsupportedBc(
                    "closed-form eigenpairs are available for Dirichlet/Neumann ends only".into(),
                ))
            }
        };
        Ok(EigenBasis {
            pattern,
            length,
            diffusion,
            potential: potential.eval(&Env::default()),
        })
    }

    pub fn pattern(&self) -> EigenPattern {
        self.pattern
    }

    fn wavenumber(&self, n: usize) -> f64 {
        let l = self.length;
        match self.pattern {
            EigenPattern::DirichletNeumann | EigenPattern::NeumannDirichlet => {
                (n as f64 - 0.5) * PI / l
            }
            EigenPattern::NeumannNeumann => (n as f64 - 1.0) * PI / l,
            EigenPattern::DirichletDirichlet => n as f64 * PI / l,
        }
    }

    /// `lambda_n`, `n >= 1`, in increasing order.
    pub fn eigenvalue(&self, n: usize) -> f64 {
        assert!(n >= 1, "eigenpairs are indexed from 1");
        let k = self.wavenumber(n);
        self.diffusion * k * k + self.potential
    }

    /// `(phi_n(x), phi_n'(x), phi_n''(x))`.
    pub fn eval(&self, n: usize, x: f64) -> (f64, f64, f64) {
        assert!(n >= 1, "eigenpairs are indexed from 1");
        let k = self.wavenumber(n);
        let c = (2.0 / self.length).sqrt();
        match self.pattern {
            EigenPattern::DirichletNeumann | EigenPattern::DirichletDirichlet => {
                let (s, co) = (k * x).sin_cos();
                (c * s, c * k * co, -c * k * k * s)
            }
            EigenPattern::NeumannDirichlet => {
                let (s, co) = (k * x).sin_cos();
                (c * co, -c * k * s, -c * k * k * co)
            }
            EigenPattern::NeumannNeumann => {
                if n == 1 {
                    (1.0 / self.length.sqrt(), 0.0, 0.0)
                } else {
                    let (s, co) = (k * x).sin_cos();
                    (c * co, -c * k * s, -c * k * k * co)
                }
            }
        }
    }
}

/// `(lambda_n, phi_n)` sampled on the grid nodes.
pub fn eigenpair(
    n: usize,
    grid: &Grid,
    bc: &SpeciesBc,
    diffusion: f64,
    potential: &Expr,
) -> Result<(f64, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidInput("eigenpairs are indexed from 1".into()));
    }
    let basis = EigenBasis::new(bc, grid.length(), diffusion, potential)?;
    let phi = grid.xs().iter().map(|&x| basis.eval(n, x).0).collect();
    Ok((basis.eigenvalue(n), phi))
}
