//! Ready-made systems: the eigenfunction example, the driven competing
//! species model with unknown reaction pair, and the interaction models.

use std::f64::consts::PI;

use crate::expr::Expr;
use crate::forward::{Nonlinearity, Reaction, SpeciesBc, SystemSpec};

fn expr(source: &str) -> Expr {
    Expr::parse(source).expect("preset expression parses")
}

fn known(source: &str) -> Nonlinearity {
    Nonlinearity::known(source).expect("preset nonlinearity parses")
}

/// Decoupled linear system `u_t = u_xx + c u` on `(0, 1)` with Dirichlet
/// left and Neumann right, started from the first two eigenfunctions.
pub fn example1_eigen(c: f64) -> SystemSpec {
    SystemSpec {
        diffusion: 1.0,
        potential: Expr::constant(0.0),
        initial: [expr("sqrt(2)*sin(pi*x/2)"), expr("sqrt(2)*sin(3*pi*x/2)")],
        sources: [Expr::constant(0.0), Expr::constant(0.0)],
        coupling: expr("u*v"),
        reaction: Reaction::FPair {
            f: [known(&format!("{c}*u")), known(&format!("{c}*v"))],
            beta: 0.0,
        },
        boundary: [
            SpeciesBc::dirichlet_neumann(),
            SpeciesBc::dirichlet_neumann(),
        ],
    }
}

/// `e^{-(lambda_n - c) t} phi_n(x)` for species `s` of [`example1_eigen`]
/// (`n = s + 1`).
pub fn example1_exact(c: f64, species: usize, x: f64, t: f64) -> f64 {
    let k = (species as f64 + 0.5) * PI;
    let lambda = k * k;
    (-(lambda - c) * t).exp() * 2f64.sqrt() * (k * x).sin()
}

/// First eigenvalue of [`example1_eigen`].
pub fn example1_lambda1() -> f64 {
    (PI / 2.0).powi(2)
}

/// Reaction pair recovered in the competing species experiments.
pub fn sample_f() -> [Nonlinearity; 2] {
    [
        known("2*u*(1-u)*(u-0.9)"),
        known("max(2*exp(-5*(v-1)^2) - 0.1*v^2, -2)"),
    ]
}

/// Interaction pair recovered in the interaction experiments.
pub fn sample_phi() -> [Nonlinearity; 2] {
    [
        known("atan(w) + 2*w*exp(-(w-1)^2)"),
        known("0.1*(27 - (3 - min(w, 3))^2*(3 + 2*min(w, 3)))"),
    ]
}

fn driven(reaction: Reaction, coupling: &str) -> SystemSpec {
    SystemSpec {
        diffusion: 1.0,
        potential: Expr::constant(0.0),
        initial: [expr("x*(1-x)^2"), expr("sin(pi*x/2)")],
        sources: [expr("10*sin(pi*x/2)*t"), expr("12*(2*x-x^2)*t")],
        coupling: expr(coupling),
        reaction,
        boundary: [
            SpeciesBc::dirichlet_neumann(),
            SpeciesBc::dirichlet_neumann(),
        ],
    }
}

/// Competing species with `R_i = f_i(u_i) + beta u v + r_i` and the sample
/// reaction pair.
pub fn competing_species(beta: f64) -> SystemSpec {
    driven(
        Reaction::FPair {
            f: sample_f(),
            beta,
        },
        "u*v",
    )
}

/// `R_i = f_i(u_i) + beta_i phi_i(w) + r_i` with known `f_1 = u(1-u)`,
/// `f_2 = v(2-v)` and the sample interaction pair.
pub fn phi_interaction(beta: [f64; 2], coupling: &str) -> SystemSpec {
    driven(
        Reaction::PhiPair {
            f: [known("u*(1-u)"), known("v*(2-v)")],
            phi: sample_phi(),
            beta,
        },
        coupling,
    )
}

/// Interaction model with `w = u^2 v` and `beta_u = 1`, `beta_v = -1`.
pub fn brusselator() -> SystemSpec {
    phi_interaction([1.0, -1.0], "u^2*v")
}

/// The pair stored in the unknown slot of `spec`.
pub fn unknown_pair(spec: &SystemSpec) -> [Nonlinearity; 2] {
    match &spec.reaction {
        Reaction::FPair { f, .. } => f.clone(),
        Reaction::PhiPair { phi, .. } => phi.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_targets_match_closed_forms() {
        let [f1, f2] = sample_f();
        for z in [-0.5f64, 0.0, 0.3, 1.0, 1.7, 4.0] {
            assert!((f1.eval(z) - 2.0 * z * (1.0 - z) * (z - 0.9)).abs() < 1e-14);
            let e2 = (2.0 * (-5.0 * (z - 1.0) * (z - 1.0)).exp() - 0.1 * z * z).max(-2.0);
            assert!((f2.eval(z) - e2).abs() < 1e-14);
        }
        assert_eq!(f2.eval(10.0), -2.0);
        let [p1, p2] = sample_phi();
        for w in [-1.0f64, 0.0, 0.5, 2.9, 3.0, 5.0] {
            let e1 = w.atan() + 2.0 * w * (-(w - 1.0) * (w - 1.0)).exp();
            let e2 = if w < 3.0 {
                0.1 * (27.0 - (3.0 - w) * (3.0 - w) * (3.0 + 2.0 * w))
            } else {
                2.7
            };
            assert!((p1.eval(w) - e1).abs() < 1e-14);
            assert!((p2.eval(w) - e2).abs() < 1e-12);
        }
    }

    #[test]
    fn presets_validate() {
        for spec in [
            example1_eigen(0.5),
            competing_species(-1.0),
            phi_interaction([0.1, 0.1], "u*v"),
            brusselator(),
        ] {
            spec.validate().unwrap();
        }
        assert_eq!(unknown_pair(&brusselator()), sample_phi());
    }

    #[test]
    fn eigen_exact_starts_at_initial_data() {
        let spec = example1_eigen(0.0);
        for x in [0.0, 0.2, 0.9, 1.0] {
            for s in 0..2 {
                let u0 = spec.initial[s].eval(&crate::expr::Env::xt(x, 0.0));
                assert!((example1_exact(0.0, s, x, 0.0) - u0).abs() < 1e-14);
            }
        }
    }
}
