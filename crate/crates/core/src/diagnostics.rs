//! Checks of the structural hypotheses behind the reconstruction on concrete
//! instances: exponential decay of `D_t u`, dissipativity of the reaction
//! Jacobian, the competing species interaction bound and the range
//! condition.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::forward::{time_derivative_field, EvalStats, Nonlinearity, SystemSpec, Trajectory};
use crate::function_repr::RangeInterval;
use crate::io::csv_table;

/// Least-squares fit `log max_x |D_t u(x, t)| ~ log C2 - c2 t` over
/// `[T/10, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub c_2_big: f64,
    /// Decay rate; negative when the derivative grows.
    pub c_2: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
}

pub fn decay_fit(traj: &Trajectory) -> Result<DecayFit> {
    let grid = traj.grid();
    let (nx, nt) = (grid.nx(), grid.nt());
    if nt < 20 {
        return Err(Error::GridTooCoarse(format!(
            "decay fit needs nt >= 20, got {nt}"
        )));
    }
    let fields = [
        time_derivative_field(traj, 0)?,
        time_derivative_field(traj, 1)?,
    ];
    let start = grid.horizon() / 10.0;
    let mut ts = Vec::new();
    let mut logs = Vec::new();
    for k in 0..nt {
        let t = grid.t(k);
        if t < start - 1e-12 * grid.horizon() {
            continue;
        }
        let m = fields
            .iter()
            .flat_map(|f| f[k * nx..(k + 1) * nx].iter())
            .fold(0.0f64, |m, d| m.max(d.abs()));
        if m > 0.0 && m.is_finite() {
            ts.push(t);
            logs.push(m.ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::InvalidInput(
            "time derivative vanishes on [T/10, T]".into(),
        ));
    }
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let lm = logs.iter().sum::<f64>() / n;
    let stt: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    let stl: f64 = ts.iter().zip(&logs).map(|(t, l)| (t - tm) * (l - lm)).sum();
    let slope = stl / stt;
    let intercept = lm - slope * tm;
    let ss: f64 = ts
        .iter()
        .zip(&logs)
        .map(|(t, l)| (l - intercept - slope * t).powi(2))
        .sum();
    Ok(DecayFit {
        c_2_big: intercept.exp(),
        c_2: -slope,
        residual: (ss / n).sqrt(),
    })
}

/// Outcome of the 2x2 test `A >= 0, D >= 0, 4AD >= (B + C)^2` for
/// `[[A, B], [C, D]] = -M - c_Q I` on a sample grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipativityReport {
    /// Smallest of `A`, `D` and `4AD - (B + C)^2` over the grid.
    pub worst_margin: f64,
    /// `(u, v)` where the worst margin occurs.
    pub worst_at: [f64; 2],
    /// Which test attains the worst margin: `"A"`, `"D"` or `"4AD-(B+C)^2"`.
    pub worst_test: &'static str,
    pub violations: usize,
    pub samples: usize,
    /// Rows `u, v, A, D, det` for every sample.
    pub grid: Vec<[f64; 5]>,
}

impl DissipativityReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }

    pub fn to_csv(&self) -> String {
        csv_table(
            &["u", "v", "a", "d", "det"],
            self.grid.iter().map(|r| r.to_vec()),
        )
    }

    pub fn summary(&self) -> String {
        format!(
            "dissipativity: {} ({} of {} samples violate)\nworst margin {:.6e} ({}) at u = {:.6e}, v = {:.6e}\n",
            if self.holds() { "holds" } else { "violated" },
            self.violations,
            self.samples,
            self.worst_margin,
            self.worst_test,
            self.worst_at[0],
            self.worst_at[1],
        )
    }
}

/// Samples `(u, v)` on an `nsamples x nsamples` grid over `ranges` and tests
/// nonnegativity of `-M - c_Q I`, `M` being the Jacobian of the reaction
/// with respect to `(u, v)`. Sources are evaluated at `x = t = 0`.
pub fn dissipativity_check(
    spec: &SystemSpec,
    ranges: &[RangeInterval; 2],
    c_q: f64,
    nsamples: usize,
) -> Result<DissipativityReport> {
    if nsamples < 2 {
        return Err(Error::InvalidInput("nsamples must be at least 2".into()));
    }
    let us = ranges[0].linspace(nsamples);
    let vs = ranges[1].linspace(nsamples);
    let mut stats = EvalStats::default();
    let mut report = DissipativityReport {
        worst_margin: f64::INFINITY,
        worst_at: [f64::NAN; 2],
        worst_test: "A",
        violations: 0,
        samples: nsamples * nsamples,
        grid: Vec::with_capacity(nsamples * nsamples),
    };
    for &u in &us {
        for &v in &vs {
            let (_, m) = spec.reaction_with_jacobian(0.0, 0.0, u, v, &mut stats);
            let a = -m[0][0] - c_q;
            let b = -m[0][1];
            let c = -m[1][0];
            let d = -m[1][1] - c_q;
            let det = 4.0 * a * d - (b + c) * (b + c);
            report.grid.push([u, v, a, d, det]);
            if a < 0.0 || d < 0.0 || det < 0.0 {
                report.violations += 1;
            }
            for (margin, test) in [(a, "A"), (d, "D"), (det, "4AD-(B+C)^2")] {
                if margin < report.worst_margin {
                    report.worst_margin = margin;
                    report.worst_at = [u, v];
                    report.worst_test = test;
                }
            }
        }
    }
    Ok(report)
}

/// The two interaction bounds of the competing species model
/// `u_t - u_xx = f_1(u) - beta u v`, `v_t - v_xx = f_2(v) - beta u v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaBound {
    /// `min_{0 < u <= u_max} (2/u)(-f_1'(u) + sqrt(f_1'(u)^2 + f_2'(0) f_1'(u)))`,
    /// the largest `beta` keeping `-M` nonnegative on the edge `v = 0`.
    pub from_u: f64,
    /// The same with the roles of the species exchanged.
    pub from_v: f64,
}

impl BetaBound {
    pub fn bound(&self) -> f64 {
        self.from_u.min(self.from_v)
    }
}

/// Evaluates both bounds on `ngrid` points of `(0, u_max]` and `(0, v_max]`,
/// the upper ends of `ranges`.
pub fn competing_beta_bound(
    f: [&Nonlinearity; 2],
    ranges: &[RangeInterval; 2],
    ngrid: usize,
) -> Result<BetaBound> {
    if ngrid == 0 {
        return Err(Error::InvalidInput("ngrid must be positive".into()));
    }
    let mut mins = [0.0; 2];
    for s in 0..2 {
        let (own, other) = (f[s], f[1 - s]);
        let top = ranges[s].hi();
        if !(top > 0.0) {
            return Err(Error::InvalidInput(format!(
                "range of species {} must reach above zero",
                s + 1
            )));
        }
        let other0 = other.slope(0.0);
        if other0 > 0.0 {
            return Err(Error::NotDissipative {
                at: 0.0,
                slope: other0,
            });
        }
        let mut best = f64::INFINITY;
        for k in 1..=ngrid {
            let z = top * k as f64 / ngrid as f64;
            let d = own.slope(z);
            if d > 0.0 {
                return Err(Error::NotDissipative { at: z, slope: d });
            }
            let value = 2.0 / z * (-d + (d * d + other0 * d).sqrt());
            best = best.min(value);
        }
        mins[s] = best;
    }
    Ok(BetaBound {
        from_u: mins[0],
        from_v: mins[1],
    })
}

/// Space-time nodes of one species lying outside its range interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeViolation {
    pub fraction_outside: f64,
    /// Largest distance from a node value to the interval.
    pub max_excursion: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangeReport {
    pub species: [RangeViolation; 2],
}

impl RangeReport {
    pub fn holds(&self) -> bool {
        self.species.iter().all(|s| s.max_excursion == 0.0)
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "range condition: {}\n",
            if self.holds() { "holds" } else { "violated" }
        );
        for (s, v) in self.species.iter().enumerate() {
            out.push_str(&format!(
                "species {}: {:.4}% of nodes outside, max excursion {:.6e}\n",
                s + 1,
                100.0 * v.fraction_outside,
                v.max_excursion
            ));
        }
        out
    }
}

pub fn range_condition_check(traj: &Trajectory, ranges: &[RangeInterval; 2]) -> RangeReport {
    let grid = traj.grid();
    let total = (grid.nx() * grid.nt()) as f64;
    let species = [0, 1].map(|s| {
        let j = ranges[s];
        let mut outside = 0usize;
        let mut excursion = 0.0f64;
        for k in 0..grid.nt() {
            for &z in traj.slice(s, k) {
                let e = (j.lo() - z).max(z - j.hi()).max(0.0);
                if e > 0.0 {
                    outside += 1;
                    excursion = excursion.max(e);
                }
            }
        }
        RangeViolation {
            fraction_outside: outside as f64 / total,
            max_excursion: excursion,
        }
    });
    RangeReport { species }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::forward::{solve_forward, Grid, Reaction};
    use crate::presets::{competing_species, example1_eigen, example1_lambda1};

    fn known(s: &str) -> Nonlinearity {
        Nonlinearity::known(s).unwrap()
    }

    fn interval(lo: f64, hi: f64) -> RangeInterval {
        RangeInterval::new(lo, hi).unwrap()
    }

    fn pair(f1: &str, f2: &str, beta: f64, coupling: &str) -> SystemSpec {
        let mut spec = example1_eigen(0.0);
        spec.reaction = Reaction::FPair {
            f: [known(f1), known(f2)],
            beta,
        };
        spec.coupling = Expr::parse(coupling).unwrap();
        spec
    }

    #[test]
    fn decay_rate_of_eigen_solution() {
        let grid = Grid::new(200, 300, 1.0, 1.0).unwrap();
        for c in [0.5, -1.0] {
            let traj = solve_forward(&example1_eigen(c), &grid).unwrap();
            let fit = decay_fit(&traj).unwrap();
            let rate = example1_lambda1() - c;
            assert!((fit.c_2 - rate).abs() < 0.05 * rate, "{fit:?} vs {rate}");
        }
    }

    #[test]
    fn decay_fit_recovers_closed_form_exponentials() {
        let grid = Grid::new(21, 300, 1.0, 2.0).unwrap();
        for rate in [0.3, 2.0, 7.0] {
            let traj = Trajectory::from_fn(grid, |s, x, t| {
                (1.0 + s as f64) * (-rate * t).exp() * (x + 0.5)
            });
            let fit = decay_fit(&traj).unwrap();
            assert!((fit.c_2 - rate).abs() < 0.05 * rate, "{fit:?}");
            assert!((fit.c_2_big - 2.0 * 1.5 * rate).abs() < 1e-2 * rate);
        }
    }

    #[test]
    fn growth_gives_negative_rate() {
        let grid = Grid::new(100, 100, 1.0, 1.0).unwrap();
        let traj = solve_forward(&example1_eigen(example1_lambda1() + 2.0), &grid).unwrap();
        assert!(decay_fit(&traj).unwrap().c_2 < 0.0);
        let short = Grid::new(10, 19, 1.0, 1.0).unwrap();
        let traj = Trajectory::from_fn(short, |_, _, t| (-t).exp());
        assert!(matches!(decay_fit(&traj), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn identity_dissipativity_margin() {
        let spec = pair("-u", "-v", 0.0, "u*v");
        let j = [interval(0.0, 1.0), interval(-1.0, 2.0)];
        let r = dissipativity_check(&spec, &j, 0.0, 11).unwrap();
        assert!(r.holds());
        assert!((r.worst_margin - 1.0).abs() < 1e-12);
        assert_eq!(r.grid.len(), 121);
        let shifted = dissipativity_check(&spec, &j, 0.5, 11).unwrap();
        assert!((shifted.worst_margin - 0.5).abs() < 1e-12);
    }

    #[test]
    fn increasing_reaction_fails_a() {
        let spec = pair("2*u", "-v", 0.0, "u*v");
        let j = [interval(0.0, 1.0), interval(0.0, 1.0)];
        let r = dissipativity_check(&spec, &j, 0.0, 5).unwrap();
        assert!(!r.holds());
        assert_eq!(r.worst_test, "4AD-(B+C)^2");
        assert!(r.grid.iter().all(|row| row[2] < 0.0));
    }

    #[test]
    fn competing_species_violation_at_v_zero() {
        let f = [known("-u"), known("-v")];
        let j = [interval(0.0, 1.0), interval(0.0, 1.0)];
        let bound = competing_beta_bound([&f[0], &f[1]], &j, 1000)
            .unwrap()
            .bound();
        assert!((bound - 2.0 * (1.0 + 2f64.sqrt())).abs() < 1e-9, "{bound}");
        // the model subtracts beta u v, so its Jacobian carries -beta
        let ok = pair("-u", "-v", -0.9 * bound, "u*v");
        assert!(dissipativity_check(&ok, &j, 0.0, 41).unwrap().holds());
        let bad = pair("-u", "-v", -1.5 * bound, "u*v");
        let r = dissipativity_check(&bad, &j, 0.0, 41).unwrap();
        assert!(!r.holds());
        assert!(
            r.worst_at[0] == 0.0 || r.worst_at[1] == 0.0,
            "{:?}",
            r.worst_at
        );
        assert!(r.summary().contains("violated"));
        assert!(r.to_csv().starts_with("u,v,a,d,det\n"));
    }

    #[test]
    fn beta_bound_closed_forms() {
        let j = [interval(0.0, 2.0), interval(0.0, 1.0)];
        let zero = known("0*u");
        let b = competing_beta_bound([&zero, &zero], &j, 100).unwrap();
        assert_eq!(b.bound(), 0.0);
        let lin = known("-u");
        let b = competing_beta_bound([&lin, &zero], &j, 100).unwrap();
        assert!((b.from_u - 4.0 / 2.0).abs() < 1e-12);
        let grow = known("u^2");
        assert!(matches!(
            competing_beta_bound([&grow, &lin], &j, 100),
            Err(Error::NotDissipative { .. })
        ));
    }

    #[test]
    fn beta_bound_matches_grid_search() {
        let f1 = known("-u - u^3");
        let f2 = known("-2*v");
        let j = [interval(0.0, 1.5), interval(0.0, 0.8)];
        let b = competing_beta_bound([&f1, &f2], &j, 10_000).unwrap();
        let search = |d: &dyn Fn(f64) -> f64, d0: f64, top: f64| {
            (1..=10_000)
                .map(|k| {
                    let z = top * k as f64 / 10_000.0;
                    2.0 / z * (-d(z) + (d(z) * d(z) + d0 * d(z)).sqrt())
                })
                .fold(f64::INFINITY, f64::min)
        };
        let eu = search(&|u| -1.0 - 3.0 * u * u, -2.0, 1.5);
        let ev = search(&|_| -2.0, -1.0, 0.8);
        assert!((b.from_u - eu).abs() < 1e-9 * eu);
        assert!((b.from_v - ev).abs() < 1e-9 * ev);
    }

    #[test]
    fn eigen_final_time_range_is_violated() {
        let grid = Grid::new(200, 300, 1.0, 1.0).unwrap();
        let traj = solve_forward(&example1_eigen(0.5), &grid).unwrap();
        let j = [0, 1].map(|s| {
            let fin = traj.final_slice(s);
            let lo = fin.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = fin.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            interval(lo, hi)
        });
        let r = range_condition_check(&traj, &j);
        assert!(!r.holds());
        assert!(r.species[0].max_excursion > 1.0, "{r:?}");
        assert!(r.summary().contains("violated"));
    }

    #[test]
    fn constant_trajectory_satisfies_range() {
        let grid = Grid::new(11, 11, 1.0, 1.0).unwrap();
        let traj = Trajectory::from_fn(grid, |s, _, _| 0.3 + s as f64);
        let j = [
            interval(0.3 - 1e-9, 0.3 + 1e-9),
            interval(1.3 - 1e-9, 1.3 + 1e-9),
        ];
        let r = range_condition_check(&traj, &j);
        assert!(r.holds());
        assert_eq!(r.species[1].fraction_outside, 0.0);
        let narrow = [interval(0.0, 0.1), j[1]];
        let r = range_condition_check(&traj, &narrow);
        assert_eq!(r.species[0].fraction_outside, 1.0);
        assert!((r.species[0].max_excursion - 0.2).abs() < 1e-12);
    }

    #[test]
    fn driven_system_reaction_jacobian_is_sampled() {
        let spec = competing_species(-1.0);
        let j = [interval(0.0, 1.0), interval(0.0, 2.0)];
        let coarse = dissipativity_check(&spec, &j, 0.0, 21).unwrap();
        let fine = dissipativity_check(&spec, &j, 0.0, 81).unwrap();
        assert!((coarse.worst_margin - fine.worst_margin).abs() < 1e-3);
    }
}
