//! Fixed-point reconstruction of the unknown reaction pair `f_1, f_2` or the
//! unknown interaction pair `phi_1, phi_2` from smoothed final-time or
//! time-trace data.
//!
//! Each step solves the forward problem with the current iterates, forms the
//! residual identity of the PDE on the observation manifold and projects it
//! onto a [`RangedFn`] over the data range.

use serde::{Deserialize, Serialize};

use crate::data::{estimate_range, Measurement, MeasurementKind, SmoothedData};
use crate::error::{Error, Result};
use crate::forward::{
    interpolate_uniform, laplacian_at_boundary, solve_forward_with, time_derivative_at_end,
    BoundaryCondition, EvalStats, ForwardOptions, Grid, Nonlinearity, Reaction, Side, SystemSpec,
    Trajectory,
};
use crate::function_repr::{BasisConfig, RangeInterval, RangedFn, StoredProfile};

/// Default iteration cap.
pub const MAX_ITERS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Converged,
    Stagnated,
    Diverged,
    BlowUp,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Converged => "converged",
            Verdict::Stagnated => "stagnated",
            Verdict::Diverged => "diverged",
            Verdict::BlowUp => "blow-up",
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, Verdict::Diverged | Verdict::BlowUp)
    }
}

/// Which pair is reconstructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Reaction,
    Interaction,
}

/// A reconstruction problem: the system with its unknown slot, the smoothed
/// data and the iteration controls.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    /// The values in the unknown slot are ignored; iterates replace them.
    pub spec: SystemSpec,
    pub grid: Grid,
    pub data: SmoothedData,
    pub measurement: Option<Measurement>,
    /// Reference functions for error histories.
    pub truth: Option<[Nonlinearity; 2]>,
    pub basis: BasisConfig,
    pub forward: ForwardOptions,
    pub max_iters: usize,
    /// Relative change of the error below which the iteration stops.
    pub stagnation_tol: f64,
}

impl InverseProblem {
    pub fn new(spec: SystemSpec, grid: Grid, data: SmoothedData) -> Result<InverseProblem> {
        spec.validate()?;
        if let Reaction::PhiPair { beta, .. } = &spec.reaction {
            if let Some(species) = beta.iter().position(|&b| b == 0.0) {
                return Err(Error::ZeroMultiplier { species });
            }
        }
        let span = match data.kind {
            MeasurementKind::FinalTime => grid.length(),
            MeasurementKind::TimeTrace { .. } => grid.horizon(),
        };
        let (first, last) = match (data.abscissae.first(), data.abscissae.last()) {
            (Some(&a), Some(&b)) if data.abscissae.len() >= 5 => (a, b),
            _ => {
                return Err(Error::InvalidInput(
                    "smoothed data needs at least 5 points".into(),
                ))
            }
        };
        if first.abs() > 1e-12 * span || (last - span).abs() > 1e-12 * span {
            return Err(Error::InvalidInput(format!(
                "smoothed data spans [{first}, {last}] but the grid spans [0, {span}]"
            )));
        }
        if data.kind == MeasurementKind::FinalTime && data.second.is_none() {
            return Err(Error::InvalidInput(
                "final-time data needs second spatial derivatives".into(),
            ));
        }
        Ok(InverseProblem {
            spec,
            grid,
            data,
            measurement: None,
            truth: None,
            basis: BasisConfig::default(),
            forward: ForwardOptions::default(),
            max_iters: MAX_ITERS,
            stagnation_tol: 1e-2,
        })
    }

    pub fn with_truth(mut self, truth: [Nonlinearity; 2]) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn target(&self) -> Target {
        match self.spec.reaction {
            Reaction::FPair { .. } => Target::Reaction,
            Reaction::PhiPair { .. } => Target::Interaction,
        }
    }

    /// Arguments of the unknowns at the dense data points: `d_i` for the
    /// reaction pair, `w(d_u, d_v)` for the interaction pair.
    pub fn abscissae(&self) -> [Vec<f64>; 2] {
        match self.target() {
            Target::Reaction => self.data.values.clone(),
            Target::Interaction => {
                let w: Vec<f64> = (0..self.data.abscissae.len())
                    .map(|k| {
                        self.spec
                            .coupling_grad(self.data.values[0][k], self.data.values[1][k])
                            .0
                    })
                    .collect();
                [w.clone(), w]
            }
        }
    }

    /// Range of each unknown's argument over the data.
    pub fn ranges(&self) -> Result<[RangeInterval; 2]> {
        match self.target() {
            Target::Reaction => estimate_range(&self.data),
            Target::Interaction => {
                let w = &self.abscissae()[0];
                let (lo, hi) = w
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                if !(hi - lo >= 1e-12) {
                    return Err(Error::DegenerateRange { species: 0, lo, hi });
                }
                let j = RangeInterval::new(lo, hi)?;
                Ok([j, j])
            }
        }
    }

    /// Zero functions on the data ranges.
    pub fn initial_guess(&self) -> Result<[RangedFn; 2]> {
        let [a, b] = self.ranges()?;
        Ok([
            RangedFn::zero(a, &self.basis)?,
            RangedFn::zero(b, &self.basis)?,
        ])
    }

    /// Forward solve with the given iterates in the unknown slot.
    pub fn simulate(&self, current: &[RangedFn; 2]) -> Result<Trajectory> {
        let spec = self
            .spec
            .with_unknowns(current.clone().map(Nonlinearity::Ranged));
        solve_forward_with(&spec, &self.grid, &self.forward).map_err(|e| {
            if e.is_forward_failure() {
                Error::ForwardFailure(Box::new(e))
            } else {
                e
            }
        })
    }

    /// One application of the fixed-point operator appropriate for the
    /// data kind and unknown pair.
    pub fn step(&self, current: &[RangedFn; 2]) -> Result<Step> {
        match (self.target(), self.data.kind) {
            (Target::Reaction, MeasurementKind::FinalTime) => step_f_finaltime(current, self),
            (Target::Reaction, MeasurementKind::TimeTrace { .. }) => {
                step_f_timetrace(current, self)
            }
            (Target::Interaction, _) => step_phi(current, self),
        }
    }

    /// PDE residual `D_t u - L u - r` at the data points, with the
    /// unknown-pair term still in it, plus the rows that enter the fit.
    fn residual_identity(&self, traj: &Trajectory) -> Result<([Vec<f64>; 2], Vec<usize>)> {
        let d = &self.data;
        let n = d.abscissae.len();
        let grid = traj.grid();
        match d.kind {
            MeasurementKind::FinalTime => {
                let dt_u = time_derivative_at_end(traj)?;
                let op = d
                    .operator(self.spec.diffusion, &self.spec.potential)
                    .expect("checked at construction");
                let t = grid.horizon();
                let lhs = [0, 1].map(|s| {
                    (0..n)
                        .map(|k| {
                            let x = d.abscissae[k];
                            let ut = interpolate_uniform(&dt_u[s], grid.dx(), x);
                            let r = self.spec.source(s, x, t, d.values[0][k], d.values[1][k]);
                            ut - op[s][k] - r
                        })
                        .collect()
                });
                let rows = (0..n)
                    .filter(|&k| {
                        let skip = |side: Side| {
                            self.spec
                                .boundary
                                .iter()
                                .any(|bc| matches!(bc.at(side), BoundaryCondition::Dirichlet(_)))
                        };
                        !((k == 0 && skip(Side::Left)) || (k + 1 == n && skip(Side::Right)))
                    })
                    .collect();
                Ok((lhs, rows))
            }
            MeasurementKind::TimeTrace { side } => {
                let lap =
                    laplacian_at_boundary(traj, side, self.spec.diffusion, &self.spec.potential)?;
                let x0 = match side {
                    Side::Left => 0.0,
                    Side::Right => grid.length(),
                };
                let lhs = [0, 1].map(|s| {
                    (0..n)
                        .map(|k| {
                            let t = d.abscissae[k];
                            let lu = interpolate_uniform(&lap[s], grid.dt(), t);
                            let r = self.spec.source(s, x0, t, d.values[0][k], d.values[1][k]);
                            d.first[s][k] - lu - r
                        })
                        .collect()
                });
                Ok((lhs, (0..n).collect()))
            }
        }
    }

    fn fit(
        &self,
        abscissae: &[Vec<f64>; 2],
        rhs: [Vec<f64>; 2],
        rows: &[usize],
    ) -> Result<[RangedFn; 2]> {
        let ranges = self.ranges()?;
        let mut out = Vec::with_capacity(2);
        for s in 0..2 {
            let xi: Vec<f64> = rows.iter().map(|&k| abscissae[s][k]).collect();
            let y: Vec<f64> = rows.iter().map(|&k| rhs[s][k]).collect();
            out.push(RangedFn::fit_from_pairs(&xi, &y, ranges[s], &self.basis)?);
        }
        let b = out.pop().expect("two species");
        let a = out.pop().expect("two species");
        Ok([a, b])
    }
}

/// New iterates and the evaluation counters of the forward solve that
/// produced them.
#[derive(Debug, Clone)]
pub struct Step {
    pub functions: [RangedFn; 2],
    pub stats: EvalStats,
}

fn f_pair_update(current: &[RangedFn; 2], prob: &InverseProblem) -> Result<Step> {
    let Reaction::FPair { beta, .. } = prob.spec.reaction else {
        return Err(Error::InvalidInput(
            "the reaction pair is not the unknown".into(),
        ));
    };
    let traj = prob.simulate(current)?;
    let (lhs, rows) = prob.residual_identity(&traj)?;
    let d = &prob.data;
    let rhs = lhs.map(|l| {
        l.iter()
            .enumerate()
            .map(|(k, v)| v - beta * prob.spec.coupling_grad(d.values[0][k], d.values[1][k]).0)
            .collect()
    });
    let functions = prob.fit(&prob.abscissae(), rhs, &rows)?;
    Ok(Step {
        functions,
        stats: traj.stats(),
    })
}

/// `f_i(g_i(x)) <- D_t u_i(x, T; f) - (a g_i'' - q g_i) - beta w(g) - r_i(x, T, g)`.
pub fn step_f_finaltime(current: &[RangedFn; 2], prob: &InverseProblem) -> Result<Step> {
    if prob.data.kind != MeasurementKind::FinalTime {
        return Err(Error::InvalidInput(
            "final-time step needs final-time data".into(),
        ));
    }
    f_pair_update(current, prob)
}

/// `f_i(h_i(t)) <- D_t h_i(t) - (L u_i)(x0, t; f) - beta w(h) - r_i(x0, t, h)`.
pub fn step_f_timetrace(current: &[RangedFn; 2], prob: &InverseProblem) -> Result<Step> {
    if !matches!(prob.data.kind, MeasurementKind::TimeTrace { .. }) {
        return Err(Error::InvalidInput(
            "time-trace step needs time-trace data".into(),
        ));
    }
    f_pair_update(current, prob)
}

/// `phi_i(w(d)) <- (D_t u_i - L u_i - f_i(d_i) - r_i) / beta_i` with the data
/// `d` and the solve supplying the terms as in the reaction-pair steps.
pub fn step_phi(current: &[RangedFn; 2], prob: &InverseProblem) -> Result<Step> {
    let Reaction::PhiPair { f, beta, .. } = &prob.spec.reaction else {
        return Err(Error::InvalidInput(
            "the interaction pair is not the unknown".into(),
        ));
    };
    if let Some(species) = beta.iter().position(|&b| b == 0.0) {
        return Err(Error::ZeroMultiplier { species });
    }
    let traj = prob.simulate(current)?;
    let (lhs, rows) = prob.residual_identity(&traj)?;
    let d = &prob.data;
    let rhs = [0, 1].map(|s| {
        lhs[s]
            .iter()
            .zip(&d.values[s])
            .map(|(v, &ds)| (v - f[s].eval(ds)) / beta[s])
            .collect()
    });
    let functions = prob.fit(&prob.abscissae(), rhs, &rows)?;
    Ok(Step {
        functions,
        stats: traj.stats(),
    })
}

/// Discrete L2 distance between `f` and `truth` over the stored abscissae
/// of `j`, relative to the norm of `truth` there (absolute when that norm
/// vanishes).
pub fn error_norm(f: &RangedFn, truth: impl Fn(f64) -> f64, j: &RangeInterval) -> f64 {
    let profile = StoredProfile::sample(j, |a| f.eval(a) - truth(a));
    let diff = l2(&profile.values);
    let norm = l2(&StoredProfile::sample(j, truth).values);
    if norm > 0.0 {
        diff / norm
    } else {
        diff
    }
}

fn l2(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn relative_increment(new: &RangedFn, old: &RangedFn) -> f64 {
    error_norm(new, |a| old.eval(a), new.interval())
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub ranges: [RangeInterval; 2],
    /// Profiles of the initial guess followed by one pair per iteration.
    pub iterates: Vec<[StoredProfile; 2]>,
    /// Relative errors against the truth after each iteration, or relative
    /// increments between consecutive iterates when no truth is given.
    pub error_history: Vec<[f64; 2]>,
    /// Relative error of the initial guess (truth given only).
    pub initial_error: Option<[f64; 2]>,
    pub verdict: Verdict,
    pub contraction_q: Option<f64>,
    /// Last successfully computed iterates.
    pub functions: [RangedFn; 2],
    pub failure: Option<String>,
    pub stats: EvalStats,
}

impl ReconstructionResult {
    pub fn iterations(&self) -> usize {
        self.error_history.len()
    }

    pub fn final_error(&self) -> Option<[f64; 2]> {
        self.error_history.last().copied()
    }

    /// `iter, err_f1, err_f2`; row 0 is the initial guess when known.
    pub fn error_csv(&self) -> String {
        let rows = self
            .initial_error
            .iter()
            .map(|e| (0, *e))
            .chain(
                self.error_history
                    .iter()
                    .enumerate()
                    .map(|(k, e)| (k + 1, *e)),
            )
            .map(|(k, e)| vec![k as f64, e[0], e[1]]);
        crate::io::csv_table(&["iter", "err_f1", "err_f2"], rows)
    }

    /// `iter, species, abscissa, value` for every stored profile.
    pub fn profiles_csv(&self) -> String {
        let mut rows = Vec::new();
        for (k, pair) in self.iterates.iter().enumerate() {
            for (s, p) in pair.iter().enumerate() {
                for (a, v) in p.abscissae.iter().zip(&p.values) {
                    rows.push(vec![k as f64, (s + 1) as f64, *a, *v]);
                }
            }
        }
        crate::io::csv_table(&["iter", "species", "abscissa", "value"], rows)
    }
}

fn metric(e: [f64; 2]) -> f64 {
    if e[0].is_nan() || e[1].is_nan() {
        f64::NAN
    } else {
        e[0].max(e[1])
    }
}

/// Iterates the fixed-point operator from `initial` until `max_iters`,
/// stagnation or divergence.
pub fn run(prob: &InverseProblem, initial: [RangedFn; 2]) -> Result<ReconstructionResult> {
    let ranges = prob.ranges()?;
    let initial = [
        initial[0].refresh_range(ranges[0])?,
        initial[1].refresh_range(ranges[1])?,
    ];
    let truth_error = |f: &[RangedFn; 2]| -> Option<[f64; 2]> {
        prob.truth
            .as_ref()
            .map(|t| [0, 1].map(|s| error_norm(&f[s], |a| t[s].eval(a), &ranges[s])))
    };
    let profiles = |f: &[RangedFn; 2]| [f[0].stored_profile(), f[1].stored_profile()];
    let initial_error = truth_error(&initial);
    let mut iterates = vec![profiles(&initial)];
    let mut history: Vec<[f64; 2]> = Vec::new();
    let mut current = initial;
    let mut stats = EvalStats::default();
    let mut failure = None;
    let mut verdict = None;
    let tol = prob.stagnation_tol;
    let mut increases = 0;
    for k in 0..prob.max_iters {
        let step = match prob.step(&current) {
            Ok(s) => s,
            Err(e) => {
                verdict = Some(match &e {
                    Error::ForwardFailure(inner) if matches!(**inner, Error::BlowUp { .. }) => {
                        Verdict::BlowUp
                    }
                    _ => Verdict::Diverged,
                });
                failure = Some(e.to_string());
                break;
            }
        };
        stats.unknown_evals += step.stats.unknown_evals;
        stats.clamped_evals += step.stats.clamped_evals;
        let err = truth_error(&step.functions)
            .unwrap_or_else(|| [0, 1].map(|s| relative_increment(&step.functions[s], &current[s])));
        history.push(err);
        iterates.push(profiles(&step.functions));
        current = step.functions;
        let m = metric(err);
        if !m.is_finite() {
            verdict = Some(Verdict::Diverged);
            failure = Some(format!("non-finite error at iteration {}", k + 1));
            break;
        }
        let prev = match (k, initial_error) {
            (0, Some(e0)) => Some(metric(e0)),
            (0, None) => None,
            _ => Some(metric(history[k - 1])),
        };
        let Some(prev) = prev else { continue };
        if m > prev * (1.0 + tol) {
            increases += 1;
            if increases >= 2 {
                verdict = Some(Verdict::Diverged);
                break;
            }
        } else {
            increases = 0;
        }
        let stagnated = if initial_error.is_some() {
            (m - prev).abs() < tol * prev
        } else {
            m < tol
        };
        if stagnated {
            break;
        }
    }
    let series: Vec<f64> = initial_error
        .iter()
        .chain(&history)
        .map(|&e| metric(e))
        .collect();
    let (verdict, contraction_q) = match verdict {
        Some(Verdict::Diverged) if failure.is_none() => {
            let n = series.len();
            (
                Verdict::Diverged,
                Some((series[n - 1] / series[n - 3]).sqrt()),
            )
        }
        Some(v) => (v, None),
        None => classify(&series),
    };
    Ok(ReconstructionResult {
        ranges,
        iterates,
        error_history: history,
        initial_error,
        verdict,
        contraction_q,
        functions: current,
        failure,
        stats,
    })
}

/// Verdict and contraction estimate of a non-divergent error sequence
/// `e_0, e_1, ..., e_n`: `q = (e_m / e_0)^(1/m)` over the decaying segment
/// ending at the smallest error.
fn classify(series: &[f64]) -> (Verdict, Option<f64>) {
    let n = series.len();
    if n < 2 || !(series[0] > 0.0) {
        return (Verdict::Stagnated, None);
    }
    let (m, em) = series
        .iter()
        .enumerate()
        .skip(1)
        .fold(
            (0, series[0]),
            |(bi, be), (i, &e)| if e < be { (i, e) } else { (bi, be) },
        );
    if m > 0 {
        let q = (em / series[0]).powf(1.0 / m as f64);
        if q < 1.0 {
            return (Verdict::Converged, Some(q));
        }
    }
    let q = (series[n - 1] / series[0]).powf(1.0 / (n - 1) as f64);
    (Verdict::Stagnated, Some(q))
}
