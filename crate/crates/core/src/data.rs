//! Simulated measurements and their smoothing onto dense working grids.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::forward::{
    differentiate_uniform, interpolate_uniform, BoundaryCondition, EigenBasis, Side, SpeciesBc,
    SystemSpec, Trajectory,
};
use crate::function_repr::{linspace, RangeInterval};
use crate::io::fmt_f64;
use crate::linalg::{penalized_least_squares, BandedSpd};

/// Default dense resolution of smoothed final-time data.
pub const DENSE_SPACE: usize = 200;
/// Default dense resolution of smoothed time-trace data.
pub const DENSE_TIME: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementKind {
    /// `u(x_j, T)`.
    FinalTime,
    /// `u(x0, t_j)` at one end of the interval.
    TimeTrace { side: Side },
}

impl MeasurementKind {
    fn label(&self) -> &'static str {
        match self {
            MeasurementKind::FinalTime => "final-time",
            MeasurementKind::TimeTrace { side: Side::Left } => "time-trace-left",
            MeasurementKind::TimeTrace { side: Side::Right } => "time-trace-right",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        match s {
            "final-time" => Some(MeasurementKind::FinalTime),
            "time-trace-left" => Some(MeasurementKind::TimeTrace { side: Side::Left }),
            "time-trace-right" => Some(MeasurementKind::TimeTrace { side: Side::Right }),
            _ => None,
        }
    }
}

/// Sparse, possibly noisy observations of both species.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub kind: MeasurementKind,
    /// Sample points `x_j` or `t_j`, strictly increasing.
    pub abscissae: Vec<f64>,
    pub values: [Vec<f64>; 2],
    /// Relative noise level.
    pub delta: f64,
    pub seed: u64,
    pub length: f64,
    pub horizon: f64,
}

impl Measurement {
    pub fn len(&self) -> usize {
        self.abscissae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.abscissae.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("kind,{}\n", self.kind.label()));
        out.push_str(&format!("S,{}\n", self.len()));
        out.push_str(&format!("delta,{}\n", fmt_f64(self.delta)));
        out.push_str(&format!("seed,{}\n", self.seed));
        out.push_str(&format!("length,{}\n", fmt_f64(self.length)));
        out.push_str(&format!("horizon,{}\n", fmt_f64(self.horizon)));
        out.push_str("abscissa,u,v\n");
        for j in 0..self.len() {
            out.push_str(&format!(
                "{},{},{}\n",
                fmt_f64(self.abscissae[j]),
                fmt_f64(self.values[0][j]),
                fmt_f64(self.values[1][j])
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Measurement> {
        let bad = |line: usize, msg: &str| Error::InvalidInput(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut header = |key: &str| -> Result<String> {
            let (n, line) = lines
                .next()
                .ok_or_else(|| bad(0, "unexpected end of file"))?;
            match line.split_once(',') {
                Some((k, v)) if k == key => Ok(v.to_string()),
                _ => Err(bad(n, &format!("expected `{key},...`"))),
            }
        };
        let kind_s = header("kind")?;
        let kind = MeasurementKind::from_label(&kind_s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown measurement kind `{kind_s}`")))?;
        let num = |s: String| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("not a number: `{s}`")))
        };
        let count: usize = header("S")?
            .parse()
            .map_err(|_| Error::InvalidInput("S must be an integer".into()))?;
        let delta = num(header("delta")?)?;
        let seed: u64 = header("seed")?
            .parse()
            .map_err(|_| Error::InvalidInput("seed must be an integer".into()))?;
        let length = num(header("length")?)?;
        let horizon = num(header("horizon")?)?;
        let (n, cols) = lines
            .next()
            .ok_or_else(|| bad(0, "missing column header"))?;
        if cols != "abscissa,u,v" {
            return Err(bad(n, "expected column header `abscissa,u,v`"));
        }
        let mut m = Measurement {
            kind,
            abscissae: Vec::with_capacity(count),
            values: [Vec::with_capacity(count), Vec::with_capacity(count)],
            delta,
            seed,
            length,
            horizon,
        };
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 {
                return Err(bad(n, "expected 3 columns"));
            }
            let parsed: Vec<f64> = cells
                .iter()
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| bad(n, &format!("not a number: `{c}`")))
                })
                .collect::<Result<_>>()?;
            m.abscissae.push(parsed[0]);
            m.values[0].push(parsed[1]);
            m.values[1].push(parsed[2]);
        }
        if m.len() != count {
            return Err(Error::InvalidInput(format!(
                "header announces {count} samples, found {}",
                m.len()
            )));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.len() < 4 {
            return Err(Error::InvalidInput(format!(
                "a measurement needs at least 4 samples, got {}",
                self.len()
            )));
        }
        if self.values.iter().any(|v| v.len() != self.len()) {
            return Err(Error::InvalidInput(
                "sample columns differ in length".into(),
            ));
        }
        if self.abscissae.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "sample points must be strictly increasing".into(),
            ));
        }
        if self
            .abscissae
            .iter()
            .chain(self.values.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid noise level {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Samples `traj` at `count` equally spaced points (`x_j = jL/S` or
/// `t_j = jT/S`, `j = 1..S`) and adds uniform noise on
/// `[-delta max|signal|, delta max|signal|]`, species `u` drawn first.
pub fn sample_measurement(
    traj: &Trajectory,
    kind: MeasurementKind,
    count: usize,
    delta: f64,
    seed: u64,
) -> Result<Measurement> {
    let grid = traj.grid();
    let resolution = match kind {
        MeasurementKind::FinalTime => grid.nx() - 1,
        MeasurementKind::TimeTrace { .. } => grid.nt() - 1,
    };
    if count < 4 || count > resolution {
        return Err(Error::InvalidInput(format!(
            "sample count must lie in 4..={resolution} for this grid, got {count}"
        )));
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("invalid noise level {delta}")));
    }
    let span = match kind {
        MeasurementKind::FinalTime => grid.length(),
        MeasurementKind::TimeTrace { .. } => grid.horizon(),
    };
    let abscissae: Vec<f64> = (1..=count)
        .map(|j| {
            if j == count {
                span
            } else {
                j as f64 * span / count as f64
            }
        })
        .collect();
    let mut values = [0, 1].map(|s| {
        let (series, h) = match kind {
            MeasurementKind::FinalTime => (traj.final_slice(s).to_vec(), grid.dx()),
            MeasurementKind::TimeTrace { side } => {
                let node = match side {
                    Side::Left => 0,
                    Side::Right => grid.nx() - 1,
                };
                (traj.node_series(s, node), grid.dt())
            }
        };
        abscissae
            .iter()
            .map(|&a| interpolate_uniform(&series, h, a))
            .collect::<Vec<f64>>()
    });
    if delta > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for vals in values.iter_mut() {
            let amp = delta * vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for v in vals.iter_mut() {
                *v += amp * rng.random_range(-1.0..=1.0);
            }
        }
    }
    Ok(Measurement {
        kind,
        abscissae,
        values,
        delta,
        seed,
        length: grid.length(),
        horizon: grid.horizon(),
    })
}

/// Regularization level of a smoother.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    /// Discrepancy principle: the residual matches the expected noise
    /// energy `S (delta max|y|)^2 / 3`. Falls back to a fixed level when
    /// `delta = 0`.
    Auto,
    Fixed(f64),
}

/// Eigenfunction smoothing of final-time data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialSmoothing {
    /// Number of eigenfunctions; `None` means `min(S, 20)`.
    pub ncoef: Option<usize>,
    pub penalty: Penalty,
    pub ndense: usize,
}

impl Default for SpatialSmoothing {
    fn default() -> Self {
        SpatialSmoothing {
            ncoef: None,
            penalty: Penalty::Auto,
            ndense: DENSE_SPACE,
        }
    }
}

/// Tikhonov smoothing of time-trace data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemporalSmoothing {
    pub penalty: Penalty,
    /// Derivative order `m` in the penalty `mu * int (s^(m))^2 dt`; 1 is the
    /// H1 Tikhonov smoother, 2 the discrete smoothing spline.
    pub order: usize,
    pub ndense: usize,
}

impl Default for TemporalSmoothing {
    fn default() -> Self {
        TemporalSmoothing {
            penalty: Penalty::Auto,
            order: 2,
            ndense: DENSE_TIME,
        }
    }
}

/// Smoothed data on a dense grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedData {
    pub kind: MeasurementKind,
    /// Dense abscissae, uniform from 0 to `L` or `T`.
    pub abscissae: Vec<f64>,
    pub values: [Vec<f64>; 2],
    pub first: [Vec<f64>; 2],
    /// Second spatial derivative (final-time data only).
    pub second: Option<[Vec<f64>; 2]>,
    /// Regularization parameter used per species.
    pub penalty: [f64; 2],
}

impl SmoothedData {
    /// `(a g'' - q g)` on the dense abscissae (final-time data only).
    pub fn operator(&self, diffusion: f64, potential: &Expr) -> Option<[Vec<f64>; 2]> {
        let second = self.second.as_ref()?;
        Some([0, 1].map(|s| {
            self.abscissae
                .iter()
                .zip(&second[s])
                .zip(&self.values[s])
                .map(|((&x, &gxx), &g)| diffusion * gxx - potential.eval(&Env::xt(x, 0.0)) * g)
                .collect()
        }))
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["abscissa", "u", "v", "du", "dv"];
        if self.second.is_some() {
            header.extend(["d2u", "d2v"]);
        }
        let rows = (0..self.abscissae.len()).map(|k| {
            let mut row = vec![
                self.abscissae[k],
                self.values[0][k],
                self.values[1][k],
                self.first[0][k],
                self.first[1][k],
            ];
            if let Some(sec) = &self.second {
                row.extend([sec[0][k], sec[1][k]]);
            }
            row
        });
        crate::io::csv_table(&header, rows)
    }
}

/// Boundary-adapted lifting `l(x)` carrying the inhomogeneous boundary data
/// at time `t`, with `(l, l', l'')`.
fn lifting(bc: &SpeciesBc, length: f64, t: f64) -> impl Fn(f64) -> (f64, f64, f64) {
    use BoundaryCondition::*;
    let (l, r) = (bc.left.datum(t), bc.right.datum(t));
    // coefficients of c0 + c1 x + c2 x^2
    let (c0, c1, c2) = match (&bc.left, &bc.right) {
        (Dirichlet(_), Neumann(_)) => (l, r, 0.0),
        (Neumann(_), Dirichlet(_)) => (r + l * length, -l, 0.0),
        (Neumann(_), Neumann(_)) => (0.0, -l, (r + l) / (2.0 * length)),
        (Dirichlet(_), Dirichlet(_)) => (l, (r - l) / length, 0.0),
        _ => (0.0, 0.0, 0.0),
    };
    move |x| (c0 + c1 * x + c2 * x * x, c1 + 2.0 * c2 * x, 2.0 * c2)
}

/// Expected squared residual of pure noise at level `delta`.
fn discrepancy_target(delta: f64, y: &[f64]) -> f64 {
    let amp = delta * y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    y.len() as f64 * amp * amp / 3.0
}

/// Largest `mu` on a log scale whose squared residual stays at or below
/// `target`; `residual` must be non-decreasing in `mu`.
fn discrepancy_search(target: f64, mut residual2: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    let (mut lo, mut hi) = (-16.0f64, 8.0f64);
    if residual2(10f64.powf(lo))? >= target {
        return Ok(10f64.powf(lo));
    }
    if residual2(10f64.powf(hi))? <= target {
        return Ok(10f64.powf(hi));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if residual2(10f64.powf(mid))? <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(10f64.powf(lo))
}

/// Projects final-time samples onto the first `ncoef` eigenfunctions of
/// `-(a d^2/dx^2) + q` under each species' boundary conditions, with the
/// H2 penalty `mu sum lambda_n^2 c_n^2`.
pub fn smooth_spatial(
    m: &Measurement,
    opts: &SpatialSmoothing,
    spec: &SystemSpec,
) -> Result<SmoothedData> {
    m.validate()?;
    if m.kind != MeasurementKind::FinalTime {
        return Err(Error::InvalidInput(
            "spatial smoothing needs final-time data".into(),
        ));
    }
    if opts.ndense < 5 {
        return Err(Error::InvalidInput(
            "dense grid needs at least 5 points".into(),
        ));
    }
    let count = m.len();
    let ncoef = opts.ncoef.unwrap_or(count.min(20));
    if ncoef == 0 {
        return Err(Error::InvalidInput(
            "need at least one eigenfunction".into(),
        ));
    }
    let dense = linspace(0.0, m.length, opts.ndense);
    let mut values = [Vec::new(), Vec::new()];
    let mut first = [Vec::new(), Vec::new()];
    let mut second = [Vec::new(), Vec::new()];
    let mut penalty_used = [0.0; 2];
    for s in 0..2 {
        let bc = &spec.boundary[s];
        let basis = EigenBasis::new(bc, m.length, spec.diffusion, &spec.potential)?;
        let lift = lifting(bc, m.length, m.horizon);
        let a = DMatrix::from_fn(count, ncoef, |j, n| basis.eval(n + 1, m.abscissae[j]).0);
        let y: Vec<f64> = m
            .abscissae
            .iter()
            .zip(&m.values[s])
            .map(|(&x, &v)| v - lift(x).0)
            .collect();
        let lambda2: Vec<f64> = (1..=ncoef).map(|n| basis.eigenvalue(n).powi(2)).collect();
        let solve = |mu: f64| {
            let pen: Vec<f64> = lambda2.iter().map(|l| mu * l).collect();
            penalized_least_squares(&a, &y, &pen).ok_or_else(|| {
                Error::IllConditioned(format!(
                    "{ncoef} eigenfunctions on {count} samples with penalty {mu}"
                ))
            })
        };
        let mu = match opts.penalty {
            Penalty::Fixed(mu) if mu >= 0.0 && mu.is_finite() => mu,
            Penalty::Fixed(mu) => {
                return Err(Error::InvalidInput(format!("invalid penalty {mu}")));
            }
            Penalty::Auto if m.delta == 0.0 => 1e-6,
            Penalty::Auto => {
                let target = discrepancy_target(m.delta, &m.values[s]);
                discrepancy_search(target, |mu| Ok(solve(mu)?.residual.powi(2)))?
            }
        };
        if mu == 0.0 && ncoef > count {
            return Err(Error::IllConditioned(format!(
                "{ncoef} eigenfunctions exceed {count} samples without a penalty"
            )));
        }
        let coeffs = solve(mu)?.coeffs;
        penalty_used[s] = mu;
        for &x in &dense {
            let (mut g, mut g1, mut g2) = lift(x);
            for (n, c) in coeffs.iter().enumerate() {
                let (p, p1, p2) = basis.eval(n + 1, x);
                g += c * p;
                g1 += c * p1;
                g2 += c * p2;
            }
            values[s].push(g);
            first[s].push(g1);
            second[s].push(g2);
        }
    }
    Ok(SmoothedData {
        kind: m.kind,
        abscissae: dense,
        values,
        first,
        second: Some(second),
        penalty: penalty_used,
    })
}

/// Minimizes `sum_j (s(t_j) - h_j)^2 + mu int (s^(m))^2 dt` over values on
/// a dense uniform grid of `[0, T]` with `s(0) = anchor[species]` imposed,
/// then differentiates the result.
pub fn smooth_temporal(
    m: &Measurement,
    opts: &TemporalSmoothing,
    anchor: [f64; 2],
) -> Result<SmoothedData> {
    m.validate()?;
    if !matches!(m.kind, MeasurementKind::TimeTrace { .. }) {
        return Err(Error::InvalidInput(
            "temporal smoothing needs time-trace data".into(),
        ));
    }
    if !(1..=2).contains(&opts.order) {
        return Err(Error::InvalidInput(format!(
            "temporal penalty order must be 1 or 2, got {}",
            opts.order
        )));
    }
    let n = opts.ndense;
    if n < 5 {
        return Err(Error::InvalidInput(
            "dense grid needs at least 5 points".into(),
        ));
    }
    if m.abscissae[0] <= 0.0 || m.abscissae[m.len() - 1] > m.horizon * (1.0 + 1e-12) {
        return Err(Error::InvalidInput(
            "time samples must lie in (0, T]".into(),
        ));
    }
    let dense = linspace(0.0, m.horizon, n);
    let dt = m.horizon / (n - 1) as f64;
    let mut values = [Vec::new(), Vec::new()];
    let mut first = [Vec::new(), Vec::new()];
    let mut penalty_used = [0.0; 2];
    for s in 0..2 {
        let fit = |mu: f64| temporal_fit(m, s, anchor[s], mu, opts.order, n, dt);
        let mu = match opts.penalty {
            Penalty::Fixed(mu) if mu >= 0.0 && mu.is_finite() => mu,
            Penalty::Fixed(mu) => {
                return Err(Error::InvalidInput(format!("invalid penalty {mu}")));
            }
            Penalty::Auto if m.delta == 0.0 => 0.0,
            Penalty::Auto => {
                let target = discrepancy_target(m.delta, &m.values[s]);
                discrepancy_search(target, |mu| Ok(fit(mu)?.1))?
            }
        };
        let (sol, _) = fit(mu)?;
        penalty_used[s] = mu;
        first[s] = differentiate_uniform(&sol, dt);
        values[s] = sol;
    }
    Ok(SmoothedData {
        kind: m.kind,
        abscissae: dense,
        values,
        first,
        second: None,
        penalty: penalty_used,
    })
}

/// Dense solution and squared data residual of the temporal smoother.
fn temporal_fit(
    m: &Measurement,
    species: usize,
    anchor: f64,
    mu: f64,
    order: usize,
    n: usize,
    dt: f64,
) -> Result<(Vec<f64>, f64)> {
    // unknowns s_1..s_{n-1}; s_0 = anchor
    let size = n - 1;
    let mut mat = BandedSpd::zeros(size, order.max(1));
    let mut rhs = vec![0.0; size];
    let locate = |t: f64| -> (usize, f64) {
        let p = (t / dt).clamp(0.0, (n - 1) as f64);
        let k = (p.floor() as usize).min(n - 2);
        (k, p - k as f64)
    };
    for (&t, &h) in m.abscissae.iter().zip(&m.values[species]) {
        let (k, th) = locate(t);
        let terms = [(k, 1.0 - th), (k + 1, th)];
        let mut target = h;
        for &(node, w) in &terms {
            if node == 0 {
                target -= w * anchor;
            }
        }
        for &(a, wa) in &terms {
            if a == 0 || wa == 0.0 {
                continue;
            }
            rhs[a - 1] += wa * target;
            for &(b, wb) in &terms {
                if b == 0 || wb == 0.0 || b > a {
                    continue;
                }
                mat.add(a - 1, b - 1, wa * wb);
            }
        }
    }
    // penalty mu * dt * sum (D^m s)^2 with D^m the forward difference / dt^m
    let stencil: &[f64] = if order == 1 {
        &[-1.0, 1.0]
    } else {
        &[1.0, -2.0, 1.0]
    };
    // a vanishing penalty leaves the dense values between samples free; the
    // floor keeps the banded factorization well conditioned while moving
    // the fit at the samples by O(floor dt^(2m))
    let floor = if order == 1 { 1e-7 } else { 1e-3 };
    let scale = (mu * dt / dt.powi(2 * order as i32)).max(floor);
    for start in 0..=n - stencil.len() {
        let nodes: Vec<(usize, f64)> = stencil
            .iter()
            .enumerate()
            .map(|(o, &c)| (start + o, c))
            .collect();
        let fixed: f64 = nodes
            .iter()
            .filter(|(k, _)| *k == 0)
            .map(|(_, c)| c * anchor)
            .sum();
        for &(a, ca) in &nodes {
            if a == 0 {
                continue;
            }
            rhs[a - 1] -= scale * ca * fixed;
            for &(b, cb) in &nodes {
                if b == 0 || b > a {
                    continue;
                }
                mat.add(a - 1, b - 1, scale * ca * cb);
            }
        }
    }
    mat.solve(&mut rhs).ok_or_else(|| {
        Error::IllConditioned("temporal smoothing system is not positive definite".into())
    })?;
    let mut sol = Vec::with_capacity(n);
    sol.push(anchor);
    sol.extend(rhs);
    let residual2 = m
        .abscissae
        .iter()
        .zip(&m.values[species])
        .map(|(&t, &h)| {
            let (k, th) = locate(t);
            let s = (1.0 - th) * sol[k] + th * sol[k + 1];
            (s - h) * (s - h)
        })
        .sum();
    Ok((sol, residual2))
}

/// `[min, max]` of the dense smoothed values of each species.
pub fn estimate_range(d: &SmoothedData) -> Result<[RangeInterval; 2]> {
    let mut out = Vec::with_capacity(2);
    for (species, vals) in d.values.iter().enumerate() {
        let (lo, hi) = vals
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        if !(hi - lo >= 1e-12) {
            return Err(Error::DegenerateRange { species, lo, hi });
        }
        out.push(RangeInterval::new(lo, hi)?);
    }
    Ok([out[0], out[1]])
}

/// `min |sum_j dw_i/dxi_j (d(s)) d_j'(s)|` over the dense grid for the
/// composite abscissae `w_i(d_u, d_v)`.
pub fn invertibility_margin(d: &SmoothedData, couplings: [&Expr; 2]) -> [f64; 2] {
    couplings.map(|w| {
        (0..d.abscissae.len())
            .map(|k| {
                let env = Env::state(0.0, 0.0, d.values[0][k], d.values[1][k]);
                let (_, g) = w.eval_grad(&env);
                (g[0] * d.first[0][k] + g[1] * d.first[1][k]).abs()
            })
            .fold(f64::INFINITY, f64::min)
    })
}
