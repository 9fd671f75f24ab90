use crate::error::{Error, Result};
use crate::expr::Env;
use crate::linalg::{solve_block_tridiagonal, Mat2, Vec2};

use super::{BoundaryCondition, EvalStats, Grid, SystemSpec, Trajectory};

/// Solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Residual tolerance of the per-step Newton iteration, relative to
    /// `max(1, |U|)`.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Any field magnitude above this is reported as blow-up.
    pub blowup_cap: f64,
    /// Richardson extrapolation over a grid with both steps halved.
    pub extrapolate: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            newton_tol: 1e-10,
            newton_max_iter: 25,
            blowup_cap: 1e6,
            extrapolate: true,
        }
    }
}

/// Fourth-order solution: Crank-Nicolson on `grid` and on the grid with
/// halved steps, combined as `(4 u_fine - u_coarse) / 3` on the coarse nodes.
pub fn solve_forward(spec: &SystemSpec, grid: &Grid) -> Result<Trajectory> {
    solve_forward_with(spec, grid, &ForwardOptions::default())
}

pub fn solve_forward_with(
    spec: &SystemSpec,
    grid: &Grid,
    opts: &ForwardOptions,
) -> Result<Trajectory> {
    spec.validate()?;
    if !opts.extrapolate {
        return solve_crank_nicolson(spec, grid, opts);
    }
    let fine_grid = grid.refined();
    let (coarse, fine) = std::thread::scope(|scope| {
        let fine = scope.spawn(|| run(spec, &fine_grid, 2, opts));
        let coarse = run(spec, grid, 1, opts);
        (coarse, fine.join().expect("fine-grid solve panicked"))
    });
    let coarse = coarse?;
    let fine = fine?;
    let mut stats = coarse.stats;
    stats.merge(fine.stats);
    let values = [0, 1].map(|s| {
        coarse.values[s]
            .iter()
            .zip(&fine.values[s])
            .map(|(c, f)| (4.0 * f - c) / 3.0)
            .collect::<Vec<f64>>()
    });
    let traj = Trajectory::from_parts(*grid, values, stats);
    let peak = traj.max_abs();
    if !peak.is_finite() || peak > opts.blowup_cap {
        return Err(Error::BlowUp {
            time: grid.horizon(),
            magnitude: peak,
        });
    }
    Ok(traj)
}

/// Plain second-order Crank-Nicolson solution on `grid`.
pub fn solve_crank_nicolson(
    spec: &SystemSpec,
    grid: &Grid,
    opts: &ForwardOptions,
) -> Result<Trajectory> {
    spec.validate()?;
    let out = run(spec, grid, 1, opts)?;
    Ok(Trajectory::from_parts(*grid, out.values, out.stats))
}

/// One Crank-Nicolson step from `t` to `t + dt` for the node values
/// `state` on `grid`.
pub fn cn_step(
    state: &[Vec<f64>; 2],
    t: f64,
    dt: f64,
    spec: &SystemSpec,
    grid: &Grid,
) -> Result<[Vec<f64>; 2]> {
    spec.validate()?;
    if state.iter().any(|s| s.len() != grid.nx()) {
        return Err(Error::InvalidInput(format!(
            "state length does not match nx = {}",
            grid.nx()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "time step must be positive, got {dt}"
        )));
    }
    let mut stepper = Stepper::new(spec, grid, &ForwardOptions::default());
    let mut u: Vec<Vec2> = (0..grid.nx()).map(|i| [state[0][i], state[1][i]]).collect();
    stepper.step(&mut u, t, dt)?;
    Ok([
        u.iter().map(|p| p[0]).collect(),
        u.iter().map(|p| p[1]).collect(),
    ])
}

struct RunOutput {
    values: [Vec<f64>; 2],
    stats: EvalStats,
}

/// Integrates on `grid`, keeping every `stride`-th node and time level.
fn run(spec: &SystemSpec, grid: &Grid, stride: usize, opts: &ForwardOptions) -> Result<RunOutput> {
    let nx = grid.nx();
    let nt = grid.nt();
    let kept_nx = (nx - 1) / stride + 1;
    let kept_nt = (nt - 1) / stride + 1;
    let mut values = [
        Vec::with_capacity(kept_nx * kept_nt),
        Vec::with_capacity(kept_nx * kept_nt),
    ];
    let mut stepper = Stepper::new(spec, grid, opts);
    let mut u: Vec<Vec2> = (0..nx)
        .map(|i| {
            let env = Env::xt(grid.x(i), 0.0);
            [spec.initial[0].eval(&env), spec.initial[1].eval(&env)]
        })
        .collect();
    for s in 0..2 {
        if let BoundaryCondition::Dirichlet(_) = &spec.boundary[s].left {
            u[0][s] = spec.boundary[s].left.datum(0.0);
        }
        if let BoundaryCondition::Dirichlet(_) = &spec.boundary[s].right {
            u[nx - 1][s] = spec.boundary[s].right.datum(0.0);
        }
    }
    let keep = |u: &[Vec2], values: &mut [Vec<f64>; 2]| {
        for (s, vals) in values.iter_mut().enumerate() {
            vals.extend(u.iter().step_by(stride).map(|p| p[s]));
        }
    };
    keep(&u, &mut values);
    for k in 1..nt {
        let t = grid.t(k - 1);
        stepper.step(&mut u, t, grid.t(k) - t)?;
        let peak = u
            .iter()
            .fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
        if !peak.is_finite() || peak > opts.blowup_cap {
            return Err(Error::BlowUp {
                time: grid.t(k),
                magnitude: peak,
            });
        }
        if k % stride == 0 {
            keep(&u, &mut values);
        }
    }
    Ok(RunOutput {
        values,
        stats: stepper.stats,
    })
}

/// Row of the discrete operator `a D2 - q` for one species at one node.
#[derive(Debug, Clone, Copy, Default)]
struct Row {
    lower: f64,
    diag: f64,
    upper: f64,
    /// Multiplies the boundary flux datum (ghost-node elimination).
    flux_weight: f64,
}

struct Stepper<'a> {
    spec: &'a SystemSpec,
    opts: ForwardOptions,
    xs: Vec<f64>,
    rows: [Vec<Row>; 2],
    dirichlet: [[bool; 2]; 2],
    stats: EvalStats,
    // scratch
    explicit: Vec<Vec2>,
    residual: Vec<Vec2>,
    lower: Vec<Mat2>,
    diag: Vec<Mat2>,
    upper: Vec<Mat2>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a SystemSpec, grid: &Grid, opts: &ForwardOptions) -> Self {
        let nx = grid.nx();
        let dx = grid.dx();
        let a = spec.diffusion;
        let xs = grid.xs();
        let q: Vec<f64> = xs
            .iter()
            .map(|&x| spec.potential.eval(&Env::xt(x, 0.0)))
            .collect();
        let mut dirichlet = [[false; 2]; 2];
        let rows = [0, 1].map(|s| {
            let bc = &spec.boundary[s];
            let mut rows = vec![Row::default(); nx];
            for i in 1..nx - 1 {
                rows[i] = Row {
                    lower: a / (dx * dx),
                    diag: -2.0 * a / (dx * dx) - q[i],
                    upper: a / (dx * dx),
                    flux_weight: 0.0,
                };
            }
            // ghost node eliminated through  du/dnu + gamma u = theta
            match bc.left.gamma() {
                Some(gamma) => {
                    rows[0] = Row {
                        lower: 0.0,
                        diag: a * (-2.0 - 2.0 * dx * gamma) / (dx * dx) - q[0],
                        upper: 2.0 * a / (dx * dx),
                        flux_weight: 2.0 * a / dx,
                    }
                }
                None => dirichlet[s][0] = true,
            }
            match bc.right.gamma() {
                Some(gamma) => {
                    rows[nx - 1] = Row {
                        lower: 2.0 * a / (dx * dx),
                        diag: a * (-2.0 - 2.0 * dx * gamma) / (dx * dx) - q[nx - 1],
                        upper: 0.0,
                        flux_weight: 2.0 * a / dx,
                    }
                }
                None => dirichlet[s][1] = true,
            }
            rows
        });
        Stepper {
            spec,
            opts: *opts,
            xs,
            rows,
            dirichlet,
            stats: EvalStats::default(),
            explicit: vec![[0.0; 2]; nx],
            residual: vec![[0.0; 2]; nx],
            lower: vec![[[0.0; 2]; 2]; nx],
            diag: vec![[[0.0; 2]; 2]; nx],
            upper: vec![[[0.0; 2]; 2]; nx],
        }
    }

    fn is_dirichlet(&self, s: usize, i: usize) -> bool {
        let nx = self.xs.len();
        (i == 0 && self.dirichlet[s][0]) || (i == nx - 1 && self.dirichlet[s][1])
    }

    fn boundary_datum(&self, s: usize, i: usize, t: f64) -> f64 {
        let bc = &self.spec.boundary[s];
        if i == 0 {
            bc.left.datum(t)
        } else {
            bc.right.datum(t)
        }
    }

    /// `(a D2 - q) u` at node `i` for species `s`, boundary flux included.
    #[inline]
    fn apply_operator(&self, u: &[Vec2], s: usize, i: usize, t: f64) -> f64 {
        let r = &self.rows[s][i];
        let nx = u.len();
        let mut out = r.diag * u[i][s];
        if i > 0 {
            out += r.lower * u[i - 1][s];
        }
        if i + 1 < nx {
            out += r.upper * u[i + 1][s];
        }
        if r.flux_weight != 0.0 {
            out += r.flux_weight * self.boundary_datum(s, i, t);
        }
        out
    }

    fn step(&mut self, u: &mut [Vec2], t: f64, dt: f64) -> Result<()> {
        let nx = u.len();
        let half = 0.5 * dt;
        let t_new = t + dt;
        let mut stats = EvalStats::default();
        for i in 0..nx {
            let (react, _) = self
                .spec
                .reaction_with_jacobian(self.xs[i], t, u[i][0], u[i][1], &mut stats);
            for s in 0..2 {
                self.explicit[i][s] = if self.is_dirichlet(s, i) {
                    0.0
                } else {
                    u[i][s] + half * (self.apply_operator(u, s, i, t) + react[s])
                };
            }
        }
        let mut last_residual = f64::INFINITY;
        for _ in 0..self.opts.newton_max_iter {
            let mut res_max = 0.0f64;
            let mut scale = 1.0f64;
            for i in 0..nx {
                let (react, jac) = self
                    .spec
                    .reaction_with_jacobian(self.xs[i], t_new, u[i][0], u[i][1], &mut stats);
                let mut d: Mat2 = [[0.0; 2]; 2];
                let mut lo: Mat2 = [[0.0; 2]; 2];
                let mut up: Mat2 = [[0.0; 2]; 2];
                for s in 0..2 {
                    scale = scale.max(u[i][s].abs());
                    if self.is_dirichlet(s, i) {
                        self.residual[i][s] = u[i][s] - self.boundary_datum(s, i, t_new);
                        d[s][s] = 1.0;
                    } else {
                        let row = self.rows[s][i];
                        self.residual[i][s] = u[i][s]
                            - half * (self.apply_operator(u, s, i, t_new) + react[s])
                            - self.explicit[i][s];
                        d[s][0] = -half * jac[s][0];
                        d[s][1] = -half * jac[s][1];
                        d[s][s] += 1.0 - half * row.diag;
                        lo[s][s] = -half * row.lower;
                        up[s][s] = -half * row.upper;
                    }
                    res_max = res_max.max(self.residual[i][s].abs());
                }
                self.diag[i] = d;
                self.lower[i] = lo;
                self.upper[i] = up;
            }
            if !res_max.is_finite() {
                break;
            }
            last_residual = res_max;
            if res_max <= self.opts.newton_tol * scale {
                self.stats.merge(stats);
                return Ok(());
            }
            for r in self.residual.iter_mut() {
                r[0] = -r[0];
                r[1] = -r[1];
            }
            if solve_block_tridiagonal(&self.lower, &self.diag, &self.upper, &mut self.residual)
                .is_none()
            {
                break;
            }
            for (ui, du) in u.iter_mut().zip(&self.residual) {
                ui[0] += du[0];
                ui[1] += du[1];
            }
        }
        self.stats.merge(stats);
        Err(Error::NewtonDivergence {
            time: t_new,
            residual: last_residual,
            iterations: self.opts.newton_max_iter,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::Expr;
    use crate::forward::{eigenpair, Nonlinearity, Reaction, SpeciesBc};

    fn known(src: &str) -> Nonlinearity {
        Nonlinearity::known(src).unwrap()
    }

    fn decoupled(f: [&str; 2], initial: [&str; 2], bc: SpeciesBc) -> SystemSpec {
        SystemSpec {
            diffusion: 1.0,
            potential: Expr::constant(0.0),
            initial: initial.map(|s| Expr::parse(s).unwrap()),
            sources: [Expr::constant(0.0), Expr::constant(0.0)],
            coupling: Expr::parse("u*v").unwrap(),
            reaction: Reaction::FPair {
                f: f.map(known),
                beta: 0.0,
            },
            boundary: [bc.clone(), bc],
        }
    }

    const U_STAR: &str = "exp(-t)*sin(pi*x/2)";
    const V_STAR: &str = "exp(-2*t)*cos(pi*x/2)";

    /// Coupled system whose exact solution is `(U_STAR, V_STAR)`.
    fn manufactured() -> SystemSpec {
        let (u, v) = (format!("({U_STAR})"), format!("({V_STAR})"));
        let ru = format!("(pi^2/4 - 1)*{u} - {u}*(1 - {u}) - 0.5*{u}*{v}");
        let rv = format!("(pi^2/4 - 2)*{v} + {v}^3 - 0.5*{u}*{v}");
        SystemSpec {
            diffusion: 1.0,
            potential: Expr::constant(0.0),
            initial: [
                Expr::parse("sin(pi*x/2)").unwrap(),
                Expr::parse("cos(pi*x/2)").unwrap(),
            ],
            sources: [Expr::parse(&ru).unwrap(), Expr::parse(&rv).unwrap()],
            coupling: Expr::parse("u*v").unwrap(),
            reaction: Reaction::FPair {
                f: [known("u*(1-u)"), known("-v^3")],
                beta: 0.5,
            },
            boundary: [
                SpeciesBc::dirichlet_neumann(),
                SpeciesBc {
                    left: BoundaryCondition::homogeneous_neumann(),
                    right: BoundaryCondition::homogeneous_dirichlet(),
                },
            ],
        }
    }

    fn max_error(traj: &Trajectory) -> f64 {
        let exact = [Expr::parse(U_STAR).unwrap(), Expr::parse(V_STAR).unwrap()];
        let g = traj.grid();
        let mut err = 0.0f64;
        for s in 0..2 {
            for k in 0..g.nt() {
                for i in 0..g.nx() {
                    let e = exact[s].eval(&Env::xt(g.x(i), g.t(k)));
                    err = err.max((traj.value(s, k, i) - e).abs());
                }
            }
        }
        err
    }

    #[test]
    fn zero_data_stays_zero() {
        let spec = decoupled(["0", "0"], ["0", "0"], SpeciesBc::dirichlet_neumann());
        let grid = Grid::new(11, 11, 1.0, 1.0).unwrap();
        let traj = solve_forward(&spec, &grid).unwrap();
        assert_eq!(traj.max_abs(), 0.0);
        let next = cn_step(&[vec![0.0; 11], vec![0.0; 11]], 0.0, 0.1, &spec, &grid).unwrap();
        assert!(next.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_eigen_decay() {
        let c = 0.5;
        let spec = decoupled(
            ["0.5*u", "0.5*v"],
            ["sqrt(2)*sin(pi*x/2)", "sqrt(2)*sin(pi*x/2)"],
            SpeciesBc::dirichlet_neumann(),
        );
        let grid = Grid::new(401, 10, 1.0, 1.0).unwrap();
        let (lambda, phi) = eigenpair(
            1,
            &grid,
            &SpeciesBc::dirichlet_neumann(),
            1.0,
            &Expr::constant(0.0),
        )
        .unwrap();
        let mut errs = Vec::new();
        for dt in [0.02, 0.01] {
            let next = cn_step(&[phi.clone(), phi.clone()], 0.0, dt, &spec, &grid).unwrap();
            let decay = (-(lambda - c) * dt).exp();
            let err = next[0]
                .iter()
                .zip(&phi)
                .map(|(u, p)| (u - decay * p).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        // local error O(dt^3) plus a spatial part O(dt dx^2)
        assert!(errs[0] < 1e-5, "{errs:?}");
        assert!(errs[1] < errs[0] / 4.0, "{errs:?}");
    }

    #[test]
    fn eigen_solution_oracle() {
        let c = 1.0;
        let spec = decoupled(
            ["u", "v"],
            ["sqrt(2)*sin(pi*x/2)", "sqrt(2)*sin(pi*x/2)"],
            SpeciesBc::dirichlet_neumann(),
        );
        let grid = Grid::new(200, 300, 1.0, 1.0).unwrap();
        let traj = solve_forward(&spec, &grid).unwrap();
        let lambda = (PI_HALF).powi(2);
        let mut err = 0.0f64;
        for k in 0..grid.nt() {
            for i in 0..grid.nx() {
                let exact =
                    (-(lambda - c) * grid.t(k)).exp() * 2f64.sqrt() * (PI_HALF * grid.x(i)).sin();
                err = err.max((traj.value(0, k, i) - exact).abs());
                err = err.max((traj.value(1, k, i) - exact).abs());
            }
        }
        assert!(err <= 1e-4, "max error {err}");
    }

    const PI_HALF: f64 = std::f64::consts::FRAC_PI_2;

    #[test]
    fn manufactured_solution_fourth_order() {
        let spec = manufactured();
        let errs: Vec<f64> = [11, 21, 41]
            .iter()
            .map(|&n| {
                let grid = Grid::new(n, n, 1.0, 1.0).unwrap();
                max_error(&solve_forward(&spec, &grid).unwrap())
            })
            .collect();
        let orders: Vec<f64> = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
        assert!(
            orders.iter().all(|&p| (3.5..=4.5).contains(&p)),
            "{errs:?} {orders:?}"
        );
        let cn: Vec<f64> = [21, 41]
            .iter()
            .map(|&n| {
                let grid = Grid::new(n, n, 1.0, 1.0).unwrap();
                max_error(&solve_crank_nicolson(&spec, &grid, &ForwardOptions::default()).unwrap())
            })
            .collect();
        let p = (cn[0] / cn[1]).log2();
        assert!((1.7..=2.3).contains(&p), "Crank-Nicolson order {p}");
    }

    #[test]
    fn neumann_mass_conservation() {
        let spec = decoupled(
            ["0", "0"],
            [
                "1 + cos(pi*x) + x^2*(1-x)^2",
                "2 + cos(3*pi*x) + 10*x^3*(1-x)^3",
            ],
            SpeciesBc::neumann_neumann(),
        );
        let grid = Grid::new(200, 300, 1.0, 1.0).unwrap();
        let traj = solve_forward(&spec, &grid).unwrap();
        let dx = grid.dx();
        let mass = |s: usize, k: usize| {
            let u = traj.slice(s, k);
            dx * (u.iter().sum::<f64>() - 0.5 * (u[0] + u[u.len() - 1]))
        };
        for s in 0..2 {
            let m0 = mass(s, 0);
            let drift = (0..grid.nt())
                .map(|k| ((mass(s, k) - m0) / m0).abs())
                .fold(0.0, f64::max);
            assert!(drift <= 1e-8, "species {s}: drift {drift}");
        }
    }

    #[test]
    fn dissipative_reaction_decays_in_max_norm() {
        let spec = decoupled(
            ["-u", "-v"],
            ["x*(1-x)^2", "sin(pi*x/2)"],
            SpeciesBc::dirichlet_neumann(),
        );
        let grid = Grid::new(60, 80, 1.0, 1.0).unwrap();
        let traj = solve_forward(&spec, &grid).unwrap();
        for s in 0..2 {
            let peaks: Vec<f64> = (0..grid.nt())
                .map(|k| {
                    traj.slice(s, k)
                        .iter()
                        .fold(0.0, |m: f64, x| m.max(x.abs()))
                })
                .collect();
            for w in peaks.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn deterministic() {
        let spec = manufactured();
        let grid = Grid::new(31, 31, 1.0, 1.0).unwrap();
        let a = solve_forward(&spec, &grid).unwrap();
        let b = solve_forward(&spec, &grid).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = decoupled(["u^2", "0"], ["10", "0"], SpeciesBc::neumann_neumann());
        let grid = Grid::new(11, 200, 1.0, 1.0).unwrap();
        let err = solve_forward(&spec, &grid).unwrap_err();
        assert!(
            matches!(err, Error::BlowUp { .. } | Error::NewtonDivergence { .. }),
            "{err:?}"
        );
        assert!(err.is_forward_failure());
    }

    #[test]
    fn robin_ghost_row_is_consistent() {
        // u = exp(x) stationary under u_t = u_xx - u, with u' + u = 2e at x = 1
        // and -u' + u = 0 at x = 0
        let spec = SystemSpec {
            boundary: [
                SpeciesBc {
                    left: BoundaryCondition::Robin {
                        gamma: 1.0,
                        flux: Expr::constant(0.0),
                    },
                    right: BoundaryCondition::Robin {
                        gamma: 1.0,
                        flux: Expr::parse("2*e").unwrap(),
                    },
                },
                SpeciesBc::neumann_neumann(),
            ],
            ..decoupled(["-u", "0"], ["exp(x)", "1"], SpeciesBc::neumann_neumann())
        };
        let grid = Grid::new(41, 41, 1.0, 1.0).unwrap();
        let traj = solve_forward(&spec, &grid).unwrap();
        let err = grid
            .xs()
            .iter()
            .enumerate()
            .map(|(i, x)| (traj.final_slice(0)[i] - x.exp()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }
}
