//! Derivative and boundary quantities extracted from a computed trajectory.

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};

use super::{Side, Trajectory};

/// `D_t u(x, T)` for both species by the one-sided four-point backward
/// difference, third order in `dt`.
pub fn time_derivative_at_end(traj: &Trajectory) -> Result<[Vec<f64>; 2]> {
    let grid = traj.grid();
    let nt = grid.nt();
    if nt < 5 {
        return Err(Error::GridTooCoarse(format!(
            "time derivative at T needs nt >= 5, got {nt}"
        )));
    }
    let dt = grid.dt();
    Ok([0, 1].map(|s| {
        let u0 = traj.slice(s, nt - 1);
        let u1 = traj.slice(s, nt - 2);
        let u2 = traj.slice(s, nt - 3);
        let u3 = traj.slice(s, nt - 4);
        (0..grid.nx())
            .map(|i| (11.0 * u0[i] - 18.0 * u1[i] + 9.0 * u2[i] - 2.0 * u3[i]) / (6.0 * dt))
            .collect()
    }))
}

/// Fourth-order time derivative at every node of one species, laid out as
/// `k * nx + i`.
pub fn time_derivative_field(traj: &Trajectory, species: usize) -> Result<Vec<f64>> {
    let grid = traj.grid();
    let (nx, nt) = (grid.nx(), grid.nt());
    if nt < 5 {
        return Err(Error::GridTooCoarse(format!(
            "time derivative field needs nt >= 5, got {nt}"
        )));
    }
    let mut out = vec![0.0; nx * nt];
    for i in 0..nx {
        let d = differentiate_uniform(&traj.node_series(species, i), grid.dt());
        for (k, v) in d.into_iter().enumerate() {
            out[k * nx + i] = v;
        }
    }
    Ok(out)
}

/// Fourth-order first derivative of samples on a uniform grid with step
/// `h`: five-point central differences inside, one-sided five-point
/// stencils at the first and last two points. Needs at least 5 samples.
pub(crate) fn differentiate_uniform(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "five-point differences need 5 samples");
    let h12 = 12.0 * h;
    (0..n)
        .map(|k| {
            let d = match k {
                0 => -25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4],
                1 => -3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4],
                k if k == n - 2 => {
                    3.0 * f[k + 1] + 10.0 * f[k] - 18.0 * f[k - 1] + 6.0 * f[k - 2] - f[k - 3]
                }
                k if k == n - 1 => {
                    25.0 * f[k] - 48.0 * f[k - 1] + 36.0 * f[k - 2] - 16.0 * f[k - 3]
                        + 3.0 * f[k - 4]
                }
                k => f[k - 2] - 8.0 * f[k - 1] + 8.0 * f[k + 1] - f[k + 2],
            };
            d / h12
        })
        .collect()
}

/// Cubic Lagrange interpolation of samples on the uniform grid
/// `x_k = k h`, `k = 0..n`; needs at least 4 samples. Arguments within
/// `1e-9 h` of a node return that node's value exactly.
pub(crate) fn interpolate_uniform(f: &[f64], h: f64, x: f64) -> f64 {
    let n = f.len();
    assert!(n >= 4, "cubic interpolation needs 4 samples");
    let s = x / h;
    let nearest = s.round();
    if (s - nearest).abs() < 1e-9 && nearest >= 0.0 && (nearest as usize) < n {
        return f[nearest as usize];
    }
    let i0 = ((s.floor() as isize) - 1).clamp(0, n as isize - 4) as usize;
    let mut out = 0.0;
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (s - (i0 + b) as f64) / (a as f64 - b as f64);
            }
        }
        out += w * f[i0 + a];
    }
    out
}

fn boundary_nodes(traj: &Trajectory, side: Side) -> Result<[usize; 5]> {
    let nx = traj.grid().nx();
    if nx < 6 {
        return Err(Error::GridTooCoarse(format!(
            "one-sided boundary stencils need nx >= 6, got {nx}"
        )));
    }
    Ok(match side {
        Side::Left => [0, 1, 2, 3, 4],
        Side::Right => [nx - 1, nx - 2, nx - 3, nx - 4, nx - 5],
    })
}

/// `(a u_xx - q u)(x0, t_k)` for both species at every time level, with
/// the one-sided five-point second-derivative stencil at `x0`.
pub fn laplacian_at_boundary(
    traj: &Trajectory,
    side: Side,
    diffusion: f64,
    potential: &Expr,
) -> Result<[Vec<f64>; 2]> {
    let nodes = boundary_nodes(traj, side)?;
    let grid = traj.grid();
    let x0 = grid.x(nodes[0]);
    let q0 = potential.eval(&Env::xt(x0, 0.0));
    let scale = diffusion / (12.0 * grid.dx() * grid.dx());
    const W: [f64; 5] = [35.0, -104.0, 114.0, -56.0, 11.0];
    Ok([0, 1].map(|s| {
        (0..grid.nt())
            .map(|k| {
                let row = traj.slice(s, k);
                let lap: f64 = nodes.iter().zip(W).map(|(&i, w)| w * row[i]).sum();
                scale * lap - q0 * row[nodes[0]]
            })
            .collect()
    }))
}

/// Outward normal derivative `du/dnu (x0, t_k)` for both species, one-sided
/// five-point stencil.
pub fn boundary_flux(traj: &Trajectory, side: Side) -> Result<[Vec<f64>; 2]> {
    let nodes = boundary_nodes(traj, side)?;
    let grid = traj.grid();
    // inward stencil gives -du/dnu at either end
    let scale = -1.0 / (12.0 * grid.dx());
    const W: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
    Ok([0, 1].map(|s| {
        (0..grid.nt())
            .map(|k| {
                let row = traj.slice(s, k);
                scale * nodes.iter().zip(W).map(|(&i, w)| w * row[i]).sum::<f64>()
            })
            .collect()
    }))
}
