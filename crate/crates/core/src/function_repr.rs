//! Univariate unknowns represented by moving Gaussian bases on the data
//! range plus an unpenalized affine trend, with constant extension outside
//! the range.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::penalized_least_squares;

/// Number of abscissae in a [`StoredProfile`].
pub const PROFILE_POINTS: usize = 100;

/// Compact interval `[lo, hi]` with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeInterval {
    lo: f64,
    hi: f64,
}

impl RangeInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidInput(format!(
                "range interval requires finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(RangeInterval { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, xi: f64) -> bool {
        xi >= self.lo && xi <= self.hi
    }

    /// `n` uniformly spaced points from `lo` to `hi` inclusive.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        linspace(self.lo, self.hi, n)
    }

    pub fn intersect(&self, other: &RangeInterval) -> Option<RangeInterval> {
        RangeInterval::new(self.lo.max(other.lo), self.hi.min(other.hi)).ok()
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            (0..n)
                .map(|k| if k + 1 == n { hi } else { lo + k as f64 * h })
                .collect()
        }
    }
}

/// Projection onto `J`: `max{lo, min{hi, xi}}`.
#[inline]
pub fn clamp(xi: f64, j: &RangeInterval) -> f64 {
    j.lo.max(j.hi.min(xi))
}

/// Ridge level for [`fit_from_pairs`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ridge {
    /// `1e-8 * trace(A^T A) / ncenters`.
    Auto,
    Fixed(f64),
}

/// Shape of the Gaussian basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub ncenters: usize,
    /// Gaussian width as a multiple of the center spacing.
    pub width_factor: f64,
    pub ridge: Ridge,
}

impl Default for BasisConfig {
    fn default() -> Self {
        BasisConfig {
            ncenters: 40,
            width_factor: 1.5,
            ridge: Ridge::Auto,
        }
    }
}

/// Sum of Gaussians with uniformly spaced centers on `J` plus an affine
/// trend `a0 + a1 (z - mid) / half`; constant extension outside `J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangedFn {
    interval: RangeInterval,
    centers: Vec<f64>,
    width: f64,
    coeffs: Vec<f64>,
    trend: [f64; 2],
}

/// Values of a function at [`PROFILE_POINTS`] uniform abscissae of its range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredProfile {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
}

impl StoredProfile {
    pub fn sample(interval: &RangeInterval, f: impl Fn(f64) -> f64) -> StoredProfile {
        let abscissae = interval.linspace(PROFILE_POINTS);
        let values = abscissae.iter().map(|&a| f(a)).collect();
        StoredProfile { abscissae, values }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("abscissa,value\n");
        for (a, v) in self.abscissae.iter().zip(&self.values) {
            out.push_str(&crate::io::fmt_f64(*a));
            out.push(',');
            out.push_str(&crate::io::fmt_f64(*v));
            out.push('\n');
        }
        out
    }
}

fn centers_for(interval: &RangeInterval, cfg: &BasisConfig) -> Result<(Vec<f64>, f64)> {
    if cfg.ncenters < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 Gaussian centers, got {}",
            cfg.ncenters
        )));
    }
    if !(cfg.width_factor > 0.0 && cfg.width_factor.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "Gaussian width factor must be positive, got {}",
            cfg.width_factor
        )));
    }
    let centers = interval.linspace(cfg.ncenters);
    let spacing = interval.width() / (cfg.ncenters - 1) as f64;
    Ok((centers, cfg.width_factor * spacing))
}

impl RangedFn {
    pub fn zero(interval: RangeInterval, cfg: &BasisConfig) -> Result<RangedFn> {
        let (centers, width) = centers_for(&interval, cfg)?;
        let coeffs = vec![0.0; centers.len()];
        Ok(RangedFn {
            interval,
            centers,
            width,
            coeffs,
            trend: [0.0; 2],
        })
    }

    /// Builds a pure Gaussian sum from explicit parts; centers must be
    /// strictly increasing.
    pub fn from_parts(
        interval: RangeInterval,
        centers: Vec<f64>,
        width: f64,
        coeffs: Vec<f64>,
    ) -> Result<RangedFn> {
        if centers.len() != coeffs.len() || centers.is_empty() {
            return Err(Error::InvalidInput(
                "centers and coefficients must be non-empty and of equal length".into(),
            ));
        }
        if centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "centers must be strictly increasing".into(),
            ));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid Gaussian width {width}"
            )));
        }
        Ok(RangedFn {
            interval,
            centers,
            width,
            coeffs,
            trend: [0.0; 2],
        })
    }

    /// Replaces the affine trend `[a0, a1]`.
    pub fn with_trend(mut self, trend: [f64; 2]) -> RangedFn {
        self.trend = trend;
        self
    }

    pub fn interval(&self) -> &RangeInterval {
        &self.interval
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn trend(&self) -> [f64; 2] {
        self.trend
    }

    #[inline]
    fn trend_scale(&self) -> (f64, f64) {
        let j = &self.interval;
        (0.5 * (j.lo + j.hi), 2.0 / j.width())
    }

    pub fn basis_config(&self) -> BasisConfig {
        let spacing = self.interval.width() / (self.centers.len().max(2) - 1) as f64;
        BasisConfig {
            ncenters: self.centers.len(),
            width_factor: self.width / spacing,
            ridge: Ridge::Auto,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().chain(&self.trend).all(|c| c.is_finite())
    }

    pub fn eval(&self, xi: f64) -> f64 {
        let z = clamp(xi, &self.interval);
        let inv = 1.0 / (2.0 * self.width * self.width);
        let (mid, scale) = self.trend_scale();
        let gauss: f64 = self
            .centers
            .iter()
            .zip(&self.coeffs)
            .map(|(mu, c)| c * (-(z - mu) * (z - mu) * inv).exp())
            .sum();
        gauss + self.trend[0] + self.trend[1] * (z - mid) * scale
    }

    /// Analytic derivative on `J`, zero outside.
    pub fn derivative(&self, xi: f64) -> f64 {
        self.eval_with_slope(xi).1
    }

    /// Value and slope in one pass.
    pub fn eval_with_slope(&self, xi: f64) -> (f64, f64) {
        let inside = self.interval.contains(xi);
        let z = clamp(xi, &self.interval);
        let s2 = self.width * self.width;
        let inv = 1.0 / (2.0 * s2);
        let (mid, scale) = self.trend_scale();
        let mut value = self.trend[0] + self.trend[1] * (z - mid) * scale;
        let mut slope = self.trend[1] * scale;
        for (mu, c) in self.centers.iter().zip(&self.coeffs) {
            let g = c * (-(z - mu) * (z - mu) * inv).exp();
            value += g;
            slope -= g * (z - mu) / s2;
        }
        (value, if inside { slope } else { 0.0 })
    }

    pub fn stored_profile(&self) -> StoredProfile {
        StoredProfile::sample(&self.interval, |a| self.eval(a))
    }

    /// Regularized least-squares fit of `values` at `abscissae`
    /// (clamped into `interval`).
    pub fn fit_from_pairs(
        abscissae: &[f64],
        values: &[f64],
        interval: RangeInterval,
        cfg: &BasisConfig,
    ) -> Result<RangedFn> {
        if abscissae.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} abscissae but {} values",
                abscissae.len(),
                values.len()
            )));
        }
        if values.iter().chain(abscissae).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite fit data".into()));
        }
        let clamped: Vec<f64> = abscissae.iter().map(|&a| clamp(a, &interval)).collect();
        let mut sorted = clamped.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() < 2 {
            return Err(Error::InvalidInput(
                "need at least two distinct abscissae inside the range".into(),
            ));
        }
        let (centers, width) = centers_for(&interval, cfg)?;
        let n = centers.len();
        let inv = 1.0 / (2.0 * width * width);
        let mid = 0.5 * (interval.lo + interval.hi);
        let scale = 2.0 / interval.width();
        let a = DMatrix::from_fn(clamped.len(), n + 2, |i, k| {
            if k < n {
                let d = clamped[i] - centers[k];
                (-d * d * inv).exp()
            } else if k == n {
                1.0
            } else {
                (clamped[i] - mid) * scale
            }
        });
        let mu = match cfg.ridge {
            Ridge::Auto => 1e-8 * a.columns(0, n).norm_squared() / n as f64,
            Ridge::Fixed(m) => m,
        };
        if !(mu >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "ridge must be non-negative, got {mu}"
            )));
        }
        if mu == 0.0 {
            let col_max = (0..n)
                .map(|k| a.column(k).amax())
                .fold(f64::INFINITY, f64::min);
            if col_max < 1e-12 {
                return Err(Error::RankDeficient(
                    "a Gaussian center has no supporting data".into(),
                ));
            }
        }
        let mut penalty = vec![mu; n + 2];
        penalty[n] = 0.0;
        penalty[n + 1] = 0.0;
        let ls = penalized_least_squares(&a, values, &penalty).ok_or_else(|| {
            Error::RankDeficient(format!(
                "Gaussian design matrix ({} x {}) is numerically rank deficient",
                clamped.len(),
                n + 2
            ))
        })?;
        let mut coeffs = ls.coeffs;
        let trend = [coeffs[n], coeffs[n + 1]];
        coeffs.truncate(n);
        Ok(RangedFn {
            interval,
            centers,
            width,
            coeffs,
            trend,
        })
    }

    /// Moves the basis onto `new_interval`, refitting to the current
    /// function (which is constant outside its old range).
    pub fn refresh_range(&self, new_interval: RangeInterval) -> Result<RangedFn> {
        if new_interval == self.interval {
            return Ok(self.clone());
        }
        let cfg = self.basis_config();
        let samples = new_interval.linspace(4 * cfg.ncenters + 1);
        let values: Vec<f64> = samples.iter().map(|&s| self.eval(s)).collect();
        RangedFn::fit_from_pairs(&samples, &values, new_interval, &cfg)
    }
}
