//! Discrete norms. Lebesgue norms are node quadratures with weight h^d;
//! Sobolev H^{+-1} norms are Fourier multipliers (1 + |xi|^2)^{+-1/2} under
//! the same Parseval normalization, so || . ||_{H^-1} <= || . ||_{L^2} <=
//! || . ||_{H^1} holds exactly. Space-time (Bochner) norms compose a spatial
//! norm per slice with a trapezoid rule in time.
//!
//! The H^-1 norm here is dual to the full periodic H^1, not to H^1_0 on a
//! subdomain. For fields concentrated well inside the box the two versions
//! differ only by fixed constants, and the periodic one is exactly
//! computable, which is what ladder ratios need.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::fft;
use crate::field::ScalarField;

/// L^p norm over the box; `p` may be any real >= 1 or `f64::INFINITY`.
pub fn lp_norm(f: &ScalarField, p: f64) -> Result<f64, CoreError> {
    if p.is_nan() || p < 1.0 {
        return Err(CoreError::BadExponent { p });
    }
    if p == f64::INFINITY {
        return Ok(f.max_abs());
    }
    let vol = f.grid().cell_volume();
    if p == 2.0 {
        let s: f64 = f.values().iter().map(|v| v * v).sum();
        return Ok(libm::sqrt(s * vol));
    }
    if p == 1.0 {
        let s: f64 = f.values().iter().map(|v| v.abs()).sum();
        return Ok(s * vol);
    }
    let s: f64 = f.values().iter().map(|v| libm::pow(v.abs(), p)).sum();
    Ok(libm::pow(s * vol, 1.0 / p))
}

fn sobolev_norm(f: &ScalarField, order: i32) -> f64 {
    let grid = f.grid();
    let nn = grid.num_nodes() as f64;
    let spec = fft::forward(f);
    let scale = libm::pow(grid.length(), grid.dim() as f64) / (nn * nn);
    let n = grid.n();
    let mut acc = 0.0;
    for (idx, c) in spec.iter().enumerate() {
        let mut xi2 = 0.0;
        let mut rem = idx;
        for _ax in 0..grid.dim() {
            let m = rem % n;
            rem /= n;
            let xi = fft::norm_wavenumber(grid, m);
            xi2 += xi * xi;
        }
        let mult = match order {
            0 => 1.0,
            1 => 1.0 + xi2,
            -1 => 1.0 / (1.0 + xi2),
            _ => unreachable!("only orders -1, 0, 1 are provided"),
        };
        acc += mult * c.norm_sqr();
    }
    libm::sqrt(acc * scale)
}

/// H^1 norm via the multiplier (1 + |xi|^2)^{1/2}.
pub fn h1_norm(f: &ScalarField) -> f64 {
    sobolev_norm(f, 1)
}

/// H^-1 norm via the multiplier (1 + |xi|^2)^{-1/2}.
pub fn h_minus1_norm(f: &ScalarField) -> f64 {
    sobolev_norm(f, -1)
}

/// L^2 norm evaluated spectrally (equals [`lp_norm`] at p = 2 by Parseval).
pub fn l2_norm_spectral(f: &ScalarField) -> f64 {
    sobolev_norm(f, 0)
}

/// Sobolev index selector for space-time norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpatialNorm {
    Lp(f64),
    H1,
    HMinus1,
}

impl SpatialNorm {
    pub fn eval(&self, f: &ScalarField) -> Result<f64, CoreError> {
        match self {
            SpatialNorm::Lp(p) => lp_norm(f, *p),
            SpatialNorm::H1 => Ok(h1_norm(f)),
            SpatialNorm::HMinus1 => Ok(h_minus1_norm(f)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SpatialNorm::Lp(p) if *p == f64::INFINITY => String::from("Linf"),
            SpatialNorm::Lp(p) => alloc::format!("L{p}"),
            SpatialNorm::H1 => String::from("H1"),
            SpatialNorm::HMinus1 => String::from("H-1"),
        }
    }
}

/// Compose per-slice spatial norms over [0, T]: trapezoid of value^r, then
/// the 1/r power; r = infinity takes the maximum. A single slice returns its
/// own value (no time extent to integrate).
pub fn bochner_norm(slice_norms: &[f64], horizon: f64, r: f64) -> Result<f64, CoreError> {
    if slice_norms.is_empty() {
        return Err(CoreError::BadReport {
            msg: "no slices in space-time norm",
        });
    }
    if r.is_nan() || r < 1.0 {
        return Err(CoreError::BadExponent { p: r });
    }
    if slice_norms.len() == 1 {
        return Ok(slice_norms[0]);
    }
    if r == f64::INFINITY {
        return Ok(slice_norms.iter().fold(0.0f64, |m, v| m.max(*v)));
    }
    let dt = horizon / (slice_norms.len() - 1) as f64;
    let mut acc = 0.0;
    for (k, v) in slice_norms.iter().enumerate() {
        let w = if k == 0 || k == slice_norms.len() - 1 {
            0.5
        } else {
            1.0
        };
        acc += w * libm::pow(v.abs(), r);
    }
    Ok(libm::pow(acc * dt, 1.0 / r))
}

/// A norm measured along a ladder of scales (mollification widths, grid
/// spacings, ...). Abscissae must be strictly decreasing and positive;
/// values must be finite and nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub label: String,
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
}

impl NormReport {
    pub fn new(label: String, abscissae: Vec<f64>, values: Vec<f64>) -> Result<Self, CoreError> {
        if abscissae.len() != values.len() {
            return Err(CoreError::BadReport {
                msg: "abscissae and values differ in length",
            });
        }
        if abscissae.is_empty() {
            return Err(CoreError::BadReport { msg: "empty ladder" });
        }
        for w in abscissae.windows(2) {
            if !(w[1] < w[0]) {
                return Err(CoreError::BadReport {
                    msg: "abscissae not strictly decreasing",
                });
            }
        }
        if abscissae.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return Err(CoreError::BadReport {
                msg: "abscissae must be positive and finite",
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(CoreError::BadReport {
                msg: "values must be nonnegative and finite",
            });
        }
        Ok(NormReport {
            label,
            abscissae,
            values,
        })
    }

    pub fn fit(&self) -> Result<RateFit, CoreError> {
        rate_fit(&self.abscissae, &self.values)
    }
}

/// Least-squares slope of log(value) against log(abscissa).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    /// Convergence order: value ~ C * abscissa^rate.
    pub rate: f64,
    /// log of the fitted constant C.
    pub intercept: f64,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

/// Values at or below this are treated as exact zeros (no finite rate).
pub const RATE_FLOOR: f64 = 1e-280;

pub fn rate_fit(abscissae: &[f64], values: &[f64]) -> Result<RateFit, CoreError> {
    if abscissae.len() < 3 || values.len() < 3 {
        return Err(CoreError::TooFewPoints {
            got: abscissae.len().min(values.len()),
        });
    }
    if abscissae.len() != values.len() {
        return Err(CoreError::BadReport {
            msg: "abscissae and values differ in length",
        });
    }
    if values.iter().any(|v| *v <= RATE_FLOOR) {
        // Machine-zero data: the quantity vanished outright, which we report
        // as an infinite order rather than fitting noise.
        return Ok(RateFit {
            rate: f64::INFINITY,
            intercept: f64::NEG_INFINITY,
            residual: 0.0,
        });
    }
    let n = abscissae.len() as f64;
    let xs: Vec<f64> = abscissae.iter().map(|a| libm::log(*a)).collect();
    let ys: Vec<f64> = values.iter().map(|v| libm::log(*v)).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
    }
    let rate = sxy / sxx;
    let intercept = ym - rate * xm;
    let mut ss = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let r = y - (intercept + rate * x);
        ss += r * r;
    }
    Ok(RateFit {
        rate,
        intercept,
        residual: libm::sqrt(ss / n),
    })
}
