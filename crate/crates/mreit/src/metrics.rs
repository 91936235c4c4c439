//! Convergence metrics and admissibility diagnostics: the relative sup-norm
//! error of ln sigma, the fitted geometric contraction rate of a series, the
//! sup-norm of grad ln sigma, and the kernel constant K of the admissible
//! set.

use crate::error::{Error, Result};
use crate::fields::{gradient, ScalarField};
use crate::geometry::DomainMask;

/// RE(n) = sup |ln sigma_n - ln sigma*| / sup |ln sigma*| over mask pixels.
/// Returns +inf when ln sigma* vanishes identically (sigma* = 1).
pub fn compute_re(
    sigma_n: &ScalarField,
    sigma_star: &ScalarField,
    mask: &DomainMask,
) -> Result<f64> {
    crate::fields::require_same_grid(&sigma_n.grid, &sigma_star.grid)?;
    crate::fields::require_same_grid(&sigma_n.grid, &mask.grid)?;
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for idx in 0..mask.grid.len() {
        if !mask.is_inside_idx(idx) {
            continue;
        }
        let a = sigma_n.values[idx];
        let b = sigma_star.values[idx];
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidField(format!(
                "nonpositive conductivity at pixel {idx}: {a} / {b}"
            )));
        }
        num = num.max((a.ln() - b.ln()).abs());
        den = den.max(b.ln().abs());
    }
    if den == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(num / den)
}

/// Outcome of fitting a geometric rate to a decreasing series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaFit {
    /// exp(slope) of the least-squares line through (n, ln series) over the
    /// pre-plateau window; None when the series does not decrease.
    pub theta: Option<f64>,
    /// Number of points in the fitted window.
    pub window: usize,
}

impl ThetaFit {
    pub fn has_rate(&self) -> bool {
        self.theta.is_some()
    }
}

/// Fit the contraction factor of a positive series: the window runs up to
/// the first plateau point (relative change < 1e-3) and must hold at least
/// 5 points; a non-decreasing trend yields the no-rate flag.
pub fn fit_theta(series: &[f64]) -> Result<ThetaFit> {
    let mut window = series.len();
    for k in 1..series.len() {
        let prev = series[k - 1].abs().max(1e-300);
        if (series[k] - series[k - 1]).abs() / prev < 1e-3 {
            window = k;
            break;
        }
    }
    if window < 5 {
        return Err(Error::SeriesTooShort(window));
    }
    if series[..window].iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidField(
            "rate fit needs positive series values".into(),
        ));
    }
    // Least squares of ln(series) against the index.
    let n = window as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (k, &v) in series[..window].iter().enumerate() {
        let x = k as f64;
        let y = v.ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let theta = slope.exp();
    if theta >= 1.0 {
        return Ok(ThetaFit { theta: None, window });
    }
    Ok(ThetaFit { theta: Some(theta), window })
}

/// sup |grad ln sigma| over mask pixels, by the masked gradient stencils.
pub fn grad_ln_sup(sigma: &ScalarField, mask: &DomainMask) -> Result<f64> {
    let mut ln_sigma = sigma.clone();
    for idx in 0..sigma.grid.len() {
        if mask.is_inside_idx(idx) {
            if !(sigma.values[idx] > 0.0) {
                return Err(Error::InvalidField(format!(
                    "nonpositive conductivity at pixel {idx}"
                )));
            }
            ln_sigma.values[idx] = sigma.values[idx].ln();
        } else {
            ln_sigma.values[idx] = f64::NAN;
        }
    }
    let g = gradient(&ln_sigma, mask)?;
    Ok(g.max_magnitude_on(mask))
}

/// The kernel constant K = sup over domain pixels of the integral of
/// |grad Psi| = 1/(2 pi |r' - r|) over the interior region, by direct
/// summation with the singular cell replaced by its analytic cell average
/// (4 h ln(1 + sqrt 2) / (2 pi) for a square cell of side h).
///
/// `stride` subsamples the sup candidates (the integral varies smoothly
/// with r); 1 evaluates every pixel.
pub fn estimate_k(mask: &DomainMask, interior: &DomainMask, stride: usize) -> f64 {
    let grid = &mask.grid;
    let hx = grid.h_x();
    let hy = grid.h_y();
    let two_pi = 2.0 * std::f64::consts::PI;
    let cell = hx * hy / two_pi;
    let h = hx.min(hy);
    let singular = 4.0 * h * (1.0 + 2.0f64.sqrt()).ln() / two_pi;
    let sources: Vec<(f64, f64)> = (0..grid.len())
        .filter(|&i| interior.is_inside_idx(i))
        .map(|i| grid.pos(i))
        .collect();
    let stride = stride.max(1);
    let mut best = 0.0f64;
    for iy in (0..grid.ny).step_by(stride) {
        for ix in (0..grid.nx).step_by(stride) {
            let idx = grid.idx(ix, iy);
            if !mask.is_inside_idx(idx) {
                continue;
            }
            let (x, y) = grid.pos(idx);
            let mut total = 0.0;
            for &(xs, ys) in &sources {
                let r = (x - xs).hypot(y - ys);
                if r == 0.0 {
                    total += singular;
                } else {
                    total += cell / r;
                }
            }
            best = best.max(total);
        }
    }
    best
}
