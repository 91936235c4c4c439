//! The single-current harmonic Bz iteration: from (Bz, recovered J, sigma_b)
//! produce sigma_n by repeatedly solving the conduction problem for u_n,
//! assembling s_n = t_n - t* with
//!
//!   t_n = (sigma_n Lap u_n / |J|^2) J,    t* = ((1/mu0) Lap Bz / |J|^2) perp(J),
//!
//! where sigma_n Lap u_n is always evaluated as -grad u_n . grad sigma_n
//! (first derivatives only), and solving Lap ln sigma_{n+1} = div s_n on the
//! eroded interior with ln sigma_b pinned on its rim. Outside the interior
//! region every iterate equals sigma_b.

use crate::error::{Error, Result};
use crate::fields::{divergence, gaussian_blur, gradient, laplacian, ScalarField, Unit, VectorField2D};
use crate::metrics::{compute_re, estimate_k, fit_theta, grad_ln_sup, ThetaFit};
use crate::pde::{solve_conduction, solve_poisson_dirichlet, MixedBc, PieceBc};
use crate::phantom::BlurSpec;
use crate::recovery::{recover_current, recover_current_from_lap, GeometryBundle, RecoveredCurrent};
use crate::MU_0;

/// ln sigma iterates are clamped to this band; a clamped run is never
/// reported as converged.
pub const LN_SIGMA_CLAMP: f64 = 13.815510557964274; // ln(1e6)

#[derive(Debug, Clone)]
pub struct ReconstructionConfig {
    /// Injected current amplitude I (A).
    pub current: f64,
    /// Known constant background conductivity on the outer band (S/m).
    pub sigma_b: f64,
    /// Erosion margin of the interior region, in pixels.
    pub margin: usize,
    /// Stop when sup |ln(sigma_{n+1}/sigma_n)| falls below this.
    pub epsilon_stop: f64,
    pub max_iters: usize,
    /// |J| floor as a fraction of max |J| over the interior region.
    pub j_floor_rel: f64,
    /// Optional smoothing of Bz before the Laplacian stencil.
    pub bz_presmooth: Option<BlurSpec>,
    /// Admissible-set parameters for the validation report.
    pub eps0: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            current: 0.01,
            sigma_b: 1.0,
            margin: 4,
            epsilon_stop: 1e-8,
            max_iters: 50,
            j_floor_rel: 1e-3,
            bz_presmooth: None,
            eps0: 0.25,
            sigma_lo: 0.05,
            sigma_hi: 20.0,
        }
    }
}

impl ReconstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_b > 0.0) {
            return Err(Error::InvalidConfig("sigma_b must be positive".into()));
        }
        if !(self.epsilon_stop > 0.0) {
            return Err(Error::InvalidConfig("epsilon_stop must be positive".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.sigma_lo <= self.sigma_b && self.sigma_b <= self.sigma_hi) {
            return Err(Error::InvalidConfig(
                "admissible range must bracket sigma_b".into(),
            ));
        }
        if !(self.current > 0.0) {
            return Err(Error::InvalidConfig("current must be positive".into()));
        }
        Ok(())
    }
}

/// Measurement bundle the iteration consumes: Bz, its Laplacian over mu0,
/// the recovered current, and the floored |J|^2.
pub struct BzData {
    pub bz: ScalarField,
    pub lap_bz_over_mu0: ScalarField,
    pub recovered: RecoveredCurrent,
    pub j_sq_floored: Vec<f64>,
    pub j_floor: f64,
}

impl BzData {
    /// Standard path: differentiate the measured Bz by the 5-point stencil.
    pub fn from_measurement(
        bz: &ScalarField,
        cfg: &ReconstructionConfig,
        geom: &GeometryBundle,
    ) -> Result<BzData> {
        let smoothed;
        let bz_for_lap = match cfg.bz_presmooth {
            Some(BlurSpec { nu, window }) => {
                smoothed = gaussian_blur(bz, nu, window)?;
                &smoothed
            }
            None => bz,
        };
        let mut lap = laplacian(bz_for_lap, &geom.mask)?;
        for v in &mut lap.values {
            *v /= MU_0;
        }
        let recovered = recover_current(bz, cfg.current, geom)?;
        Self::assemble(bz.clone(), lap, recovered, cfg, geom)
    }

    /// Debug path: a precomputed (1/mu0) Lap Bz replaces the stencil, both in
    /// t* and in the phi problem, isolating differentiation error.
    pub fn from_analytic_lap(
        bz: &ScalarField,
        lap_bz_over_mu0: &ScalarField,
        cfg: &ReconstructionConfig,
        geom: &GeometryBundle,
    ) -> Result<BzData> {
        let recovered = recover_current_from_lap(lap_bz_over_mu0, cfg.current, geom)?;
        Self::assemble(bz.clone(), lap_bz_over_mu0.clone(), recovered, cfg, geom)
    }

    fn assemble(
        bz: ScalarField,
        lap_bz_over_mu0: ScalarField,
        recovered: RecoveredCurrent,
        cfg: &ReconstructionConfig,
        geom: &GeometryBundle,
    ) -> Result<BzData> {
        let j_max = recovered.j.max_magnitude_on(&geom.interior);
        let floor = cfg.j_floor_rel * j_max;
        let floor_sq = floor * floor;
        let grid = &geom.mask.grid;
        let mut j_sq = vec![f64::NAN; grid.len()];
        for idx in 0..grid.len() {
            if geom.mask.is_inside_idx(idx) {
                j_sq[idx] = recovered.j.magnitude_sq(idx).max(floor_sq);
            }
        }
        Ok(BzData { bz, lap_bz_over_mu0, recovered, j_sq_floored: j_sq, j_floor: floor })
    }
}

/// One iterate of the reconstruction.
pub struct IterationState {
    pub n: usize,
    pub sigma: ScalarField,
    pub u: Option<ScalarField>,
    pub step_norm: f64,
    pub re: Option<f64>,
    pub clamped: bool,
}

/// s_n = t_n - t*, with sigma_n Lap u_n evaluated as -grad u_n . grad sigma_n.
pub fn assemble_s(
    sigma_n: &ScalarField,
    u_n: &ScalarField,
    data: &BzData,
    geom: &GeometryBundle,
) -> Result<VectorField2D> {
    crate::fields::require_same_grid(&sigma_n.grid, &geom.mask.grid)?;
    crate::fields::require_same_grid(&u_n.grid, &geom.mask.grid)?;
    let mask = &geom.mask;
    let gu = gradient(u_n, mask)?;
    let gs = gradient(sigma_n, mask)?;
    let j = &data.recovered.j;
    let mut s = VectorField2D::zeros(&sigma_n.grid, Unit::Dimensionless);
    for idx in 0..sigma_n.grid.len() {
        if !mask.is_inside_idx(idx) {
            s.vx[idx] = f64::NAN;
            s.vy[idx] = f64::NAN;
            continue;
        }
        let sigma_lap_u = -(gu.vx[idx] * gs.vx[idx] + gu.vy[idx] * gs.vy[idx]);
        let inv_jsq = 1.0 / data.j_sq_floored[idx];
        let t_n_x = sigma_lap_u * inv_jsq * j.vx[idx];
        let t_n_y = sigma_lap_u * inv_jsq * j.vy[idx];
        let lap = data.lap_bz_over_mu0.values[idx];
        // perp(J) = (Jy, -Jx)
        let t_star_x = lap * inv_jsq * j.vy[idx];
        let t_star_y = -lap * inv_jsq * j.vx[idx];
        s.vx[idx] = t_n_x - t_star_x;
        s.vy[idx] = t_n_y - t_star_y;
        if !(s.vx[idx].is_finite() && s.vy[idx].is_finite()) {
            return Err(Error::InvalidField(format!(
                "non-finite s at pixel {idx}"
            )));
        }
    }
    Ok(s)
}

fn conduction_bc(current: f64) -> MixedBc {
    MixedBc {
        e_plus: PieceBc::Equipotential { current },
        gamma_plus: PieceBc::insulated(),
        e_minus: PieceBc::Equipotential { current: -current },
        gamma_minus: PieceBc::insulated(),
    }
}

/// One fixed-point step: conduction solve, s assembly, Poisson update of
/// ln sigma on the interior region, sigma_b extension outside it.
pub fn schbz_step(
    state: &IterationState,
    data: &BzData,
    geom: &GeometryBundle,
    cfg: &ReconstructionConfig,
    sigma_star: Option<&ScalarField>,
) -> Result<IterationState> {
    let mask = &geom.mask;
    let u = solve_conduction(
        &state.sigma,
        mask,
        &geom.boundary,
        &conduction_bc(cfg.current),
        cfg.current,
        geom.opts,
    )?;
    let s = assemble_s(&state.sigma, &u, data, geom)?;
    let rhs = divergence(&s, mask)?;
    let ln_b = cfg.sigma_b.ln();
    let boundary_value = ScalarField::constant(&mask.grid, ln_b, Unit::Dimensionless);
    let ln_next = solve_poisson_dirichlet(&rhs, &boundary_value, &geom.interior, geom.opts)?;

    let mut clamped = false;
    let mut sigma = ScalarField::constant(&mask.grid, f64::NAN, Unit::SiemensPerMeter);
    let mut step_norm = 0.0f64;
    for idx in 0..mask.grid.len() {
        if !mask.is_inside_idx(idx) {
            continue;
        }
        let ln_v = if geom.interior.is_inside_idx(idx) {
            let mut v = ln_next.values[idx];
            if v.abs() > LN_SIGMA_CLAMP {
                clamped = true;
                v = v.clamp(-LN_SIGMA_CLAMP, LN_SIGMA_CLAMP);
            }
            v
        } else {
            ln_b
        };
        sigma.values[idx] = ln_v.exp();
        step_norm = step_norm.max((ln_v - state.sigma.values[idx].ln()).abs());
    }
    let re = match sigma_star {
        Some(star) => Some(compute_re(&sigma, star, mask)?),
        None => None,
    };
    Ok(IterationState {
        n: state.n + 1,
        sigma,
        u: Some(u),
        step_norm,
        re,
        clamped: state.clamped || clamped,
    })
}

/// Convergence verdict of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Step norm fell below epsilon_stop at the recorded iteration.
    Converged { at: usize },
    /// Ran to the cap with the tracked series flat at the end.
    Plateaued,
    /// Ran to the cap with the tracked series failing monotone decrease in
    /// at least 30% of the last 20 steps.
    Zigzag,
    /// Ran to the cap without plateau or zigzag signature.
    Cap,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Converged { .. } => "converged",
            Verdict::Plateaued => "plateaued",
            Verdict::Zigzag => "zigzag",
            Verdict::Cap => "cap",
        }
    }
}

fn plateaued(series: &[f64]) -> bool {
    if series.len() < 2 {
        return false;
    }
    let changes = 5.min(series.len() - 1);
    series[series.len() - changes - 1..]
        .windows(2)
        .all(|p| (p[1] - p[0]).abs() / p[0].abs().max(1e-300) < 1e-3)
}

fn zigzag(series: &[f64]) -> bool {
    if series.len() < 2 {
        return false;
    }
    let window = 20.min(series.len() - 1);
    let tail = &series[series.len() - window - 1..];
    let fails = tail
        .windows(2)
        .filter(|p| p[1] >= p[0] * (1.0 - 1e-12))
        .count();
    (fails as f64) >= 0.3 * window as f64
}

/// Full diagnostics of the admissible-set membership of a conductivity.
#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub grad_ln_sup: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// max |sigma - sigma_b| over the outer band.
    pub boundary_band_deviation: f64,
    /// Largest |ln sigma_p - ln sigma_q| over neighbor pairs; a jump
    /// detector for discontinuous targets.
    pub max_neighbor_log_jump: f64,
    pub k_estimate: f64,
    /// eps0 < 1/(4K) with eps0 measured as grad_ln_sup.
    pub contraction_bound_ok: bool,
    pub range_ok: bool,
    pub boundary_band_ok: bool,
}

/// Measure a conductivity against the admissible set: value range, sup of
/// grad ln sigma, equality to sigma_b on the outer band, and the kernel
/// constant K with the bound eps0 < 1/(4K).
pub fn validate_admissible(
    sigma: &ScalarField,
    cfg: &ReconstructionConfig,
    geom: &GeometryBundle,
) -> Result<AdmissibilityReport> {
    let mask = &geom.mask;
    let grad = grad_ln_sup(sigma, mask)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut band_dev = 0.0f64;
    let mut jump = 0.0f64;
    let grid = &mask.grid;
    for idx in 0..grid.len() {
        if !mask.is_inside_idx(idx) {
            continue;
        }
        let v = sigma.values[idx];
        lo = lo.min(v);
        hi = hi.max(v);
        if !geom.interior.is_inside_idx(idx) {
            band_dev = band_dev.max((v - cfg.sigma_b).abs());
        }
        let (ix, iy) = grid.coords(idx);
        if ix + 1 < grid.nx && mask.is_inside(ix + 1, iy) {
            jump = jump.max((v.ln() - sigma.at(ix + 1, iy).ln()).abs());
        }
        if iy + 1 < grid.ny && mask.is_inside(ix, iy + 1) {
            jump = jump.max((v.ln() - sigma.at(ix, iy + 1).ln()).abs());
        }
    }
    let stride = (grid.nx / 32).max(1);
    let k = estimate_k(mask, &geom.interior, stride);
    Ok(AdmissibilityReport {
        grad_ln_sup: grad,
        sigma_min: lo,
        sigma_max: hi,
        boundary_band_deviation: band_dev,
        max_neighbor_log_jump: jump,
        k_estimate: k,
        contraction_bound_ok: grad < 1.0 / (4.0 * k),
        range_ok: lo >= cfg.sigma_lo && hi <= cfg.sigma_hi,
        boundary_band_ok: band_dev <= 1e-9 * cfg.sigma_b,
    })
}

/// Result of a full reconstruction run.
pub struct ReconstructionResult {
    pub sigma: ScalarField,
    pub step_norms: Vec<f64>,
    pub re_series: Vec<f64>,
    pub iterations: usize,
    pub verdict: Verdict,
    pub clamped: bool,
    pub min_j: f64,
    pub j_floor: f64,
    pub theta: Option<ThetaFit>,
}

/// Run the iteration from sigma_0 = sigma_b (or a supplied initial field)
/// until the stop rule or the iteration cap.
pub fn run_schbz(
    cfg: &ReconstructionConfig,
    data: &BzData,
    geom: &GeometryBundle,
    sigma_star: Option<&ScalarField>,
    initial: Option<ScalarField>,
) -> Result<ReconstructionResult> {
    cfg.validate()?;
    let sigma0 = match initial {
        Some(f) => f,
        None => ScalarField::constant(&geom.mask.grid, cfg.sigma_b, Unit::SiemensPerMeter)
            .masked(&geom.mask),
    };
    let mut state = IterationState {
        n: 0,
        sigma: sigma0,
        u: None,
        step_norm: f64::INFINITY,
        re: None,
        clamped: false,
    };
    let mut step_norms = Vec::with_capacity(cfg.max_iters);
    let mut re_series = Vec::with_capacity(cfg.max_iters);
    let mut converged_at = None;
    for _ in 0..cfg.max_iters {
        state = schbz_step(&state, data, geom, cfg, sigma_star)?;
        step_norms.push(state.step_norm);
        if let Some(re) = state.re {
            re_series.push(re);
        }
        if state.step_norm <= cfg.epsilon_stop && !state.clamped {
            converged_at = Some(state.n);
            break;
        }
    }
    let tracked: &[f64] = if re_series.is_empty() { &step_norms } else { &re_series };
    let verdict = if let Some(at) = converged_at {
        Verdict::Converged { at }
    } else if plateaued(tracked) {
        Verdict::Plateaued
    } else if zigzag(tracked) {
        Verdict::Zigzag
    } else {
        Verdict::Cap
    };
    let theta = fit_theta(&step_norms).ok();
    Ok(ReconstructionResult {
        sigma: state.sigma,
        step_norms,
        re_series,
        iterations: state.n,
        verdict,
        clamped: state.clamped,
        min_j: data.recovered.min_j_interior,
        j_floor: data.j_floor,
        theta,
    })
}
