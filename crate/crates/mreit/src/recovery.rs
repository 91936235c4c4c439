//! Recovery of the internal current density directly from Bz, without the
//! conductivity: J = perp-grad(phi - (I/2) psi) with phi solving
//! Lap phi = (1/mu0) Lap Bz (insulated electrodes, grounded arcs) and psi the
//! geometry-only potential with psi = +-1 on the arcs.

use crate::error::Result;
use crate::fields::{gradient, laplacian, ScalarField, Unit, VectorField2D};
use crate::geometry::{shrink_interior, BoundarySpec, DomainMask};
use crate::pde::{solve_phi, solve_psi, SolverOptions};
use crate::MU_0;

/// Geometry-derived context shared by recovery and reconstruction: the
/// domain, its boundary partition, the eroded interior region, and the
/// cached psi solve (data-independent, solved once per geometry).
pub struct GeometryBundle {
    pub mask: DomainMask,
    pub boundary: BoundarySpec,
    pub interior: DomainMask,
    pub margin: usize,
    pub psi: ScalarField,
    pub opts: SolverOptions,
}

impl GeometryBundle {
    pub fn new(
        mask: DomainMask,
        boundary: BoundarySpec,
        margin: usize,
        opts: SolverOptions,
    ) -> Result<Self> {
        let interior = shrink_interior(&mask, margin)?;
        let psi = solve_psi(&mask, &boundary, opts)?;
        Ok(Self { mask, boundary, interior, margin, psi, opts })
    }
}

/// Current density recovered from Bz with its auxiliary potentials and the
/// diagnostic line integrals of the scaling argument.
pub struct RecoveredCurrent {
    pub j: VectorField2D,
    pub phi: ScalarField,
    pub beta: f64,
    /// Endpoint-difference line integral of perp-grad phi over E+ (near 0).
    pub phi_line_integral: f64,
    /// Endpoint-difference line integral of perp-grad psi over E+ (near -2).
    pub psi_line_integral: f64,
    /// Same integrals read from the last electrode pixels instead of the
    /// junction values; looser (the trace converges like sqrt(h) at the
    /// electrode-arc corners) but independent of the pinned data.
    pub phi_line_integral_trace: f64,
    pub psi_line_integral_trace: f64,
    /// min |J| over the eroded interior region.
    pub min_j_interior: f64,
}

/// Tangential line integrals of perp-grad phi and perp-grad psi over E+ by
/// the endpoint differences of the boundary trace: the tangential derivative
/// telescopes, so the integral is the difference of the trace at the two
/// electrode-arc junctions, where the trace takes the pinned arc values.
/// E+ is traversed from its Gamma+ junction to its Gamma- junction, the
/// parameterization under which the psi integral is -2.
///
/// Returns ((phi_junction, psi_junction), (phi_trace, psi_trace)); the
/// second pair reads the outermost electrode pixels instead of the pinned
/// junction values.
pub fn check_beta(
    phi: &ScalarField,
    psi: &ScalarField,
    mask: &DomainMask,
    boundary: &BoundarySpec,
) -> ((f64, f64), (f64, f64)) {
    let n = boundary.loop_len;
    let e = &boundary.e_plus;
    // ccw order: ... Gamma- | E+ | Gamma+ ...; start of E+ touches Gamma-,
    // end of E+ touches Gamma+.
    let first = mask.boundary_loop[e.start];
    let last = mask.boundary_loop[(e.start + e.len - 1) % n];
    let before = mask.boundary_loop[(e.start + n - 1) % n]; // Gamma- pixel
    let after = mask.boundary_loop[(e.start + e.len) % n]; // Gamma+ pixel
    let junction = (
        phi.values[before] - phi.values[after],
        psi.values[before] - psi.values[after],
    );
    let trace = (
        phi.values[first] - phi.values[last],
        psi.values[first] - psi.values[last],
    );
    (junction, trace)
}

/// Recover J from a measured Bz: differentiate by the 5-point stencil, solve
/// the phi problem, combine with the cached psi. The conductivity is never
/// an input.
pub fn recover_current(
    bz: &ScalarField,
    current: f64,
    geom: &GeometryBundle,
) -> Result<RecoveredCurrent> {
    let mut lap = laplacian(bz, &geom.mask)?;
    for v in &mut lap.values {
        *v /= MU_0;
    }
    recover_current_from_lap(&lap, current, geom)
}

/// Same as [`recover_current`] but from a precomputed (1/mu0) Lap Bz field,
/// e.g. the analytic identity of the forward module, isolating the error of
/// numerically differentiating Bz.
pub fn recover_current_from_lap(
    lap_bz_over_mu0: &ScalarField,
    current: f64,
    geom: &GeometryBundle,
) -> Result<RecoveredCurrent> {
    let phi = solve_phi(lap_bz_over_mu0, &geom.mask, &geom.boundary, geom.opts)?;
    let beta = -current / 2.0;
    let mut chi = ScalarField::zeros(&phi.grid, Unit::Dimensionless);
    for idx in 0..phi.grid.len() {
        chi.values[idx] = if geom.mask.is_inside_idx(idx) {
            phi.values[idx] + beta * geom.psi.values[idx]
        } else {
            f64::NAN
        };
    }
    let mut j = gradient(&chi, &geom.mask)?.perp();
    j.unit = Unit::AmperePerSquareMeter;
    let ((phi_int, psi_int), (phi_tr, psi_tr)) =
        check_beta(&phi, &geom.psi, &geom.mask, &geom.boundary);
    let min_j = j.min_magnitude_on(&geom.interior);
    Ok(RecoveredCurrent {
        j,
        phi,
        beta,
        phi_line_integral: phi_int,
        psi_line_integral: psi_int,
        phi_line_integral_trace: phi_tr,
        psi_line_integral_trace: psi_tr,
        min_j_interior: min_j,
    })
}
