//! Synthetic measurement data: current density J = -sigma grad u and the
//! magnetic flux density Bz through the in-plane reduction of the
//! Biot-Savart law,
//!
//!   Bz(r) = (mu0 / 2 pi) Int [ (y-y') Jx(r') - (x-x') Jy(r') ] / |r-r'|^2 dr',
//!
//! the z-component of (mu0/4 pi) J x d / |d|^3 integrated along the cylinder
//! axis. This orientation makes grad Bz = -mu0 perp(J) hold, which the
//! current recovery depends on. It is evaluated on the pixel grid either by
//! direct summation (the oracle) or by zero-padded FFT convolution with
//! identical discretization: kernels Kx = x/|r|^2, Ky = y/|r|^2 sampled at
//! pixel offsets, singular cell set to zero (odd kernels average to zero
//! over a centered cell).

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::fields::{gradient, ScalarField, Unit, VectorField2D};
use crate::geometry::{BoundarySpec, DomainMask};
use crate::pde::{solve_conduction, MixedBc, PieceBc, SolverOptions};
use crate::MU_0;

/// Everything the forward model produces for one injected current.
pub struct ForwardSolution {
    pub u: ScalarField,
    pub j: VectorField2D,
    pub bz: ScalarField,
    pub current: f64,
}

/// Ohm's law on the mask: J = -sigma grad u.
pub fn compute_j(sigma: &ScalarField, u: &ScalarField, mask: &DomainMask) -> Result<VectorField2D> {
    crate::fields::require_same_grid(&sigma.grid, &u.grid)?;
    let mut j = gradient(u, mask)?;
    for idx in 0..mask.grid.len() {
        if mask.is_inside_idx(idx) {
            j.vx[idx] *= -sigma.values[idx];
            j.vy[idx] *= -sigma.values[idx];
        }
    }
    j.unit = Unit::AmperePerSquareMeter;
    Ok(j)
}

fn check_j(j: &VectorField2D, mask: &DomainMask) -> Result<()> {
    crate::fields::require_same_grid(&j.grid, &mask.grid)?;
    for idx in 0..mask.grid.len() {
        if mask.is_inside_idx(idx) && !(j.vx[idx].is_finite() && j.vy[idx].is_finite()) {
            return Err(Error::InvalidField(format!(
                "current density not finite at mask pixel {idx}"
            )));
        }
    }
    Ok(())
}

/// Direct O(N^2) Biot-Savart summation over mask pixels; the oracle the FFT
/// path is checked against.
pub fn bz_direct(j: &VectorField2D, mask: &DomainMask) -> Result<ScalarField> {
    check_j(j, mask)?;
    let grid = &j.grid;
    let hx = grid.h_x();
    let hy = grid.h_y();
    let scale = MU_0 / (2.0 * std::f64::consts::PI) * hx * hy;
    let sources: Vec<(f64, f64, f64, f64)> = (0..grid.len())
        .filter(|&idx| mask.is_inside_idx(idx))
        .map(|idx| {
            let (x, y) = grid.pos(idx);
            (x, y, j.vx[idx], j.vy[idx])
        })
        .collect();
    let mut bz = ScalarField::zeros(grid, Unit::Tesla);
    for idx in 0..grid.len() {
        let (x, y) = grid.pos(idx);
        let mut acc = 0.0;
        for &(xs, ys, jx, jy) in &sources {
            let dx = x - xs;
            let dy = y - ys;
            let r2 = dx * dx + dy * dy;
            if r2 == 0.0 {
                continue; // singular cell: odd kernel averages to zero
            }
            acc += (dy * jx - dx * jy) / r2;
        }
        bz.values[idx] = scale * acc;
    }
    Ok(bz)
}

fn fft_2d(data: &mut [Complex<f64>], mx: usize, my: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft_x = if inverse {
        planner.plan_fft_inverse(mx)
    } else {
        planner.plan_fft_forward(mx)
    };
    for row in data.chunks_exact_mut(mx) {
        fft_x.process(row);
    }
    let fft_y = if inverse {
        planner.plan_fft_inverse(my)
    } else {
        planner.plan_fft_forward(my)
    };
    let mut col = vec![Complex::new(0.0, 0.0); my];
    for cx in 0..mx {
        for (cy, v) in col.iter_mut().enumerate() {
            *v = data[cy * mx + cx];
        }
        fft_y.process(&mut col);
        for (cy, v) in col.iter().enumerate() {
            data[cy * mx + cx] = *v;
        }
    }
}

/// Zero-padded FFT evaluation of the same quadrature as [`bz_direct`]:
/// padding to at least twice the grid in each dimension makes the circular
/// convolution equal to the linear one, so the two paths agree to rounding.
pub fn bz_fft(j: &VectorField2D, mask: &DomainMask) -> Result<ScalarField> {
    check_j(j, mask)?;
    let grid = &j.grid;
    let nx = grid.nx;
    let ny = grid.ny;
    let mx = (2 * nx).next_power_of_two();
    let my = (2 * ny).next_power_of_two();
    let hx = grid.h_x();
    let hy = grid.h_y();

    // Jy and Jx transformed separately.
    let mut src_y = vec![Complex::new(0.0, 0.0); mx * my];
    let mut src_x = vec![Complex::new(0.0, 0.0); mx * my];
    for iy in 0..ny {
        for ix in 0..nx {
            let idx = grid.idx(ix, iy);
            if mask.is_inside_idx(idx) {
                src_y[iy * mx + ix] = Complex::new(j.vy[idx], 0.0);
                src_x[iy * mx + ix] = Complex::new(j.vx[idx], 0.0);
            }
        }
    }

    // Kernels at pixel offsets, wrapped periodically.
    let mut kx = vec![Complex::new(0.0, 0.0); mx * my];
    let mut ky = vec![Complex::new(0.0, 0.0); mx * my];
    for dy in -(ny as i64 - 1)..=(ny as i64 - 1) {
        for dx in -(nx as i64 - 1)..=(nx as i64 - 1) {
            if dx == 0 && dy == 0 {
                continue;
            }
            let px = dx as f64 * hx;
            let py = dy as f64 * hy;
            let r2 = px * px + py * py;
            let wx = dx.rem_euclid(mx as i64) as usize;
            let wy = dy.rem_euclid(my as i64) as usize;
            kx[wy * mx + wx] = Complex::new(px / r2, 0.0);
            ky[wy * mx + wx] = Complex::new(py / r2, 0.0);
        }
    }

    fft_2d(&mut src_y, mx, my, false);
    fft_2d(&mut src_x, mx, my, false);
    fft_2d(&mut kx, mx, my, false);
    fft_2d(&mut ky, mx, my, false);
    let mut acc = vec![Complex::new(0.0, 0.0); mx * my];
    for i in 0..mx * my {
        acc[i] = ky[i] * src_x[i] - kx[i] * src_y[i];
    }
    fft_2d(&mut acc, mx, my, true);

    let scale = MU_0 / (2.0 * std::f64::consts::PI) * hx * hy / (mx as f64 * my as f64);
    let mut bz = ScalarField::zeros(grid, Unit::Tesla);
    for iy in 0..ny {
        for ix in 0..nx {
            bz.values[grid.idx(ix, iy)] = scale * acc[iy * mx + ix].re;
        }
    }
    Ok(bz)
}

/// Add the harmonic polynomial a + b x + c y to Bz (a stray-field model).
pub fn add_stray_field(bz: &ScalarField, coeffs: (f64, f64, f64)) -> ScalarField {
    let (a, b, c) = coeffs;
    let mut out = bz.clone();
    for idx in 0..bz.grid.len() {
        let (x, y) = bz.grid.pos(idx);
        out.values[idx] += a + b * x + c * y;
    }
    out
}

/// The right-hand side of the hyperbolic relation evaluated from the solved
/// potential by the discrete operators: (1/mu0) Lap Bz = d/dx (sigma u_y)
/// - d/dy (sigma u_x). Used to isolate the error of differentiating the
/// quadrature Bz.
pub fn lap_bz_over_mu0_from_solution(
    sigma: &ScalarField,
    u: &ScalarField,
    mask: &DomainMask,
) -> Result<ScalarField> {
    let g = gradient(u, mask)?;
    let mut sy = ScalarField::zeros(&u.grid, Unit::Dimensionless);
    let mut sx = ScalarField::zeros(&u.grid, Unit::Dimensionless);
    for idx in 0..u.grid.len() {
        if mask.is_inside_idx(idx) {
            sy.values[idx] = sigma.values[idx] * g.vy[idx];
            sx.values[idx] = sigma.values[idx] * g.vx[idx];
        } else {
            sy.values[idx] = f64::NAN;
            sx.values[idx] = f64::NAN;
        }
    }
    let d1 = gradient(&sy, mask)?;
    let d2 = gradient(&sx, mask)?;
    let mut out = ScalarField::zeros(&u.grid, Unit::Dimensionless);
    for idx in 0..u.grid.len() {
        out.values[idx] = if mask.is_inside_idx(idx) {
            d1.vx[idx] - d2.vy[idx]
        } else {
            f64::NAN
        };
    }
    Ok(out)
}

/// Run the forward model: conduction solve, Ohm's law, Biot-Savart.
pub fn forward_solve(
    sigma: &ScalarField,
    mask: &DomainMask,
    boundary: &BoundarySpec,
    current: f64,
    opts: SolverOptions,
) -> Result<ForwardSolution> {
    let bc = MixedBc {
        e_plus: PieceBc::Equipotential { current },
        gamma_plus: PieceBc::insulated(),
        e_minus: PieceBc::Equipotential { current: -current },
        gamma_minus: PieceBc::insulated(),
    };
    let u = solve_conduction(sigma, mask, boundary, &bc, current, opts)?;
    let j = compute_j(sigma, &u, mask)?;
    let bz = bz_fft(&j, mask)?;
    Ok(ForwardSolution { u, j, bz, current })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{divergence, laplacian};
    use crate::geometry::{
        build_domain, build_grid, place_electrodes, shrink_interior, DomainShape, ElectrodeSpec,
    };
    use crate::phantom::{apply_blur, toy_sigma, BlurSpec, PhantomKind, PhantomSpec};

    fn toy_setup(n: usize) -> (DomainMask, BoundarySpec) {
        let g = build_grid(n, n, 2.0, 2.0, (-1.0, -1.0)).unwrap();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        let b = place_electrodes(
            &m,
            &ElectrodeSpec::Boxes {
                e_plus: ((0.99, 1.01), (-0.15, 0.15)),
                e_minus: ((-1.01, -0.99), (-0.15, 0.15)),
            },
        )
        .unwrap();
        (m, b)
    }

    fn blurred_toy(grid: &crate::geometry::Grid2D) -> ScalarField {
        let raw = toy_sigma(grid).unwrap();
        let spec = PhantomSpec {
            kind: PhantomKind::ToyLens,
            blur: Some(BlurSpec { nu: 5.0, window: 7 }),
            sigma_b: 1.0,
        };
        apply_blur(&spec, &raw).unwrap()
    }

    #[test]
    fn ohms_law_trivial_and_analytic() {
        let (m, _) = toy_setup(32);
        let sigma = ScalarField::constant(&m.grid, 1.0, Unit::SiemensPerMeter);
        let u = ScalarField::from_fn(&m.grid, Unit::Volt, |x, _| -x);
        let j = compute_j(&sigma, &u, &m).unwrap();
        for idx in 0..m.grid.len() {
            assert!((j.vx[idx] - 1.0).abs() < 1e-12);
            assert!(j.vy[idx].abs() < 1e-12);
        }
        // sigma = e^x, u = e^-x: J = (1, 0) up to the sinh(h)/h factor of the
        // central difference.
        let sigma = ScalarField::from_fn(&m.grid, Unit::SiemensPerMeter, |x, _| x.exp());
        let u = ScalarField::from_fn(&m.grid, Unit::Volt, |x, _| (-x).exp());
        let j = compute_j(&sigma, &u, &m).unwrap();
        let h = m.grid.h_x();
        let tol = 0.2 * h * h;
        for idx in 0..m.grid.len() {
            if m.is_deep_idx(idx) {
                assert!((j.vx[idx] - 1.0).abs() < tol, "jx {}", j.vx[idx]);
                assert!(j.vy[idx].abs() < tol);
            }
        }
    }

    #[test]
    fn bz_zero_for_zero_current() {
        let (m, _) = toy_setup(16);
        let j = VectorField2D::zeros(&m.grid, Unit::AmperePerSquareMeter);
        let bz = bz_direct(&j, &m).unwrap();
        assert!(bz.values.iter().all(|&v| v == 0.0));
        let bzf = bz_fft(&j, &m).unwrap();
        assert!(bzf.values.iter().all(|&v| v.abs() < 1e-30));
    }

    #[test]
    fn single_pixel_source_matches_closed_form() {
        let g = build_grid(33, 33, 2.0, 2.0, (-1.0, -1.0)).unwrap();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        let mut j = VectorField2D::zeros(&g, Unit::AmperePerSquareMeter);
        let a = 2.5;
        j.vy[g.idx(16, 16)] = a; // source at the origin
        let bz = bz_direct(&j, &m).unwrap();
        let h = g.h_x();
        let scale = MU_0 / (2.0 * std::f64::consts::PI) * h * h * a;
        for (ix, iy) in [(26, 16), (16, 26), (4, 9), (30, 2)] {
            let (x, y) = g.pos(g.idx(ix, iy));
            let expect = -scale * x / (x * x + y * y);
            let got = bz.values[g.idx(ix, iy)];
            assert!(
                (got - expect).abs() <= 1e-12 * scale.abs().max(expect.abs()),
                "at ({ix},{iy}): {got} vs {expect}"
            );
        }
        // Mirror parity: x -> -x flips the sign pattern.
        for (ix, iy) in [(26, 16), (20, 5)] {
            let got = bz.values[g.idx(ix, iy)];
            let mirrored = bz.values[g.idx(32 - ix, iy)];
            assert!((got + mirrored).abs() < 1e-15);
        }
    }

    #[test]
    fn fft_matches_direct_oracle() {
        let (m, b) = toy_setup(48);
        let sigma = toy_sigma(&m.grid).unwrap();
        let fs = forward_solve(&sigma, &m, &b, 0.01, SolverOptions::default()).unwrap();
        let direct = bz_direct(&fs.j, &m).unwrap();
        let sup = direct.max_abs_on(&m);
        let mut worst = 0.0f64;
        for idx in 0..m.grid.len() {
            worst = worst.max((fs.bz.values[idx] - direct.values[idx]).abs());
        }
        assert!(worst / sup <= 1e-10, "fft vs direct rel sup {:.3e}", worst / sup);
    }

    #[test]
    fn bz_linear_in_current() {
        let (m, b) = toy_setup(32);
        let sigma = ScalarField::constant(&m.grid, 1.0, Unit::SiemensPerMeter);
        let f1 = forward_solve(&sigma, &m, &b, 0.01, SolverOptions::default()).unwrap();
        let f2 = forward_solve(&sigma, &m, &b, 0.02, SolverOptions::default()).unwrap();
        let sup = f1.bz.max_abs_on(&m);
        for idx in 0..m.grid.len() {
            assert!(
                (f2.bz.values[idx] - 2.0 * f1.bz.values[idx]).abs() < 1e-8 * sup,
                "linearity defect at {idx}"
            );
        }
    }

    #[test]
    fn stray_field_identity_and_laplacian_immunity() {
        let (m, b) = toy_setup(32);
        let sigma = ScalarField::constant(&m.grid, 1.0, Unit::SiemensPerMeter);
        let fs = forward_solve(&sigma, &m, &b, 0.01, SolverOptions::default()).unwrap();
        let same = add_stray_field(&fs.bz, (0.0, 0.0, 0.0));
        assert_eq!(same.values, fs.bz.values);
        let contaminated = add_stray_field(&fs.bz, (1e-8, 3e-9, -2e-9));
        let l0 = laplacian(&fs.bz, &m).unwrap();
        let l1 = laplacian(&contaminated, &m).unwrap();
        // The affine part is annihilated up to rounding of the contaminated
        // sums: tolerance is the stray scale times machine epsilon over h^2.
        let h2 = m.grid.h_x() * m.grid.h_x();
        let tol = 1e-8 * 64.0 * f64::EPSILON / h2;
        for idx in 0..m.grid.len() {
            assert!(
                (l1.values[idx] - l0.values[idx]).abs() <= tol,
                "laplacian drift {:.3e} at {idx}",
                (l1.values[idx] - l0.values[idx]).abs()
            );
        }
    }

    #[test]
    fn forward_divergence_of_j_is_small() {
        let (m, b) = toy_setup(64);
        let smooth = blurred_toy(&m.grid);
        let fs = forward_solve(&smooth, &m, &b, 0.01, SolverOptions::default()).unwrap();
        let div = divergence(&fs.j, &m).unwrap();
        let interior = shrink_interior(&m, 4).unwrap();
        let jmax = fs.j.max_magnitude_on(&m);
        let mut worst = 0.0f64;
        for idx in 0..m.grid.len() {
            if interior.is_inside_idx(idx) {
                worst = worst.max(div.values[idx].abs());
            }
        }
        // O(h) of the local flux scale; 0.3 is the electrode length setting
        // the smallest feature of the uniform-background current pattern.
        assert!(
            worst <= 0.5 * jmax / 0.3,
            "div J sup {worst:.3e} vs J max {jmax:.3e}"
        );
    }

    #[test]
    fn laplacian_of_bz_matches_analytic_identity() {
        let (m, b) = toy_setup(128);
        let smooth = blurred_toy(&m.grid);
        let fs = forward_solve(&smooth, &m, &b, 0.01, SolverOptions::default()).unwrap();
        let lap = laplacian(&fs.bz, &m).unwrap();
        let analytic = lap_bz_over_mu0_from_solution(&smooth, &fs.u, &m).unwrap();
        let interior = shrink_interior(&m, 4).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for idx in 0..m.grid.len() {
            if interior.is_inside_idx(idx) {
                let d = lap.values[idx] / MU_0 - analytic.values[idx];
                num += d * d;
                den += analytic.values[idx] * analytic.values[idx];
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 0.05, "rel L2 of Lap Bz identity: {rel:.4}");
    }
}
