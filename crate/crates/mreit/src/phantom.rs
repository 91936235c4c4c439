//! Target conductivity phantoms and their blurred variants.

use crate::error::{Error, Result};
use crate::fields::{gaussian_blur, ScalarField, Unit};
use crate::geometry::Grid2D;

/// Blur settings in pixel units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlurSpec {
    pub nu: f64,
    pub window: usize,
}

/// Declarative phantom description.
#[derive(Debug, Clone)]
pub enum PhantomKind {
    ToyLens,
    SheppLogan {
        /// Physical radius the unit phantom circle is scaled to.
        scale: f64,
        /// Affine map of phantom intensity [0, 1] to conductivity (S/m).
        sigma_range: (f64, f64),
    },
    /// Grayscale raster mapped by gray/255 + 1; must match grid dimensions.
    Image { gray: Vec<u8> },
}

#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub blur: Option<BlurSpec>,
    pub sigma_b: f64,
}

/// Toy lens conductivity on a grid covering [-1,1]^2, exactly as printed:
/// sigma = 1 + (cos r - sqrt(3)/2)/2 + 1 inside radius pi/8, 1 otherwise.
/// The expression is discontinuous at r = pi/8 (inner limit ~ 2.0289); the
/// jump is reported by diagnostics, not smoothed away here.
pub fn toy_sigma(grid: &Grid2D) -> Result<ScalarField> {
    let x_hi = grid.origin.0 + grid.fov_x;
    let y_hi = grid.origin.1 + grid.fov_y;
    if grid.origin.0 > -1.0 + 1e-12
        || grid.origin.1 > -1.0 + 1e-12
        || x_hi < 1.0 - 1e-12
        || y_hi < 1.0 - 1e-12
    {
        return Err(Error::GridMismatch(
            "toy phantom needs a grid covering [-1,1]^2".into(),
        ));
    }
    let r_lens = std::f64::consts::PI / 8.0;
    Ok(ScalarField::from_fn(grid, Unit::SiemensPerMeter, |x, y| {
        let r = (x * x + y * y).sqrt();
        if r <= r_lens {
            1.0 + 0.5 * (r.cos() - 3.0f64.sqrt() / 2.0) + 1.0
        } else {
            1.0
        }
    }))
}

/// Ellipse table of the modified Shepp-Logan phantom:
/// (intensity delta, semi-axis a, semi-axis b, x0, y0, rotation degrees).
const SHEPP_LOGAN_MODIFIED: [(f64, f64, f64, f64, f64, f64); 10] = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
];

/// Modified Shepp-Logan intensity at phantom coordinates (unit circle frame).
pub fn shepp_logan_intensity(px: f64, py: f64) -> f64 {
    let mut v = 0.0;
    for &(a, sa, sb, x0, y0, deg) in &SHEPP_LOGAN_MODIFIED {
        let phi = deg.to_radians();
        let (s, c) = phi.sin_cos();
        let dx = px - x0;
        let dy = py - y0;
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        if (xr / sa).powi(2) + (yr / sb).powi(2) <= 1.0 {
            v += a;
        }
    }
    v
}

/// Render the modified Shepp-Logan phantom as a conductivity field. Phantom
/// intensities in [0, 1] map affinely onto `sigma_range`; the background
/// (intensity 0) is the lower end of the range.
pub fn shepp_logan_sigma(
    grid: &Grid2D,
    scale: f64,
    sigma_range: (f64, f64),
) -> Result<ScalarField> {
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig("phantom scale must be positive".into()));
    }
    let (lo, hi) = sigma_range;
    if !(lo > 0.0) || !(hi > lo) {
        return Err(Error::InvalidConfig(format!(
            "conductivity range must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(ScalarField::from_fn(grid, Unit::SiemensPerMeter, |x, y| {
        let v = shepp_logan_intensity(x / scale, y / scale).clamp(0.0, 1.0);
        lo + (hi - lo) * v
    }))
}

/// Conductivity from an 8-bit grayscale raster already at grid size:
/// sigma = gray/255 + 1, in [1, 2] S/m.
pub fn image_sigma(gray: &[u8], grid: &Grid2D) -> Result<ScalarField> {
    if gray.len() != grid.len() {
        return Err(Error::GridMismatch(format!(
            "image has {} pixels, grid needs {}",
            gray.len(),
            grid.len()
        )));
    }
    let values = gray.iter().map(|&g| g as f64 / 255.0 + 1.0).collect();
    Ok(ScalarField { grid: grid.clone(), values, unit: Unit::SiemensPerMeter })
}

/// Nearest-neighbor subsampling of a square raster to `n x n`.
pub fn subsample_gray(gray: &[u8], src_n: usize, dst_n: usize) -> Result<Vec<u8>> {
    if gray.len() != src_n * src_n {
        return Err(Error::Image(format!(
            "raster has {} pixels, expected {src_n}x{src_n}",
            gray.len()
        )));
    }
    if dst_n == 0 || dst_n > src_n {
        return Err(Error::Image(format!("cannot subsample {src_n} to {dst_n}")));
    }
    let mut out = vec![0u8; dst_n * dst_n];
    for j in 0..dst_n {
        for i in 0..dst_n {
            let si = ((i * src_n) + src_n / 2) / dst_n;
            let sj = ((j * src_n) + src_n / 2) / dst_n;
            out[j * dst_n + i] = gray[sj.min(src_n - 1) * src_n + si.min(src_n - 1)];
        }
    }
    Ok(out)
}

/// Apply the spec's blur to a conductivity field.
pub fn apply_blur(spec: &PhantomSpec, sigma: &ScalarField) -> Result<ScalarField> {
    match spec.blur {
        Some(BlurSpec { nu, window }) => gaussian_blur(sigma, nu, window),
        None => Ok(sigma.clone()),
    }
}

/// Deterministic torso-style grayscale test image, row-major. Body on a
/// uniform-gray rim band, organs and a fine oscillatory texture inside.
/// Gray is 0 outside the body so the outline thresholds into a domain mask.
pub fn synthetic_torso_image(n: usize) -> Vec<u8> {
    let nf = n as f64;
    let cx = 0.5 * nf;
    let cy = 0.5 * nf;
    let body_a = 0.44 * nf;
    let body_b = 0.33 * nf;
    let in_ellipse = |x: f64, y: f64, ex: f64, ey: f64, a: f64, b: f64| -> bool {
        ((x - ex) / a).powi(2) + ((y - ey) / b).powi(2) <= 1.0
    };

    let mut img = vec![0u8; n * n];
    for j in 0..n {
        for i in 0..n {
            let x = i as f64 + 0.5;
            let y = j as f64 + 0.5;
            let bx = (x - cx) / body_a;
            let by = (y - cy) / body_b;
            let rho = (bx * bx + by * by).sqrt();
            if rho > 1.0 {
                continue;
            }
            let mut g = 80.0f64;
            // Organs and texture only inside rho <= 0.82; the outer band of
            // the body keeps the uniform base gray.
            if rho <= 0.82 {
                // Lungs.
                if in_ellipse(x, y, cx - 0.19 * nf, cy + 0.04 * nf, 0.135 * nf, 0.185 * nf)
                    || in_ellipse(x, y, cx + 0.19 * nf, cy + 0.04 * nf, 0.15 * nf, 0.19 * nf)
                {
                    g = 22.0;
                }
                // Heart.
                if in_ellipse(x, y, cx - 0.035 * nf, cy - 0.05 * nf, 0.09 * nf, 0.105 * nf) {
                    g = 168.0;
                }
                // Spine.
                if in_ellipse(x, y, cx, cy - 0.245 * nf, 0.05 * nf, 0.05 * nf) {
                    g = 235.0;
                }
                // Liver-like blob.
                if in_ellipse(x, y, cx + 0.175 * nf, cy - 0.175 * nf, 0.115 * nf, 0.085 * nf) {
                    g = 135.0;
                }
                // Stomach blob.
                if in_ellipse(x, y, cx - 0.16 * nf, cy - 0.185 * nf, 0.08 * nf, 0.06 * nf) {
                    g = 110.0;
                }
                // Fine texture, sharp at pixel scale after subsampling.
                let t = 20.0 * (x * 0.61).sin() * (y * 0.47).sin();
                g = (g + t).clamp(5.0, 250.0);
            }
            img[j * n + i] = g.round() as u8;
        }
    }
    img
}
