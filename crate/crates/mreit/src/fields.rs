//! Grid-aligned scalar/vector fields and masked discrete differential
//! operators.
//!
//! Gradient and divergence use central differences on pixels whose stencil
//! stays on the mask and second-order one-sided differences where a neighbor
//! leaves it; the Laplacian is the 5-point stencil with one-sided second
//! derivatives at mask edges. All three annihilate affine fields and are
//! exact for quadratics, so the discrete identities the reconstruction relies
//! on (div-perp-grad = 0, affine stray fields invisible to the Laplacian)
//! hold to rounding on interior pixels.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DomainMask, Grid2D};

/// Physical unit tag carried by a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    SiemensPerMeter,
    Volt,
    Tesla,
    AmperePerSquareMeter,
    Dimensionless,
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::SiemensPerMeter => "S/m",
            Unit::Volt => "V",
            Unit::Tesla => "T",
            Unit::AmperePerSquareMeter => "A/m^2",
            Unit::Dimensionless => "1",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Unit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "S/m" => Ok(Unit::SiemensPerMeter),
            "V" => Ok(Unit::Volt),
            "T" => Ok(Unit::Tesla),
            "A/m^2" => Ok(Unit::AmperePerSquareMeter),
            "1" => Ok(Unit::Dimensionless),
            other => Err(Error::InvalidField(format!("unknown unit tag {other:?}"))),
        }
    }
}

/// Scalar field on a grid, row-major with ix fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid2D,
    pub values: Vec<f64>,
    pub unit: Unit,
}

impl ScalarField {
    pub fn zeros(grid: &Grid2D, unit: Unit) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()], unit }
    }

    pub fn constant(grid: &Grid2D, value: f64, unit: Unit) -> Self {
        Self { grid: grid.clone(), values: vec![value; grid.len()], unit }
    }

    /// Build from a function of physical coordinates.
    pub fn from_fn(grid: &Grid2D, unit: Unit, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let (x, y) = grid.pos(idx);
                f(x, y)
            })
            .collect();
        Self { grid: grid.clone(), values, unit }
    }

    /// Mark everything outside the mask as poisoned so stray reads surface.
    pub fn masked(mut self, mask: &DomainMask) -> Self {
        for idx in 0..self.grid.len() {
            if !mask.is_inside_idx(idx) {
                self.values[idx] = f64::NAN;
            }
        }
        self
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[self.grid.idx(ix, iy)]
    }

    pub fn check_finite_on(&self, mask: &DomainMask) -> Result<()> {
        for idx in 0..self.grid.len() {
            if mask.is_inside_idx(idx) && !self.values[idx].is_finite() {
                let (ix, iy) = self.grid.coords(idx);
                return Err(Error::InvalidField(format!(
                    "non-finite value at pixel ({ix}, {iy})"
                )));
            }
        }
        Ok(())
    }

    pub fn max_abs_on(&self, mask: &DomainMask) -> f64 {
        let mut m = 0.0f64;
        for idx in 0..self.grid.len() {
            if mask.is_inside_idx(idx) {
                m = m.max(self.values[idx].abs());
            }
        }
        m
    }
}

/// Two-component vector field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D {
    pub grid: Grid2D,
    pub vx: Vec<f64>,
    pub vy: Vec<f64>,
    pub unit: Unit,
}

impl VectorField2D {
    pub fn zeros(grid: &Grid2D, unit: Unit) -> Self {
        Self {
            grid: grid.clone(),
            vx: vec![0.0; grid.len()],
            vy: vec![0.0; grid.len()],
            unit,
        }
    }

    /// Counterclockwise right-angle rotation convention of the model:
    /// perp(v) = (vy, -vx). Applying it twice negates the field exactly.
    pub fn perp(&self) -> VectorField2D {
        VectorField2D {
            grid: self.grid.clone(),
            vx: self.vy.clone(),
            vy: self.vx.iter().map(|v| -v).collect(),
            unit: self.unit,
        }
    }

    #[inline]
    pub fn magnitude_sq(&self, idx: usize) -> f64 {
        self.vx[idx] * self.vx[idx] + self.vy[idx] * self.vy[idx]
    }

    pub fn max_magnitude_on(&self, mask: &DomainMask) -> f64 {
        let mut m = 0.0f64;
        for idx in 0..self.grid.len() {
            if mask.is_inside_idx(idx) {
                m = m.max(self.magnitude_sq(idx));
            }
        }
        m.sqrt()
    }

    pub fn min_magnitude_on(&self, mask: &DomainMask) -> f64 {
        let mut m = f64::INFINITY;
        for idx in 0..self.grid.len() {
            if mask.is_inside_idx(idx) {
                m = m.min(self.magnitude_sq(idx));
            }
        }
        m.sqrt()
    }
}

pub fn require_same_grid(a: &Grid2D, b: &Grid2D) -> Result<()> {
    if !a.same_shape(b) || (a.h_x() - b.h_x()).abs() > 1e-14 || (a.h_y() - b.h_y()).abs() > 1e-14 {
        return Err(Error::GridMismatch(format!(
            "{}x{} vs {}x{}",
            a.nx, a.ny, b.nx, b.ny
        )));
    }
    Ok(())
}

/// Derivative along an axis with mask fallback: central where both neighbors
/// are in, otherwise second-order one-sided using up to two pixels on the
/// available side. Exact for quadratics in either case.
#[inline]
fn axis_derivative(get: &impl Fn(i64) -> Option<f64>, center: f64, h: f64) -> f64 {
    match (get(-1), get(1)) {
        (Some(m), Some(p)) => (p - m) / (2.0 * h),
        (None, Some(p)) => match get(2) {
            Some(pp) => (-3.0 * center + 4.0 * p - pp) / (2.0 * h),
            None => (p - center) / h,
        },
        (Some(m), None) => match get(-2) {
            Some(mm) => (3.0 * center - 4.0 * m + mm) / (2.0 * h),
            None => (center - m) / h,
        },
        (None, None) => 0.0,
    }
}

/// Second derivative along an axis: 3-point central where possible, otherwise
/// 4-point one-sided (exact for cubics).
#[inline]
fn axis_second_derivative(get: &impl Fn(i64) -> Option<f64>, center: f64, h: f64) -> f64 {
    match (get(-1), get(1)) {
        (Some(m), Some(p)) => (p - 2.0 * center + m) / (h * h),
        (None, Some(p)) => match (get(2), get(3)) {
            (Some(p2), Some(p3)) => (2.0 * center - 5.0 * p + 4.0 * p2 - p3) / (h * h),
            (Some(p2), None) => (center - 2.0 * p + p2) / (h * h),
            _ => 0.0,
        },
        (Some(m), None) => match (get(-2), get(-3)) {
            (Some(m2), Some(m3)) => (2.0 * center - 5.0 * m + 4.0 * m2 - m3) / (h * h),
            (Some(m2), None) => (center - 2.0 * m + m2) / (h * h),
            _ => 0.0,
        },
        (None, None) => 0.0,
    }
}

fn sample_x<'a>(
    values: &'a [f64],
    mask: &'a DomainMask,
    ix: usize,
    iy: usize,
) -> impl Fn(i64) -> Option<f64> + 'a {
    let grid = &mask.grid;
    move |d: i64| {
        let jx = ix as i64 + d;
        if jx < 0 || jx >= grid.nx as i64 {
            return None;
        }
        let jx = jx as usize;
        mask.is_inside(jx, iy).then(|| values[grid.idx(jx, iy)])
    }
}

fn sample_y<'a>(
    values: &'a [f64],
    mask: &'a DomainMask,
    ix: usize,
    iy: usize,
) -> impl Fn(i64) -> Option<f64> + 'a {
    let grid = &mask.grid;
    move |d: i64| {
        let jy = iy as i64 + d;
        if jy < 0 || jy >= grid.ny as i64 {
            return None;
        }
        let jy = jy as usize;
        mask.is_inside(ix, jy).then(|| values[grid.idx(ix, jy)])
    }
}

/// Masked gradient; result is NaN outside the mask.
pub fn gradient(f: &ScalarField, mask: &DomainMask) -> Result<VectorField2D> {
    require_same_grid(&f.grid, &mask.grid)?;
    let grid = &f.grid;
    let hx = grid.h_x();
    let hy = grid.h_y();
    let mut out = VectorField2D::zeros(grid, Unit::Dimensionless);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let idx = grid.idx(ix, iy);
            if !mask.is_inside_idx(idx) {
                out.vx[idx] = f64::NAN;
                out.vy[idx] = f64::NAN;
                continue;
            }
            let c = f.values[idx];
            out.vx[idx] = axis_derivative(&sample_x(&f.values, mask, ix, iy), c, hx);
            out.vy[idx] = axis_derivative(&sample_y(&f.values, mask, ix, iy), c, hy);
        }
    }
    Ok(out)
}

/// Masked divergence, componentwise mirror of [`gradient`].
pub fn divergence(v: &VectorField2D, mask: &DomainMask) -> Result<ScalarField> {
    require_same_grid(&v.grid, &mask.grid)?;
    let grid = &v.grid;
    let hx = grid.h_x();
    let hy = grid.h_y();
    let mut out = ScalarField::zeros(grid, Unit::Dimensionless);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let idx = grid.idx(ix, iy);
            if !mask.is_inside_idx(idx) {
                out.values[idx] = f64::NAN;
                continue;
            }
            let dx = axis_derivative(&sample_x(&v.vx, mask, ix, iy), v.vx[idx], hx);
            let dy = axis_derivative(&sample_y(&v.vy, mask, ix, iy), v.vy[idx], hy);
            out.values[idx] = dx + dy;
        }
    }
    Ok(out)
}

/// Masked Laplacian: 5-point stencil inside, one-sided second derivatives at
/// mask edges; anisotropic when h_x != h_y.
pub fn laplacian(f: &ScalarField, mask: &DomainMask) -> Result<ScalarField> {
    require_same_grid(&f.grid, &mask.grid)?;
    let grid = &f.grid;
    let hx = grid.h_x();
    let hy = grid.h_y();
    let mut out = ScalarField::zeros(grid, Unit::Dimensionless);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let idx = grid.idx(ix, iy);
            if !mask.is_inside_idx(idx) {
                out.values[idx] = f64::NAN;
                continue;
            }
            let c = f.values[idx];
            let dxx = axis_second_derivative(&sample_x(&f.values, mask, ix, iy), c, hx);
            let dyy = axis_second_derivative(&sample_y(&f.values, mask, ix, iy), c, hy);
            out.values[idx] = dxx + dyy;
        }
    }
    Ok(out)
}

/// Normalized Gaussian convolution of the whole grid, extended periodically.
/// `nu` is the kernel standard deviation in pixel units; `window` is the odd
/// kernel width in pixels.
pub fn gaussian_blur(f: &ScalarField, nu: f64, window: usize) -> Result<ScalarField> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::InvalidBlur(format!(
            "window must be odd and >= 3, got {window}"
        )));
    }
    if !(nu > 0.0) {
        return Err(Error::InvalidBlur(format!("nu must be positive, got {nu}")));
    }
    let half = (window / 2) as i64;
    let mut weights = vec![0.0; window * window];
    let mut sum = 0.0;
    for dy in -half..=half {
        for dx in -half..=half {
            let w = (-((dx * dx + dy * dy) as f64) / (2.0 * nu * nu)).exp();
            weights[((dy + half) * window as i64 + (dx + half)) as usize] = w;
            sum += w;
        }
    }
    for w in &mut weights {
        *w /= sum;
    }

    let grid = &f.grid;
    let nx = grid.nx as i64;
    let ny = grid.ny as i64;
    let mut out = ScalarField::zeros(grid, f.unit);
    for iy in 0..ny {
        for ix in 0..nx {
            let mut acc = 0.0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let jx = (ix + dx).rem_euclid(nx) as usize;
                    let jy = (iy + dy).rem_euclid(ny) as usize;
                    acc += weights[((dy + half) * window as i64 + (dx + half)) as usize]
                        * f.at(jx, jy);
                }
            }
            out.values[grid.idx(ix as usize, iy as usize)] = acc;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

const FIELD_MAGIC: &str = "mreit-field v1";

impl ScalarField {
    /// Write as a one-line text header followed by little-endian f64 values,
    /// row-major with ix fastest.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{FIELD_MAGIC} nx={} ny={} fov_x={:.17e} fov_y={:.17e} origin_x={:.17e} origin_y={:.17e} unit={}",
            self.grid.nx, self.grid.ny, self.grid.fov_x, self.grid.fov_y,
            self.grid.origin.0, self.grid.origin.1, self.unit
        )?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_binary_file(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = BufWriter::new(f);
        self.write_binary(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(r: R) -> Result<ScalarField> {
        let mut r = BufReader::new(r);
        let mut header = String::new();
        r.read_line(&mut header)?;
        let header = header.trim_end();
        if !header.starts_with(FIELD_MAGIC) {
            return Err(Error::InvalidField("bad field file magic".into()));
        }
        let mut nx = None;
        let mut ny = None;
        let mut fov_x = None;
        let mut fov_y = None;
        let mut ox = None;
        let mut oy = None;
        let mut unit = None;
        for tok in header.split_whitespace().skip(2) {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::InvalidField(format!("bad header token {tok:?}")))?;
            match k {
                "nx" => nx = v.parse::<usize>().ok(),
                "ny" => ny = v.parse::<usize>().ok(),
                "fov_x" => fov_x = v.parse::<f64>().ok(),
                "fov_y" => fov_y = v.parse::<f64>().ok(),
                "origin_x" => ox = v.parse::<f64>().ok(),
                "origin_y" => oy = v.parse::<f64>().ok(),
                "unit" => unit = v.parse::<Unit>().ok(),
                _ => {}
            }
        }
        let (Some(nx), Some(ny), Some(fov_x), Some(fov_y), Some(ox), Some(oy), Some(unit)) =
            (nx, ny, fov_x, fov_y, ox, oy, unit)
        else {
            return Err(Error::InvalidField("incomplete field header".into()));
        };
        let grid = Grid2D { nx, ny, fov_x, fov_y, origin: (ox, oy) };
        let mut values = vec![0.0f64; grid.len()];
        let mut buf = [0u8; 8];
        for v in &mut values {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(ScalarField { grid, values, unit })
    }

    pub fn read_binary_file(path: &Path) -> Result<ScalarField> {
        Self::read_binary(std::fs::File::open(path)?)
    }

    /// CSV export for inspection: header then one `x,y,value` row per pixel.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,value")?;
        for idx in 0..self.grid.len() {
            let (x, y) = self.grid.pos(idx);
            writeln!(w, "{x:.12e},{y:.12e},{:.17e}", self.values[idx])?;
        }
        Ok(())
    }
}
