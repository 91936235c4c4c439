//! Discrete imaging domain: uniform grid, pixel mask with an ordered
//! counterclockwise boundary loop, electrode/arc segmentation and interior
//! erosion.
//!
//! Conventions: pixel `(ix, iy)` maps to physical `(origin + ix*h_x,
//! origin + iy*h_y)` with x to the right and y up. Boundary loops are stored
//! as ordered lists of pixel indices, counterclockwise in that frame.

use crate::error::{Error, Result};

pub const MIN_GRID_DIM: usize = 8;

/// Uniform node-centered pixel grid with an affine pixel <-> physical map.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid2D {
    pub nx: usize,
    pub ny: usize,
    pub fov_x: f64,
    pub fov_y: f64,
    pub origin: (f64, f64),
}

impl Grid2D {
    pub fn h_x(&self) -> f64 {
        self.fov_x / (self.nx - 1) as f64
    }

    pub fn h_y(&self) -> f64 {
        self.fov_y / (self.ny - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    #[inline]
    pub fn x(&self, ix: usize) -> f64 {
        self.origin.0 + ix as f64 * self.h_x()
    }

    #[inline]
    pub fn y(&self, iy: usize) -> f64 {
        self.origin.1 + iy as f64 * self.h_y()
    }

    #[inline]
    pub fn pos(&self, idx: usize) -> (f64, f64) {
        let (ix, iy) = self.coords(idx);
        (self.x(ix), self.y(iy))
    }

    /// Nearest pixel to a physical point, or None if outside the grid extent.
    pub fn nearest_pixel(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin.0) / self.h_x();
        let fy = (y - self.origin.1) / self.h_y();
        let ix = fx.round();
        let iy = fy.round();
        if ix < 0.0 || iy < 0.0 || ix >= self.nx as f64 || iy >= self.ny as f64 {
            return None;
        }
        Some((ix as usize, iy as usize))
    }

    pub fn same_shape(&self, other: &Grid2D) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }
}

/// Build a grid, validating pixel counts and extents.
pub fn build_grid(nx: usize, ny: usize, fov_x: f64, fov_y: f64, origin: (f64, f64)) -> Result<Grid2D> {
    if nx < MIN_GRID_DIM || ny < MIN_GRID_DIM {
        return Err(Error::InvalidGrid(format!(
            "pixel counts {nx}x{ny} below minimum {MIN_GRID_DIM}"
        )));
    }
    if !(fov_x > 0.0) || !(fov_y > 0.0) {
        return Err(Error::InvalidGrid(format!(
            "field of view must be positive, got {fov_x} x {fov_y}"
        )));
    }
    if !origin.0.is_finite() || !origin.1.is_finite() {
        return Err(Error::InvalidGrid("origin must be finite".into()));
    }
    Ok(Grid2D { nx, ny, fov_x, fov_y, origin })
}

/// Requested domain shape for [`build_domain`].
#[derive(Debug, Clone)]
pub enum DomainShape {
    /// The whole grid; boundary is the outer pixel ring.
    Square,
    /// Disc given by physical center and diameter.
    Disc { center: (f64, f64), diameter: f64 },
    /// Grayscale raster thresholded to a mask: inside where gray >= threshold.
    /// The raster must already have grid dimensions.
    Raster { gray: Vec<u8>, threshold: u8 },
}

/// Pixel mask over a grid with an ordered counterclockwise boundary loop.
#[derive(Debug, Clone)]
pub struct DomainMask {
    pub grid: Grid2D,
    pub inside: Vec<bool>,
    /// Ordered, counterclockwise, single closed loop of boundary pixel indices.
    pub boundary_loop: Vec<usize>,
    is_boundary: Vec<bool>,
}

impl DomainMask {
    #[inline]
    pub fn is_inside(&self, ix: usize, iy: usize) -> bool {
        self.inside[self.grid.idx(ix, iy)]
    }

    #[inline]
    pub fn is_inside_idx(&self, idx: usize) -> bool {
        self.inside[idx]
    }

    #[inline]
    pub fn is_boundary_idx(&self, idx: usize) -> bool {
        self.is_boundary[idx]
    }

    pub fn interior_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    /// Pixels inside the mask whose full 4-neighborhood is also inside.
    pub fn is_deep_idx(&self, idx: usize) -> bool {
        let (ix, iy) = self.grid.coords(idx);
        if !self.inside[idx] {
            return false;
        }
        ix > 0
            && iy > 0
            && ix + 1 < self.grid.nx
            && iy + 1 < self.grid.ny
            && self.is_inside(ix - 1, iy)
            && self.is_inside(ix + 1, iy)
            && self.is_inside(ix, iy - 1)
            && self.is_inside(ix, iy + 1)
    }

    /// Pixels whose full 8-neighborhood is inside; central stencils of central
    /// stencils stay on the mask here.
    pub fn is_core_idx(&self, idx: usize) -> bool {
        let (ix, iy) = self.grid.coords(idx);
        if ix == 0 || iy == 0 || ix + 1 >= self.grid.nx || iy + 1 >= self.grid.ny {
            return false;
        }
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let jx = (ix as i64 + dx) as usize;
                let jy = (iy as i64 + dy) as usize;
                if !self.is_inside(jx, jy) {
                    return false;
                }
            }
        }
        true
    }

    /// Centroid of the inside region in physical coordinates.
    pub fn centroid(&self) -> (f64, f64) {
        let mut sx = 0.0;
        let mut sy = 0.0;
        let mut n = 0usize;
        for idx in 0..self.grid.len() {
            if self.inside[idx] {
                let (x, y) = self.grid.pos(idx);
                sx += x;
                sy += y;
                n += 1;
            }
        }
        (sx / n as f64, sy / n as f64)
    }
}

fn neighbors4(grid: &Grid2D, idx: usize) -> [Option<usize>; 4] {
    let (ix, iy) = grid.coords(idx);
    [
        (ix + 1 < grid.nx).then(|| grid.idx(ix + 1, iy)),
        (ix > 0).then(|| grid.idx(ix - 1, iy)),
        (iy + 1 < grid.ny).then(|| grid.idx(ix, iy + 1)),
        (iy > 0).then(|| grid.idx(ix, iy - 1)),
    ]
}

fn connected_component_count(grid: &Grid2D, inside: &[bool]) -> usize {
    let mut seen = vec![false; inside.len()];
    let mut components = 0usize;
    for start in 0..inside.len() {
        if !inside[start] || seen[start] {
            continue;
        }
        components += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(p) = stack.pop() {
            for nb in neighbors4(grid, p).into_iter().flatten() {
                if inside[nb] && !seen[nb] {
                    seen[nb] = true;
                    stack.push(nb);
                }
            }
        }
    }
    components
}

/// Flood-fill the outside from the grid border; any non-inside pixel not
/// reached is a hole in the mask.
fn has_holes(grid: &Grid2D, inside: &[bool]) -> bool {
    let mut reached = vec![false; inside.len()];
    let mut stack = Vec::new();
    for ix in 0..grid.nx {
        for iy in [0, grid.ny - 1] {
            let p = grid.idx(ix, iy);
            if !inside[p] && !reached[p] {
                reached[p] = true;
                stack.push(p);
            }
        }
    }
    for iy in 0..grid.ny {
        for ix in [0, grid.nx - 1] {
            let p = grid.idx(ix, iy);
            if !inside[p] && !reached[p] {
                reached[p] = true;
                stack.push(p);
            }
        }
    }
    while let Some(p) = stack.pop() {
        for nb in neighbors4(grid, p).into_iter().flatten() {
            if !inside[nb] && !reached[nb] {
                reached[nb] = true;
                stack.push(nb);
            }
        }
    }
    inside.iter().zip(&reached).any(|(&ins, &r)| !ins && !r)
}

/// Boundary tracing along pixel-edge "cracks", keeping the inside region on
/// the left; with y up this walks the outer contour counterclockwise. The
/// left cell of each traversed edge, deduplicated, is the boundary pixel loop.
fn trace_boundary(grid: &Grid2D, inside: &[bool]) -> Result<Vec<usize>> {
    let at = |ix: i64, iy: i64| -> bool {
        ix >= 0
            && iy >= 0
            && ix < grid.nx as i64
            && iy < grid.ny as i64
            && inside[grid.idx(ix as usize, iy as usize)]
    };

    // Start pixel: lowest row, then lowest column among inside pixels. Its
    // bottom edge is a boundary edge walked eastward.
    let mut start_px = None;
    'outer: for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            if inside[grid.idx(ix, iy)] {
                start_px = Some((ix as i64, iy as i64));
                break 'outer;
            }
        }
    }
    let (sx, sy) = start_px.ok_or_else(|| Error::InvalidDomain("empty interior".into()))?;

    // Directions E, N, W, S over the corner lattice.
    const STEP: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    // Left/right cell of an edge leaving corner (cx, cy) in direction d,
    // as offsets of the cell's lower-left corner.
    const LEFT: [(i64, i64); 4] = [(0, 0), (-1, 0), (-1, -1), (0, -1)];
    const RIGHT: [(i64, i64); 4] = [(0, -1), (0, 0), (-1, 0), (-1, -1)];

    let edge_ok = |cx: i64, cy: i64, d: usize| -> bool {
        let l = LEFT[d];
        let r = RIGHT[d];
        at(cx + l.0, cy + l.1) && !at(cx + r.0, cy + r.1)
    };

    let start = (sx, sy, 0usize); // corner (sx, sy), heading east
    debug_assert!(edge_ok(sx, sy, 0));
    let mut pixels: Vec<usize> = Vec::new();
    let (mut cx, mut cy, mut d) = start;
    let max_steps = 4 * (grid.len() + 1) + 8;
    for _ in 0..max_steps {
        let l = LEFT[d];
        let px = grid.idx((cx + l.0) as usize, (cy + l.1) as usize);
        if pixels.last() != Some(&px) {
            pixels.push(px);
        }
        cx += STEP[d].0;
        cy += STEP[d].1;
        // Prefer turning right, then straight, then left, then reversing;
        // exactly one candidate continues the boundary except at pinch
        // corners, where right-first keeps the trace on the outer contour.
        let mut next_d = None;
        for turn in [3usize, 0, 1, 2] {
            let cand = (d + turn) % 4;
            if edge_ok(cx, cy, cand) {
                next_d = Some(cand);
                break;
            }
        }
        d = next_d.ok_or_else(|| {
            Error::InvalidDomain("boundary tracing stalled; mask is not a simple region".into())
        })?;
        if (cx, cy, d) == start {
            break;
        }
    }
    if (cx, cy, d) != start {
        return Err(Error::InvalidDomain(
            "boundary tracing did not close; mask is not a simple region".into(),
        ));
    }
    if pixels.len() > 1 && pixels.last() == pixels.first() {
        pixels.pop();
    }
    debug_assert!({
        let mut area2 = 0.0;
        for k in 0..pixels.len() {
            let (x0, y0) = grid.pos(pixels[k]);
            let (x1, y1) = grid.pos(pixels[(k + 1) % pixels.len()]);
            area2 += x0 * y1 - x1 * y0;
        }
        pixels.len() < 3 || area2 > 0.0
    });
    Ok(pixels)
}

/// Build a domain mask from a shape description.
pub fn build_domain(grid: &Grid2D, shape: &DomainShape) -> Result<DomainMask> {
    let mut inside = vec![false; grid.len()];
    match shape {
        DomainShape::Square => inside.fill(true),
        DomainShape::Disc { center, diameter } => {
            if !(*diameter > 0.0) {
                return Err(Error::InvalidDomain("disc diameter must be positive".into()));
            }
            let r = diameter / 2.0;
            let (cx, cy) = *center;
            let x_lo = grid.origin.0;
            let x_hi = grid.origin.0 + grid.fov_x;
            let y_lo = grid.origin.1;
            let y_hi = grid.origin.1 + grid.fov_y;
            if cx - r < x_lo || cx + r > x_hi || cy - r < y_lo || cy + r > y_hi {
                return Err(Error::InvalidDomain(format!(
                    "disc of diameter {diameter} at ({cx}, {cy}) exceeds field of view"
                )));
            }
            for idx in 0..grid.len() {
                let (x, y) = grid.pos(idx);
                inside[idx] = (x - cx).powi(2) + (y - cy).powi(2) <= r * r;
            }
        }
        DomainShape::Raster { gray, threshold } => {
            if gray.len() != grid.len() {
                return Err(Error::InvalidDomain(format!(
                    "raster has {} pixels, grid needs {}",
                    gray.len(),
                    grid.len()
                )));
            }
            for idx in 0..grid.len() {
                inside[idx] = gray[idx] >= *threshold;
            }
        }
    }

    if inside.iter().filter(|&&b| b).count() < 9 {
        return Err(Error::InvalidDomain("empty or near-empty interior".into()));
    }
    match connected_component_count(grid, &inside) {
        1 => {}
        n => {
            return Err(Error::InvalidDomain(format!(
                "interior is disconnected ({n} components)"
            )))
        }
    }
    if has_holes(grid, &inside) {
        return Err(Error::InvalidDomain("interior contains holes".into()));
    }

    let boundary_loop = trace_boundary(grid, &inside)?;
    let mut is_boundary = vec![false; grid.len()];
    for &p in &boundary_loop {
        is_boundary[p] = true;
    }
    // Every inside pixel with an outside 4-neighbor (or on the grid edge)
    // must sit on the traced loop, otherwise the region is not simple.
    for idx in 0..grid.len() {
        if !inside[idx] {
            continue;
        }
        let edge_like = neighbors4(grid, idx)
            .into_iter()
            .any(|nb| nb.map_or(true, |q| !inside[q]));
        if edge_like && !is_boundary[idx] {
            return Err(Error::InvalidDomain(
                "boundary is not a single closed loop".into(),
            ));
        }
    }

    Ok(DomainMask {
        grid: grid.clone(),
        inside,
        boundary_loop,
        is_boundary,
    })
}

/// A contiguous (wrapping) range of positions on the boundary loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoopRange {
    pub start: usize,
    pub len: usize,
}

impl LoopRange {
    pub fn positions(&self, loop_len: usize) -> impl Iterator<Item = usize> + '_ {
        let start = self.start;
        (0..self.len).map(move |k| (start + k) % loop_len)
    }

    pub fn contains(&self, pos: usize, loop_len: usize) -> bool {
        let rel = (pos + loop_len - self.start) % loop_len;
        rel < self.len
    }
}

/// Four-way counterclockwise partition of the boundary loop:
/// E+, then Gamma+, then E-, then Gamma-.
#[derive(Debug, Clone)]
pub struct BoundarySpec {
    pub e_plus: LoopRange,
    pub gamma_plus: LoopRange,
    pub e_minus: LoopRange,
    pub gamma_minus: LoopRange,
    pub loop_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryPiece {
    EPlus,
    GammaPlus,
    EMinus,
    GammaMinus,
}

impl BoundarySpec {
    pub fn piece_of(&self, pos: usize) -> BoundaryPiece {
        if self.e_plus.contains(pos, self.loop_len) {
            BoundaryPiece::EPlus
        } else if self.gamma_plus.contains(pos, self.loop_len) {
            BoundaryPiece::GammaPlus
        } else if self.e_minus.contains(pos, self.loop_len) {
            BoundaryPiece::EMinus
        } else {
            BoundaryPiece::GammaMinus
        }
    }

    /// Physical length of a loop range, summing distances between successive
    /// loop pixels (h for face steps, h*sqrt2 for diagonal steps).
    pub fn range_arc_length(&self, mask: &DomainMask, range: &LoopRange) -> f64 {
        let n = self.loop_len;
        let mut len = 0.0;
        for k in 0..range.len.saturating_sub(1) {
            let a = mask.boundary_loop[(range.start + k) % n];
            let b = mask.boundary_loop[(range.start + k + 1) % n];
            let (xa, ya) = mask.grid.pos(a);
            let (xb, yb) = mask.grid.pos(b);
            len += ((xb - xa).powi(2) + (yb - ya).powi(2)).sqrt();
        }
        len
    }
}

/// Electrode placement request.
#[derive(Debug, Clone)]
pub enum ElectrodeSpec {
    /// Electrodes as axis-aligned physical boxes; each must select one
    /// contiguous run of boundary pixels.
    Boxes {
        e_plus: ((f64, f64), (f64, f64)),
        e_minus: ((f64, f64), (f64, f64)),
    },
    /// Electrodes as arcs centered at polar angles (radians, measured from the
    /// mask centroid) with a physical arc length each.
    Arcs {
        e_plus_angle: f64,
        e_minus_angle: f64,
        arc_length: f64,
    },
}

fn contiguous_run(selected: &[bool]) -> Result<LoopRange> {
    let n = selected.len();
    let count = selected.iter().filter(|&&b| b).count();
    if count == 0 {
        return Err(Error::InvalidElectrodes(
            "electrode does not intersect the boundary".into(),
        ));
    }
    if count == n {
        return Err(Error::InvalidElectrodes(
            "electrode covers the whole boundary".into(),
        ));
    }
    // Find a start position: selected whose predecessor is not selected.
    let start = (0..n)
        .find(|&k| selected[k] && !selected[(k + n - 1) % n])
        .expect("non-trivial selection has a run start");
    let mut len = 0;
    while len < n && selected[(start + len) % n] {
        len += 1;
    }
    if len != count {
        return Err(Error::InvalidElectrodes(
            "electrode selects a non-contiguous set of boundary pixels".into(),
        ));
    }
    Ok(LoopRange { start, len })
}

/// Partition the boundary loop into E+, Gamma+, E-, Gamma- (counterclockwise).
///
/// Gamma+ is the arc that follows E+ in the counterclockwise direction; with
/// psi = +1 on Gamma+ and -1 on Gamma-, the recovered current J =
/// perp-grad(phi - I/2 psi) then carries total current I into the domain
/// through E+.
pub fn place_electrodes(mask: &DomainMask, spec: &ElectrodeSpec) -> Result<BoundarySpec> {
    let loop_len = mask.boundary_loop.len();
    let mut sel_plus = vec![false; loop_len];
    let mut sel_minus = vec![false; loop_len];

    match spec {
        ElectrodeSpec::Boxes { e_plus, e_minus } => {
            let mark = |bx: &((f64, f64), (f64, f64)), sel: &mut Vec<bool>| {
                let ((x0, x1), (y0, y1)) = *bx;
                for (k, &p) in mask.boundary_loop.iter().enumerate() {
                    let (x, y) = mask.grid.pos(p);
                    if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
                        sel[k] = true;
                    }
                }
            };
            mark(e_plus, &mut sel_plus);
            mark(e_minus, &mut sel_minus);
        }
        ElectrodeSpec::Arcs {
            e_plus_angle,
            e_minus_angle,
            arc_length,
        } => {
            if !(*arc_length > 0.0) {
                return Err(Error::InvalidElectrodes("arc length must be positive".into()));
            }
            let (cx, cy) = mask.centroid();
            // Mean boundary radius sets the angular half-width of the arc.
            let mut rsum = 0.0;
            for &p in &mask.boundary_loop {
                let (x, y) = mask.grid.pos(p);
                rsum += ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
            }
            let rmean = rsum / loop_len as f64;
            let half = arc_length / rmean / 2.0;
            let mark = |angle0: f64, sel: &mut Vec<bool>| {
                for (k, &p) in mask.boundary_loop.iter().enumerate() {
                    let (x, y) = mask.grid.pos(p);
                    let a = (y - cy).atan2(x - cx);
                    let mut d = a - angle0;
                    while d > std::f64::consts::PI {
                        d -= 2.0 * std::f64::consts::PI;
                    }
                    while d < -std::f64::consts::PI {
                        d += 2.0 * std::f64::consts::PI;
                    }
                    if d.abs() <= half {
                        sel[k] = true;
                    }
                }
            };
            mark(*e_plus_angle, &mut sel_plus);
            mark(*e_minus_angle, &mut sel_minus);
        }
    }

    if sel_plus.iter().zip(&sel_minus).any(|(&a, &b)| a && b) {
        return Err(Error::InvalidElectrodes("electrodes overlap".into()));
    }
    let e_plus = contiguous_run(&sel_plus)?;
    let e_minus = contiguous_run(&sel_minus)?;

    // Arc from end of E+ ccw to start of E- is Gamma+; the complement arc is
    // Gamma-. Both must be nonempty so the four pieces alternate.
    let after_plus = (e_plus.start + e_plus.len) % loop_len;
    let gamma_plus_len = (e_minus.start + loop_len - after_plus) % loop_len;
    let after_minus = (e_minus.start + e_minus.len) % loop_len;
    let gamma_minus_len = (e_plus.start + loop_len - after_minus) % loop_len;
    if gamma_plus_len == 0 || gamma_minus_len == 0 {
        return Err(Error::InvalidElectrodes(
            "electrodes are adjacent; no insulated arc separates them".into(),
        ));
    }
    let spec = BoundarySpec {
        e_plus,
        gamma_plus: LoopRange { start: after_plus, len: gamma_plus_len },
        e_minus,
        gamma_minus: LoopRange { start: after_minus, len: gamma_minus_len },
        loop_len,
    };
    debug_assert_eq!(
        spec.e_plus.len + spec.gamma_plus.len + spec.e_minus.len + spec.gamma_minus.len,
        loop_len
    );
    Ok(spec)
}

/// Morphological erosion of the mask by `margin` 4-neighbor steps, yielding
/// the compactly contained interior region.
pub fn shrink_interior(mask: &DomainMask, margin: usize) -> Result<DomainMask> {
    if margin == 0 {
        return Err(Error::InvalidDomain("erosion margin must be >= 1".into()));
    }
    let grid = &mask.grid;
    let mut inside = mask.inside.clone();
    for _ in 0..margin {
        let prev = inside.clone();
        for idx in 0..grid.len() {
            if !prev[idx] {
                continue;
            }
            let keep = neighbors4(grid, idx)
                .into_iter()
                .all(|nb| nb.map_or(false, |q| prev[q]));
            inside[idx] = keep;
        }
    }
    if inside.iter().filter(|&&b| b).count() < 9 {
        return Err(Error::InvalidDomain(format!(
            "erosion by {margin} pixels empties the interior"
        )));
    }
    if connected_component_count(grid, &inside) != 1 {
        return Err(Error::InvalidDomain(format!(
            "erosion by {margin} pixels disconnects the interior"
        )));
    }
    let boundary_loop = trace_boundary(grid, &inside)?;
    let mut is_boundary = vec![false; grid.len()];
    for &p in &boundary_loop {
        is_boundary[p] = true;
    }
    Ok(DomainMask {
        grid: grid.clone(),
        inside,
        boundary_loop,
        is_boundary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_grid() -> Grid2D {
        build_grid(128, 128, 2.0, 2.0, (-1.0, -1.0)).unwrap()
    }

    #[test]
    fn grid_spacing_matches_fov() {
        let g = toy_grid();
        assert!((g.h_x() - 2.0 / 127.0).abs() < 1e-15);
        let shepp = build_grid(128, 128, 0.6, 0.6, (-0.3, -0.3)).unwrap();
        assert!((shepp.h_x() - 0.6 / 127.0).abs() < 1e-15);
    }

    #[test]
    fn grid_round_trip_is_identity() {
        let g = build_grid(33, 17, 1.3, 0.7, (-0.4, 0.2)).unwrap();
        for idx in 0..g.len() {
            let (x, y) = g.pos(idx);
            let (ix, iy) = g.nearest_pixel(x, y).unwrap();
            assert_eq!(g.idx(ix, iy), idx);
        }
    }

    #[test]
    fn degenerate_grid_rejected() {
        assert!(build_grid(2, 2, 1.0, 1.0, (0.0, 0.0)).is_err());
        assert!(build_grid(128, 128, -1.0, 2.0, (0.0, 0.0)).is_err());
    }

    #[test]
    fn square_domain_boundary_is_single_ccw_ring() {
        let g = toy_grid();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        assert_eq!(m.interior_count(), 128 * 128);
        assert_eq!(m.boundary_loop.len(), 4 * 127);
        // CCW: signed area positive.
        let mut area2 = 0.0;
        for k in 0..m.boundary_loop.len() {
            let (x0, y0) = g.pos(m.boundary_loop[k]);
            let (x1, y1) = g.pos(m.boundary_loop[(k + 1) % m.boundary_loop.len()]);
            area2 += x0 * y1 - x1 * y0;
        }
        assert!(area2 > 0.0);
    }

    #[test]
    fn disc_domain_and_fov_check() {
        let g = build_grid(128, 128, 0.6, 0.6, (-0.3, -0.3)).unwrap();
        let m = build_domain(
            &g,
            &DomainShape::Disc { center: (0.0, 0.0), diameter: 0.45 },
        )
        .unwrap();
        let area = m.interior_count() as f64 * g.h_x() * g.h_y();
        let expect = std::f64::consts::PI * 0.225 * 0.225;
        assert!((area - expect).abs() / expect < 0.05, "area {area} vs {expect}");
        // Every boundary pixel has >= 1 inside and >= 1 outside neighbor.
        for &p in &m.boundary_loop {
            let ins = neighbors4(&g, p)
                .into_iter()
                .flatten()
                .filter(|&q| m.inside[q])
                .count();
            let outs = neighbors4(&g, p)
                .into_iter()
                .map(|nb| nb.map_or(1, |q| usize::from(!m.inside[q])))
                .sum::<usize>();
            assert!(ins >= 1, "boundary pixel without inside neighbor");
            assert!(outs >= 1, "boundary pixel without outside neighbor");
        }
        assert!(build_domain(
            &g,
            &DomainShape::Disc { center: (0.0, 0.0), diameter: 1.0 }
        )
        .is_err());
    }

    #[test]
    fn toy_electrodes_pixel_count_matches_direct_count() {
        let g = toy_grid();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        let spec = place_electrodes(
            &m,
            &ElectrodeSpec::Boxes {
                e_plus: ((0.99, 1.01), (-0.15, 0.15)),
                e_minus: ((-1.01, -0.99), (-0.15, 0.15)),
            },
        )
        .unwrap();
        // Independent count of boundary pixels with x = +1 edge and |y| <= 0.15.
        let h = g.h_y();
        let direct = (0..g.ny)
            .filter(|&j| {
                let y = -1.0 + j as f64 * h;
                y.abs() <= 0.15
            })
            .count();
        assert_eq!(spec.e_plus.len, direct);
        assert_eq!(spec.e_minus.len, direct);
        assert_eq!(direct, 20);
        // Partition property.
        assert_eq!(
            spec.e_plus.len + spec.gamma_plus.len + spec.e_minus.len + spec.gamma_minus.len,
            m.boundary_loop.len()
        );
    }

    #[test]
    fn gamma_plus_follows_e_plus_ccw() {
        let g = toy_grid();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        let spec = place_electrodes(
            &m,
            &ElectrodeSpec::Boxes {
                e_plus: ((0.99, 1.01), (-0.15, 0.15)),
                e_minus: ((-1.01, -0.99), (-0.15, 0.15)),
            },
        )
        .unwrap();
        // With E+ on the right edge, the ccw-following arc (Gamma+) passes
        // through the top edge.
        let top_mid = g.idx(64, 127);
        let pos = m
            .boundary_loop
            .iter()
            .position(|&p| p == top_mid)
            .expect("top edge pixel on loop");
        assert_eq!(spec.piece_of(pos), BoundaryPiece::GammaPlus);
        let bottom_mid = g.idx(64, 0);
        let pos = m.boundary_loop.iter().position(|&p| p == bottom_mid).unwrap();
        assert_eq!(spec.piece_of(pos), BoundaryPiece::GammaMinus);
    }

    #[test]
    fn shepp_arc_electrodes() {
        let g = build_grid(128, 128, 0.6, 0.6, (-0.3, -0.3)).unwrap();
        let m = build_domain(
            &g,
            &DomainShape::Disc { center: (0.0, 0.0), diameter: 0.45 },
        )
        .unwrap();
        let spec = place_electrodes(
            &m,
            &ElectrodeSpec::Arcs {
                e_plus_angle: 0.0,
                e_minus_angle: std::f64::consts::PI,
                arc_length: 0.0972,
            },
        )
        .unwrap();
        let len_plus = spec.range_arc_length(&m, &spec.e_plus);
        assert!(
            (len_plus - 0.0972).abs() < 0.03,
            "arc length {len_plus} far from requested 0.0972"
        );
        assert_eq!(
            spec.e_plus.len + spec.gamma_plus.len + spec.e_minus.len + spec.gamma_minus.len,
            m.boundary_loop.len()
        );
    }

    #[test]
    fn overlapping_electrodes_rejected() {
        let g = toy_grid();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        let r = place_electrodes(
            &m,
            &ElectrodeSpec::Boxes {
                e_plus: ((0.99, 1.01), (-0.15, 0.15)),
                e_minus: ((0.99, 1.01), (0.0, 0.3)),
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn electrode_off_boundary_rejected() {
        let g = toy_grid();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        let r = place_electrodes(
            &m,
            &ElectrodeSpec::Boxes {
                e_plus: ((0.4, 0.6), (-0.15, 0.15)), // interior box, no boundary pixels
                e_minus: ((-1.01, -0.99), (-0.15, 0.15)),
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn erosion_counts_and_errors() {
        let g = toy_grid();
        let m = build_domain(&g, &DomainShape::Square).unwrap();
        let e4 = shrink_interior(&m, 4).unwrap();
        assert_eq!(e4.interior_count(), 120 * 120);
        assert!(shrink_interior(&m, 70).is_err());
        // Monotonicity: deeper erosion is a subset.
        let e6 = shrink_interior(&m, 6).unwrap();
        for idx in 0..g.len() {
            if e6.inside[idx] {
                assert!(e4.inside[idx]);
            }
        }
    }

    #[test]
    fn disc_erosion_keeps_annulus() {
        let g = build_grid(128, 128, 0.6, 0.6, (-0.3, -0.3)).unwrap();
        let m = build_domain(
            &g,
            &DomainShape::Disc { center: (0.0, 0.0), diameter: 0.45 },
        )
        .unwrap();
        let e = shrink_interior(&m, 4).unwrap();
        assert!(e.interior_count() < m.interior_count());
        // Every eroded pixel is inside the original mask.
        for idx in 0..g.len() {
            if e.inside[idx] {
                assert!(m.inside[idx]);
            }
        }
        // The annulus contains the original boundary.
        for &p in &m.boundary_loop {
            assert!(!e.inside[p]);
        }
    }
}
