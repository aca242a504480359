//! Excursion sets on grids and crossing / arm detection.
//!
//! The primal set `{f + ℓ ≥ 0}` is 8-connected and the dual set `{f + ℓ < 0}`
//! is 4-connected. With this matching pair, a rectangle has a left-right
//! primal crossing exactly when it has no top-bottom dual crossing, so `Cross`
//! and `CrossStar` partition every grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldSample, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    /// Left-right path in `{f + ℓ ≥ 0}`.
    Cross,
    /// Top-bottom path in `{f + ℓ < 0}`.
    CrossStar,
    /// Path in `{f + ℓ ≥ 0}` from the inner square to the outer boundary.
    Arm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Geometry {
    /// `[x0, x0 + w] × [y0, y0 + h]`.
    Rect { w: f64, h: f64 },
    /// Between `[−inner, inner]²` and `[−outer, outer]²`, shifted by the origin.
    Annulus { inner: f64, outer: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingSpec {
    pub geometry: Geometry,
    /// Lower-left corner of a rectangle, or the center of an annulus.
    pub origin: [f64; 2],
    pub level: f64,
    pub kind: EventKind,
}

impl CrossingSpec {
    pub fn rect(w: f64, h: f64, level: f64, kind: EventKind) -> Self {
        CrossingSpec {
            geometry: Geometry::Rect { w, h },
            origin: [0.0, 0.0],
            level,
            kind,
        }
    }

    pub fn arm(inner: f64, outer: f64, level: f64) -> Self {
        CrossingSpec {
            geometry: Geometry::Annulus { inner, outer },
            origin: [0.0, 0.0],
            level,
            kind: EventKind::Arm,
        }
    }

    pub fn at(mut self, origin: [f64; 2]) -> Self {
        self.origin = origin;
        self
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.geometry, self.kind) {
            (Geometry::Rect { w, h }, EventKind::Cross | EventKind::CrossStar) => {
                if !(w > 0.0 && h > 0.0) {
                    return Err(Error::Geometry(format!("rectangle sides must be positive, got {w}x{h}")));
                }
            }
            (Geometry::Annulus { inner, outer }, EventKind::Arm) => {
                if !(inner > 0.0 && inner < outer) {
                    return Err(Error::Geometry(format!(
                        "annulus needs 0 < inner < outer, got {inner}, {outer}"
                    )));
                }
            }
            _ => return Err(Error::Geometry("arm events need an annulus, crossings a rectangle".into())),
        }
        Ok(())
    }

    /// Bounding box of the event's domain.
    pub fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let o = self.origin;
        match self.geometry {
            Geometry::Rect { w, h } => (o, [o[0] + w, o[1] + h]),
            Geometry::Annulus { outer, .. } => ([o[0] - outer, o[1] - outer], [o[0] + outer, o[1] + outer]),
        }
    }
}

/// Indicator of `{f + ℓ ≥ 0}` on every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryGrid {
    pub spec: GridSpec,
    pub bits: Vec<bool>,
}

impl BinaryGrid {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[j * self.spec.nx + i]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

pub fn excursion(fs: &FieldSample, level: f64) -> BinaryGrid {
    excursion_values(&fs.spec, &fs.values, level)
}

pub fn excursion_values(spec: &GridSpec, values: &[f64], level: f64) -> BinaryGrid {
    BinaryGrid {
        spec: *spec,
        bits: values.iter().map(|v| v + level >= 0.0).collect(),
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Whether some component of `open` cells in a `w × h` box joins a source
/// cell to a target cell.
pub(crate) fn connects(
    w: usize,
    h: usize,
    eight: bool,
    open: impl Fn(usize, usize) -> bool,
    source: impl Fn(usize, usize) -> bool,
    target: impl Fn(usize, usize) -> bool,
) -> bool {
    if w == 0 || h == 0 {
        return false;
    }
    let mut uf = UnionFind::new(w * h);
    let mut is_open = vec![false; w * h];
    for j in 0..h {
        for i in 0..w {
            if !open(i, j) {
                continue;
            }
            let k = j * w + i;
            is_open[k] = true;
            if i > 0 && is_open[k - 1] {
                uf.union(k as u32, (k - 1) as u32);
            }
            if j > 0 {
                if is_open[k - w] {
                    uf.union(k as u32, (k - w) as u32);
                }
                if eight {
                    if i > 0 && is_open[k - w - 1] {
                        uf.union(k as u32, (k - w - 1) as u32);
                    }
                    if i + 1 < w && is_open[k - w + 1] {
                        uf.union(k as u32, (k - w + 1) as u32);
                    }
                }
            }
        }
    }
    let mut hit = vec![false; w * h];
    let mut any = false;
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            if is_open[k] && source(i, j) {
                let r = uf.find(k as u32) as usize;
                hit[r] = true;
                any = true;
            }
        }
    }
    if !any {
        return false;
    }
    for j in 0..h {
        for i in 0..w {
            let k = j * w + i;
            if is_open[k] && target(i, j) && hit[uf.find(k as u32) as usize] {
                return true;
            }
        }
    }
    false
}

/// Index box `[i0, i1) × [j0, j1)` of cells whose centers lie in the closed
/// rectangle; errors if the rectangle leaves the grid window.
fn cell_box(spec: &GridSpec, lo: [f64; 2], hi: [f64; 2]) -> Result<(usize, usize, usize, usize)> {
    let win = spec.window();
    let tol = 1e-9 * spec.spacing.max(1.0);
    if lo[0] < win.lo[0] - tol || lo[1] < win.lo[1] - tol || hi[0] > win.hi[0] + tol || hi[1] > win.hi[1] + tol {
        return Err(Error::Geometry(format!(
            "event domain {lo:?}..{hi:?} is not inside the grid window {:?}..{:?}",
            win.lo, win.hi
        )));
    }
    let (i0, i1) = spec.index_range(0, lo[0], hi[0]);
    let (j0, j1) = spec.index_range(1, lo[1], hi[1]);
    if i0 >= i1 || j0 >= j1 {
        return Err(Error::Geometry("event domain contains no cell centers".into()));
    }
    Ok((i0, i1, j0, j1))
}

/// Primal (8-connected) horizontal or dual (4-connected) vertical crossing of
/// a cell box, or the primal vertical / dual horizontal analogues.
pub(crate) fn box_crossing(
    bg: &BinaryGrid,
    (i0, i1, j0, j1): (usize, usize, usize, usize),
    primal: bool,
    horizontal: bool,
) -> bool {
    let (w, h) = (i1 - i0, j1 - j0);
    let open = |i: usize, j: usize| bg.get(i0 + i, j0 + j) == primal;
    if horizontal {
        connects(w, h, primal, open, |i, _| i == 0, |i, _| i + 1 == w)
    } else {
        connects(w, h, primal, open, |_, j| j == 0, |_, j| j + 1 == h)
    }
}

pub fn detect(bg: &BinaryGrid, spec: &CrossingSpec) -> Result<bool> {
    spec.validate()?;
    let (lo, hi) = spec.bounds();
    let outer = cell_box(&bg.spec, lo, hi)?;
    match spec.kind {
        EventKind::Cross => Ok(box_crossing(bg, outer, true, true)),
        EventKind::CrossStar => Ok(box_crossing(bg, outer, false, false)),
        EventKind::Arm => {
            let Geometry::Annulus { inner, .. } = spec.geometry else {
                unreachable!("validated");
            };
            let o = spec.origin;
            let (a0, a1) = bg.spec.index_range(0, o[0] - inner, o[0] + inner);
            let (b0, b1) = bg.spec.index_range(1, o[1] - inner, o[1] + inner);
            if a0 >= a1 || b0 >= b1 {
                return Err(Error::Geometry("inner square contains no cell centers".into()));
            }
            let (i0, i1, j0, j1) = outer;
            let (w, h) = (i1 - i0, j1 - j0);
            let in_inner = |i: usize, j: usize| (a0..a1).contains(&(i0 + i)) && (b0..b1).contains(&(j0 + j));
            let inner_ring = |i: usize, j: usize| {
                in_inner(i, j) && (i0 + i == a0 || i0 + i + 1 == a1 || j0 + j == b0 || j0 + j + 1 == b1)
            };
            let region = |i: usize, j: usize| !in_inner(i, j) || inner_ring(i, j);
            Ok(connects(
                w,
                h,
                true,
                |i, j| region(i, j) && bg.get(i0 + i, j0 + j),
                inner_ring,
                |i, j| i == 0 || j == 0 || i + 1 == w || j + 1 == h,
            ))
        }
    }
}

/// Number of 2×2 cell blocks that look like they contain a critical point of
/// `f` with `|f + ℓ| < δ`: both gradient components take strictly positive
/// and strictly negative values on the block, and the block mean of `f + ℓ`
/// is within `δ` of zero.
pub fn near_critical_count(fs: &FieldSample, level: f64, delta: f64) -> Result<usize> {
    if !(delta > 0.0) {
        return Err(crate::error::invalid("delta", "must be positive"));
    }
    let Some([gx, gy]) = fs.gradient.as_ref() else {
        return Err(Error::Numeric("near_critical_count needs a field synthesized with its gradient".into()));
    };
    let s = &fs.spec;
    let changes = |g: &[f64], k: usize| {
        let v = [g[k], g[k + 1], g[k + s.nx], g[k + s.nx + 1]];
        v.iter().any(|x| *x > 0.0) && v.iter().any(|x| *x < 0.0)
    };
    let mut count = 0;
    for j in 0..s.ny.saturating_sub(1) {
        for i in 0..s.nx.saturating_sub(1) {
            let k = j * s.nx + i;
            if !changes(gx, k) || !changes(gy, k) {
                continue;
            }
            let v = &fs.values;
            let mean = 0.25 * (v[k] + v[k + 1] + v[k + s.nx] + v[k + s.nx + 1]);
            if (mean + level).abs() < delta {
                count += 1;
            }
        }
    }
    Ok(count)
}
