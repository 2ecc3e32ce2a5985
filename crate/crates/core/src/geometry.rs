//! Micro- and mesoscale cells, periodic distance queries, segment
//! decomposition and collocation point sampling.
//!
//! All lengths are dimensionless; the reference domain is the unit square.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub type Point = [f64; 2];

/// Material-ID cap of the segment decomposition.
pub const MAX_SEGMENTS: usize = 255;

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: Point,
    pub hi: Point,
}

impl Aabb {
    pub const fn new(lo: Point, hi: Point) -> Self {
        Self { lo, hi }
    }

    pub const fn square(lo: f64, hi: f64) -> Self {
        Self {
            lo: [lo, lo],
            hi: [hi, hi],
        }
    }

    pub const fn unit() -> Self {
        Self::square(0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.hi[0] - self.lo[0]
    }

    pub fn height(&self) -> f64 {
        self.hi[1] - self.lo[1]
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn is_empty(&self) -> bool {
        !(self.hi[0] > self.lo[0] && self.hi[1] > self.lo[1])
    }

    pub fn center(&self) -> Point {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }

    /// Closed containment.
    pub fn contains(&self, x: Point) -> bool {
        x[0] >= self.lo[0] && x[0] <= self.hi[0] && x[1] >= self.lo[1] && x[1] <= self.hi[1]
    }

    /// `other` lies in the interior of `self`.
    pub fn contains_box_strictly(&self, other: &Aabb) -> bool {
        other.lo[0] > self.lo[0]
            && other.lo[1] > self.lo[1]
            && other.hi[0] < self.hi[0]
            && other.hi[1] < self.hi[1]
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        other.lo[0] >= self.lo[0]
            && other.lo[1] >= self.lo[1]
            && other.hi[0] <= self.hi[0]
            && other.hi[1] <= self.hi[1]
    }

    /// Box shrunk by `d` on every side.
    pub fn inset(&self, d: f64) -> Aabb {
        Aabb {
            lo: [self.lo[0] + d, self.lo[1] + d],
            hi: [self.hi[0] - d, self.hi[1] - d],
        }
    }

    pub fn intersection(&self, other: &Aabb) -> Aabb {
        Aabb {
            lo: [self.lo[0].max(other.lo[0]), self.lo[1].max(other.lo[1])],
            hi: [self.hi[0].min(other.hi[0]), self.hi[1].min(other.hi[1])],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fiber {
    pub center: Point,
    pub radius: f64,
}

/// Periodic unit cell with circular fiber perforations inside a tow box.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroCell {
    pub domain: Aabb,
    pub fibers: Vec<Fiber>,
    pub tow_box: Aabb,
    pub periodic: bool,
}

const PERIODIC_OFFSETS: [[f64; 2]; 9] = [
    [0.0, 0.0],
    [-1.0, 0.0],
    [1.0, 0.0],
    [0.0, -1.0],
    [0.0, 1.0],
    [-1.0, -1.0],
    [-1.0, 1.0],
    [1.0, -1.0],
    [1.0, 1.0],
];

impl MicroCell {
    /// Validates the fiber layout against the tow box and the periodic images.
    pub fn new(tow_box: Aabb, fibers: Vec<Fiber>) -> Result<Self> {
        let cell = Self {
            domain: Aabb::unit(),
            fibers,
            tow_box,
            periodic: true,
        };
        cell.validate()?;
        Ok(cell)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.domain.contains_box_strictly(&self.tow_box) || self.tow_box.is_empty() {
            return Err(Error::GeometryInfeasible(format!(
                "tow box {:?} is not strictly inside the domain",
                self.tow_box
            )));
        }
        for (i, f) in self.fibers.iter().enumerate() {
            if !(f.radius > 0.0 && f.radius.is_finite()) {
                return Err(Error::GeometryInfeasible(format!(
                    "fiber {i} has non-positive radius {}",
                    f.radius
                )));
            }
            let inner = self.tow_box.inset(f.radius);
            if !inner.contains(f.center) {
                return Err(Error::GeometryInfeasible(format!(
                    "fiber {i} at {:?} (r = {}) protrudes from the tow box",
                    f.center, f.radius
                )));
            }
        }
        for i in 0..self.fibers.len() {
            for j in (i + 1)..self.fibers.len() {
                let (a, b) = (&self.fibers[i], &self.fibers[j]);
                for off in PERIODIC_OFFSETS {
                    let dx = a.center[0] - b.center[0] - off[0];
                    let dy = a.center[1] - b.center[1] - off[1];
                    if dx.hypot(dy) < a.radius + b.radius {
                        return Err(Error::GeometryInfeasible(format!(
                            "fibers {i} and {j} overlap"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Minimum of `|x - c| - r` over all fibers and their 8 periodic images.
    /// Positive in the fluid, negative inside a fiber, `+inf` without fibers.
    pub fn signed_distance(&self, x: Point) -> f64 {
        let xw = [x[0].rem_euclid(1.0), x[1].rem_euclid(1.0)];
        let mut best = f64::INFINITY;
        for f in &self.fibers {
            for off in PERIODIC_OFFSETS {
                let d = (xw[0] - f.center[0] - off[0]).hypot(xw[1] - f.center[1] - off[1]) - f.radius;
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// Distance travelled from `x` along the unit vector `dir` before the
    /// first fiber is entered, if that happens within `max_t`.
    pub fn distance_to_solid(&self, x: Point, dir: [f64; 2], max_t: f64) -> Option<f64> {
        let xw = [x[0].rem_euclid(1.0), x[1].rem_euclid(1.0)];
        let mut best: Option<f64> = None;
        for f in &self.fibers {
            for off in PERIODIC_OFFSETS {
                let o = [xw[0] - f.center[0] - off[0], xw[1] - f.center[1] - off[1]];
                let b = o[0] * dir[0] + o[1] * dir[1];
                let c = o[0] * o[0] + o[1] * o[1] - f.radius * f.radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    continue;
                }
                let t = if c <= 0.0 { 0.0 } else { -b - disc.sqrt() };
                if t >= 0.0 && t <= max_t && best.map_or(true, |bt| t < bt) {
                    best = Some(t);
                }
            }
        }
        best
    }

    pub fn is_fluid(&self, x: Point) -> bool {
        self.signed_distance(x) > 0.0
    }

    pub fn solid_area(&self) -> f64 {
        self.fibers.iter().map(|f| PI * f.radius * f.radius).sum()
    }

    /// Exact area of the fibers inside `region` (fibers never cross the
    /// periodic boundary since they lie in the tow box).
    pub fn solid_area_in(&self, region: &Aabb) -> f64 {
        self.fibers
            .iter()
            .map(|f| disc_box_overlap_area(f.center, f.radius, region))
            .sum()
    }

    pub fn mean_radius(&self) -> f64 {
        if self.fibers.is_empty() {
            return 0.0;
        }
        self.fibers.iter().map(|f| f.radius).sum::<f64>() / self.fibers.len() as f64
    }

    pub fn to_document(&self, seed: Option<u64>) -> GeometryDocument {
        GeometryDocument {
            domain: self.domain,
            tow_box: self.tow_box,
            fibers: self
                .fibers
                .iter()
                .map(|f| FiberRecord {
                    cx: f.center[0],
                    cy: f.center[1],
                    r: f.radius,
                })
                .collect(),
            seed,
        }
    }

    pub fn from_document(doc: &GeometryDocument) -> Result<Self> {
        let cell = Self {
            domain: doc.domain,
            fibers: doc
                .fibers
                .iter()
                .map(|f| Fiber {
                    center: [f.cx, f.cy],
                    radius: f.r,
                })
                .collect(),
            tow_box: doc.tow_box,
            periodic: true,
        };
        cell.validate()?;
        Ok(cell)
    }
}

/// Serialized geometry record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryDocument {
    pub domain: Aabb,
    pub tow_box: Aabb,
    pub fibers: Vec<FiberRecord>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberRecord {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl GeometryDocument {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Regular `n_side x n_side` lattice of equal fibers centred in `tow_box`.
pub fn build_micro_cell(n_side: usize, radius: f64, tow_box: Aabb) -> Result<MicroCell> {
    if n_side == 0 {
        return Err(Error::GeometryInfeasible("n_side must be positive".into()));
    }
    let pitch_x = tow_box.width() / n_side as f64;
    let pitch_y = tow_box.height() / n_side as f64;
    if pitch_x.min(pitch_y) <= 2.0 * radius {
        return Err(Error::GeometryInfeasible(format!(
            "lattice pitch {:.4} does not exceed the fiber diameter {:.4}",
            pitch_x.min(pitch_y),
            2.0 * radius
        )));
    }
    let mut fibers = Vec::with_capacity(n_side * n_side);
    for j in 0..n_side {
        for i in 0..n_side {
            fibers.push(Fiber {
                center: [
                    tow_box.lo[0] + (i as f64 + 0.5) * pitch_x,
                    tow_box.lo[1] + (j as f64 + 0.5) * pitch_y,
                ],
                radius,
            });
        }
    }
    MicroCell::new(tow_box, fibers)
}

/// Area fraction of fibers in the tow box.
pub fn tow_fvc(cell: &MicroCell) -> f64 {
    cell.solid_area() / cell.tow_box.area()
}

/// Exact area of the intersection of a disc with an axis-aligned box.
pub fn disc_box_overlap_area(center: Point, r: f64, region: &Aabb) -> f64 {
    let t0 = (region.lo[0] - center[0]).max(-r);
    let t1 = (region.hi[0] - center[0]).min(r);
    if t1 <= t0 {
        return 0.0;
    }
    let a = region.lo[1] - center[1];
    let b = region.hi[1] - center[1];
    if b <= a {
        return 0.0;
    }

    let mut breaks = vec![t0, t1];
    for c in [a, b] {
        if c.abs() < r {
            let t = (r * r - c * c).sqrt();
            for tb in [-t, t] {
                if tb > t0 && tb < t1 {
                    breaks.push(tb);
                }
            }
        }
    }
    breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let half_chord = |t: f64| (r * r - t * t).max(0.0).sqrt();
    // Antiderivative of sqrt(r^2 - t^2).
    let g = |t: f64| {
        let tc = t.clamp(-r, r);
        0.5 * (tc * half_chord(tc) + r * r * (tc / r).asin())
    };

    let mut area = 0.0;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let s = half_chord(mid);
        let upper_is_chord = s < b;
        let lower_is_chord = -s > a;
        let upper = if upper_is_chord { s } else { b };
        let lower = if lower_is_chord { -s } else { a };
        if upper <= lower {
            continue;
        }
        let len = hi - lo;
        let chord_integral = g(hi) - g(lo);
        let mut piece = 0.0;
        piece += if upper_is_chord { chord_integral } else { b * len };
        piece -= if lower_is_chord { -chord_integral } else { a * len };
        area += piece;
    }
    area
}

/// Features of one tow segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentFeatures {
    pub bbox: Aabb,
    pub fvc: f64,
    pub orientation: f64,
    pub fiber_radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGrid {
    pub n_x: usize,
    pub n_y: usize,
    pub region: Aabb,
    /// Row-major, `segments[j * n_x + i]`.
    pub segments: Vec<SegmentFeatures>,
}

impl SegmentGrid {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

/// Splits the porous box into `n_x x n_y` segments and computes each
/// segment's fiber area fraction from the resolved micro cell.
pub fn decompose_segments(
    meso: &MesoCell,
    cell: &MicroCell,
    n_x: usize,
    n_y: usize,
) -> Result<SegmentGrid> {
    let requested = n_x * n_y;
    if requested > MAX_SEGMENTS {
        return Err(Error::SegmentCap {
            requested,
            cap: MAX_SEGMENTS,
        });
    }
    if requested == 0 {
        return Err(Error::GeometryInfeasible("segment counts must be positive".into()));
    }
    let region = meso.porous_box;
    let dx = region.width() / n_x as f64;
    let dy = region.height() / n_y as f64;
    let fallback_radius = cell.mean_radius();
    let mut segments = Vec::with_capacity(requested);
    for j in 0..n_y {
        for i in 0..n_x {
            let bbox = Aabb::new(
                [region.lo[0] + i as f64 * dx, region.lo[1] + j as f64 * dy],
                [
                    region.lo[0] + (i + 1) as f64 * dx,
                    region.lo[1] + (j + 1) as f64 * dy,
                ],
            );
            let mut solid = 0.0;
            let mut weighted_r = 0.0;
            for f in &cell.fibers {
                let a = disc_box_overlap_area(f.center, f.radius, &bbox);
                solid += a;
                weighted_r += a * f.radius;
            }
            let fiber_radius = if solid > 0.0 {
                weighted_r / solid
            } else {
                fallback_radius
            };
            segments.push(SegmentFeatures {
                bbox,
                fvc: solid / bbox.area(),
                orientation: 0.0,
                fiber_radius,
            });
        }
    }
    Ok(SegmentGrid {
        n_x,
        n_y,
        region,
        segments,
    })
}

/// Piecewise-constant tensor field over the porous box.
#[derive(Debug, Clone, PartialEq)]
pub struct PermeabilityField {
    pub n_x: usize,
    pub n_y: usize,
    pub tensors: Vec<Tensor2>,
}

impl PermeabilityField {
    pub fn uniform(k: Tensor2) -> Self {
        Self {
            n_x: 1,
            n_y: 1,
            tensors: vec![k],
        }
    }
}

/// Mesoscale cell: the tow is a porous continuum; the rest is open fluid
/// (infinite permeability).
#[derive(Debug, Clone, PartialEq)]
pub struct MesoCell {
    pub domain: Aabb,
    pub porous_box: Aabb,
    pub field: PermeabilityField,
}

impl MesoCell {
    pub fn new(porous_box: Aabb, field: PermeabilityField) -> Result<Self> {
        if field.tensors.len() != field.n_x * field.n_y || field.tensors.is_empty() {
            return Err(Error::InvalidPermeability(
                "field size does not match its segment counts".into(),
            ));
        }
        if field.tensors.len() > MAX_SEGMENTS {
            return Err(Error::SegmentCap {
                requested: field.tensors.len(),
                cap: MAX_SEGMENTS,
            });
        }
        for (i, k) in field.tensors.iter().enumerate() {
            if !k.is_spd() {
                return Err(Error::InvalidPermeability(format!(
                    "tensor {i} is not symmetric positive definite: {:?}",
                    k.m
                )));
            }
        }
        let domain = Aabb::unit();
        if !domain.contains_box(&porous_box) || porous_box.is_empty() {
            return Err(Error::GeometryInfeasible("porous box outside domain".into()));
        }
        Ok(Self {
            domain,
            porous_box,
            field,
        })
    }

    pub fn uniform(porous_box: Aabb, k: Tensor2) -> Result<Self> {
        Self::new(porous_box, PermeabilityField::uniform(k))
    }

    /// Local permeability; `None` in the open fluid.
    pub fn permeability_at(&self, x: Point) -> Option<&Tensor2> {
        let b = &self.porous_box;
        let everywhere = b.contains_box(&self.domain);
        if !everywhere && !(x[0] > b.lo[0] && x[0] < b.hi[0] && x[1] > b.lo[1] && x[1] < b.hi[1]) {
            return None;
        }
        let fx = ((x[0] - b.lo[0]) / b.width() * self.field.n_x as f64) as usize;
        let fy = ((x[1] - b.lo[1]) / b.height() * self.field.n_y as f64) as usize;
        let i = fx.min(self.field.n_x - 1);
        let j = fy.min(self.field.n_y - 1);
        Some(&self.field.tensors[j * self.field.n_x + i])
    }
}

/// Per-region sample counts for [`sample_collocation`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollocationCounts {
    /// Fluid points inside the split box.
    pub inner: usize,
    /// Fluid points outside the split box.
    pub outer: usize,
    pub per_edge: usize,
    pub per_fiber: usize,
}

impl CollocationCounts {
    pub fn residual_total(&self) -> usize {
        self.inner + self.outer + 4 * self.per_edge
    }
}

/// Collocation and coupling point sets for one micro cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointSets {
    pub interior: Vec<Point>,
    pub fiber_boundary: Vec<Point>,
    pub gamma_in: Vec<Point>,
    pub gamma_out: Vec<Point>,
    pub gamma_up: Vec<Point>,
    pub gamma_down: Vec<Point>,
    pub coupling_velocity: Vec<Point>,
    pub coupling_pressure: Vec<Point>,
    pub seed: u64,
}

impl PointSets {
    /// Interior fluid points followed by the four edge sets.
    pub fn residual_points(&self) -> Vec<Point> {
        let mut pts = self.interior.clone();
        pts.extend_from_slice(&self.gamma_in);
        pts.extend_from_slice(&self.gamma_out);
        pts.extend_from_slice(&self.gamma_up);
        pts.extend_from_slice(&self.gamma_down);
        pts
    }

    pub fn n_r(&self) -> usize {
        self.interior.len()
            + self.gamma_in.len()
            + self.gamma_out.len()
            + self.gamma_up.len()
            + self.gamma_down.len()
    }

    pub fn n_b(&self) -> usize {
        self.fiber_boundary.len()
    }
}

const MAX_REJECTION_FACTOR: usize = 10_000;

fn sample_region<R: Rng>(
    rng: &mut R,
    count: usize,
    draw_box: &Aabb,
    accept: impl Fn(Point) -> bool,
    label: &str,
) -> Result<Vec<Point>> {
    let mut out = Vec::with_capacity(count);
    let budget = MAX_REJECTION_FACTOR * count.max(1);
    let mut attempts = 0usize;
    while out.len() < count {
        if attempts >= budget {
            return Err(Error::Sampling(format!(
                "{label}: only {} of {count} points accepted after {attempts} attempts",
                out.len()
            )));
        }
        attempts += 1;
        let p = [
            rng.gen_range(draw_box.lo[0]..draw_box.hi[0]),
            rng.gen_range(draw_box.lo[1]..draw_box.hi[1]),
        ];
        if accept(p) {
            out.push(p);
        }
    }
    Ok(out)
}

/// Draws interior fluid points by rejection (stratified by `split_box`),
/// random points on each domain edge and equi-angular points on every fiber.
pub fn sample_collocation(
    cell: &MicroCell,
    counts: &CollocationCounts,
    split_box: &Aabb,
    seed: u64,
) -> Result<PointSets> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = sample_region(
        &mut rng,
        counts.inner,
        split_box,
        |p| cell.signed_distance(p) > 0.0,
        "split box",
    )?;
    let outer = sample_region(
        &mut rng,
        counts.outer,
        &cell.domain,
        |p| !split_box.contains(p) && cell.signed_distance(p) > 0.0,
        "outer region",
    )?;
    let mut interior = inner;
    interior.extend(outer);

    let mut edge = |fixed_axis: usize, value: f64| -> Vec<Point> {
        (0..counts.per_edge)
            .map(|_| {
                let t: f64 = rng.gen_range(0.0..1.0);
                if fixed_axis == 0 {
                    [value, t]
                } else {
                    [t, value]
                }
            })
            .collect()
    };
    let gamma_in = edge(0, 0.0);
    let gamma_out = edge(0, 1.0);
    let gamma_down = edge(1, 0.0);
    let gamma_up = edge(1, 1.0);

    let mut fiber_boundary = Vec::with_capacity(cell.fibers.len() * counts.per_fiber);
    for f in &cell.fibers {
        for k in 0..counts.per_fiber {
            let th = 2.0 * PI * k as f64 / counts.per_fiber as f64;
            fiber_boundary.push([
                f.center[0] + f.radius * th.cos(),
                f.center[1] + f.radius * th.sin(),
            ]);
        }
    }

    Ok(PointSets {
        interior,
        fiber_boundary,
        gamma_in,
        gamma_out,
        gamma_up,
        gamma_down,
        coupling_velocity: Vec::new(),
        coupling_pressure: Vec::new(),
        seed,
    })
}

/// Keeps mesh points outside `buffer_box` that are farther than
/// `edge_margin` from the top and bottom edges of the mesoscale domain.
pub fn build_coupling_sets(
    meso: &MesoCell,
    mesh_points: &[Point],
    buffer_box: &Aabb,
    edge_margin: f64,
) -> Result<(Vec<Point>, Vec<Point>)> {
    if !buffer_box.contains_box(&meso.porous_box) {
        return Err(Error::CouplingSet(
            "buffer box must enclose the porous box".into(),
        ));
    }
    let lo = meso.domain.lo[1];
    let hi = meso.domain.hi[1];
    let kept: Vec<Point> = mesh_points
        .iter()
        .copied()
        .filter(|&p| !buffer_box.contains(p) && p[1] - lo > edge_margin && hi - p[1] > edge_margin)
        .collect();
    if kept.is_empty() {
        return Err(Error::CouplingSet(format!(
            "no mesh point survives the filter ({} candidates)",
            mesh_points.len()
        )));
    }
    Ok((kept.clone(), kept))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOW: Aabb = Aabb::square(0.28, 0.72);

    #[test]
    fn distance_to_solid_along_axis() {
        let cell = MicroCell::new(TOW, vec![Fiber { center: [0.5, 0.5], radius: 0.1 }]).unwrap();
        let d = cell.distance_to_solid([0.35, 0.5], [1.0, 0.0], 0.1).unwrap();
        assert!((d - 0.05).abs() < 1e-12);
        assert!(cell.distance_to_solid([0.35, 0.5], [-1.0, 0.0], 0.1).is_none());
        assert_eq!(cell.distance_to_solid([0.5, 0.5], [0.0, 1.0], 0.1), Some(0.0));
        assert!(cell.distance_to_solid([0.35, 0.5], [1.0, 0.0], 0.04).is_none());
    }

    #[test]
    fn benchmark_lattices() {
        let c25 = build_micro_cell(5, 2.75e-2, TOW).unwrap();
        assert_eq!(c25.fibers.len(), 25);
        let pitch = c25.fibers[1].center[0] - c25.fibers[0].center[0];
        assert!((pitch - 0.088).abs() < 1e-12);

        let c36 = build_micro_cell(6, 2.5e-2, TOW).unwrap();
        assert_eq!(c36.fibers.len(), 36);
        let pitch = c36.fibers[1].center[0] - c36.fibers[0].center[0];
        assert!((pitch - 0.44 / 6.0).abs() < 1e-12);

        let c1 = build_micro_cell(1, 0.1, TOW).unwrap();
        assert_eq!(c1.fibers.len(), 1);
        assert!((c1.fibers[0].center[0] - 0.5).abs() < 1e-15);
        assert!((c1.fibers[0].center[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn infeasible_lattices_are_rejected() {
        assert!(matches!(
            build_micro_cell(6, 0.04, TOW),
            Err(Error::GeometryInfeasible(_))
        ));
        assert!(build_micro_cell(0, 0.01, TOW).is_err());
        let bad = MicroCell::new(
            TOW,
            vec![Fiber {
                center: [0.29, 0.5],
                radius: 0.02,
            }],
        );
        assert!(matches!(bad, Err(Error::GeometryInfeasible(_))));
        assert!(MicroCell::new(Aabb::square(0.0, 0.5), vec![]).is_err());
    }

    #[test]
    fn lattice_is_mirror_symmetric() {
        let c = build_micro_cell(5, 2.75e-2, TOW).unwrap();
        for f in &c.fibers {
            for mirrored in [
                [1.0 - f.center[0], f.center[1]],
                [f.center[0], 1.0 - f.center[1]],
                [f.center[1], f.center[0]],
            ] {
                assert!(c
                    .fibers
                    .iter()
                    .any(|g| (g.center[0] - mirrored[0]).abs() < 1e-12
                        && (g.center[1] - mirrored[1]).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn signed_distance_examples() {
        let c = build_micro_cell(5, 2.75e-2, TOW).unwrap();
        let f = c.fibers[7];
        assert!((c.signed_distance(f.center) + f.radius).abs() < 1e-15);
        let on_circle = [f.center[0] + f.radius * 0.6, f.center[1] + f.radius * 0.8];
        assert!(c.signed_distance(on_circle).abs() < 1e-12);
        let corner = c.signed_distance([0.0, 0.0]);
        let nearest = c
            .fibers
            .iter()
            .map(|f| f.center[0].hypot(f.center[1]) - f.radius)
            .fold(f64::INFINITY, f64::min);
        assert!(corner > 0.0 && corner <= nearest + 1e-15);
        assert_eq!(MicroCell::new(TOW, vec![]).unwrap().signed_distance([0.5, 0.5]), f64::INFINITY);
    }

    #[test]
    fn fvc_examples() {
        let c25 = build_micro_cell(5, 2.75e-2, TOW).unwrap();
        let expect = 25.0 * PI * 2.75e-2f64.powi(2) / 0.44f64.powi(2);
        assert!((tow_fvc(&c25) - expect).abs() < 1e-14);
        assert!((tow_fvc(&c25) - 0.3068).abs() < 1e-4);
        let c36 = build_micro_cell(6, 2.5e-2, TOW).unwrap();
        assert!((tow_fvc(&c36) - 0.3651).abs() < 1e-4);
        assert_eq!(tow_fvc(&MicroCell::new(TOW, vec![]).unwrap()), 0.0);
    }

    #[test]
    fn overlap_area_limits() {
        let full = disc_box_overlap_area([0.5, 0.5], 0.1, &Aabb::unit());
        assert!((full - PI * 0.01).abs() < 1e-15);
        let half = disc_box_overlap_area([0.5, 0.5], 0.1, &Aabb::new([0.0, 0.0], [0.5, 1.0]));
        assert!((half - 0.5 * PI * 0.01).abs() < 1e-15);
        let quarter = disc_box_overlap_area([0.5, 0.5], 0.1, &Aabb::new([0.5, 0.5], [1.0, 1.0]));
        assert!((quarter - 0.25 * PI * 0.01).abs() < 1e-15);
        assert_eq!(disc_box_overlap_area([0.5, 0.5], 0.1, &Aabb::square(0.7, 0.9)), 0.0);
        let inside = disc_box_overlap_area([0.5, 0.5], 0.1, &Aabb::square(0.45, 0.55));
        assert!((inside - 0.01).abs() < 1e-15);
    }

    #[test]
    fn segment_cap() {
        let c = build_micro_cell(5, 2.75e-2, TOW).unwrap();
        let meso = MesoCell::uniform(TOW, Tensor2::iso(1e-4)).unwrap();
        assert!(matches!(
            decompose_segments(&meso, &c, 16, 16),
            Err(Error::SegmentCap { requested: 256, .. })
        ));
        assert!(decompose_segments(&meso, &c, 15, 17).is_ok());
    }

    #[test]
    fn segment_decomposition_of_lattice() {
        let c = build_micro_cell(5, 2.75e-2, TOW).unwrap();
        let meso = MesoCell::uniform(TOW, Tensor2::iso(1e-4)).unwrap();
        let one = decompose_segments(&meso, &c, 1, 1).unwrap();
        assert!((one.segments[0].fvc - tow_fvc(&c)).abs() < 1e-12);
        let grid = decompose_segments(&meso, &c, 5, 5).unwrap();
        for s in &grid.segments {
            assert!((s.fvc - grid.segments[0].fvc).abs() < 1e-12);
            assert_eq!(s.orientation, 0.0);
            assert_eq!(s.fiber_radius, 2.75e-2);
        }
    }

    #[test]
    fn collocation_counts_and_determinism() {
        let c = build_micro_cell(5, 2.75e-2, TOW).unwrap();
        let counts = CollocationCounts {
            inner: 1500,
            outer: 4500,
            per_edge: 200,
            per_fiber: 200,
        };
        let split = Aabb::square(0.22, 0.78);
        let a = sample_collocation(&c, &counts, &split, 7).unwrap();
        let b = sample_collocation(&c, &counts, &split, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_r(), 6800);
        assert_eq!(a.n_b(), 5000);
        assert!(a.interior[..1500].iter().all(|&p| split.contains(p)));
        assert!(a.interior[1500..].iter().all(|&p| !split.contains(p)));
        assert!(a.interior.iter().all(|&p| c.signed_distance(p) > 0.0));
        assert!(a.fiber_boundary.iter().all(|&p| c.signed_distance(p).abs() <= 1e-12));
        assert!(a.gamma_in.iter().all(|p| p[0] == 0.0));
        assert!(a.gamma_up.iter().all(|p| p[1] == 1.0));
    }

    #[test]
    fn sampling_fails_on_degenerate_region() {
        let c = build_micro_cell(1, 0.2, TOW).unwrap();
        let counts = CollocationCounts {
            inner: 10,
            outer: 0,
            per_edge: 0,
            per_fiber: 0,
        };
        let inside_fiber = Aabb::square(0.45, 0.55);
        assert!(matches!(
            sample_collocation(&c, &counts, &inside_fiber, 1),
            Err(Error::Sampling(_))
        ));
    }

    #[test]
    fn coupling_filter_examples() {
        let meso = MesoCell::uniform(TOW, Tensor2::iso(1e-4)).unwrap();
        let buffer = Aabb::square(0.22, 0.78);
        let pts = [[0.5, 0.5], [0.1, 0.008], [0.1, 0.5]];
        let (u, p) = build_coupling_sets(&meso, &pts, &buffer, 0.015).unwrap();
        assert_eq!(u, vec![[0.1, 0.5]]);
        assert_eq!(u, p);
        assert!(matches!(
            build_coupling_sets(&meso, &pts[..2], &buffer, 0.015),
            Err(Error::CouplingSet(_))
        ));
    }

    #[test]
    fn document_round_trip_is_exact() {
        let c = build_micro_cell(6, 2.5e-2, TOW).unwrap();
        let doc = c.to_document(Some(42));
        let text = doc.to_json().unwrap();
        let back = GeometryDocument::from_json(&text).unwrap();
        assert_eq!(doc, back);
        assert_eq!(MicroCell::from_document(&back).unwrap(), c);
    }
}
