//! Volume averaging, Darcy inversion and the restricted averaging window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, MesoCell, MicroCell, PermeabilityField, SegmentGrid};
use crate::stokes::{solve_stokes_micro, BcMode, Field, FlowState, Grid, SolverConfig};
use crate::tensor::Tensor2;

/// Box over which the benchmark velocity is averaged before the inset.
pub const BENCHMARK_WINDOW: Aabb = Aabb::square(0.3125, 0.6875);

/// Largest condition number accepted for the pressure-drop matrix.
pub const MAX_DROP_CONDITION: f64 = 1e12;

/// What the averaged integrals are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMeasure {
    /// Area of the inset window (superficial average).
    #[default]
    Window,
    /// Window area minus the fiber overlap (intrinsic average).
    Fluid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AveragingWindow {
    pub base_box: Aabb,
    pub l_p: f64,
    #[serde(default)]
    pub measure: AverageMeasure,
}

impl AveragingWindow {
    pub fn new(base_box: Aabb, l_p: f64) -> Result<Self> {
        let w = Self {
            base_box,
            l_p,
            measure: AverageMeasure::Window,
        };
        if !(l_p >= 0.0) || w.region().is_empty() {
            return Err(Error::Averaging(format!(
                "inset {l_p} leaves no window inside {:?}",
                base_box
            )));
        }
        Ok(w)
    }

    pub fn benchmark(l_p: f64) -> Result<Self> {
        Self::new(BENCHMARK_WINDOW, l_p)
    }

    pub fn with_measure(mut self, measure: AverageMeasure) -> Self {
        self.measure = measure;
        self
    }

    /// The inset box `[lo + l_p, hi - l_p]^2`.
    pub fn region(&self) -> Aabb {
        self.base_box.inset(self.l_p)
    }

    /// Denominator of the average. `mask` supplies the fibers for the fluid measure.
    pub fn measure_of(&self, mask: Option<&MicroCell>) -> Result<f64> {
        let region = self.region();
        let area = match (self.measure, mask) {
            (AverageMeasure::Window, _) | (AverageMeasure::Fluid, None) => region.area(),
            (AverageMeasure::Fluid, Some(cell)) => region.area() - cell.solid_area_in(&region),
        };
        if !(area > 0.0) {
            return Err(Error::Averaging(format!("window {region:?} has no fluid")));
        }
        Ok(area)
    }
}

/// Overlap length of `[a0, a1]` and `[b0, b1]`.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Midpoint-rule integral of the cell-centred velocity over `region`,
/// weighting each cell by its overlap with the region.
fn integrate_velocity(state: &FlowState, region: &Aabb) -> [f64; 2] {
    let n = state.grid.n;
    let h = state.grid.h();
    let range = |lo: f64, hi: f64| {
        let a = ((lo / h).floor().max(0.0)) as usize;
        let b = ((hi / h).ceil() as usize).min(n);
        a..b
    };
    let mut acc = [0.0; 2];
    for j in range(region.lo[1], region.hi[1]) {
        let wy = overlap(j as f64 * h, (j + 1) as f64 * h, region.lo[1], region.hi[1]);
        if wy == 0.0 {
            continue;
        }
        for i in range(region.lo[0], region.hi[0]) {
            let wx = overlap(i as f64 * h, (i + 1) as f64 * h, region.lo[0], region.hi[0]);
            if wx == 0.0 {
                continue;
            }
            let c = state.cell_velocity(i, j);
            acc[0] += wx * wy * c[0];
            acc[1] += wx * wy * c[1];
        }
    }
    acc
}

fn check_inside(window: &AveragingWindow) -> Result<Aabb> {
    let region = window.region();
    if region.is_empty() {
        return Err(Error::Averaging("empty averaging window".into()));
    }
    if !Aabb::unit().contains_box(&region) {
        return Err(Error::Averaging(format!("window {region:?} leaves the unit cell")));
    }
    Ok(region)
}

/// Averaged velocity over the window. With a `mask` and the fluid
/// measure the integral is divided by the window's fluid area.
pub fn volume_average_velocity(
    state: &FlowState,
    window: &AveragingWindow,
    mask: Option<&MicroCell>,
) -> Result<[f64; 2]> {
    let region = check_inside(window)?;
    let m = window.measure_of(mask)?;
    let s = integrate_velocity(state, &region);
    Ok([s[0] / m, s[1] / m])
}

/// `f` minus the averaged pressure gradient. The gradient integral is
/// reduced to pressure differences across the window, sampled with the
/// bilinear interpolant at one point per grid cell along each edge.
pub fn pressure_drop(state: &FlowState, window: &AveragingWindow, f: [f64; 2]) -> Result<[f64; 2]> {
    let region = check_inside(window)?;
    let m = window.measure_of(None)?;
    let n = state.grid.n;
    let edge_integral = |along: usize| -> f64 {
        // integral over the other coordinate of p(hi) - p(lo)
        let other = 1 - along;
        let (a, b) = (region.lo[other], region.hi[other]);
        let k = (((b - a) * n as f64).ceil() as usize).max(1);
        let dt = (b - a) / k as f64;
        (0..k)
            .map(|q| {
                let t = a + (q as f64 + 0.5) * dt;
                let mut lo = [0.0; 2];
                let mut hi = [0.0; 2];
                lo[along] = region.lo[along];
                hi[along] = region.hi[along];
                lo[other] = t;
                hi[other] = t;
                state.sample(Field::P, hi) - state.sample(Field::P, lo)
            })
            .sum::<f64>()
            * dt
    };
    Ok([f[0] - edge_integral(0) / m, f[1] - edge_integral(1) / m])
}

/// `K = U / (mu PD)` for one direction.
pub fn darcy_scalar(u: f64, pd: f64, mu: f64) -> Result<f64> {
    if pd == 0.0 {
        return Err(Error::SingularDrop);
    }
    Ok(u / (mu * pd))
}

/// Result of a tensor inversion: the symmetrised tensor and the size of
/// the antisymmetric part that was discarded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DarcyTensor {
    pub k: Tensor2,
    pub asymmetry: f64,
}

/// `K = mu U PD^-1`, symmetrised. Column `k` of `u` and `pd` holds the
/// averaged velocity and pressure drop of the solve forced along axis `k`.
pub fn darcy_tensor(u: &Tensor2, pd: &Tensor2, mu: f64) -> Result<DarcyTensor> {
    let cond = pd.condition();
    if !(cond <= MAX_DROP_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let inv = pd.inverse().ok_or(Error::SingularDrop)?;
    let k = u.mul(&inv).scale(mu);
    let asymmetry = 0.5 * (k.m[0][1] - k.m[1][0]).abs();
    Ok(DarcyTensor {
        k: k.symmetrized(),
        asymmetry,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermeabilityEstimate {
    pub tensor: Tensor2,
    pub band_low: f64,
    pub band_high: f64,
    pub window: AveragingWindow,
    /// `(l_p, K11)` pairs of the sweep.
    pub sweep: Vec<(f64, f64)>,
}

/// Flat record written to run manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermeabilityRecord {
    pub k11: f64,
    pub k12: f64,
    pub k21: f64,
    pub k22: f64,
    pub band_low: f64,
    pub band_high: f64,
    pub l_p_sweep: Vec<[f64; 2]>,
}

impl PermeabilityEstimate {
    pub fn k11(&self) -> f64 {
        self.tensor.m[0][0]
    }

    pub fn to_record(&self) -> PermeabilityRecord {
        PermeabilityRecord {
            k11: self.tensor.m[0][0],
            k12: self.tensor.m[0][1],
            k21: self.tensor.m[1][0],
            k22: self.tensor.m[1][1],
            band_low: self.band_low,
            band_high: self.band_high,
            l_p_sweep: self.sweep.iter().map(|&(a, b)| [a, b]).collect(),
        }
    }
}

/// Equispaced inset lengths covering `range`.
pub fn l_p_samples(range: [f64; 2], n_samples: usize) -> Vec<f64> {
    match n_samples {
        0 => vec![],
        1 => vec![range[0]],
        m => (0..m)
            .map(|k| range[0] + (range[1] - range[0]) * k as f64 / (m - 1) as f64)
            .collect(),
    }
}

/// Pressure drop with the gradient averaged over the whole periodic cell,
/// where it vanishes up to the solver tolerance.
pub fn cell_pressure_drop(state: &FlowState, f: [f64; 2]) -> Result<[f64; 2]> {
    pressure_drop(state, &AveragingWindow::new(Aabb::unit(), 0.0)?, f)
}

/// K11 of a converged e1-forced state for every inset in the sweep. Only
/// the velocity is averaged over the window; the pressure drop is the
/// whole-cell one. The point value is taken at the first sample and the
/// band is the sweep's min/max. The tensor is `K11 I`, the isotropy of the
/// lattice cells.
pub fn estimate_from_state(
    state: &FlowState,
    cell: &MicroCell,
    base: AveragingWindow,
    config: &SolverConfig,
    l_p_range: [f64; 2],
    n_samples: usize,
) -> Result<PermeabilityEstimate> {
    let samples = l_p_samples(l_p_range, n_samples.max(1));
    let mut sweep = Vec::with_capacity(samples.len());
    for &l_p in &samples {
        let w = AveragingWindow {
            l_p,
            ..base
        };
        let u = volume_average_velocity(state, &w, Some(cell))?;
        let pd = cell_pressure_drop(state, config.body_force)?;
        sweep.push((l_p, darcy_scalar(u[0], pd[0], config.mu)?));
    }
    let k11 = sweep[0].1;
    let band_low = sweep.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
    let band_high = sweep.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(PermeabilityEstimate {
        tensor: Tensor2::iso(k11),
        band_low,
        band_high,
        window: AveragingWindow {
            l_p: samples[0],
            ..base
        },
        sweep,
    })
}

/// One periodic micro solve followed by the inset sweep.
pub fn permeability_with_band(
    cell: &MicroCell,
    grid: Grid,
    config: &SolverConfig,
    measure: AverageMeasure,
    l_p_range: [f64; 2],
    n_samples: usize,
) -> Result<(PermeabilityEstimate, FlowState)> {
    let sol = solve_stokes_micro(cell, grid, config, BcMode::PeriodicBenchmark)?;
    let base = AveragingWindow::benchmark(l_p_range[0])?.with_measure(measure);
    let est = estimate_from_state(&sol.state, cell, base, config, l_p_range, n_samples)?;
    Ok((est, sol.state))
}

/// Full tensor from two solves forced along each axis.
pub fn permeability_tensor(
    cell: &MicroCell,
    grid: Grid,
    config: &SolverConfig,
    window: &AveragingWindow,
) -> Result<DarcyTensor> {
    let f = config.body_force[0].hypot(config.body_force[1]);
    let mut u = Tensor2::new([[0.0; 2]; 2]);
    let mut pd = Tensor2::new([[0.0; 2]; 2]);
    for k in 0..2 {
        let mut cfg = config.clone();
        cfg.body_force = [0.0; 2];
        cfg.body_force[k] = f;
        let sol = solve_stokes_micro(cell, grid, &cfg, BcMode::PeriodicBenchmark)?;
        let uk = volume_average_velocity(&sol.state, window, Some(cell))?;
        let pk = cell_pressure_drop(&sol.state, cfg.body_force)?;
        u.m[0][k] = uk[0];
        u.m[1][k] = uk[1];
        pd.m[0][k] = pk[0];
        pd.m[1][k] = pk[1];
    }
    darcy_tensor(&u, &pd, config.mu)
}

/// K[Z] from a converged Brinkman state, averaged over the whole cell.
pub fn meso_permeability(state: &FlowState, config: &SolverConfig) -> Result<f64> {
    let window = AveragingWindow::new(Aabb::unit(), 0.0)?;
    let u = volume_average_velocity(state, &window, None)?;
    let pd = cell_pressure_drop(state, config.body_force)?;
    darcy_scalar(u[0], pd[0], config.mu)
}

/// Isotropic prediction plus whether the inputs had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub tensor: Tensor2,
    pub clamped: bool,
}

/// Anything that maps segment features to a micropermeability.
pub trait PermeabilityPredictor {
    fn predict(&self, fvc: f64, radius: f64) -> Result<Prediction>;
}

/// A fixed tensor, for pinning every segment to one value.
impl PermeabilityPredictor for Tensor2 {
    fn predict(&self, _fvc: f64, _radius: f64) -> Result<Prediction> {
        Ok(Prediction {
            tensor: *self,
            clamped: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAssignment {
    pub field: PermeabilityField,
    /// One message per segment whose features were clamped to the hull.
    pub warnings: Vec<String>,
}

pub fn assign_segment_permeabilities(
    segments: &SegmentGrid,
    predictor: &dyn PermeabilityPredictor,
) -> Result<SegmentAssignment> {
    if segments.len() > crate::geometry::MAX_SEGMENTS {
        return Err(Error::SegmentCap {
            requested: segments.len(),
            cap: crate::geometry::MAX_SEGMENTS,
        });
    }
    let mut tensors = Vec::with_capacity(segments.len());
    let mut warnings = Vec::new();
    for (idx, s) in segments.segments.iter().enumerate() {
        let p = predictor.predict(s.fvc, s.fiber_radius)?;
        if p.clamped {
            let msg = format!(
                "segment {idx}: features (fvc {:.4}, r {:.4}) clamped to the training hull",
                s.fvc, s.fiber_radius
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        tensors.push(p.tensor);
    }
    Ok(SegmentAssignment {
        field: PermeabilityField {
            n_x: segments.n_x,
            n_y: segments.n_y,
            tensors,
        },
        warnings,
    })
}

/// Convenience: a meso cell whose porous box carries the assigned field.
pub fn meso_from_segments(
    segments: &SegmentGrid,
    predictor: &dyn PermeabilityPredictor,
) -> Result<(MesoCell, Vec<String>)> {
    let a = assign_segment_permeabilities(segments, predictor)?;
    Ok((MesoCell::new(segments.region, a.field)?, a.warnings))
}
