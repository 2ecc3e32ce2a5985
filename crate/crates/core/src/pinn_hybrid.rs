//! PINN losses, the coarse-scale coupling regulariser, loss balancing and
//! the hybrid training loop that alternates Adam steps on the networks with
//! Stokes-Brinkman solves at a permeability predicted by the networks.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_coupling_sets, Aabb, MesoCell, MicroCell, Point, PointSets};
use crate::neural::{init_params, ArchitectureConfig, NetworkParams, ParamGrad, Streams, DX, DY, LAP, VALUE};
use crate::parallel::ordered_map;
use crate::stokes::{solve_stokes_brinkman, Field, FlowState, Grid, SolverConfig};
use crate::tensor::Tensor2;
use crate::upscaling::{darcy_scalar, AverageMeasure, AveragingWindow};

/// Points per forward/backward batch. Fixed so that sums are reduced in
/// the same order whatever the thread count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_r: f64,
    pub lambda_div: f64,
    pub lambda_b: f64,
    pub lambda_u: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_div: 1.0,
            lambda_b: 1.0,
            lambda_u: 1.0,
            lambda_p: 1.0,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.lambda_r, self.lambda_div, self.lambda_b, self.lambda_u, self.lambda_p]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            lambda_r: a[0],
            lambda_div: a[1],
            lambda_b: a[2],
            lambda_u: a[3],
            lambda_p: a[4],
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_array(self.as_array().map(|x| c * x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub l0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_rate: f64,
    pub decay_every: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            l0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_rate: 0.9,
            decay_every: 1000,
        }
    }
}

/// `l_k = l0 * decay_rate^(k / decay_every)`.
pub fn learning_rate(k: usize, adam: &AdamConfig) -> f64 {
    adam.l0 * adam.decay_rate.powf(k as f64 / adam.decay_every as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: usize,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: 0,
        }
    }
}

/// One bias-corrected Adam update at learning rate `learning_rate(state.steps)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, adam: &AdamConfig) {
    let lr = learning_rate(state.steps, adam);
    state.steps += 1;
    let t = state.steps as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
        state.v[i] = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + adam.eps);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub k_max: usize,
    pub k_c: usize,
    /// Coupling cadence `T`.
    pub coupling_every: usize,
    pub gamma_u: f64,
    pub gamma_p: f64,
    pub k_init: f64,
    pub k_lb: f64,
    pub k_ub: f64,
    pub adam: AdamConfig,
    pub weight_scaling_alpha: f64,
    pub meso_grid_n: usize,
    pub initial_weights: LossWeights,
    /// Fluid and Brinkman parameters of both scales.
    #[serde(skip)]
    pub solver: SolverConfig,
    /// Points excluded from the coupling sets (the buffered tow).
    pub buffer_box: Aabb,
    pub edge_margin: f64,
    /// Averaging window for the network permeability.
    #[serde(skip)]
    pub window: AveragingWindow,
    /// Midpoints per side of the quadrature over the window.
    pub quadrature_n: usize,
    /// Use `f - <dp/dx1>` instead of `|f|` as the pressure drop.
    pub exact_pressure_drop: bool,
    #[serde(skip)]
    pub threads: usize,
    /// Zero the wall-clock fields so reruns are byte-identical.
    #[serde(skip)]
    pub deterministic: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            k_max: 25_000,
            k_c: 5_000,
            coupling_every: 250,
            gamma_u: 2.5e-4,
            gamma_p: 2.5e-4,
            k_init: 4.5e-4,
            k_lb: 5e-5,
            k_ub: 5e-4,
            adam: AdamConfig::default(),
            weight_scaling_alpha: 0.9,
            meso_grid_n: 128,
            initial_weights: LossWeights::default(),
            solver: SolverConfig::default(),
            buffer_box: Aabb::square(0.22, 0.78),
            edge_margin: 0.015,
            window: AveragingWindow {
                base_box: crate::upscaling::BENCHMARK_WINDOW,
                l_p: 0.0,
                measure: AverageMeasure::Window,
            },
            quadrature_n: 128,
            exact_pressure_drop: false,
            threads: 1,
            deterministic: true,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_lb > 0.0 && self.k_lb <= self.k_init && self.k_init <= self.k_ub) {
            return Err(Error::Config(format!(
                "need 0 < K_LB <= K_init <= K_UB, got {} {} {}",
                self.k_lb, self.k_init, self.k_ub
            )));
        }
        if self.coupling_every == 0 || self.adam.decay_every == 0 || self.quadrature_n == 0 {
            return Err(Error::Config("coupling_every, decay_every and quadrature_n must be positive".into()));
        }
        if !(self.gamma_u > 0.0 && self.gamma_p > 0.0) {
            return Err(Error::Config("annealing rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.weight_scaling_alpha) {
            return Err(Error::Config("weight_scaling_alpha must lie in [0, 1]".into()));
        }
        let w = self.initial_weights.as_array();
        if w.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::Config("loss weights must be positive".into()));
        }
        self.solver.validate()
    }
}

/// Unweighted loss terms `(J_r, J_div, J_b, J_u, J_p)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub j_r: f64,
    pub j_div: f64,
    pub j_b: f64,
    pub j_u: f64,
    pub j_p: f64,
}

impl LossTerms {
    pub fn as_array(&self) -> [f64; 5] {
        [self.j_r, self.j_div, self.j_b, self.j_u, self.j_p]
    }

    /// `J + R` for the given weights.
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        self.as_array().iter().zip(w.as_array()).map(|(j, l)| j * l).sum()
    }
}

/// Sums of squared momentum residuals and divergences over a batch, with
/// a per-point body force. Adjoint streams for `c_r * sum |r|^2` and
/// `c_div * sum d^2` are added to `du`/`dp` when given.
pub fn residual_sums(
    u: &Streams,
    p: &Streams,
    mu: f64,
    force: impl Fn(usize) -> [f64; 2],
    mut adjoint: Option<(&mut Streams, &mut Streams, f64, f64)>,
) -> (f64, f64) {
    let mut jr = 0.0;
    let mut jd = 0.0;
    for row in 0..u.rows {
        let f = force(row);
        let r1 = p.at(DX, row, 0) - mu * u.at(LAP, row, 0) - f[0];
        let r2 = p.at(DY, row, 0) - mu * u.at(LAP, row, 1) - f[1];
        let d = u.at(DX, row, 0) + u.at(DY, row, 1);
        jr += r1 * r1 + r2 * r2;
        jd += d * d;
        if let Some((du, dp, cr, cd)) = adjoint.as_mut() {
            *dp.at_mut(DX, row, 0) += 2.0 * *cr * r1;
            *dp.at_mut(DY, row, 0) += 2.0 * *cr * r2;
            *du.at_mut(LAP, row, 0) -= 2.0 * *cr * mu * r1;
            *du.at_mut(LAP, row, 1) -= 2.0 * *cr * mu * r2;
            *du.at_mut(DX, row, 0) += 2.0 * *cd * d;
            *du.at_mut(DY, row, 1) += 2.0 * *cd * d;
        }
    }
    (jr, jd)
}

/// Coarse-field values at the coupling points.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingTargets {
    pub velocity_points: Vec<Point>,
    pub velocity: Vec<[f64; 2]>,
    pub pressure_points: Vec<Point>,
    pub pressure: Vec<f64>,
}

impl CouplingTargets {
    /// Bilinear samples of a coarse state.
    pub fn sample(state: &FlowState, velocity_points: &[Point], pressure_points: &[Point]) -> Self {
        Self {
            velocity_points: velocity_points.to_vec(),
            velocity: velocity_points.iter().map(|&x| state.sample_velocity(x)).collect(),
            pressure_points: pressure_points.to_vec(),
            pressure: pressure_points.iter().map(|&x| state.sample(Field::P, x)).collect(),
        }
    }
}

/// Point sets of one training problem.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub residual: Vec<Point>,
    pub boundary: Vec<Point>,
}

impl TrainingData {
    pub fn from_point_sets(sets: &PointSets) -> Self {
        Self {
            residual: sets.residual_points(),
            boundary: sets.fiber_boundary.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Work {
    Residual(usize),
    Boundary(usize),
    CouplingU(usize),
    CouplingP(usize),
}

/// What gradients an evaluation returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GradMode {
    None,
    /// Gradient of the weighted sum.
    Total(LossWeights),
    /// One gradient per loss term.
    PerTerm,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub terms: LossTerms,
    /// One entry for `Total`, five for `PerTerm`.
    pub grads: Vec<ParamGrad>,
}

struct ChunkOut {
    sums: [f64; 5],
    grads: Vec<(usize, ParamGrad)>,
}

/// Loss terms and gradients over all point sets. Every term is a mean over
/// its own point set.
pub fn evaluate(
    params: &NetworkParams,
    arch: &ArchitectureConfig,
    data: &TrainingData,
    targets: Option<&CouplingTargets>,
    mu: f64,
    force: [f64; 2],
    mode: GradMode,
    threads: usize,
) -> Evaluation {
    let empty = CouplingTargets::default();
    let t = targets.unwrap_or(&empty);
    let counts = [
        data.residual.len(),
        data.residual.len(),
        data.boundary.len(),
        t.velocity_points.len(),
        t.pressure_points.len(),
    ];
    let inv = counts.map(|c| if c > 0 { 1.0 / c as f64 } else { 0.0 });
    // scale of each term's adjoint, and which gradient slot it goes to
    let (scale, slot): ([f64; 5], [usize; 5]) = match mode {
        GradMode::Total(w) => {
            let l = w.as_array();
            ([0, 1, 2, 3, 4].map(|i| l[i] * inv[i]), [0; 5])
        }
        _ => (inv, [0, 1, 2, 3, 4]),
    };
    let want = mode != GradMode::None;

    let mut work = Vec::new();
    let chunks = |n: usize| (0..n).step_by(CHUNK);
    work.extend(chunks(data.residual.len()).map(Work::Residual));
    work.extend(chunks(data.boundary.len()).map(Work::Boundary));
    work.extend(chunks(t.velocity_points.len()).map(Work::CouplingU));
    work.extend(chunks(t.pressure_points.len()).map(Work::CouplingP));

    let run = |w: &Work| -> ChunkOut {
        let mut sums = [0.0; 5];
        let mut grads = Vec::new();
        let span = |start: usize, n: usize| start..(start + CHUNK).min(n);
        match *w {
            Work::Residual(s) => {
                let pts = &data.residual[span(s, data.residual.len())];
                let b = params.forward_batch(arch, pts, true);
                let n = pts.len();
                if !want {
                    let (jr, jd) = residual_sums(&b.u, &b.p, mu, |_| force, None);
                    sums[0] = jr;
                    sums[1] = jd;
                } else if slot[0] == slot[1] {
                    let mut du = Streams::zeros(n, 2, 4);
                    let mut dp = Streams::zeros(n, 1, 4);
                    let (jr, jd) =
                        residual_sums(&b.u, &b.p, mu, |_| force, Some((&mut du, &mut dp, scale[0], scale[1])));
                    sums[0] = jr;
                    sums[1] = jd;
                    let mut g = ParamGrad::zeros(params);
                    b.backward(params, &du, &dp, &mut g);
                    grads.push((slot[0], g));
                } else {
                    for (term, (cr, cd)) in [(0, (scale[0], 0.0)), (1, (0.0, scale[1]))] {
                        let mut du = Streams::zeros(n, 2, 4);
                        let mut dp = Streams::zeros(n, 1, 4);
                        let (jr, jd) = residual_sums(&b.u, &b.p, mu, |_| force, Some((&mut du, &mut dp, cr, cd)));
                        sums[0] = jr;
                        sums[1] = jd;
                        let mut g = ParamGrad::zeros(params);
                        b.backward(params, &du, &dp, &mut g);
                        grads.push((term, g));
                    }
                }
            }
            Work::Boundary(s) | Work::CouplingU(s) | Work::CouplingP(s) => {
                let (term, pts) = match *w {
                    Work::Boundary(_) => (2, &data.boundary[span(s, data.boundary.len())]),
                    Work::CouplingU(_) => (3, &t.velocity_points[span(s, t.velocity_points.len())]),
                    _ => (4, &t.pressure_points[span(s, t.pressure_points.len())]),
                };
                let b = params.forward_batch(arch, pts, false);
                let n = pts.len();
                let mut du = Streams::zeros(n, 2, 1);
                let mut dp = Streams::zeros(n, 1, 1);
                for row in 0..n {
                    match term {
                        2 | 3 => {
                            let target = if term == 3 { t.velocity[s + row] } else { [0.0; 2] };
                            for c in 0..2 {
                                let e = b.u.at(VALUE, row, c) - target[c];
                                sums[term] += e * e;
                                *du.at_mut(VALUE, row, c) = 2.0 * scale[term] * e;
                            }
                        }
                        _ => {
                            let e = b.p.at(VALUE, row, 0) - t.pressure[s + row];
                            sums[term] += e * e;
                            *dp.at_mut(VALUE, row, 0) = 2.0 * scale[term] * e;
                        }
                    }
                }
                if want {
                    let mut g = ParamGrad::zeros(params);
                    b.backward(params, &du, &dp, &mut g);
                    grads.push((slot[term], g));
                }
            }
        }
        ChunkOut { sums, grads }
    };

    let outs = ordered_map(&work, threads, run);
    let mut sums = [0.0; 5];
    let n_grads = match mode {
        GradMode::None => 0,
        GradMode::Total(_) => 1,
        GradMode::PerTerm => 5,
    };
    let mut grads = vec![ParamGrad::zeros(params); n_grads];
    for o in outs {
        for i in 0..5 {
            sums[i] += o.sums[i];
        }
        for (s, g) in o.grads {
            grads[s].add_scaled(&g, 1.0);
        }
    }
    let j = [0, 1, 2, 3, 4].map(|i| sums[i] * inv[i]);
    Evaluation {
        terms: LossTerms {
            j_r: j[0],
            j_div: j[1],
            j_b: j[2],
            j_u: j[3],
            j_p: j[4],
        },
        grads,
    }
}

/// `(J_r, J_div, J_b)` for a constant body force.
pub fn pinn_losses(
    params: &NetworkParams,
    arch: &ArchitectureConfig,
    data: &TrainingData,
    mu: f64,
    force: [f64; 2],
) -> (f64, f64, f64) {
    let e = evaluate(params, arch, data, None, mu, force, GradMode::None, 1);
    (e.terms.j_r, e.terms.j_div, e.terms.j_b)
}

/// `R = lambda_u J_u + lambda_p J_p`.
pub fn coupling_loss(
    params: &NetworkParams,
    arch: &ArchitectureConfig,
    targets: &CouplingTargets,
    lambda_u: f64,
    lambda_p: f64,
) -> f64 {
    let data = TrainingData {
        residual: vec![],
        boundary: vec![],
    };
    let e = evaluate(params, arch, &data, Some(targets), 1.0, [0.0; 2], GradMode::None, 1);
    lambda_u * e.terms.j_u + lambda_p * e.terms.j_p
}

/// Moving-average update of the weights from per-term gradient norms,
/// normalised so that `lambda_r = 1`. Terms with a missing or zero norm
/// keep their weight.
pub fn weight_scaling(norms: [Option<f64>; 5], current: &LossWeights, alpha: f64) -> LossWeights {
    let active: Vec<usize> = (0..5).filter(|&i| norms[i].is_some_and(|n| n > 0.0 && n.is_finite())).collect();
    if active.is_empty() {
        log::warn!("all gradient norms vanish; loss weights unchanged");
        return *current;
    }
    let total: f64 = active.iter().map(|&i| norms[i].unwrap()).sum();
    let mut w = current.as_array();
    for &i in &active {
        w[i] = (1.0 - alpha) * w[i] + alpha * total / norms[i].unwrap();
    }
    let r = w[0];
    if r > 0.0 {
        w.iter_mut().for_each(|x| *x /= r);
    }
    LossWeights::from_array(w)
}

/// Exponential decay of the coupling weights frozen at `k_c`.
pub fn anneal_coupling_weights(k: usize, k_c: usize, gamma_u: f64, gamma_p: f64, at_kc: (f64, f64)) -> (f64, f64) {
    let dk = k_c as f64 - k as f64;
    ((gamma_u * dk).exp() * at_kc.0, (gamma_p * dk).exp() * at_kc.1)
}

pub fn project_permeability(k_hat: f64, k_lb: f64, k_ub: f64) -> f64 {
    k_lb.max(k_hat.min(k_ub))
}

/// Darcy permeability of the network velocity averaged over the window by
/// midpoint quadrature on the fluid part.
pub fn darcy_from_network(
    params: &NetworkParams,
    arch: &ArchitectureConfig,
    cell: &MicroCell,
    window: &AveragingWindow,
    quadrature_n: usize,
    solver: &SolverConfig,
    exact_pressure_drop: bool,
) -> Result<f64> {
    let region = window.region();
    let m = quadrature_n.max(1);
    let (dx, dy) = (region.width() / m as f64, region.height() / m as f64);
    let pts: Vec<Point> = (0..m * m)
        .map(|q| {
            let (i, j) = (q % m, q / m);
            [region.lo[0] + (i as f64 + 0.5) * dx, region.lo[1] + (j as f64 + 0.5) * dy]
        })
        .filter(|&x| cell.is_fluid(x))
        .collect();
    let measure = window.measure_of(Some(cell))?;
    let mut u1 = 0.0;
    let mut grad_p = 0.0;
    for chunk in pts.chunks(CHUNK) {
        let b = params.forward_batch(arch, chunk, exact_pressure_drop);
        for r in 0..chunk.len() {
            u1 += b.u.at(VALUE, r, 0);
            if exact_pressure_drop {
                grad_p += b.p.at(DX, r, 0);
            }
        }
    }
    let u = u1 * dx * dy / measure;
    let f = solver.body_force;
    let pd = if exact_pressure_drop {
        f[0] - grad_p * dx * dy / measure
    } else {
        f[0].hypot(f[1])
    };
    darcy_scalar(u, pd, solver.mu)
}

/// Reference values on fluid cell centres of a fine solve.
#[derive(Debug, Clone)]
pub struct ReferenceField {
    pub points: Vec<Point>,
    pub values: Vec<[f64; 3]>,
}

impl ReferenceField {
    /// Every `stride`-th fluid cell centre in each direction.
    pub fn from_state(state: &FlowState, cell: &MicroCell, stride: usize) -> Self {
        let n = state.grid.n;
        let mut points = Vec::new();
        let mut values = Vec::new();
        for j in (0..n).step_by(stride.max(1)) {
            for i in (0..n).step_by(stride.max(1)) {
                let x = state.grid.cell_center(i, j);
                if cell.signed_distance(x) > 0.0 {
                    let v = state.cell_velocity(i, j);
                    points.push(x);
                    values.push([v[0], v[1], state.p[j * n + i]]);
                }
            }
        }
        Self { points, values }
    }

    /// Relative l2 errors of `(u1, u2, p)`.
    pub fn relative_errors(&self, params: &NetworkParams, arch: &ArchitectureConfig, threads: usize) -> [f64; 3] {
        let chunks: Vec<&[Point]> = self.points.chunks(CHUNK).collect();
        let vals: Vec<Vec<[f64; 3]>> = ordered_map(&chunks, threads, |c| params.values(arch, c));
        let mut num = [0.0; 3];
        let mut den = [0.0; 3];
        for (net, reference) in vals.iter().flatten().zip(&self.values) {
            for c in 0..3 {
                num[c] += (net[c] - reference[c]).powi(2);
                den[c] += reference[c].powi(2);
            }
        }
        [0, 1, 2].map(|c| (num[c] / den[c].max(f64::MIN_POSITIVE)).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub losses: LossTerms,
    pub weights: LossWeights,
    pub k_hat: f64,
    pub k_hat_raw: f64,
    pub errors: Option<[f64; 3]>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn write_ndjson<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainingResult {
    pub params: NetworkParams,
    pub k_hat: f64,
    pub trace: TrainingTrace,
    /// Last Stokes-Brinkman state (hybrid only).
    pub coarse: Option<FlowState>,
}

struct Coupler<'a> {
    config: &'a HybridConfig,
    porous_box: Aabb,
    grid: Grid,
    velocity_points: Vec<Point>,
    pressure_points: Vec<Point>,
}

impl<'a> Coupler<'a> {
    fn new(config: &'a HybridConfig, cell: &MicroCell) -> Result<Self> {
        let grid = Grid::new(config.meso_grid_n)?;
        let porous_box = cell.tow_box;
        let meso = MesoCell::uniform(porous_box, Tensor2::iso(config.k_init))?;
        let n = grid.n;
        let mesh: Vec<Point> = (0..n * n).map(|q| grid.cell_center(q % n, q / n)).collect();
        let (velocity_points, pressure_points) =
            build_coupling_sets(&meso, &mesh, &config.buffer_box, config.edge_margin)?;
        Ok(Self {
            config,
            porous_box,
            grid,
            velocity_points,
            pressure_points,
        })
    }

    fn solve(&self, k_hat: f64) -> Result<(FlowState, CouplingTargets)> {
        let meso = MesoCell::uniform(self.porous_box, Tensor2::iso(k_hat))?;
        let sol = solve_stokes_brinkman(&meso, self.grid, &self.config.solver)?;
        let t = CouplingTargets::sample(&sol.state, &self.velocity_points, &self.pressure_points);
        Ok((sol.state, t))
    }
}

fn flat(params: &NetworkParams) -> Vec<f64> {
    params.velocity.theta.iter().chain(&params.pressure.theta).copied().collect()
}

fn unflat(params: &mut NetworkParams, x: &[f64]) {
    let nv = params.velocity.theta.len();
    params.velocity.theta.copy_from_slice(&x[..nv]);
    params.pressure.theta.copy_from_slice(&x[nv..]);
}

fn flat_grad(g: &ParamGrad) -> Vec<f64> {
    g.velocity.iter().chain(&g.pressure).copied().collect()
}

fn check_finite(e: &Evaluation, k: usize) -> Result<()> {
    let names = ["J_r", "J_div", "J_b", "J_u", "J_p"];
    for (name, v) in names.iter().zip(e.terms.as_array()) {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} = {v} at iteration {k}")));
        }
    }
    if let Some(i) = e.grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient {i} at iteration {k} (losses {:?})",
            e.terms
        )));
    }
    Ok(())
}

/// Shared loop of the hybrid solver and the plain PINN baseline.
fn train(
    cell: &MicroCell,
    data: &TrainingData,
    config: &HybridConfig,
    arch: &ArchitectureConfig,
    k_start: Option<f64>,
    reference: Option<&ReferenceField>,
    seed: u64,
    coupled: bool,
) -> Result<TrainingResult> {
    config.validate()?;
    let start = Instant::now();
    let mut params = init_params(arch, seed)?;
    let mut weights = config.initial_weights;
    if !coupled {
        weights.lambda_u = 0.0;
        weights.lambda_p = 0.0;
    }
    let mut k_hat = project_permeability(k_start.unwrap_or(config.k_init), config.k_lb, config.k_ub);
    let coupler = if coupled { Some(Coupler::new(config, cell)?) } else { None };
    let mut coarse = None;
    let mut targets = None;
    if let Some(c) = &coupler {
        let (state, t) = c.solve(k_hat)?;
        coarse = Some(state);
        targets = Some(t);
    }
    let mut trace = TrainingTrace::default();
    let mut adam = AdamState::new(params.n_params());
    let mut frozen: Option<(f64, f64)> = None;
    let (mu, f) = (config.solver.mu, config.solver.body_force);

    for k in 1..=config.k_max {
        let checkpoint = k % config.coupling_every == 0;
        let grad = if checkpoint {
            let k_raw = darcy_from_network(
                &params,
                arch,
                cell,
                &config.window,
                config.quadrature_n,
                &config.solver,
                config.exact_pressure_drop,
            )?;
            if coupled {
                k_hat = project_permeability(k_raw, config.k_lb, config.k_ub);
                let (state, t) = coupler.as_ref().expect("coupled").solve(k_hat)?;
                coarse = Some(state);
                targets = Some(t);
            } else {
                k_hat = k_raw;
            }
            let eval;
            if k <= config.k_c {
                eval = evaluate(&params, arch, data, targets.as_ref(), mu, f, GradMode::PerTerm, config.threads);
                check_finite(&eval, k)?;
                let mut norms = [0, 1, 2, 3, 4].map(|i| Some(eval.grads[i].norm()));
                if !coupled {
                    norms[3] = None;
                    norms[4] = None;
                }
                weights = weight_scaling(norms, &weights, config.weight_scaling_alpha);
                if k + config.coupling_every > config.k_c {
                    frozen = Some((weights.lambda_u, weights.lambda_p));
                }
            } else {
                let at_kc = *frozen.get_or_insert((weights.lambda_u, weights.lambda_p));
                let (lu, lp) = anneal_coupling_weights(k, config.k_c, config.gamma_u, config.gamma_p, at_kc);
                weights.lambda_u = lu;
                weights.lambda_p = lp;
                eval = evaluate(&params, arch, data, targets.as_ref(), mu, f, GradMode::PerTerm, config.threads);
                check_finite(&eval, k)?;
            }
            let errors = reference.map(|r| r.relative_errors(&params, arch, config.threads));
            trace.records.push(TraceRecord {
                iteration: k,
                losses: eval.terms,
                weights,
                k_hat,
                k_hat_raw: k_raw,
                errors,
                wall_time_s: if config.deterministic {
                    0.0
                } else {
                    start.elapsed().as_secs_f64()
                },
            });
            let mut g = ParamGrad::zeros(&params);
            for (gi, l) in eval.grads.iter().zip(weights.as_array()) {
                if l != 0.0 {
                    g.add_scaled(gi, l);
                }
            }
            g
        } else {
            let eval = evaluate(
                &params,
                arch,
                data,
                targets.as_ref(),
                mu,
                f,
                GradMode::Total(weights),
                config.threads,
            );
            check_finite(&eval, k)?;
            eval.grads.into_iter().next().expect("total gradient")
        };
        let mut x = flat(&params);
        adam_step(&mut x, &flat_grad(&grad), &mut adam, &config.adam);
        unflat(&mut params, &x);
    }
    Ok(TrainingResult {
        params,
        k_hat,
        trace,
        coarse,
    })
}

/// Hybrid dual-scale training. `k_start` overrides `config.k_init`, e.g.
/// with a surrogate prediction.
pub fn hybrid_train(
    cell: &MicroCell,
    data: &TrainingData,
    config: &HybridConfig,
    arch: &ArchitectureConfig,
    k_start: Option<f64>,
    reference: Option<&ReferenceField>,
    seed: u64,
) -> Result<TrainingResult> {
    train(cell, data, config, arch, k_start, reference, seed, true)
}

/// Plain PINN baseline: no coupling term and no Brinkman solves.
pub fn pinn_train(
    cell: &MicroCell,
    data: &TrainingData,
    config: &HybridConfig,
    arch: &ArchitectureConfig,
    reference: Option<&ReferenceField>,
    seed: u64,
) -> Result<TrainingResult> {
    train(cell, data, config, arch, None, reference, seed, false)
}
