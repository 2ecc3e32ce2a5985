//! Reference solvers for the microscale Stokes problem with penalised
//! fibers and the mesoscale Stokes-Brinkman problem, on a staggered grid.
//!
//! Fully periodic problems with diagonal drag are reduced to the drag
//! faces and solved with conjugate gradients on top of an FFT Stokes
//! inverse. Channel problems and anisotropic drag fall back to restarted
//! GMRES preconditioned by a multigrid V-cycle with a Vanka smoother.

mod krylov;
mod mac;
mod multigrid;
mod spectral;
mod state;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MesoCell, MicroCell};
pub use state::{Field, FlowState, Grid};

use mac::MacLevel;
use multigrid::Multigrid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mu: f64,
    /// Effective (Brinkman) viscosity of the mesoscale problem.
    pub mu_tilde: f64,
    pub body_force: [f64; 2],
    /// Permeability assigned to fiber interiors by the penalisation.
    pub penalization_permeability: f64,
    /// Absolute bound on the max-norm momentum and divergence residuals.
    pub linear_tolerance: f64,
    /// Relative change of the permeability monitor between cycles.
    pub permeability_stop: f64,
    /// Accept a solve once the monitor settles, even above `linear_tolerance`.
    pub stop_on_permeability: bool,
    /// GMRES restarts, or blocks of 50 conjugate-gradient iterations.
    pub max_cycles: usize,
    pub gmres_restart: usize,
    /// Extra drag on fluid faces next to a fiber so the no-slip condition
    /// sits at the true boundary distance instead of the staircase.
    pub boundary_correction: bool,
    pub smoothing_sweeps: usize,
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: 1.0,
            mu_tilde: 1.0,
            body_force: [10.0, 0.0],
            penalization_permeability: 1e-9,
            linear_tolerance: 1e-8,
            permeability_stop: 0.01,
            stop_on_permeability: false,
            max_cycles: 400,
            gmres_restart: 20,
            boundary_correction: true,
            smoothing_sweeps: 2,
            relaxation: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mu", self.mu),
            ("mu_tilde", self.mu_tilde),
            ("penalization_permeability", self.penalization_permeability),
            ("linear_tolerance", self.linear_tolerance),
            ("relaxation", self.relaxation),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.permeability_stop > 0.0 && self.permeability_stop < 1.0) {
            return Err(Error::Config("permeability_stop must lie in (0, 1)".into()));
        }
        if self.max_cycles == 0 || self.gmres_restart == 0 {
            return Err(Error::Config("max_cycles and gmres_restart must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcMode {
    /// Periodic velocity, `p = 0` on the inlet/outlet line.
    PeriodicBenchmark,
    /// No-slip walls at `x2 = 0` and `x2 = 1`, periodic in `x1`.
    ChannelTest,
}

/// Discrete linear problem: operator plus right-hand side.
#[derive(Debug, Clone)]
pub struct Problem {
    level: MacLevel,
    rhs: Vec<f64>,
    grid: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub momentum_residual_max: f64,
    pub divergence_max: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.momentum_residual_max.max(self.divergence_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub cycles: usize,
    pub residual_history: Vec<f64>,
    pub monitor_history: Vec<f64>,
    pub residual: ResidualReport,
    pub stopped_on_permeability: bool,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub state: FlowState,
    pub report: SolveReport,
}

impl Problem {
    pub fn micro(cell: &MicroCell, grid: Grid, config: &SolverConfig, mode: BcMode) -> Result<Self> {
        config.validate()?;
        let h = grid.h();
        if let Some(r_min) = cell
            .fibers
            .iter()
            .map(|f| f.radius)
            .min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            if h > r_min / 3.0 {
                return Err(Error::Config(format!(
                    "grid spacing {h:.3e} does not resolve fibers of radius {r_min:.3e} (need h <= r/3)"
                )));
            }
        }
        let n = grid.n;
        let penalty = config.mu / config.penalization_permeability;
        let mut sigma_u = vec![0.0; grid.cells()];
        let mut sigma_v = vec![0.0; grid.cells()];
        for j in 0..n {
            for i in 0..n {
                if cell.signed_distance(grid.u_face(i, j)) < 0.0 {
                    sigma_u[j * n + i] = penalty;
                }
                if cell.signed_distance(grid.v_face(i, j)) < 0.0 {
                    sigma_v[j * n + i] = penalty;
                }
            }
        }
        if config.boundary_correction {
            boundary_drag(cell, grid, config.mu, &mut sigma_u, &mut sigma_v);
        }
        let walls = mode == BcMode::ChannelTest;
        if !walls && cell.fibers.is_empty() {
            return Err(Error::Degenerate(
                "fully periodic Stokes flow without obstacles has no steady state".into(),
            ));
        }
        let level = MacLevel {
            n,
            h,
            visc: config.mu,
            sigma_u,
            sigma_v,
            cross_u: None,
            cross_v: None,
            walls,
        };
        let rhs = body_force_rhs(&level, config.body_force);
        Ok(Self { level, rhs, grid })
    }

    pub fn brinkman(meso: &MesoCell, grid: Grid, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        for (i, k) in meso.field.tensors.iter().enumerate() {
            if !k.is_spd() {
                return Err(Error::InvalidPermeability(format!(
                    "segment {i} tensor {:?} is not symmetric positive definite",
                    k.m
                )));
            }
        }
        let n = grid.n;
        let mut sigma_u = vec![0.0; grid.cells()];
        let mut sigma_v = vec![0.0; grid.cells()];
        let mut cross_u = vec![0.0; grid.cells()];
        let mut cross_v = vec![0.0; grid.cells()];
        let mut anisotropic = false;
        let mut porous = false;
        for j in 0..n {
            for i in 0..n {
                if let Some(k) = meso.permeability_at(grid.u_face(i, j)) {
                    let d = drag(k, config.mu)?;
                    sigma_u[j * n + i] = d.m[0][0];
                    cross_u[j * n + i] = d.m[0][1];
                    anisotropic |= d.m[0][1] != 0.0;
                    porous = true;
                }
                if let Some(k) = meso.permeability_at(grid.v_face(i, j)) {
                    let d = drag(k, config.mu)?;
                    sigma_v[j * n + i] = d.m[1][1];
                    cross_v[j * n + i] = d.m[1][0];
                    anisotropic |= d.m[1][0] != 0.0;
                    porous = true;
                }
            }
        }
        if !porous {
            return Err(Error::Degenerate(
                "Brinkman cell without porous faces has no steady periodic state".into(),
            ));
        }
        let level = MacLevel {
            n,
            h: grid.h(),
            visc: config.mu_tilde,
            sigma_u,
            sigma_v,
            cross_u: anisotropic.then_some(cross_u),
            cross_v: anisotropic.then_some(cross_v),
            walls: false,
        };
        let rhs = body_force_rhs(&level, config.body_force);
        Ok(Self { level, rhs, grid })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Max-norm residuals of `state` against this problem.
    pub fn residuals(&self, state: &FlowState) -> ResidualReport {
        self.residuals_packed(&state.packed())
    }

    fn residuals_packed(&self, x: &[f64]) -> ResidualReport {
        let mut r = vec![0.0; x.len()];
        self.level.residual(&self.rhs, x, &mut r);
        let c = self.level.cells();
        // Penalised rows are measured relative to the fluid stencil so that a
        // row dominated by the drag reports `4 mu / h^2` times its velocity error.
        let k4 = self.diag_scale();
        let sigma = self.level.sigma_u.iter().chain(&self.level.sigma_v);
        let momentum_residual_max = r[..2 * c]
            .iter()
            .zip(sigma)
            .fold(0.0f64, |m, (v, s)| m.max((v * k4 / (k4 + s)).abs()));
        let divergence_max = r[2 * c..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ResidualReport {
            momentum_residual_max,
            divergence_max,
        }
    }

    fn diag_scale(&self) -> f64 {
        4.0 * self.level.visc / (self.level.h * self.level.h)
    }

    fn uniform_force(&self) -> [f64; 2] {
        let c = self.level.cells();
        [self.rhs[0], self.rhs[c]]
    }

    /// Solves to `linear_tolerance`, optionally warm-started.
    pub fn solve(&self, config: &SolverConfig, initial: Option<&FlowState>) -> Result<Solution> {
        if self.level.walls || self.level.cross_u.is_some() || self.level.cross_v.is_some() {
            self.solve_krylov(config, initial)
        } else {
            self.solve_spectral(config, initial)
        }
    }

    fn solve_spectral(&self, config: &SolverConfig, initial: Option<&FlowState>) -> Result<Solution> {
        let n = self.level.n;
        let stokes = spectral::PeriodicStokes::new(n, self.level.visc);
        let k4 = self.diag_scale();
        let su = spectral::DragSet::from_sigma(&self.level.sigma_u, k4);
        let sv = spectral::DragSet::from_sigma(&self.level.sigma_v, k4);
        let force = self.uniform_force();
        if (su.index.is_empty() && force[0] != 0.0) || (sv.index.is_empty() && force[1] != 0.0) {
            return Err(Error::Degenerate(
                "body force has no drag to balance it in a periodic cell".into(),
            ));
        }
        let fnorm = self.rhs_force_norm();
        let mut monitor_history = Vec::new();
        let mut stopped_on_permeability = false;
        let mut watch = |mean: [f64; 2]| {
            let m = if fnorm > 0.0 { mean[0] / fnorm } else { 0.0 };
            let stop = monitor_history
                .last()
                .is_some_and(|&prev: &f64| prev != 0.0 && ((m - prev) / prev).abs() < config.permeability_stop);
            monitor_history.push(m);
            stop
        };

        let mut residual_history = Vec::new();
        let mut iterations = 0;
        let mut lambda: Option<Vec<f64>> = None;
        let (x, residual) = loop {
            let start = match (&lambda, initial.filter(|s| s.grid == self.grid)) {
                (Some(l), _) => spectral::Start::Lambda(l),
                (None, Some(s)) => spectral::Start::State(&s.u, &s.v),
                (None, None) => spectral::Start::Zero,
            };
            let budget = (config.max_cycles * 50).saturating_sub(iterations).min(PASS_ITERATIONS);
            let sol = spectral::solve_penalized(
                &stokes,
                &su,
                &sv,
                force,
                start,
                0.25 * config.linear_tolerance,
                budget,
                config
                    .stop_on_permeability
                    .then_some(&mut watch as &mut dyn FnMut([f64; 2]) -> bool),
            );
            stopped_on_permeability |= sol.stopped;
            iterations += sol.iterations;
            if !sol.converged {
                log::debug!("pass ended after {} iterations above the reduced tolerance", sol.iterations);
            }
            residual_history.extend_from_slice(&sol.history);
            let mut x: Vec<f64> = sol.u.iter().chain(&sol.v).chain(&sol.p).copied().collect();
            // The FFT leaves round-off in the mean flow and, through it, in
            // the tiny fiber velocities; clean both up on the full system.
            self.refine_mean_flow(&mut x);
            for _ in 0..2 {
                self.level.vanka_sweep(&self.rhs, &mut x, 1.0);
            }
            self.refine_mean_flow(&mut x);
            self.fix_gauge(&mut x);
            let residual = self.residuals_packed(&x);
            residual_history.push(residual.max());
            let accepted = residual.momentum_residual_max <= config.linear_tolerance
                && residual.divergence_max <= config.linear_tolerance;
            if accepted || stopped_on_permeability || iterations >= config.max_cycles * 50 || sol.iterations == 0 {
                break (x, residual);
            }
            lambda = Some(sol.lambda);
        };
        let cycles = iterations.div_ceil(50);
        let mut monitor_history = monitor_history;
        monitor_history.push(self.monitor(&x));
        let accepted = residual.momentum_residual_max <= config.linear_tolerance
            && residual.divergence_max <= config.linear_tolerance;
        if !accepted && !stopped_on_permeability {
            return Err(Error::SolverDiverged {
                cycles,
                last: residual.max(),
                residual_history,
            });
        }
        Ok(Solution {
            state: FlowState::from_packed(self.grid, &x),
            report: SolveReport {
                cycles,
                residual_history,
                monitor_history,
                residual,
                stopped_on_permeability,
            },
        })
    }

    /// A constant velocity offset leaves fluid rows untouched and shifts each
    /// drag row by `sigma * offset`; picks the offset per component that
    /// minimises those rows in the least-squares sense.
    fn refine_mean_flow(&self, x: &mut [f64]) {
        let c = self.level.cells();
        let mut r = vec![0.0; x.len()];
        self.level.residual(&self.rhs, x, &mut r);
        for (comp, sigma) in [(0, &self.level.sigma_u), (1, &self.level.sigma_v)] {
            let rows = &r[comp * c..(comp + 1) * c];
            let (num, den) = rows
                .iter()
                .zip(sigma.iter())
                .fold((0.0, 0.0), |(a, b), (ri, s)| (a + ri * s, b + s * s));
            if den > 0.0 {
                let shift = num / den;
                x[comp * c..(comp + 1) * c].iter_mut().for_each(|v| *v += shift);
            }
        }
    }

    fn solve_krylov(&self, config: &SolverConfig, initial: Option<&FlowState>) -> Result<Solution> {
        let mg = Multigrid::new(
            self.level.clone(),
            config.smoothing_sweeps,
            config.smoothing_sweeps,
            config.relaxation,
        );
        let mut x = match initial {
            Some(s) if s.grid == self.grid => s.packed(),
            _ => vec![0.0; self.level.len()],
        };
        let apply = |a: &[f64], y: &mut [f64]| self.level.apply(a, y);
        let precond = |a: &[f64], y: &mut [f64]| mg.precondition(a, y);

        let mut residual_history = Vec::new();
        let mut monitor_history = Vec::new();
        let mut stopped_on_permeability = false;
        let mut cycles = 0;
        loop {
            let res = self.residuals_packed(&x);
            if !res.max().is_finite() {
                return Err(Error::SolverDiverged {
                    cycles,
                    last: res.max(),
                    residual_history,
                });
            }
            residual_history.push(res.max());
            let monitor = self.monitor(&x);
            if let Some(&prev) = monitor_history.last() {
                let prev: f64 = prev;
                if config.stop_on_permeability
                    && prev != 0.0
                    && ((monitor - prev) / prev).abs() < config.permeability_stop
                {
                    stopped_on_permeability = true;
                }
            }
            monitor_history.push(monitor);
            if res.momentum_residual_max <= config.linear_tolerance
                && res.divergence_max <= config.linear_tolerance
                || stopped_on_permeability
            {
                break;
            }
            if cycles >= config.max_cycles {
                return Err(Error::SolverDiverged {
                    cycles,
                    last: res.max(),
                    residual_history,
                });
            }
            // GMRES minimises the 2-norm; ask for a little headroom below
            // the max-norm target.
            gmres_cycle(&apply, &precond, &self.rhs, &mut x, config.gmres_restart, 0.1 * config.linear_tolerance);
            cycles += 1;
        }

        self.fix_gauge(&mut x);
        let state = FlowState::from_packed(self.grid, &x);
        let residual = self.residuals_packed(&x);
        Ok(Solution {
            state,
            report: SolveReport {
                cycles,
                residual_history,
                monitor_history,
                residual,
                stopped_on_permeability,
            },
        })
    }

    /// Domain-mean `u1` per unit force: proportional to the derived
    /// permeability, used to monitor convergence between cycles.
    fn monitor(&self, x: &[f64]) -> f64 {
        let c = self.level.cells();
        let f = self.rhs_force_norm();
        if f == 0.0 {
            return 0.0;
        }
        x[..c].iter().sum::<f64>() / c as f64 / f
    }

    fn rhs_force_norm(&self) -> f64 {
        let c = self.level.cells();
        self.rhs[..c].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `p = 0` on the inlet/outlet line in the mean.
    fn fix_gauge(&self, x: &mut [f64]) {
        let n = self.level.n;
        let c = self.level.cells();
        let p = &mut x[2 * c..];
        let line: f64 = (0..n)
            .map(|j| 0.5 * (p[j * n] + p[j * n + n - 1]))
            .sum::<f64>()
            / n as f64;
        p.iter_mut().for_each(|v| *v -= line);
    }
}

use krylov::gmres_cycle;

/// Conjugate-gradient iterations between checks of the full residual.
const PASS_ITERATIONS: usize = 2_500;

fn drag(k: &crate::tensor::Tensor2, mu: f64) -> Result<crate::tensor::Tensor2> {
    k.inverse()
        .map(|inv| inv.scale(mu))
        .ok_or_else(|| Error::InvalidPermeability(format!("singular tensor {:?}", k.m)))
}

/// Adds `mu / h (1/d - 1/h)` to a fluid face for every axis neighbour of
/// the same kind that lies in a fiber, `d` being the distance to the fiber
/// boundary along that axis.
fn boundary_drag(cell: &MicroCell, grid: Grid, mu: f64, sigma_u: &mut [f64], sigma_v: &mut [f64]) {
    let n = grid.n;
    let h = grid.h();
    let dirs = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
    for (sigma, pos) in [
        (sigma_u, &(|i, j| grid.u_face(i, j)) as &dyn Fn(usize, usize) -> [f64; 2]),
        (sigma_v, &(|i, j| grid.v_face(i, j)) as &dyn Fn(usize, usize) -> [f64; 2]),
    ] {
        let solid: Vec<bool> = sigma.iter().map(|&s| s > 0.0).collect();
        for j in 0..n {
            for i in 0..n {
                if solid[j * n + i] {
                    continue;
                }
                let x = pos(i, j);
                let mut extra = 0.0;
                for d in dirs {
                    let ni = (i as isize + d[0] as isize).rem_euclid(n as isize) as usize;
                    let nj = (j as isize + d[1] as isize).rem_euclid(n as isize) as usize;
                    if !solid[nj * n + ni] {
                        continue;
                    }
                    let dist = cell.distance_to_solid(x, d, h).unwrap_or(h).max(1e-3 * h);
                    extra += mu / h * (1.0 / dist - 1.0 / h);
                }
                sigma[j * n + i] = extra;
            }
        }
    }
}

fn body_force_rhs(level: &MacLevel, f: [f64; 2]) -> Vec<f64> {
    let c = level.cells();
    let mut rhs = vec![0.0; level.len()];
    rhs[..c].iter_mut().for_each(|v| *v = f[0]);
    rhs[c..2 * c].iter_mut().for_each(|v| *v = f[1]);
    if level.walls {
        rhs[c..c + level.n].iter_mut().for_each(|v| *v = 0.0);
    }
    rhs
}

/// Stokes flow through the micro cell with penalised fibers.
pub fn solve_stokes_micro(
    cell: &MicroCell,
    grid: Grid,
    config: &SolverConfig,
    mode: BcMode,
) -> Result<Solution> {
    Problem::micro(cell, grid, config, mode)?.solve(config, None)
}

/// Stokes-Brinkman flow through the mesoscale cell.
pub fn solve_stokes_brinkman(meso: &MesoCell, grid: Grid, config: &SolverConfig) -> Result<Solution> {
    Problem::brinkman(meso, grid, config)?.solve(config, None)
}

pub fn residual_report(state: &FlowState, problem: &Problem) -> ResidualReport {
    problem.residuals(state)
}
