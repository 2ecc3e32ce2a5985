//! Exact inverse of the periodic MAC Stokes operator by FFT, and the
//! penalised problem reduced to the faces that carry drag.
//!
//! With `lambda = -sigma u` on the drag faces `S`, the penalised system is
//! equivalent to `(P G P^T + Sigma^-1) lambda + U0 = -P G f` where `G` is
//! the periodic Stokes solution operator and `U0` the (free) mean flow.
//! Zero net force fixes the mean of `lambda`; the reduced operator is
//! symmetric positive definite on the zero-mean subspace and is solved by
//! preconditioned conjugate gradients.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct PeriodicStokes {
    n: usize,
    visc: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Symbol of the backward difference `(q_i - q_{i-1}) / h` per wavenumber.
    g: Vec<Complex64>,
}

impl PeriodicStokes {
    pub fn new(n: usize, visc: f64) -> Self {
        let mut planner = FftPlanner::new();
        let h = 1.0 / n as f64;
        let g = (0..n)
            .map(|k| {
                let w = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * k as f64 / n as f64);
                (Complex64::new(1.0, 0.0) - w) / h
            })
            .collect();
        Self {
            n,
            visc,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            g,
        }
    }

    fn transpose(&self, buf: &mut [Complex64]) {
        let n = self.n;
        for a in 0..n {
            for b in (a + 1)..n {
                buf.swap(a * n + b, b * n + a);
            }
        }
    }

    /// Velocity of periodic Stokes flow under the force `(fu, fv)`; the mean
    /// force and the mean velocity are dropped. Pressure is written when
    /// requested (zero mean).
    pub fn solve(&self, fu: &[f64], fv: &[f64], u: &mut [f64], v: &mut [f64], p: Option<&mut [f64]>) {
        let n = self.n;
        let mut buf: Vec<Complex64> = fu.iter().zip(fv).map(|(&a, &b)| Complex64::new(a, b)).collect();
        self.forward.process(&mut buf);
        self.transpose(&mut buf);
        self.forward.process(&mut buf);
        // buf[kx * n + ky]
        let mut pres = p.is_some().then(|| vec![Complex64::new(0.0, 0.0); n * n]);
        let mut out = vec![Complex64::new(0.0, 0.0); n * n];
        let half = Complex64::new(0.5, 0.0);
        let i_unit = Complex64::new(0.0, 1.0);
        for kx in 0..n {
            let mx = (n - kx) % n;
            let gx = self.g[kx];
            for ky in 0..n {
                if kx == 0 && ky == 0 {
                    continue;
                }
                let my = (n - ky) % n;
                let z = buf[kx * n + ky];
                let zc = buf[mx * n + my].conj();
                let fu_hat = (z + zc) * half;
                let fv_hat = (z - zc) * half / i_unit;
                let gy = self.g[ky];
                let g2 = gx.norm_sqr() + gy.norm_sqr();
                let ph = (gx.conj() * fu_hat + gy.conj() * fv_hat) / g2;
                let l = self.visc * g2;
                let uh = (fu_hat - gx * ph) / l;
                let vh = (fv_hat - gy * ph) / l;
                out[kx * n + ky] = uh + i_unit * vh;
                if let Some(pr) = pres.as_mut() {
                    pr[kx * n + ky] = ph;
                }
            }
        }
        let scale = 1.0 / (n * n) as f64;
        self.inverse.process(&mut out);
        self.transpose(&mut out);
        self.inverse.process(&mut out);
        for (k, z) in out.iter().enumerate() {
            u[k] = z.re * scale;
            v[k] = z.im * scale;
        }
        if let (Some(p), Some(mut pr)) = (p, pres) {
            self.inverse.process(&mut pr);
            self.transpose(&mut pr);
            self.inverse.process(&mut pr);
            for (k, z) in pr.iter().enumerate() {
                p[k] = z.re * scale;
            }
        }
    }
}

/// Drag faces of one velocity component: flat indices and `1 / sigma`.
#[derive(Debug, Clone, Default)]
pub(crate) struct DragSet {
    pub index: Vec<usize>,
    pub compliance: Vec<f64>,
    /// Conjugate-gradient weight that converts a reduced residual into the
    /// scaled momentum residual of the face.
    pub weight: Vec<f64>,
}

impl DragSet {
    pub fn from_sigma(sigma: &[f64], diag_scale: f64) -> Self {
        let mut set = DragSet::default();
        for (k, &s) in sigma.iter().enumerate() {
            if s > 0.0 {
                set.index.push(k);
                set.compliance.push(1.0 / s);
                set.weight.push(s * diag_scale / (diag_scale + s));
            }
        }
        set
    }

    fn len(&self) -> usize {
        self.index.len()
    }
}

pub(crate) struct ReducedSolve {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    /// Drag multipliers on the `u` faces then the `v` faces, for restarts.
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub converged: bool,
    /// The monitor asked to stop.
    pub stopped: bool,
}

/// Starting point of the reduced iteration.
pub(crate) enum Start<'a> {
    Zero,
    /// Multipliers implied by the drag faces of a previous state.
    State(&'a [f64], &'a [f64]),
    Lambda(&'a [f64]),
}

/// Solves the penalised periodic problem for a uniform body force.
#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_penalized(
    stokes: &PeriodicStokes,
    su: &DragSet,
    sv: &DragSet,
    force: [f64; 2],
    start: Start,
    tolerance: f64,
    max_iterations: usize,
    mut monitor: Option<&mut dyn FnMut([f64; 2]) -> bool>,
) -> ReducedSolve {
    let n = stokes.n;
    let cells = n * n;
    let (nu, nv) = (su.len(), sv.len());
    let len = nu + nv;

    // Particular multiplier balancing the net body force.
    let mut base = vec![0.0; len];
    if nu > 0 {
        base[..nu].iter_mut().for_each(|l| *l = -force[0] * cells as f64 / nu as f64);
    }
    if nv > 0 {
        base[nu..].iter_mut().for_each(|l| *l = -force[1] * cells as f64 / nv as f64);
    }

    let project = |x: &mut [f64]| {
        for range in [0..nu, nu..len] {
            if range.is_empty() {
                continue;
            }
            let m = x[range.clone()].iter().sum::<f64>() / range.len() as f64;
            x[range].iter_mut().for_each(|a| *a -= m);
        }
    };
    let mut fu = vec![0.0; cells];
    let mut fv = vec![0.0; cells];
    let mut wu = vec![0.0; cells];
    let mut wv = vec![0.0; cells];
    // y = P G P^T x + Sigma^-1 x (before projection), with an optional
    // constant body force added to the scattered multipliers.
    let mut apply = |x: &[f64], body: [f64; 2], y: &mut [f64]| {
        fu.iter_mut().for_each(|a| *a = body[0]);
        fv.iter_mut().for_each(|a| *a = body[1]);
        for (a, &k) in su.index.iter().enumerate() {
            fu[k] += x[a];
        }
        for (a, &k) in sv.index.iter().enumerate() {
            fv[k] += x[nu + a];
        }
        stokes.solve(&fu, &fv, &mut wu, &mut wv, None);
        for (a, &k) in su.index.iter().enumerate() {
            y[a] = wu[k] + su.compliance[a] * x[a];
        }
        for (a, &k) in sv.index.iter().enumerate() {
            y[nu + a] = wv[k] + sv.compliance[a] * x[nu + a];
        }
    };

    // Diagonal of G at a face, identical for all faces of one component.
    let (g0u, g0v) = {
        let mut du = vec![0.0; cells];
        du[0] = 1.0;
        let zero = vec![0.0; cells];
        let (mut a, mut b) = (vec![0.0; cells], vec![0.0; cells]);
        stokes.solve(&du, &zero, &mut a, &mut b, None);
        let gu = a[0];
        stokes.solve(&zero, &du, &mut a, &mut b, None);
        (gu, b[0])
    };
    let precond: Vec<f64> = su
        .compliance
        .iter()
        .map(|c| 1.0 / (g0u + c))
        .chain(sv.compliance.iter().map(|c| 1.0 / (g0v + c)))
        .collect();
    let weight: Vec<f64> = su.weight.iter().chain(&sv.weight).copied().collect();

    // Warm start from the drag implied by a previous state.
    let mut x = vec![0.0; len];
    match start {
        Start::Zero => {}
        Start::State(u0, v0) => {
            for (a, &k) in su.index.iter().enumerate() {
                x[a] = -u0[k] / su.compliance[a] - base[a];
            }
            for (a, &k) in sv.index.iter().enumerate() {
                x[nu + a] = -v0[k] / sv.compliance[a] - base[nu + a];
            }
            project(&mut x);
        }
        Start::Lambda(l) => {
            for i in 0..len {
                x[i] = l[i] - base[i];
            }
            project(&mut x);
        }
    }

    let mut r = vec![0.0; len];
    let mut ax = vec![0.0; len];
    let scaled = |r: &[f64]| r.iter().zip(&weight).fold(0.0f64, |m, (a, w)| m.max((a * w).abs()));
    let mut q = vec![0.0; len];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut stopped = false;
    // Each pass restarts from the true residual; the recursively updated
    // residual drifts from it by round-off at tight tolerances.
    for _ in 0..8 {
        apply(&base, force, &mut r);
        apply(&x, [0.0, 0.0], &mut ax);
        for (ri, a) in r.iter_mut().zip(&ax) {
            *ri = -*ri - a;
        }
        project(&mut r);
        let res = scaled(&r);
        history.push(res);
        if res <= tolerance {
            converged = true;
            break;
        }
        if iterations >= max_iterations {
            break;
        }
        let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, d)| a * d).collect();
        project(&mut z);
        let mut d = z.clone();
        let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mut stop = false;
        while iterations < max_iterations {
            apply(&d, [0.0, 0.0], &mut q);
            project(&mut q);
            let dq: f64 = d.iter().zip(&q).map(|(a, b)| a * b).sum();
            if dq <= 0.0 {
                break;
            }
            let alpha = rz / dq;
            for i in 0..len {
                x[i] += alpha * d[i];
                r[i] -= alpha * q[i];
            }
            iterations += 1;
            let res = scaled(&r);
            if res <= 0.5 * tolerance {
                break;
            }
            if iterations % 50 == 0 {
                history.push(res);
                if let Some(watch) = monitor.as_mut() {
                    // Mean flow estimate: average of the unprojected residual.
                    let total: Vec<f64> = base.iter().zip(&x).map(|(a, b)| a + b).collect();
                    apply(&total, force, &mut q);
                    let mean = |range: std::ops::Range<usize>| {
                        if range.is_empty() {
                            0.0
                        } else {
                            -q[range.clone()].iter().sum::<f64>() / range.len() as f64
                        }
                    };
                    if watch([mean(0..nu), mean(nu..len)]) {
                        stop = true;
                        break;
                    }
                }
            }
            for i in 0..len {
                z[i] = r[i] * precond[i];
            }
            project(&mut z);
            let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                d[i] = z[i] + beta * d[i];
            }
        }
        if stop {
            stopped = true;
            break;
        }
    }

    // Full fields from the converged multipliers, plus the mean flow.
    let mut fu = vec![force[0]; cells];
    let mut fv = vec![force[1]; cells];
    for (a, &k) in su.index.iter().enumerate() {
        fu[k] += base[a] + x[a];
    }
    for (a, &k) in sv.index.iter().enumerate() {
        fv[k] += base[nu + a] + x[nu + a];
    }
    let mut u = vec![0.0; cells];
    let mut v = vec![0.0; cells];
    let mut p = vec![0.0; cells];
    stokes.solve(&fu, &fv, &mut u, &mut v, Some(&mut p));
    let mean_flow = |set: &DragSet, vel: &[f64], off: usize| -> f64 {
        if set.len() == 0 {
            return 0.0;
        }
        set.index
            .iter()
            .enumerate()
            .map(|(a, &k)| -set.compliance[a] * (base[off + a] + x[off + a]) - vel[k])
            .sum::<f64>()
            / set.len() as f64
    };
    let u0 = mean_flow(su, &u, 0);
    let v0 = mean_flow(sv, &v, nu);
    u.iter_mut().for_each(|a| *a += u0);
    v.iter_mut().for_each(|a| *a += v0);
    let lambda = base.iter().zip(&x).map(|(a, b)| a + b).collect();
    ReducedSolve {
        u,
        v,
        p,
        lambda,
        iterations,
        history,
        converged,
        stopped,
    }
}
