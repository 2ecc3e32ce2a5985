//! Fourier-feature MLPs for velocity and pressure with exact spatial
//! derivatives and parameter gradients.
//!
//! Every layer carries up to four row blocks of a batch: the value and the
//! x1, x2 and Laplacian streams. Affine layers act on all blocks with one
//! GEMM (the bias only enters the value block); nonlinear layers apply the
//! chain rule block-wise. The reverse pass runs the same recursion backwards
//! so that losses built from derivatives are differentiated exactly.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

const TWO_PI: f64 = 2.0 * PI;
const CHECKPOINT_MAGIC: &[u8; 4] = b"DPNN";
const CHECKPOINT_VERSION: u32 = 1;

/// Input map applied before the Fourier layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedding {
    /// `[cos 2pi x1, sin 2pi x1, cos 2pi x2, sin 2pi x2]`.
    PeriodicUv,
    /// `[x1, cos 2pi x2, sin 2pi x2]`.
    PeriodicP,
    /// Raw coordinates.
    Fourier,
}

impl Embedding {
    pub fn dim(self) -> usize {
        match self {
            Embedding::PeriodicUv => 4,
            Embedding::PeriodicP => 3,
            Embedding::Fourier => 2,
        }
    }
}

/// Factor `s(x)` multiplying the raw pressure output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PressureMultiplier {
    /// `4 x1 (1 - x1)`: zero on the inlet and outlet only.
    InletOutlet,
    /// `4 x1 x2 (1 - x2)`.
    Literal,
    /// No constraint.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchitectureConfig {
    /// Width of the Fourier feature layer (sine and cosine halves).
    pub d_e: usize,
    /// Hidden tanh layers.
    pub hidden: Vec<usize>,
    pub velocity_embedding: Embedding,
    pub pressure_embedding: Embedding,
    pub pressure_multiplier: PressureMultiplier,
    /// Standard deviation of the initial Fourier matrix entries.
    pub fourier_init_scale: f64,
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            d_e: 256,
            hidden: vec![128, 128, 128],
            velocity_embedding: Embedding::PeriodicUv,
            pressure_embedding: Embedding::PeriodicP,
            pressure_multiplier: PressureMultiplier::InletOutlet,
            fourier_init_scale: 1.0,
        }
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_e < 2 || self.d_e % 2 != 0 {
            return Err(Error::Config(format!("d_e must be even and positive, got {}", self.d_e)));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be nonempty and positive".into()));
        }
        if !(self.fourier_init_scale > 0.0) {
            return Err(Error::Config("fourier_init_scale must be positive".into()));
        }
        Ok(())
    }

    fn shape(&self, embedding: Embedding, out: usize) -> NetShape {
        NetShape {
            embedding,
            half: self.d_e / 2,
            hidden: self.hidden.clone(),
            out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetShape {
    pub embedding: Embedding,
    /// Rows of the Fourier matrix.
    pub half: usize,
    pub hidden: Vec<usize>,
    pub out: usize,
}

impl NetShape {
    /// `(fan_out, fan_in)` of every affine layer after the Fourier layer.
    fn affine(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = 2 * self.half;
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.out, prev));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.half * self.embedding.dim() + self.affine().iter().map(|(o, i)| o * i + o).sum::<usize>()
    }

    /// Offsets of `W` and `b` for each affine layer.
    fn offsets(&self) -> Vec<(usize, usize)> {
        let mut at = self.half * self.embedding.dim();
        self.affine()
            .iter()
            .map(|&(o, i)| {
                let w = at;
                at += o * i;
                let b = at;
                at += o;
                (w, b)
            })
            .collect()
    }
}

/// One network: its shape and flat parameter vector `[E, W1, b1, ..., WL, bL]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub shape: NetShape,
    pub theta: Vec<f64>,
}

/// Velocity net (two outputs) and pressure net (one output).
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub velocity: Net,
    pub pressure: Net,
}

fn glorot_net(shape: NetShape, fourier_scale: f64, rng: &mut ChaCha8Rng) -> Net {
    let mut theta = Vec::with_capacity(shape.n_params());
    let normal = Normal::new(0.0, fourier_scale).expect("positive scale");
    for _ in 0..shape.half * shape.embedding.dim() {
        theta.push(normal.sample(rng));
    }
    for (o, i) in shape.affine() {
        let a = (6.0 / (o + i) as f64).sqrt();
        let dist = Uniform::new_inclusive(-a, a);
        for _ in 0..o * i {
            theta.push(dist.sample(rng));
        }
        theta.extend(std::iter::repeat(0.0).take(o));
    }
    Net { shape, theta }
}

/// Glorot-uniform weights, zero biases, unit-normal Fourier matrix (times
/// `fourier_init_scale`).
pub fn init_params(config: &ArchitectureConfig, seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let velocity = glorot_net(config.shape(config.velocity_embedding, 2), config.fourier_init_scale, &mut rng);
    let pressure = glorot_net(config.shape(config.pressure_embedding, 1), config.fourier_init_scale, &mut rng);
    Ok(NetworkParams { velocity, pressure })
}

/// Row blocks of a batch: block 0 holds values, blocks 1..4 (when present)
/// the x1, x2 and Laplacian streams. Each block is `rows x width`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Streams {
    pub rows: usize,
    pub width: usize,
    pub blocks: usize,
    pub data: Vec<f64>,
}

impl Streams {
    pub fn zeros(rows: usize, width: usize, blocks: usize) -> Self {
        Self {
            rows,
            width,
            blocks,
            data: vec![0.0; rows * width * blocks],
        }
    }

    #[inline]
    pub fn at(&self, block: usize, row: usize, col: usize) -> f64 {
        self.data[(block * self.rows + row) * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, block: usize, row: usize, col: usize) -> &mut f64 {
        &mut self.data[(block * self.rows + row) * self.width + col]
    }

}

pub const VALUE: usize = 0;
pub const DX: usize = 1;
pub const DY: usize = 2;
pub const LAP: usize = 3;

fn embed(embedding: Embedding, pts: &[Point], blocks: usize) -> Streams {
    let dim = embedding.dim();
    let mut s = Streams::zeros(pts.len(), dim, blocks);
    let full = blocks == 4;
    for (r, x) in pts.iter().enumerate() {
        // (value, d/dx1, d/dx2, laplacian) per component
        let mut put = |c: usize, v: [f64; 4]| {
            *s.at_mut(VALUE, r, c) = v[0];
            if full {
                *s.at_mut(DX, r, c) = v[1];
                *s.at_mut(DY, r, c) = v[2];
                *s.at_mut(LAP, r, c) = v[3];
            }
        };
        let (c1, s1) = ((TWO_PI * x[0]).cos(), (TWO_PI * x[0]).sin());
        let (c2, s2) = ((TWO_PI * x[1]).cos(), (TWO_PI * x[1]).sin());
        let k2 = TWO_PI * TWO_PI;
        match embedding {
            Embedding::PeriodicUv => {
                put(0, [c1, -TWO_PI * s1, 0.0, -k2 * c1]);
                put(1, [s1, TWO_PI * c1, 0.0, -k2 * s1]);
                put(2, [c2, 0.0, -TWO_PI * s2, -k2 * c2]);
                put(3, [s2, 0.0, TWO_PI * c2, -k2 * s2]);
            }
            Embedding::PeriodicP => {
                put(0, [x[0], 1.0, 0.0, 0.0]);
                put(1, [c2, 0.0, -TWO_PI * s2, -k2 * c2]);
                put(2, [s2, 0.0, TWO_PI * c2, -k2 * s2]);
            }
            Embedding::Fourier => {
                put(0, [x[0], 1.0, 0.0, 0.0]);
                put(1, [x[1], 0.0, 1.0, 0.0]);
            }
        }
    }
    s
}

/// `c = a * w^T` (all blocks), with `w` stored `out x in` row-major.
fn affine_forward(a: &Streams, w: &[f64], bias: Option<&[f64]>, out: usize) -> Streams {
    let m = a.rows * a.blocks;
    let k = a.width;
    let mut c = Streams::zeros(a.rows, out, a.blocks);
    // SAFETY: all slices are sized m*k, out*k and m*out as the strides assume.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            out,
            1.0,
            a.data.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            0.0,
            c.data.as_mut_ptr(),
            out as isize,
            1,
        );
    }
    if let Some(b) = bias {
        for r in 0..a.rows {
            for (j, bj) in b.iter().enumerate() {
                *c.at_mut(VALUE, r, j) += bj;
            }
        }
    }
    c
}

/// Accumulates `dw += dc^T a` over all blocks and returns `da = dc w`.
fn affine_backward(a: &Streams, dc: &Streams, w: &[f64], dw: &mut [f64], db: Option<&mut [f64]>) -> Streams {
    let m = a.rows * a.blocks;
    let k = a.width;
    let out = dc.width;
    // SAFETY: shapes as in `affine_forward`.
    unsafe {
        matrixmultiply::dgemm(
            out,
            m,
            k,
            1.0,
            dc.data.as_ptr(),
            1,
            out as isize,
            a.data.as_ptr(),
            k as isize,
            1,
            1.0,
            dw.as_mut_ptr(),
            k as isize,
            1,
        );
    }
    if let Some(db) = db {
        for r in 0..dc.rows {
            for (j, g) in db.iter_mut().enumerate() {
                *g += dc.at(VALUE, r, j);
            }
        }
    }
    let mut da = Streams::zeros(a.rows, k, a.blocks);
    unsafe {
        matrixmultiply::dgemm(
            m,
            out,
            k,
            1.0,
            dc.data.as_ptr(),
            out as isize,
            1,
            w.as_ptr(),
            k as isize,
            1,
            0.0,
            da.data.as_mut_ptr(),
            k as isize,
            1,
        );
    }
    da
}

fn tanh_forward(z: &Streams) -> Streams {
    let mut y = Streams::zeros(z.rows, z.width, z.blocks);
    let n = z.rows * z.width;
    for idx in 0..n {
        let t = z.data[idx].tanh();
        y.data[idx] = t;
        if z.blocks == 4 {
            let t1 = 1.0 - t * t;
            let t2 = -2.0 * t * t1;
            let zx = z.data[n + idx];
            let zy = z.data[2 * n + idx];
            let zl = z.data[3 * n + idx];
            y.data[n + idx] = t1 * zx;
            y.data[2 * n + idx] = t1 * zy;
            y.data[3 * n + idx] = t1 * zl + t2 * (zx * zx + zy * zy);
        }
    }
    y
}

/// Adjoint of [`tanh_forward`] given the forward input `z` and output value block.
fn tanh_backward(z: &Streams, y: &Streams, dy: &Streams) -> Streams {
    let mut dz = Streams::zeros(z.rows, z.width, z.blocks);
    let n = z.rows * z.width;
    for idx in 0..n {
        let t = y.data[idx];
        let t1 = 1.0 - t * t;
        if z.blocks == 1 {
            dz.data[idx] = dy.data[idx] * t1;
            continue;
        }
        let t2 = -2.0 * t * t1;
        let t3 = -2.0 * (t1 * t1 + t * t2);
        let (zx, zy, zl) = (z.data[n + idx], z.data[2 * n + idx], z.data[3 * n + idx]);
        let (g0, gx, gy, gl) = (dy.data[idx], dy.data[n + idx], dy.data[2 * n + idx], dy.data[3 * n + idx]);
        dz.data[idx] = g0 * t1 + (gx * zx + gy * zy) * t2 + gl * (t2 * zl + t3 * (zx * zx + zy * zy));
        dz.data[n + idx] = gx * t1 + 2.0 * gl * t2 * zx;
        dz.data[2 * n + idx] = gy * t1 + 2.0 * gl * t2 * zy;
        dz.data[3 * n + idx] = gl * t1;
    }
    dz
}

/// `[sin w, cos w]` streams from the phase streams `w`.
fn fourier_forward(w: &Streams) -> Streams {
    let half = w.width;
    let mut h = Streams::zeros(w.rows, 2 * half, w.blocks);
    for r in 0..w.rows {
        for j in 0..half {
            let w0 = w.at(VALUE, r, j);
            let (s, c) = w0.sin_cos();
            *h.at_mut(VALUE, r, j) = s;
            *h.at_mut(VALUE, r, half + j) = c;
            if w.blocks == 4 {
                let (wx, wy, wl) = (w.at(DX, r, j), w.at(DY, r, j), w.at(LAP, r, j));
                let q = wx * wx + wy * wy;
                *h.at_mut(DX, r, j) = c * wx;
                *h.at_mut(DY, r, j) = c * wy;
                *h.at_mut(LAP, r, j) = c * wl - s * q;
                *h.at_mut(DX, r, half + j) = -s * wx;
                *h.at_mut(DY, r, half + j) = -s * wy;
                *h.at_mut(LAP, r, half + j) = -s * wl - c * q;
            }
        }
    }
    h
}

fn fourier_backward(w: &Streams, dh: &Streams) -> Streams {
    let half = w.width;
    let mut dw = Streams::zeros(w.rows, half, w.blocks);
    for r in 0..w.rows {
        for j in 0..half {
            let (s, c) = w.at(VALUE, r, j).sin_cos();
            let (gs, gc) = (dh.at(VALUE, r, j), dh.at(VALUE, r, half + j));
            if w.blocks == 1 {
                *dw.at_mut(VALUE, r, j) = gs * c - gc * s;
                continue;
            }
            let (wx, wy, wl) = (w.at(DX, r, j), w.at(DY, r, j), w.at(LAP, r, j));
            let q = wx * wx + wy * wy;
            let (sx, sy, sl) = (dh.at(DX, r, j), dh.at(DY, r, j), dh.at(LAP, r, j));
            let (cx, cy, cl) = (dh.at(DX, r, half + j), dh.at(DY, r, half + j), dh.at(LAP, r, half + j));
            *dw.at_mut(VALUE, r, j) = gs * c - (sx * wx + sy * wy) * s + sl * (-s * wl - c * q) - gc * s
                - (cx * wx + cy * wy) * c
                + cl * (-c * wl + s * q);
            *dw.at_mut(DX, r, j) = sx * c - 2.0 * sl * s * wx - cx * s - 2.0 * cl * c * wx;
            *dw.at_mut(DY, r, j) = sy * c - 2.0 * sl * s * wy - cy * s - 2.0 * cl * c * wy;
            *dw.at_mut(LAP, r, j) = sl * c - cl * s;
        }
    }
    dw
}

/// Intermediate streams kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct Tape {
    v: Streams,
    w: Streams,
    /// Input of each affine layer.
    inputs: Vec<Streams>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Streams>,
}

impl Net {
    fn fourier_matrix(&self) -> &[f64] {
        &self.theta[..self.shape.half * self.shape.embedding.dim()]
    }

    /// Raw outputs (no constraint) for all blocks.
    pub fn forward(&self, pts: &[Point], derivatives: bool) -> (Streams, Tape) {
        let blocks = if derivatives { 4 } else { 1 };
        let v = embed(self.shape.embedding, pts, blocks);
        let mut w = affine_forward(&v, self.fourier_matrix(), None, self.shape.half);
        w.data.iter_mut().for_each(|x| *x *= TWO_PI);
        let mut a = fourier_forward(&w);
        let offsets = self.shape.offsets();
        let dims = self.shape.affine();
        let last = dims.len() - 1;
        let mut inputs = Vec::with_capacity(dims.len());
        let mut pre = Vec::with_capacity(last);
        for (l, (&(o, i), &(wo, bo))) in dims.iter().zip(&offsets).enumerate() {
            let z = affine_forward(&a, &self.theta[wo..wo + o * i], Some(&self.theta[bo..bo + o]), o);
            inputs.push(a);
            if l == last {
                return (z, Tape { v, w, inputs, pre });
            }
            a = tanh_forward(&z);
            pre.push(z);
        }
        unreachable!("output layer always present")
    }

    /// Gradient of `sum(dout * out)` with respect to `theta`, added to `grad`.
    pub fn backward(&self, tape: &Tape, dout: &Streams, grad: &mut [f64]) {
        let offsets = self.shape.offsets();
        let dims = self.shape.affine();
        let mut g = dout.clone();
        for l in (0..dims.len()).rev() {
            let (o, i) = dims[l];
            let (wo, bo) = offsets[l];
            let (head, tail) = grad.split_at_mut(bo);
            let da = affine_backward(
                &tape.inputs[l],
                &g,
                &self.theta[wo..wo + o * i],
                &mut head[wo..wo + o * i],
                Some(&mut tail[..o]),
            );
            g = if l == 0 {
                da
            } else {
                tanh_backward(&tape.pre[l - 1], &tape.inputs[l], &da)
            };
        }
        let mut dw = fourier_backward(&tape.w, &g);
        dw.data.iter_mut().for_each(|x| *x *= TWO_PI);
        let ne = self.shape.half * self.shape.embedding.dim();
        // dE += dw^T v; the embedding has no parameters
        let _ = affine_backward(&tape.v, &dw, &self.theta[..ne], &mut grad[..ne], None);
    }
}

fn multiplier(kind: PressureMultiplier, x: Point) -> [f64; 4] {
    match kind {
        PressureMultiplier::InletOutlet => [4.0 * x[0] * (1.0 - x[0]), 4.0 * (1.0 - 2.0 * x[0]), 0.0, -8.0],
        PressureMultiplier::Literal => [
            4.0 * x[0] * x[1] * (1.0 - x[1]),
            4.0 * x[1] * (1.0 - x[1]),
            4.0 * x[0] * (1.0 - 2.0 * x[1]),
            -8.0 * x[0],
        ],
        PressureMultiplier::None => [1.0, 0.0, 0.0, 0.0],
    }
}

/// `p = s f` with product-rule streams.
fn constrain_pressure(kind: PressureMultiplier, pts: &[Point], raw: &Streams) -> Streams {
    let mut p = raw.clone();
    for (r, &x) in pts.iter().enumerate() {
        let s = multiplier(kind, x);
        let f0 = raw.at(VALUE, r, 0);
        *p.at_mut(VALUE, r, 0) = s[0] * f0;
        if raw.blocks == 4 {
            let (fx, fy, fl) = (raw.at(DX, r, 0), raw.at(DY, r, 0), raw.at(LAP, r, 0));
            *p.at_mut(DX, r, 0) = s[1] * f0 + s[0] * fx;
            *p.at_mut(DY, r, 0) = s[2] * f0 + s[0] * fy;
            *p.at_mut(LAP, r, 0) = s[3] * f0 + 2.0 * (s[1] * fx + s[2] * fy) + s[0] * fl;
        }
    }
    p
}

fn constrain_pressure_adjoint(kind: PressureMultiplier, pts: &[Point], dp: &Streams) -> Streams {
    let mut df = dp.clone();
    for (r, &x) in pts.iter().enumerate() {
        let s = multiplier(kind, x);
        let g0 = dp.at(VALUE, r, 0);
        if dp.blocks == 1 {
            *df.at_mut(VALUE, r, 0) = g0 * s[0];
            continue;
        }
        let (gx, gy, gl) = (dp.at(DX, r, 0), dp.at(DY, r, 0), dp.at(LAP, r, 0));
        *df.at_mut(VALUE, r, 0) = g0 * s[0] + gx * s[1] + gy * s[2] + gl * s[3];
        *df.at_mut(DX, r, 0) = gx * s[0] + 2.0 * gl * s[1];
        *df.at_mut(DY, r, 0) = gy * s[0] + 2.0 * gl * s[2];
        *df.at_mut(LAP, r, 0) = gl * s[0];
    }
    df
}

/// Gradients for both nets, laid out like their `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl ParamGrad {
    pub fn zeros(params: &NetworkParams) -> Self {
        Self {
            velocity: vec![0.0; params.velocity.theta.len()],
            pressure: vec![0.0; params.pressure.theta.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &ParamGrad, c: f64) {
        for (a, b) in self.velocity.iter_mut().zip(&other.velocity) {
            *a += c * b;
        }
        for (a, b) in self.pressure.iter_mut().zip(&other.pressure) {
            *a += c * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.velocity.iter().chain(&self.pressure).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.iter().chain(&self.pressure).all(|x| x.is_finite())
    }
}

/// Constrained velocity and pressure streams of a batch plus the tapes.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub pts: Vec<Point>,
    /// `u1, u2` columns.
    pub u: Streams,
    /// Single pressure column.
    pub p: Streams,
    tape_u: Tape,
    tape_p: Tape,
    multiplier: PressureMultiplier,
}

impl NetworkParams {
    pub fn forward_batch(&self, config: &ArchitectureConfig, pts: &[Point], derivatives: bool) -> BatchPass {
        let (u, tape_u) = self.velocity.forward(pts, derivatives);
        let (raw_p, tape_p) = self.pressure.forward(pts, derivatives);
        let p = constrain_pressure(config.pressure_multiplier, pts, &raw_p);
        BatchPass {
            pts: pts.to_vec(),
            u,
            p,
            tape_u,
            tape_p,
            multiplier: config.pressure_multiplier,
        }
    }

    /// Velocity only, value block.
    pub fn velocity_values(&self, pts: &[Point]) -> Vec<[f64; 2]> {
        let (u, _) = self.velocity.forward(pts, false);
        (0..pts.len()).map(|r| [u.at(VALUE, r, 0), u.at(VALUE, r, 1)]).collect()
    }

    pub fn values(&self, config: &ArchitectureConfig, pts: &[Point]) -> Vec<[f64; 3]> {
        let b = self.forward_batch(config, pts, false);
        (0..pts.len())
            .map(|r| [b.u.at(VALUE, r, 0), b.u.at(VALUE, r, 1), b.p.at(VALUE, r, 0)])
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.velocity.theta.len() + self.pressure.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.theta.iter().chain(&self.pressure.theta).all(|x| x.is_finite())
    }
}

impl BatchPass {
    /// Parameter gradient of `sum(du * u) + sum(dp * p)`, added into `grad`.
    pub fn backward(&self, params: &NetworkParams, du: &Streams, dp: &Streams, grad: &mut ParamGrad) {
        params.velocity.backward(&self.tape_u, du, &mut grad.velocity);
        let df = constrain_pressure_adjoint(self.multiplier, &self.pts, dp);
        params.pressure.backward(&self.tape_p, &df, &mut grad.pressure);
    }
}

/// Value, input gradient and Laplacian of `[u1, u2, p]` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub value: [f64; 3],
    /// `grad[i] = [d/dx1, d/dx2]` of output `i`.
    pub grad: [[f64; 2]; 3],
    pub laplacian: [f64; 3],
}

pub fn forward(params: &NetworkParams, config: &ArchitectureConfig, x: Point) -> EvalBundle {
    let b = params.forward_batch(config, &[x], true);
    let get = |i: usize, blk: usize| if i < 2 { b.u.at(blk, 0, i) } else { b.p.at(blk, 0, 0) };
    EvalBundle {
        value: [get(0, VALUE), get(1, VALUE), get(2, VALUE)],
        grad: [0, 1, 2].map(|i| [get(i, DX), get(i, DY)]),
        laplacian: [get(0, LAP), get(1, LAP), get(2, LAP)],
    }
}

/// Fourier features `[sin 2pi E v, cos 2pi E v]` of one point.
pub fn fourier_features(net: &Net, x: Point) -> Vec<f64> {
    let v = embed(net.shape.embedding, &[x], 1);
    let mut w = affine_forward(&v, net.fourier_matrix(), None, net.shape.half);
    w.data.iter_mut().for_each(|x| *x *= TWO_PI);
    fourier_forward(&w).data
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    velocity: NetShape,
    pressure: NetShape,
}

/// Binary checkpoint: magic, version, JSON header length and header, then
/// the little-endian parameters of both nets.
pub fn write_checkpoint<W: Write>(params: &NetworkParams, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&CheckpointHeader {
        velocity: params.velocity.shape.clone(),
        pressure: params.pressure.shape.clone(),
    })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    for x in params.velocity.theta.iter().chain(&params.pressure.theta) {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<NetworkParams> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    if &word != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a network checkpoint".into()));
    }
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut word)?;
    let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut header)?;
    let header: CheckpointHeader = serde_json::from_slice(&header)?;
    let mut read_net = |shape: NetShape| -> Result<Net> {
        let mut theta = Vec::with_capacity(shape.n_params());
        let mut buf = [0u8; 8];
        for _ in 0..shape.n_params() {
            r.read_exact(&mut buf)?;
            theta.push(f64::from_le_bytes(buf));
        }
        Ok(Net { shape, theta })
    };
    let velocity = read_net(header.velocity)?;
    let pressure = read_net(header.pressure)?;
    Ok(NetworkParams { velocity, pressure })
}
