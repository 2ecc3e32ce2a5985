//! Staggered-grid Stokes/Brinkman operator, cell-wise Vanka smoother and
//! grid transfers.
//!
//! Unknowns are packed as `[u (n^2), v (n^2), p (n^2)]`. The continuity rows
//! carry the negative divergence so the operator is symmetric apart from
//! the off-diagonal drag terms.

#[derive(Debug, Clone)]
pub(crate) struct MacLevel {
    pub n: usize,
    pub h: f64,
    pub visc: f64,
    /// Diagonal drag on `u` and `v` faces (`mu K^-1` or the solid penalty).
    pub sigma_u: Vec<f64>,
    pub sigma_v: Vec<f64>,
    /// Off-diagonal drag, `(mu K^-1)_12`, on `u` and `v` faces.
    pub cross_u: Option<Vec<f64>>,
    pub cross_v: Option<Vec<f64>>,
    /// No-slip wall along `y = 0` (`v` fixed there, ghost reflection for `u`).
    pub walls: bool,
}

impl MacLevel {
    #[inline]
    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn len(&self) -> usize {
        3 * self.cells()
    }

    #[inline]
    fn im(&self, i: usize) -> usize {
        if i == 0 {
            self.n - 1
        } else {
            i - 1
        }
    }

    #[inline]
    fn ip(&self, i: usize) -> usize {
        if i + 1 == self.n {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn v_fixed(&self, j: usize) -> bool {
        self.walls && j == 0
    }

    #[inline]
    fn vget(&self, v: &[f64], i: usize, j: usize) -> f64 {
        if self.v_fixed(j) {
            0.0
        } else {
            v[j * self.n + i]
        }
    }

    /// Laplacian diagonal of a `u` row (wall ghosts add one neighbour each).
    #[inline]
    fn u_lap_diag(&self, j: usize) -> f64 {
        let k = self.visc / (self.h * self.h);
        let mut d = 4.0 * k;
        if self.walls && (j == 0 || j + 1 == self.n) {
            d += k;
        }
        d
    }

    #[inline]
    fn u_row(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let n = self.n;
        let c = self.cells();
        let (u, v, p) = (&x[..c], &x[c..2 * c], &x[2 * c..]);
        let (im, ip, jm, jp) = (self.im(i), self.ip(i), self.im(j), self.ip(j));
        let k = self.visc / (self.h * self.h);
        let uc = u[j * n + i];
        let south = if self.walls && j == 0 { -uc } else { u[jm * n + i] };
        let north = if self.walls && j + 1 == n { -uc } else { u[jp * n + i] };
        let mut y = k * (4.0 * uc - u[j * n + im] - u[j * n + ip] - south - north)
            + self.sigma_u[j * n + i] * uc
            + (p[j * n + i] - p[j * n + im]) / self.h;
        if let Some(cu) = &self.cross_u {
            let vbar = 0.25
                * (self.vget(v, im, j) + self.vget(v, i, j) + self.vget(v, im, jp) + self.vget(v, i, jp));
            y += cu[j * n + i] * vbar;
        }
        y
    }

    #[inline]
    fn v_row(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let n = self.n;
        let c = self.cells();
        let (u, v, p) = (&x[..c], &x[c..2 * c], &x[2 * c..]);
        let k = self.visc / (self.h * self.h);
        if self.v_fixed(j) {
            return k * v[j * n + i];
        }
        let (im, ip, jm, jp) = (self.im(i), self.ip(i), self.im(j), self.ip(j));
        let vc = v[j * n + i];
        let mut y = k
            * (4.0 * vc
                - v[j * n + im]
                - v[j * n + ip]
                - self.vget(v, i, jm)
                - self.vget(v, i, jp))
            + self.sigma_v[j * n + i] * vc
            + (p[j * n + i] - p[jm * n + i]) / self.h;
        if let Some(cv) = &self.cross_v {
            let ubar = 0.25 * (u[jm * n + i] + u[jm * n + ip] + u[j * n + i] + u[j * n + ip]);
            y += cv[j * n + i] * ubar;
        }
        y
    }

    /// Negative discrete divergence of cell `(i, j)`.
    #[inline]
    fn p_row(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let n = self.n;
        let c = self.cells();
        let (u, v) = (&x[..c], &x[c..2 * c]);
        let (ip, jp) = (self.ip(i), self.ip(j));
        (u[j * n + i] - u[j * n + ip] + self.vget(v, i, j) - self.vget(v, i, jp)) / self.h
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.n;
        let c = self.cells();
        for j in 0..n {
            for i in 0..n {
                y[j * n + i] = self.u_row(x, i, j);
                y[c + j * n + i] = self.v_row(x, i, j);
                y[2 * c + j * n + i] = self.p_row(x, i, j);
            }
        }
    }

    pub fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        self.apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
    }

    /// One lexicographic multiplicative Vanka sweep, each cell solving its
    /// 5x5 saddle-point block (four faces plus the cell pressure) exactly.
    pub fn vanka_sweep(&self, b: &[f64], x: &mut [f64], omega: f64) {
        let n = self.n;
        let c = self.cells();
        let k = self.visc / (self.h * self.h);
        let bh = 1.0 / self.h;
        for j in 0..n {
            let jp = self.ip(j);
            for i in 0..n {
                let ip = self.ip(i);
                let iuw = j * n + i;
                let iue = j * n + ip;
                let ivs = j * n + i;
                let ivn = jp * n + i;
                let ipc = j * n + i;

                let r_uw = b[iuw] - self.u_row(x, i, j);
                let r_ue = b[iue] - self.u_row(x, ip, j);
                let r_p = b[2 * c + ipc] - self.p_row(x, i, j);

                // u pair: [[d_w, -k], [-k, d_e]], pressure coefficients [bh, -bh]
                let dw = self.u_lap_diag(j) + self.sigma_u[iuw];
                let de = self.u_lap_diag(j) + self.sigma_u[iue];
                let det_u = dw * de - k * k;
                let au_r = [(de * r_uw + k * r_ue) / det_u, (k * r_uw + dw * r_ue) / det_u];
                let au_b = [(de * bh - k * bh) / det_u, (k * bh - dw * bh) / det_u];
                let mut num = bh * au_r[0] - bh * au_r[1];
                let mut s = bh * au_b[0] - bh * au_b[1];

                let fs = self.v_fixed(j);
                let fnn = self.v_fixed(jp);
                let mut av_r = [0.0; 2];
                let mut av_b = [0.0; 2];
                if !fs || !fnn {
                    let r_vs = if fs { 0.0 } else { b[c + ivs] - self.v_row(x, i, j) };
                    let r_vn = if fnn { 0.0 } else { b[c + ivn] - self.v_row(x, i, jp) };
                    let ds = 4.0 * k + self.sigma_v[ivs];
                    let dn = 4.0 * k + self.sigma_v[ivn];
                    if fs {
                        av_r = [0.0, r_vn / dn];
                        av_b = [0.0, -bh / dn];
                    } else if fnn {
                        av_r = [r_vs / ds, 0.0];
                        av_b = [bh / ds, 0.0];
                    } else {
                        let det_v = ds * dn - k * k;
                        av_r = [(dn * r_vs + k * r_vn) / det_v, (k * r_vs + ds * r_vn) / det_v];
                        av_b = [(dn * bh - k * bh) / det_v, (k * bh - ds * bh) / det_v];
                    }
                    num += bh * av_r[0] - bh * av_r[1];
                    s += bh * av_b[0] - bh * av_b[1];
                }
                let dp = (num - r_p) / s;
                x[iuw] += omega * (au_r[0] - au_b[0] * dp);
                x[iue] += omega * (au_r[1] - au_b[1] * dp);
                if !fs {
                    x[c + ivs] += omega * (av_r[0] - av_b[0] * dp);
                }
                if !fnn {
                    x[c + ivn] += omega * (av_r[1] - av_b[1] * dp);
                }
                x[2 * c + ipc] += omega * dp;
            }
        }
    }

    /// Rediscretisation on the grid with twice the spacing. The drag of a
    /// coarse face is the mean of the two fine faces it covers.
    pub fn coarsen(&self) -> MacLevel {
        let nc = self.n / 2;
        let n = self.n;
        let mut su = vec![0.0; nc * nc];
        let mut sv = vec![0.0; nc * nc];
        for jc in 0..nc {
            for ic in 0..nc {
                su[jc * nc + ic] =
                    0.5 * (self.sigma_u[(2 * jc) * n + 2 * ic] + self.sigma_u[(2 * jc + 1) * n + 2 * ic]);
                sv[jc * nc + ic] =
                    0.5 * (self.sigma_v[(2 * jc) * n + 2 * ic] + self.sigma_v[(2 * jc) * n + 2 * ic + 1]);
            }
        }
        MacLevel {
            n: nc,
            h: 2.0 * self.h,
            visc: self.visc,
            sigma_u: su,
            sigma_v: sv,
            cross_u: None,
            cross_v: None,
            walls: self.walls,
        }
    }

    /// Zeroes the pressure mean and the fixed wall faces.
    pub fn normalize(&self, x: &mut [f64]) {
        let c = self.cells();
        let mean = x[2 * c..].iter().sum::<f64>() / c as f64;
        for p in &mut x[2 * c..] {
            *p -= mean;
        }
        if self.walls {
            for i in 0..self.n {
                x[c + i] = 0.0;
            }
        }
    }
}

/// Prolongation weights of fine `u` face `(i, j)` from a coarse grid of
/// size `nc`; `v` uses the transposed stencil.
#[inline]
fn face_weights(i: usize, j: usize, nc: usize) -> [(usize, usize, f64); 4] {
    // Along the face-normal axis: even fine index coincides with a coarse
    // line, odd index lies midway. Along the tangential axis: 3/4-1/4.
    let jc = j / 2;
    let jo = if j % 2 == 0 { (jc + nc - 1) % nc } else { (jc + 1) % nc };
    if i % 2 == 0 {
        let ic = i / 2;
        [(ic, jc, 0.75), (ic, jo, 0.25), (ic, jc, 0.0), (ic, jo, 0.0)]
    } else {
        let ic0 = i / 2;
        let ic1 = (ic0 + 1) % nc;
        [
            (ic0, jc, 0.375),
            (ic0, jo, 0.125),
            (ic1, jc, 0.375),
            (ic1, jo, 0.125),
        ]
    }
}

/// Coarse-to-fine correction, added to `fine`.
pub(crate) fn prolong_add(coarse: &[f64], nc: usize, fine: &mut [f64]) {
    let n = 2 * nc;
    let c = n * n;
    let cc = nc * nc;
    for j in 0..n {
        for i in 0..n {
            let mut su = 0.0;
            for (ic, jc, w) in face_weights(i, j, nc) {
                su += w * coarse[jc * nc + ic];
            }
            fine[j * n + i] += su;
            // v: swap roles of the axes
            let mut sv = 0.0;
            for (jc, ic, w) in face_weights(j, i, nc) {
                sv += w * coarse[cc + jc * nc + ic];
            }
            fine[c + j * n + i] += sv;
            fine[2 * c + j * n + i] += coarse[2 * cc + (j / 2) * nc + i / 2];
        }
    }
}

/// Fine-to-coarse residual transfer, the scaled adjoint of [`prolong_add`].
pub(crate) fn restrict(fine: &[f64], nc: usize, coarse: &mut [f64]) {
    let n = 2 * nc;
    let c = n * n;
    let cc = nc * nc;
    coarse.iter_mut().for_each(|x| *x = 0.0);
    for j in 0..n {
        for i in 0..n {
            let ru = 0.25 * fine[j * n + i];
            for (ic, jc, w) in face_weights(i, j, nc) {
                coarse[jc * nc + ic] += w * ru;
            }
            let rv = 0.25 * fine[c + j * n + i];
            for (jc, ic, w) in face_weights(j, i, nc) {
                coarse[cc + jc * nc + ic] += w * rv;
            }
            coarse[2 * cc + (j / 2) * nc + i / 2] += 0.25 * fine[2 * c + j * n + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn level(n: usize, walls: bool) -> MacLevel {
        let c = n * n;
        let mut sigma_u = vec![0.0; c];
        let mut sigma_v = vec![0.0; c];
        // a few penalised faces to exercise the drag path
        sigma_u[c / 2] = 1e3;
        sigma_v[c / 3] = 1e3;
        MacLevel {
            n,
            h: 1.0 / n as f64,
            visc: 1.0,
            sigma_u,
            sigma_v,
            cross_u: None,
            cross_v: None,
            walls,
        }
    }

    fn pseudo_random(len: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect()
    }

    #[test]
    fn operator_is_symmetric() {
        for walls in [false, true] {
            let l = level(8, walls);
            let mut a = pseudo_random(l.len(), 1);
            let mut b = pseudo_random(l.len(), 2);
            l.normalize(&mut a);
            l.normalize(&mut b);
            let mut aa = vec![0.0; l.len()];
            let mut ab = vec![0.0; l.len()];
            l.apply(&a, &mut aa);
            l.apply(&b, &mut ab);
            let lhs: f64 = aa.iter().zip(&b).map(|(x, y)| x * y).sum();
            let rhs: f64 = ab.iter().zip(&a).map(|(x, y)| x * y).sum();
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn restriction_is_scaled_adjoint_of_prolongation() {
        let nc = 4;
        let coarse = pseudo_random(3 * nc * nc, 3);
        let fine = pseudo_random(3 * 4 * nc * nc, 4);
        let mut pc = vec![0.0; fine.len()];
        prolong_add(&coarse, nc, &mut pc);
        let mut rf = vec![0.0; coarse.len()];
        restrict(&fine, nc, &mut rf);
        let lhs: f64 = pc.iter().zip(&fine).map(|(x, y)| x * y).sum();
        let rhs: f64 = rf.iter().zip(&coarse).map(|(x, y)| x * y).sum();
        assert!((lhs - 4.0 * rhs).abs() < 1e-12);
    }

    #[test]
    fn prolongation_preserves_constants() {
        let nc = 4;
        let coarse = vec![1.0; 3 * nc * nc];
        let mut fine = vec![0.0; 3 * 64];
        prolong_add(&coarse, nc, &mut fine);
        assert!(fine.iter().all(|x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn vanka_reduces_residual() {
        let l = level(16, false);
        let b = pseudo_random(l.len(), 5);
        let mut bb = b.clone();
        // consistent right-hand side: zero-mean continuity rows
        let c = l.cells();
        let mean = bb[2 * c..].iter().sum::<f64>() / c as f64;
        bb[2 * c..].iter_mut().for_each(|x| *x -= mean);
        let mut x = vec![0.0; l.len()];
        let mut r = vec![0.0; l.len()];
        l.residual(&bb, &x, &mut r);
        let r0: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..20 {
            l.vanka_sweep(&bb, &mut x, 1.0);
        }
        l.residual(&bb, &x, &mut r);
        let r1: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(r1 < r0);
    }
}
