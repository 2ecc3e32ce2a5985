/// One restart cycle of right-preconditioned GMRES with modified
/// Gram-Schmidt. Updates `x` in place and returns the estimated residual
/// 2-norm at the end of the cycle.
pub(crate) fn gmres_cycle(
    apply: impl Fn(&[f64], &mut [f64]),
    precondition: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    restart: usize,
    target: f64,
) -> f64 {
    let len = b.len();
    let mut r = vec![0.0; len];
    apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let beta = norm(&r);
    if beta == 0.0 || beta <= target {
        return beta;
    }
    let m = restart.max(1);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    r.iter_mut().for_each(|v| *v /= beta);
    basis.push(r);

    let mut hess = vec![vec![0.0; m]; m + 1];
    let mut cs = vec![0.0; m];
    let mut sn = vec![0.0; m];
    let mut g = vec![0.0; m + 1];
    g[0] = beta;
    let mut z = vec![0.0; len];
    let mut steps = 0;

    for k in 0..m {
        precondition(&basis[k], &mut z);
        let mut w = vec![0.0; len];
        apply(&z, &mut w);
        for (i, vi) in basis.iter().enumerate() {
            let hik = dot(&w, vi);
            hess[i][k] = hik;
            for (wj, vj) in w.iter_mut().zip(vi) {
                *wj -= hik * vj;
            }
        }
        let hnext = norm(&w);
        hess[k + 1][k] = hnext;

        for i in 0..k {
            let t = cs[i] * hess[i][k] + sn[i] * hess[i + 1][k];
            hess[i + 1][k] = -sn[i] * hess[i][k] + cs[i] * hess[i + 1][k];
            hess[i][k] = t;
        }
        let denom = hess[k][k].hypot(hess[k + 1][k]);
        if denom == 0.0 {
            steps = k;
            break;
        }
        cs[k] = hess[k][k] / denom;
        sn[k] = hess[k + 1][k] / denom;
        hess[k][k] = denom;
        hess[k + 1][k] = 0.0;
        g[k + 1] = -sn[k] * g[k];
        g[k] *= cs[k];
        steps = k + 1;

        if g[k + 1].abs() <= target || hnext == 0.0 {
            break;
        }
        w.iter_mut().for_each(|v| *v /= hnext);
        basis.push(w);
    }

    let mut y = vec![0.0; steps];
    for i in (0..steps).rev() {
        let mut s = g[i];
        for j in (i + 1)..steps {
            s -= hess[i][j] * y[j];
        }
        y[i] = s / hess[i][i];
    }
    // x += M^-1 (V y)
    let mut vy = vec![0.0; len];
    for (yi, vi) in y.iter().zip(&basis) {
        for (a, b) in vy.iter_mut().zip(vi) {
            *a += yi * b;
        }
    }
    precondition(&vy, &mut z);
    for (xi, zi) in x.iter_mut().zip(&z) {
        *xi += zi;
    }
    g[steps].abs()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_nonsymmetric_system() {
        let a = [[4.0, 1.0, 0.0], [2.0, 5.0, 1.0], [0.0, 1.0, 3.0]];
        let apply = |x: &[f64], y: &mut [f64]| {
            for i in 0..3 {
                y[i] = (0..3).map(|j| a[i][j] * x[j]).sum();
            }
        };
        let ident = |x: &[f64], y: &mut [f64]| y.copy_from_slice(x);
        let b = [1.0, 2.0, 3.0];
        let mut x = [0.0; 3];
        gmres_cycle(apply, ident, &b, &mut x, 3, 0.0);
        let mut ax = [0.0; 3];
        apply(&x, &mut ax);
        for i in 0..3 {
            assert!((ax[i] - b[i]).abs() < 1e-12);
        }
    }
}
