use serde::{Deserialize, Serialize};

/// Dense 2x2 tensor, `m[row][col]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub m: [[f64; 2]; 2],
}

impl Tensor2 {
    pub const fn new(m: [[f64; 2]; 2]) -> Self {
        Self { m }
    }

    pub const fn iso(k: f64) -> Self {
        Self {
            m: [[k, 0.0], [0.0, k]],
        }
    }

    pub const fn diag(a: f64, b: f64) -> Self {
        Self {
            m: [[a, 0.0], [0.0, b]],
        }
    }

    pub fn identity() -> Self {
        Self::iso(1.0)
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn transpose(&self) -> Self {
        Self::new([[self.m[0][0], self.m[1][0]], [self.m[0][1], self.m[1][1]]])
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Self::new([
            [self.m[1][1] / d, -self.m[0][1] / d],
            [-self.m[1][0] / d, self.m[0][0] / d],
        ]))
    }

    pub fn mul(&self, o: &Tensor2) -> Self {
        let a = &self.m;
        let b = &o.m;
        Self::new([
            [
                a[0][0] * b[0][0] + a[0][1] * b[1][0],
                a[0][0] * b[0][1] + a[0][1] * b[1][1],
            ],
            [
                a[1][0] * b[0][0] + a[1][1] * b[1][0],
                a[1][0] * b[0][1] + a[1][1] * b[1][1],
            ],
        ])
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new([
            [self.m[0][0] * s, self.m[0][1] * s],
            [self.m[1][0] * s, self.m[1][1] * s],
        ])
    }

    pub fn symmetrized(&self) -> Self {
        let off = 0.5 * (self.m[0][1] + self.m[1][0]);
        Self::new([[self.m[0][0], off], [off, self.m[1][1]]])
    }

    pub fn frobenius(&self) -> f64 {
        self.m.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn sym_eigenvalues(&self) -> [f64; 2] {
        let s = self.symmetrized();
        let tr = s.m[0][0] + s.m[1][1];
        let diff = 0.5 * (s.m[0][0] - s.m[1][1]);
        let r = (diff * diff + s.m[0][1] * s.m[0][1]).sqrt();
        [0.5 * tr - r, 0.5 * tr + r]
    }

    pub fn is_symmetric(&self) -> bool {
        let scale = self.frobenius().max(f64::MIN_POSITIVE);
        (self.m[0][1] - self.m[1][0]).abs() <= 1e-12 * scale
    }

    pub fn is_spd(&self) -> bool {
        self.m.iter().flatten().all(|x| x.is_finite())
            && self.is_symmetric()
            && self.sym_eigenvalues()[0] > 0.0
    }

    /// Condition number in the 2-norm (ratio of singular values).
    pub fn condition(&self) -> f64 {
        let a = &self.m;
        let t = a[0][0] * a[0][0] + a[0][1] * a[0][1] + a[1][0] * a[1][0] + a[1][1] * a[1][1];
        let d = self.det().abs();
        let disc = (t * t - 4.0 * d * d).max(0.0).sqrt();
        let smax = (0.5 * (t + disc)).sqrt();
        let smin2 = 0.5 * (t - disc);
        if smin2 <= 0.0 || d == 0.0 {
            return f64::INFINITY;
        }
        // smin * smax = |det|
        smax / (d / smax)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_and_condition() {
        let k = Tensor2::new([[2.0, 0.5], [0.5, 1.0]]);
        let p = k.mul(&k.inverse().unwrap());
        assert!((p.m[0][0] - 1.0).abs() < 1e-15 && p.m[0][1].abs() < 1e-15);
        assert!((Tensor2::diag(1.0, 1e-6).condition() - 1e6).abs() < 1e-3);
        assert!(Tensor2::diag(1.0, 0.0).condition().is_infinite());
        assert!(Tensor2::diag(1.0, 0.0).inverse().is_none());
    }

    #[test]
    fn spd_check() {
        assert!(Tensor2::iso(1e-4).is_spd());
        assert!(!Tensor2::diag(1.0, -1.0).is_spd());
        assert!(!Tensor2::new([[1.0, 0.5], [0.0, 1.0]]).is_spd());
        assert!(!Tensor2::iso(0.0).is_spd());
    }
}
