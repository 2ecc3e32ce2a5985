use super::mac::{prolong_add, restrict, MacLevel};

/// Geometric V-cycle over a hierarchy of rediscretised MAC levels.
#[derive(Debug, Clone)]
pub(crate) struct Multigrid {
    pub levels: Vec<MacLevel>,
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub coarse_sweeps: usize,
    pub omega: f64,
}

const COARSEST: usize = 4;

impl Multigrid {
    pub fn new(fine: MacLevel, pre_sweeps: usize, post_sweeps: usize, omega: f64) -> Self {
        let mut levels = vec![fine];
        loop {
            let last = levels.last().unwrap();
            if last.n % 2 != 0 || last.n / 2 < COARSEST {
                break;
            }
            let next = last.coarsen();
            levels.push(next);
        }
        Self {
            levels,
            pre_sweeps,
            post_sweeps,
            coarse_sweeps: 40,
            omega,
        }
    }

    /// `x = M^-1 b` with a zero initial guess.
    pub fn precondition(&self, b: &[f64], x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = 0.0);
        self.cycle(0, b, x);
        self.levels[0].normalize(x);
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let level = &self.levels[l];
        if l + 1 == self.levels.len() {
            for _ in 0..self.coarse_sweeps {
                level.vanka_sweep(b, x, self.omega);
            }
            return;
        }
        for _ in 0..self.pre_sweeps {
            level.vanka_sweep(b, x, self.omega);
        }
        let mut r = vec![0.0; level.len()];
        level.residual(b, x, &mut r);
        let coarse = &self.levels[l + 1];
        let mut rc = vec![0.0; coarse.len()];
        restrict(&r, coarse.n, &mut rc);
        let mut ec = vec![0.0; coarse.len()];
        self.cycle(l + 1, &rc, &mut ec);
        coarse.normalize(&mut ec);
        prolong_add(&ec, coarse.n, x);
        if level.walls {
            let c = level.cells();
            x[c..c + level.n].iter_mut().for_each(|v| *v = 0.0);
        }
        for _ in 0..self.post_sweeps {
            level.vanka_sweep(b, x, self.omega);
        }
    }
}
