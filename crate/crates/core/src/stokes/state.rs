use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Uniform staggered grid on the unit square: `u` on vertical faces
/// `(i h, (j + 1/2) h)`, `v` on horizontal faces `((i + 1/2) h, j h)` and
/// `p` at cell centres. Storage is row-major, `a[j * n + i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
}

impl Grid {
    pub const MIN_CELLS: usize = 16;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_CELLS {
            return Err(Error::Config(format!(
                "grid needs at least {} cells per side, got {n}",
                Self::MIN_CELLS
            )));
        }
        Ok(Self { n })
    }

    pub fn h(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn cells(&self) -> usize {
        self.n * self.n
    }

    pub fn cell_center(&self, i: usize, j: usize) -> Point {
        let h = self.h();
        [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]
    }

    pub fn u_face(&self, i: usize, j: usize) -> Point {
        let h = self.h();
        [i as f64 * h, (j as f64 + 0.5) * h]
    }

    pub fn v_face(&self, i: usize, j: usize) -> Point {
        let h = self.h();
        [(i as f64 + 0.5) * h, j as f64 * h]
    }
}

/// Discrete velocity/pressure pair on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub grid: Grid,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    U,
    V,
    P,
}

impl Field {
    fn name(self) -> &'static str {
        match self {
            Field::U => "u1",
            Field::V => "u2",
            Field::P => "p",
        }
    }
}

const BINARY_MAGIC: &[u8; 4] = b"DPFS";
const FORMAT_VERSION: u32 = 1;

impl FlowState {
    pub fn zeros(grid: Grid) -> Self {
        let c = grid.cells();
        Self {
            grid,
            u: vec![0.0; c],
            v: vec![0.0; c],
            p: vec![0.0; c],
        }
    }

    pub(crate) fn from_packed(grid: Grid, x: &[f64]) -> Self {
        let c = grid.cells();
        Self {
            grid,
            u: x[..c].to_vec(),
            v: x[c..2 * c].to_vec(),
            p: x[2 * c..3 * c].to_vec(),
        }
    }

    pub(crate) fn packed(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * self.grid.cells());
        x.extend_from_slice(&self.u);
        x.extend_from_slice(&self.v);
        x.extend_from_slice(&self.p);
        x
    }

    pub fn field(&self, f: Field) -> &[f64] {
        match f {
            Field::U => &self.u,
            Field::V => &self.v,
            Field::P => &self.p,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).chain(&self.p).all(|x| x.is_finite())
    }

    /// Face velocities averaged to the centre of cell `(i, j)`.
    pub fn cell_velocity(&self, i: usize, j: usize) -> [f64; 2] {
        let n = self.grid.n;
        let ip = (i + 1) % n;
        let jp = (j + 1) % n;
        [
            0.5 * (self.u[j * n + i] + self.u[j * n + ip]),
            0.5 * (self.v[j * n + i] + self.v[jp * n + i]),
        ]
    }

    /// Periodic bilinear interpolation of one field at `x`.
    pub fn sample(&self, field: Field, x: Point) -> f64 {
        let n = self.grid.n;
        let nf = n as f64;
        let (sx, sy) = match field {
            Field::U => (0.0, 0.5),
            Field::V => (0.5, 0.0),
            Field::P => (0.5, 0.5),
        };
        let fx = x[0] * nf - sx;
        let fy = x[1] * nf - sy;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let wrap = |k: f64| (k as i64).rem_euclid(n as i64) as usize;
        let (i0, i1) = (wrap(x0), wrap(x0 + 1.0));
        let (j0, j1) = (wrap(y0), wrap(y0 + 1.0));
        let a = self.field(field);
        (1.0 - ty) * ((1.0 - tx) * a[j0 * n + i0] + tx * a[j0 * n + i1])
            + ty * ((1.0 - tx) * a[j1 * n + i0] + tx * a[j1 * n + i1])
    }

    pub fn sample_velocity(&self, x: Point) -> [f64; 2] {
        [self.sample(Field::U, x), self.sample(Field::V, x)]
    }

    /// CSV export: two `#` header lines followed by `i,j,x,y,value` rows.
    pub fn write_csv<W: Write>(&self, field: Field, mut w: W) -> Result<()> {
        let n = self.grid.n;
        writeln!(w, "# dualperm-flowstate v{FORMAT_VERSION}")?;
        writeln!(w, "# n={n} layout=mac-staggered field={}", field.name())?;
        writeln!(w, "i,j,x,y,value")?;
        let a = self.field(field);
        for j in 0..n {
            for i in 0..n {
                let pos = match field {
                    Field::U => self.grid.u_face(i, j),
                    Field::V => self.grid.v_face(i, j),
                    Field::P => self.grid.cell_center(i, j),
                };
                writeln!(w, "{i},{j},{},{},{:e}", pos[0], pos[1], a[j * n + i])?;
            }
        }
        Ok(())
    }

    /// Little-endian binary blob: magic, version, `n`, then `u`, `v`, `p`.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.grid.n as u32).to_le_bytes())?;
        for x in self.u.iter().chain(&self.v).chain(&self.p) {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Checkpoint("not a flow-state file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported flow-state version {version}"
            )));
        }
        r.read_exact(&mut word)?;
        let grid = Grid::new(u32::from_le_bytes(word) as usize)?;
        let mut x = vec![0.0; 3 * grid.cells()];
        let mut buf = [0u8; 8];
        for v in x.iter_mut() {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok(Self::from_packed(grid, &x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_reproduces_linear_fields() {
        let grid = Grid::new(32).unwrap();
        let mut s = FlowState::zeros(grid);
        for j in 0..32 {
            for i in 0..32 {
                let c = grid.cell_center(i, j);
                s.p[j * 32 + i] = 2.0 * c[0] + c[1];
                s.u[j * 32 + i] = grid.u_face(i, j)[1];
            }
        }
        let x = [0.4, 0.3];
        assert!((s.sample(Field::P, x) - 1.1).abs() < 1e-12);
        assert!((s.sample(Field::U, x) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let grid = Grid::new(16).unwrap();
        let mut s = FlowState::zeros(grid);
        s.u[3] = 1.5;
        s.p[255] = -2.25e-7;
        let mut buf = Vec::new();
        s.write_binary(&mut buf).unwrap();
        assert_eq!(FlowState::read_binary(&buf[..]).unwrap(), s);
        buf[0] = b'X';
        assert!(FlowState::read_binary(&buf[..]).is_err());
    }

    #[test]
    fn csv_has_header() {
        let s = FlowState::zeros(Grid::new(16).unwrap());
        let mut buf = Vec::new();
        s.write_csv(Field::P, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# dualperm-flowstate v1\n# n=16 layout=mac-staggered field=p"));
        assert_eq!(text.lines().count(), 3 + 256);
    }

    #[test]
    fn tiny_grids_rejected() {
        assert!(Grid::new(8).is_err());
    }
}
