//! Feature-based micropermeability emulator: dataset generation with the
//! reference solver, a Gebart-normalised polynomial regressor and the
//! closed-form baseline.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{build_micro_cell, tow_fvc, Aabb, MicroCell};
use crate::stokes::{Grid, SolverConfig};
use crate::tensor::Tensor2;
use crate::upscaling::{permeability_with_band, AverageMeasure, PermeabilityPredictor, Prediction};

/// Square-packing limit of the fiber volume content.
pub const FVC_MAX: f64 = PI / 4.0;

/// Tow box used for every dataset cell.
pub const DATASET_TOW: Aabb = Aabb::square(0.28, 0.72);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub fvc: f64,
    pub radius: f64,
    #[serde(default)]
    pub orientation: f64,
}

impl FeatureVector {
    pub fn new(fvc: f64, radius: f64) -> Result<Self> {
        if !(fvc > 0.0 && fvc < FVC_MAX) || !(radius > 0.0) {
            return Err(Error::Domain(format!("features fvc={fvc}, r={radius}")));
        }
        Ok(Self {
            fvc,
            radius,
            orientation: 0.0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRow {
    pub features: FeatureVector,
    pub k11: f64,
    pub n_side: usize,
    pub grid_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub rows: Vec<DataRow>,
    pub seed: u64,
    /// Requested pairs that were not realisable, with the reason.
    pub skipped: Vec<String>,
}

impl Dataset {
    /// SHA-256 of the rows in their JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.rows).expect("rows serialise");
        hex(&Sha256::digest(bytes))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Dataset = serde_json::from_str(s)?;
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        for (i, r) in self.rows.iter().enumerate() {
            if !(r.k11 > 0.0) {
                return Err(Error::Dataset(format!("row {i} has non-positive label {}", r.k11)));
            }
            for s in &self.rows[..i] {
                if s.features == r.features {
                    return Err(Error::Dataset(format!("row {i} duplicates features {:?}", r.features)));
                }
            }
        }
        Ok(())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Fibers per side of the square lattice whose volume content in the
/// dataset tow is closest to `fvc`.
pub fn lattice_side(fvc: f64, radius: f64) -> usize {
    (DATASET_TOW.width() * (fvc / PI).sqrt() / radius).round() as usize
}

/// One reference K11 per realisable `(fvc, radius)` pair. The stored fvc is
/// the one of the realised lattice.
pub fn generate_dataset(
    fvc_grid: &[f64],
    radius_grid: &[f64],
    grid_n: usize,
    seed: u64,
    solver: &SolverConfig,
    measure: AverageMeasure,
    threads: usize,
) -> Result<Dataset> {
    let grid = Grid::new(grid_n)?;
    let mut jobs: Vec<(MicroCell, usize, f64, f64)> = Vec::new();
    let mut skipped = Vec::new();
    for &r in radius_grid {
        for &f in fvc_grid {
            let n_side = lattice_side(f, r);
            if n_side == 0 {
                skipped.push(format!("fvc {f}, r {r}: no fiber fits"));
                continue;
            }
            match build_micro_cell(n_side, r, DATASET_TOW) {
                Ok(cell) => {
                    let fvc = tow_fvc(&cell);
                    if jobs.iter().any(|j| j.3 == r && (j.2 - fvc).abs() < 1e-12)
                    {
                        skipped.push(format!("fvc {f}, r {r}: same lattice as an earlier row"));
                        continue;
                    }
                    jobs.push((cell, n_side, fvc, r));
                }
                Err(e) => skipped.push(format!("fvc {f}, r {r}: {e}")),
            }
        }
    }
    let solve = |(cell, n_side, fvc, r): &(MicroCell, usize, f64, f64)| -> std::result::Result<DataRow, String> {
        let (est, _) = permeability_with_band(cell, grid, solver, measure, [0.0, 0.0], 1)
            .map_err(|e| format!("fvc {fvc:.4}, r {r}: {e}"))?;
        Ok(DataRow {
            features: FeatureVector {
                fvc: *fvc,
                radius: *r,
                orientation: 0.0,
            },
            k11: est.k11(),
            n_side: *n_side,
            grid_n,
        })
    };
    let results = crate::parallel::ordered_map(&jobs, threads, solve);
    let mut rows = Vec::new();
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(reason) => skipped.push(reason),
        }
    }
    for s in &skipped {
        log::info!("dataset: skipped {s}");
    }
    Ok(Dataset { rows, seed, skipped })
}

/// Transverse permeability of a square fiber array.
pub fn gebart_baseline(fvc: f64, radius: f64) -> Result<f64> {
    if !(fvc > 0.0 && fvc < FVC_MAX) {
        return Err(Error::Domain(format!("fvc {fvc} outside (0, pi/4)")));
    }
    let c = 16.0 / (9.0 * PI * 2f64.sqrt());
    Ok(c * ((FVC_MAX / fvc).sqrt() - 1.0).powf(2.5) * radius * radius)
}

/// Headroom coordinate `ln(sqrt(fvc_max / fvc) - 1)`: the baseline is
/// `2.5 z + 2 ln r + const` in it.
fn headroom(fvc: f64) -> f64 {
    ((FVC_MAX / fvc).sqrt() - 1.0).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmulatorConfig {
    /// Total degree of the residual polynomial (1 or 2).
    pub degree: usize,
    pub folds: usize,
    pub seed: u64,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            degree: 2,
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hull {
    pub fvc: [f64; 2],
    pub radius: [f64; 2],
}

impl Hull {
    fn clamp(&self, f: &FeatureVector) -> (FeatureVector, bool) {
        let fvc = f.fvc.clamp(self.fvc[0], self.fvc[1]);
        let radius = f.radius.clamp(self.radius[0], self.radius[1]);
        let clamped = fvc != f.fvc || radius != f.radius;
        (
            FeatureVector {
                fvc,
                radius,
                orientation: f.orientation,
            },
            clamped,
        )
    }
}

/// `ln K = ln gebart + sum_k c_k phi_k(z)` with `z` the standardised
/// (headroom, ln r) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorModel {
    pub coefficients: Vec<f64>,
    /// Exponents `(a, b)` of `z1^a z2^b` for each coefficient.
    pub terms: Vec<(u32, u32)>,
    pub z_mean: [f64; 2],
    pub z_scale: [f64; 2],
    pub hull: Hull,
    /// Log-space residuals `ln prediction - ln label` of the training rows.
    pub training_residuals: Vec<f64>,
    pub dataset_hash: String,
    pub seed: u64,
    pub heldout_median_error: Option<f64>,
}

impl EmulatorModel {
    fn z(&self, f: &FeatureVector) -> [f64; 2] {
        [
            (headroom(f.fvc) - self.z_mean[0]) / self.z_scale[0],
            (f.radius.ln() - self.z_mean[1]) / self.z_scale[1],
        ]
    }

    fn residual_at(&self, z: [f64; 2]) -> f64 {
        self.coefficients
            .iter()
            .zip(&self.terms)
            .map(|(c, &(a, b))| c * z[0].powi(a as i32) * z[1].powi(b as i32))
            .sum()
    }

    /// d(ln K)/d(headroom) in raw headroom units.
    fn headroom_slope(&self, z: [f64; 2]) -> f64 {
        let d: f64 = self
            .coefficients
            .iter()
            .zip(&self.terms)
            .filter(|(_, &(a, _))| a > 0)
            .map(|(c, &(a, b))| c * a as f64 * z[0].powi(a as i32 - 1) * z[1].powi(b as i32))
            .sum();
        2.5 + d / self.z_scale[0]
    }

    /// Log prediction inside the hull, no clamping.
    fn ln_k(&self, f: &FeatureVector) -> Result<f64> {
        Ok(gebart_baseline(f.fvc, f.radius)?.ln() + self.residual_at(self.z(f)))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn poly_terms(degree: usize, use_radius: bool) -> Vec<(u32, u32)> {
    let mut t = vec![(0, 0), (1, 0)];
    if use_radius {
        t.push((0, 1));
    }
    if degree >= 2 {
        t.push((2, 0));
        if use_radius {
            t.push((1, 1));
            t.push((0, 2));
        }
    }
    t
}

/// Least squares via normal equations with partial pivoting; `None` if rank-deficient.
fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let m = rows[0].len();
    let mut a = vec![vec![0.0; m + 1]; m];
    for (r, &yi) in rows.iter().zip(y) {
        for i in 0..m {
            for j in 0..m {
                a[i][j] += r[i] * r[j];
            }
            a[i][m] += r[i] * yi;
        }
    }
    let scale = (0..m).map(|i| a[i][i]).fold(0.0, f64::max);
    for col in 0..m {
        let piv = (col..m).max_by(|&p, &q| a[p][col].abs().partial_cmp(&a[q][col].abs()).unwrap())?;
        if a[piv][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, piv);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=m {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    Some((0..m).map(|i| a[i][m] / a[i][i]).collect())
}

fn fit(rows: &[&DataRow], degree: usize, dataset_hash: &str, seed: u64) -> Result<EmulatorModel> {
    let hz: Vec<f64> = rows.iter().map(|r| headroom(r.features.fvc)).collect();
    let lr: Vec<f64> = rows.iter().map(|r| r.features.radius.ln()).collect();
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        (mean, var.sqrt())
    };
    let (m1, s1) = stats(&hz);
    let (m2, s2) = stats(&lr);
    if s1 == 0.0 {
        return Err(Error::Dataset("all rows share one fvc; the fit is under-determined".into()));
    }
    let use_radius = s2 > 1e-12;
    let hull = Hull {
        fvc: [
            rows.iter().map(|r| r.features.fvc).fold(f64::INFINITY, f64::min),
            rows.iter().map(|r| r.features.fvc).fold(f64::NEG_INFINITY, f64::max),
        ],
        radius: [
            rows.iter().map(|r| r.features.radius).fold(f64::INFINITY, f64::min),
            rows.iter().map(|r| r.features.radius).fold(f64::NEG_INFINITY, f64::max),
        ],
    };
    let mut model = EmulatorModel {
        coefficients: vec![],
        terms: vec![],
        z_mean: [m1, m2],
        z_scale: [s1, if use_radius { s2 } else { 1.0 }],
        hull,
        training_residuals: vec![],
        dataset_hash: dataset_hash.to_string(),
        seed,
        heldout_median_error: None,
    };
    let target: Vec<f64> = rows
        .iter()
        .map(|r| Ok(r.k11.ln() - gebart_baseline(r.features.fvc, r.features.radius)?.ln()))
        .collect::<Result<_>>()?;
    let zs: Vec<[f64; 2]> = rows.iter().map(|r| model.z(&r.features)).collect();
    let corners = [
        [hull.fvc[0], hull.radius[0]],
        [hull.fvc[0], hull.radius[1]],
        [hull.fvc[1], hull.radius[0]],
        [hull.fvc[1], hull.radius[1]],
    ];
    // Try the requested degree, then lower ones, until the fit keeps
    // ln K increasing in headroom (decreasing in fvc) over the whole hull.
    for deg in (1..=degree.max(1)).rev() {
        let terms = poly_terms(deg, use_radius);
        if rows.len() < terms.len() + 1 {
            continue;
        }
        let design: Vec<Vec<f64>> = zs
            .iter()
            .map(|z| terms.iter().map(|&(a, b)| z[0].powi(a as i32) * z[1].powi(b as i32)).collect())
            .collect();
        let Some(c) = least_squares(&design, &target) else {
            continue;
        };
        model.coefficients = c;
        model.terms = terms;
        let monotone = corners.iter().all(|&[f, r]| {
            let z = model.z(&FeatureVector {
                fvc: f,
                radius: r,
                orientation: 0.0,
            });
            model.headroom_slope(z) > 0.0
        });
        if monotone {
            model.training_residuals = rows
                .iter()
                .map(|r| Ok(model.ln_k(&r.features)? - r.k11.ln()))
                .collect::<Result<_>>()?;
            return Ok(model);
        }
        log::debug!("degree {deg} fit is not monotone in fvc; lowering the degree");
    }
    // Baseline shape with a fitted offset and radius slope only.
    let terms = poly_terms(0, use_radius).into_iter().filter(|t| t.0 == 0).collect::<Vec<_>>();
    let design: Vec<Vec<f64>> = zs
        .iter()
        .map(|z| terms.iter().map(|&(a, b)| z[0].powi(a as i32) * z[1].powi(b as i32)).collect())
        .collect();
    let c = least_squares(&design, &target)
        .ok_or_else(|| Error::Dataset("rank-deficient design; the fit is under-determined".into()))?;
    model.coefficients = c;
    model.terms = terms;
    model.training_residuals = rows
        .iter()
        .map(|r| Ok(model.ln_k(&r.features)? - r.k11.ln()))
        .collect::<Result<_>>()?;
    Ok(model)
}

/// Fits the emulator on all rows and records the held-out median error
/// of a `config.folds`-fold split.
pub fn train_emulator(dataset: &Dataset, config: &EmulatorConfig) -> Result<EmulatorModel> {
    if dataset.rows.len() < 10 {
        return Err(Error::Dataset(format!(
            "{} rows, at least 10 are needed",
            dataset.rows.len()
        )));
    }
    dataset.check()?;
    let hash = dataset.hash();
    let rows: Vec<&DataRow> = dataset.rows.iter().collect();
    let mut model = fit(&rows, config.degree, &hash, config.seed)?;
    if config.folds >= 2 {
        let cv = cross_validate(dataset, config)?;
        model.heldout_median_error = Some(cv.median);
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    /// Relative error of every row when held out.
    pub errors: Vec<f64>,
    pub median: f64,
}

pub fn cross_validate(dataset: &Dataset, config: &EmulatorConfig) -> Result<CrossValidation> {
    let n = dataset.rows.len();
    let k = config.folds.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let hash = dataset.hash();
    let mut errors = vec![0.0; n];
    for fold in 0..k {
        let test: Vec<usize> = order.iter().copied().skip(fold).step_by(k).collect();
        let train: Vec<&DataRow> = order
            .iter()
            .enumerate()
            .filter(|(pos, _)| pos % k != fold)
            .map(|(_, &i)| &dataset.rows[i])
            .collect();
        let model = fit(&train, config.degree, &hash, config.seed)?;
        for i in test {
            let row = &dataset.rows[i];
            let pred = predict_permeability(&model, &row.features)?.tensor.m[0][0];
            errors[i] = (pred - row.k11).abs() / row.k11;
        }
    }
    let mut sorted = errors.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Ok(CrossValidation { errors, median })
}

/// Isotropic `K11 I`; inputs outside the training hull are clamped onto it.
pub fn predict_permeability(model: &EmulatorModel, features: &FeatureVector) -> Result<Prediction> {
    let (f, clamped) = model.hull.clamp(features);
    if clamped {
        log::warn!(
            "features (fvc {:.4}, r {:.4}) clamped to the training hull",
            features.fvc,
            features.radius
        );
    }
    let k = model.ln_k(&f)?.exp();
    Ok(Prediction {
        tensor: Tensor2::iso(k),
        clamped,
    })
}

impl PermeabilityPredictor for EmulatorModel {
    fn predict(&self, fvc: f64, radius: f64) -> Result<Prediction> {
        // empty segments sit below the hull and are clamped like any other
        let f = FeatureVector {
            fvc: fvc.max(f64::MIN_POSITIVE),
            radius,
            orientation: 0.0,
        };
        predict_permeability(self, &f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Synthetic labels with a known smooth deviation from the baseline.
    fn synthetic(n_f: usize, radii: &[f64]) -> Dataset {
        let mut rows = Vec::new();
        for &r in radii {
            for i in 0..n_f {
                let fvc = 0.1 + 0.5 * i as f64 / (n_f - 1) as f64;
                let k = gebart_baseline(fvc, r).unwrap() * (1.8 + 0.3 * fvc);
                rows.push(DataRow {
                    features: FeatureVector::new(fvc, r).unwrap(),
                    k11: k,
                    n_side: 0,
                    grid_n: 0,
                });
            }
        }
        Dataset {
            rows,
            seed: 0,
            skipped: vec![],
        }
    }

    #[test]
    fn gebart_closed_forms() {
        let c = 16.0 / (9.0 * PI * 2f64.sqrt());
        let r = 0.03;
        let k = gebart_baseline(FVC_MAX / 4.0, r).unwrap();
        assert!((k - c * r * r).abs() < 1e-15);
        let k = gebart_baseline(FVC_MAX / 16.0, r).unwrap();
        assert!((k - 3f64.powf(2.5) * c * r * r).abs() < 1e-15);
        assert!(gebart_baseline(FVC_MAX * (1.0 - 1e-9), r).unwrap() < 1e-20);
        assert!(gebart_baseline(FVC_MAX, r).is_err());
    }

    #[test]
    fn lattice_side_matches_benchmarks() {
        assert_eq!(lattice_side(0.3068, 0.0275), 5);
        assert_eq!(lattice_side(0.3651, 0.025), 6);
    }

    #[test]
    fn empty_grids_give_empty_dataset() {
        let d = generate_dataset(&[], &[0.02], 64, 1, &SolverConfig::default(), AverageMeasure::Window, 1).unwrap();
        assert!(d.rows.is_empty());
    }

    #[test]
    fn too_few_or_duplicate_rows_are_rejected() {
        let mut d = synthetic(12, &[0.02]);
        d.rows.truncate(5);
        assert!(matches!(train_emulator(&d, &EmulatorConfig::default()), Err(Error::Dataset(_))));
        let mut d = synthetic(12, &[0.02]);
        let first = d.rows[0].clone();
        d.rows.iter_mut().for_each(|r| r.features = first.features);
        assert!(train_emulator(&d, &EmulatorConfig::default()).is_err());
    }

    #[test]
    fn fit_reproduces_smooth_labels_and_training_residuals() {
        let d = synthetic(8, &[0.02, 0.03, 0.04]);
        let m = train_emulator(&d, &EmulatorConfig::default()).unwrap();
        assert!(m.heldout_median_error.unwrap() < 0.02);
        for (row, res) in d.rows.iter().zip(&m.training_residuals) {
            let p = predict_permeability(&m, &row.features).unwrap().tensor.m[0][0];
            assert!(((p.ln() - row.k11.ln()) - res).abs() < 1e-12);
        }
    }

    #[test]
    fn prediction_is_monotone_and_clamped() {
        let d = synthetic(8, &[0.02, 0.03]);
        let m = train_emulator(&d, &EmulatorConfig::default()).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=400 {
            let fvc = m.hull.fvc[0] + (m.hull.fvc[1] - m.hull.fvc[0]) * i as f64 / 400.0;
            let k = predict_permeability(&m, &FeatureVector::new(fvc, 0.025).unwrap()).unwrap().tensor.m[0][0];
            assert!(k < prev);
            prev = k;
        }
        let above = predict_permeability(&m, &FeatureVector::new(m.hull.fvc[1] + 0.05, 0.025).unwrap()).unwrap();
        let edge = predict_permeability(&m, &FeatureVector::new(m.hull.fvc[1], 0.025).unwrap()).unwrap();
        assert!(above.clamped && !edge.clamped);
        assert_eq!(above.tensor, edge.tensor);
    }

    #[test]
    fn model_json_round_trip() {
        let d = synthetic(6, &[0.02, 0.03]);
        let m = train_emulator(&d, &EmulatorConfig::default()).unwrap();
        assert_eq!(EmulatorModel::from_json(&m.to_json().unwrap()).unwrap(), m);
        assert_eq!(m.dataset_hash, d.hash());
        assert_eq!(d.hash().len(), 64);
    }
}
