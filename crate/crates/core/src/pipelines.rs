//! Run orchestration for the four methods, seed sweeps with MV/SD/CV
//! statistics, and the files written per run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{
    build_micro_cell, decompose_segments, sample_collocation, tow_fvc, Aabb, CollocationCounts, MesoCell, MicroCell,
};
use crate::neural::{write_checkpoint, ArchitectureConfig};
use crate::pinn_hybrid::{hybrid_train, pinn_train, HybridConfig, ReferenceField, TrainingData, TrainingResult};
use crate::stokes::{solve_stokes_brinkman, solve_stokes_micro, BcMode, Grid, SolverConfig};
use crate::surrogate::{cross_validate, generate_dataset, train_emulator, Dataset, EmulatorConfig, EmulatorModel};
use crate::tensor::Tensor2;
use crate::upscaling::{
    estimate_from_state, meso_from_segments, meso_permeability, AverageMeasure, AveragingWindow,
    PermeabilityEstimate, PermeabilityPredictor, BENCHMARK_WINDOW,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Reference,
    Num,
    Sbm,
    Frm,
    Pinn,
    Hybrid,
    Sweep,
    Dataset,
    TrainSurrogate,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Reference => "reference",
            Method::Num => "num",
            Method::Sbm => "sbm",
            Method::Frm => "frm",
            Method::Pinn => "pinn",
            Method::Hybrid => "hybrid",
            Method::Sweep => "sweep",
            Method::Dataset => "dataset",
            Method::TrainSurrogate => "train-surrogate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub n_side: usize,
    pub radius: f64,
    pub tow: [f64; 2],
    /// Relative half-width of a per-seed uniform perturbation of the radius.
    pub radius_jitter: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            n_side: 5,
            radius: 2.75e-2,
            tow: [0.28, 0.72],
            radius_jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Cells per side of fiber-resolving solves.
    pub micro_n: usize,
    /// Cells per side of Stokes-Brinkman solves.
    pub meso_n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            micro_n: 512,
            meso_n: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub l_p_range: [f64; 2],
    pub samples: usize,
    pub measure: AverageMeasure,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            l_p_range: [0.0, 0.045],
            samples: 10,
            measure: AverageMeasure::Window,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicroSource {
    #[default]
    Reference,
    Surrogate,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumConfig {
    pub micro_source: MicroSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub n_x: usize,
    pub n_y: usize,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self { n_x: 5, n_y: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Trained model (JSON) used by `sbm` and surrogate-sourced `num`.
    pub model: Option<PathBuf>,
    /// Dataset read by `train-surrogate`.
    pub dataset: Option<PathBuf>,
    #[serde(flatten)]
    pub emulator: EmulatorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub fvc_grid: Vec<f64>,
    pub radius_grid: Vec<f64>,
    pub grid_n: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            fvc_grid: vec![0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4],
            radius_grid: vec![0.015, 0.02, 0.025, 0.0275, 0.03],
            grid_n: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollocationConfig {
    pub inner: usize,
    pub outer: usize,
    pub per_edge: usize,
    pub per_fiber: usize,
    pub split: [f64; 2],
}

impl Default for CollocationConfig {
    fn default() -> Self {
        Self {
            inner: 15_000,
            outer: 45_000,
            per_edge: 200,
            per_fiber: 200,
            split: [0.22, 0.78],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Compare trained networks against a fine solve.
    pub errors: bool,
    /// Fluid cell centres used for the comparison, every `stride`-th.
    pub stride: usize,
    /// Write the solved fields as binary files.
    pub export_field: bool,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            errors: true,
            stride: 4,
            export_field: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    /// Lattice sides at fixed radius, one fvc level each.
    pub n_sides: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Num, Method::Sbm, Method::Frm],
            n_sides: vec![3, 4, 5, 6],
        }
    }
}

/// Everything one CLI invocation needs. Read from TOML, so nested tables
/// and dotted keys (`solver.mu = 1.0`) are interchangeable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub threads: usize,
    pub deterministic: bool,
    pub geometry: GeometryConfig,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub window: WindowConfig,
    pub num: NumConfig,
    pub sbm: SbmConfig,
    pub surrogate: SurrogateConfig,
    pub dataset: DatasetConfig,
    pub collocation: CollocationConfig,
    pub reference: ReferenceConfig,
    pub sweep: SweepConfig,
    pub arch: Option<ArchitectureConfig>,
    pub hybrid: Option<HybridConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Reference,
            seeds: vec![0],
            output_dir: None,
            threads: 1,
            deterministic: false,
            geometry: GeometryConfig::default(),
            grid: GridConfig::default(),
            solver: SolverConfig::default(),
            window: WindowConfig::default(),
            num: NumConfig::default(),
            sbm: SbmConfig::default(),
            surrogate: SurrogateConfig::default(),
            dataset: DatasetConfig::default(),
            collocation: CollocationConfig::default(),
            reference: ReferenceConfig::default(),
            sweep: SweepConfig::default(),
            arch: None,
            hybrid: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// sha256 of the canonical JSON form, so formatting and key order in
    /// the source file do not matter.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(bytes))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.solver.validate()?;
        let needs_nets = |m: Method| matches!(m, Method::Pinn | Method::Hybrid);
        let methods: Vec<Method> = if self.method == Method::Sweep {
            self.sweep.methods.clone()
        } else {
            vec![self.method]
        };
        for m in methods {
            if needs_nets(m) {
                let arch = self
                    .arch
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("method {} needs an [arch] section", m.name())))?;
                arch.validate()?;
                if self.hybrid.is_none() {
                    return Err(Error::Config(format!("method {} needs a [hybrid] section", m.name())));
                }
            }
            if m == Method::TrainSurrogate && self.surrogate.dataset.is_none() {
                return Err(Error::Config("train-surrogate needs surrogate.dataset".into()));
            }
        }
        if self.method == Method::Sweep && (self.sweep.methods.is_empty() || self.sweep.n_sides.is_empty()) {
            return Err(Error::Config("sweep needs methods and n_sides".into()));
        }
        Ok(())
    }

    /// Settings shared by every solve of this run.
    fn effective_hybrid(&self) -> Result<HybridConfig> {
        let mut h = self
            .hybrid
            .clone()
            .ok_or_else(|| Error::Config("missing [hybrid] section".into()))?;
        h.solver = self.solver.clone();
        h.window = self.base_window()?;
        h.threads = self.threads;
        h.deterministic = self.deterministic;
        Ok(h)
    }

    fn base_window(&self) -> Result<AveragingWindow> {
        Ok(AveragingWindow::new(BENCHMARK_WINDOW, self.window.l_p_range[0])?.with_measure(self.window.measure))
    }

    fn tow_box(&self) -> Aabb {
        Aabb::square(self.geometry.tow[0], self.geometry.tow[1])
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One method evaluated on one geometry and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub method: Method,
    pub n_side: usize,
    pub radius: f64,
    pub fvc: f64,
    pub seed: u64,
    /// K[Z], or the micro K11 for `reference`, or the final K hat.
    pub k11: Option<f64>,
    /// Micro permeability fed to the mesoscale (where applicable).
    pub k_micro: Option<f64>,
    pub band_low: Option<f64>,
    pub band_high: Option<f64>,
    pub err_u1: Option<f64>,
    pub err_u2: Option<f64>,
    pub err_p: Option<f64>,
    pub runtime_s: f64,
    pub note: String,
}

impl RunRow {
    fn new(method: Method, config: &RunConfig, cell: &MicroCell, seed: u64) -> Self {
        Self {
            method,
            n_side: config.geometry.n_side,
            radius: cell.mean_radius(),
            fvc: tow_fvc(cell),
            seed,
            k11: None,
            k_micro: None,
            band_low: None,
            band_high: None,
            err_u1: None,
            err_u2: None,
            err_p: None,
            runtime_s: 0.0,
            note: String::new(),
        }
    }
}

struct Clock {
    start: Instant,
    deterministic: bool,
}

impl Clock {
    fn start(config: &RunConfig) -> Self {
        Self {
            start: Instant::now(),
            deterministic: config.deterministic,
        }
    }

    fn seconds(&self) -> f64 {
        if self.deterministic {
            0.0
        } else {
            self.start.elapsed().as_secs_f64()
        }
    }
}

/// The lattice cell of this run. A nonzero jitter perturbs the radius by a
/// seed-dependent factor in `1 +- jitter`. `n_side = 0` gives an empty tow.
pub fn cell_for(config: &RunConfig, seed: u64) -> Result<MicroCell> {
    let g = &config.geometry;
    if g.n_side == 0 {
        return MicroCell::new(config.tow_box(), vec![]);
    }
    let mut r = g.radius;
    if g.radius_jitter > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        r *= 1.0 + g.radius_jitter * rng.gen_range(-1.0..1.0);
    }
    build_micro_cell(g.n_side, r, config.tow_box())
}

/// Fine periodic solve with the inset sweep.
pub fn run_reference(config: &RunConfig, seed: u64) -> Result<(RunRow, PermeabilityEstimate, crate::stokes::FlowState)> {
    let clock = Clock::start(config);
    let cell = cell_for(config, seed)?;
    let grid = Grid::new(config.grid.micro_n)?;
    let sol = solve_stokes_micro(&cell, grid, &config.solver, BcMode::PeriodicBenchmark)?;
    let est = estimate_from_state(
        &sol.state,
        &cell,
        config.base_window()?,
        &config.solver,
        config.window.l_p_range,
        config.window.samples,
    )?;
    let mut row = RunRow::new(Method::Reference, config, &cell, seed);
    row.k11 = Some(est.k11());
    row.band_low = Some(est.band_low);
    row.band_high = Some(est.band_high);
    row.runtime_s = clock.seconds();
    Ok((row, est, sol.state))
}

fn brinkman_k(meso: &MesoCell, config: &RunConfig) -> Result<f64> {
    let sol = solve_stokes_brinkman(meso, Grid::new(config.grid.meso_n)?, &config.solver)?;
    meso_permeability(&sol.state, &config.solver)
}

fn load_model(config: &RunConfig) -> Result<EmulatorModel> {
    let path = config
        .surrogate
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("surrogate.model is not set".into()))?;
    EmulatorModel::from_json(&fs::read_to_string(path)?)
}

/// One micro permeability for the whole tow, then a uniform Brinkman solve.
pub fn run_num(config: &RunConfig, seed: u64, model: Option<&EmulatorModel>) -> Result<RunRow> {
    let clock = Clock::start(config);
    let cell = cell_for(config, seed)?;
    let mut row = RunRow::new(Method::Num, config, &cell, seed);
    let k = match config.num.micro_source {
        MicroSource::Reference => {
            let (r, _, _) = run_reference(config, seed)?;
            row.band_low = r.band_low;
            row.band_high = r.band_high;
            r.k11.expect("reference k")
        }
        MicroSource::Surrogate => {
            let m = model.ok_or_else(|| Error::Config("num from surrogate needs a model".into()))?;
            let p = m.predict(tow_fvc(&cell), cell.mean_radius())?;
            if p.clamped {
                row.note = "surrogate input clamped".into();
            }
            p.tensor.m[0][0]
        }
    };
    row.k_micro = Some(k);
    let meso = MesoCell::uniform(cell.tow_box, Tensor2::iso(k))?;
    row.k11 = Some(brinkman_k(&meso, config)?);
    row.runtime_s = clock.seconds();
    Ok(row)
}

/// Segment decomposition, per-segment prediction, piecewise Brinkman solve.
pub fn run_sbm(config: &RunConfig, seed: u64, predictor: &dyn PermeabilityPredictor) -> Result<RunRow> {
    let clock = Clock::start(config);
    let cell = cell_for(config, seed)?;
    let mut row = RunRow::new(Method::Sbm, config, &cell, seed);
    let template = MesoCell::uniform(cell.tow_box, Tensor2::identity())?;
    let segments = decompose_segments(&template, &cell, config.sbm.n_x, config.sbm.n_y)?;
    let (meso, warnings) = meso_from_segments(&segments, predictor)?;
    if !warnings.is_empty() {
        row.note = format!("{} segments clamped to the surrogate hull", warnings.len());
    }
    let mean: f64 = meso.field.tensors.iter().map(|t| t.m[0][0]).sum::<f64>() / meso.field.tensors.len() as f64;
    row.k_micro = Some(mean);
    row.k11 = Some(brinkman_k(&meso, config)?);
    row.runtime_s = clock.seconds();
    Ok(row)
}

/// Fully resolved solve averaged over the whole cell.
pub fn run_frm(config: &RunConfig, seed: u64) -> Result<RunRow> {
    let clock = Clock::start(config);
    let cell = cell_for(config, seed)?;
    let mut row = RunRow::new(Method::Frm, config, &cell, seed);
    if cell.fibers.is_empty() {
        row.note = "degenerate: no fibers, open-cell flow has no Darcy limit".into();
        return Ok(row);
    }
    let sol = solve_stokes_micro(&cell, Grid::new(config.grid.micro_n)?, &config.solver, BcMode::PeriodicBenchmark)?;
    row.k11 = Some(meso_permeability(&sol.state, &config.solver)?);
    row.runtime_s = clock.seconds();
    Ok(row)
}

fn collocation(config: &RunConfig, cell: &MicroCell, seed: u64) -> Result<TrainingData> {
    let c = &config.collocation;
    let counts = CollocationCounts {
        inner: c.inner,
        outer: c.outer,
        per_edge: c.per_edge,
        per_fiber: c.per_fiber,
    };
    let sets = sample_collocation(cell, &counts, &Aabb::square(c.split[0], c.split[1]), seed)?;
    Ok(TrainingData::from_point_sets(&sets))
}

/// Hybrid (`coupled`) or plain PINN training on the configured cell.
pub fn run_training(config: &RunConfig, seed: u64, coupled: bool) -> Result<(RunRow, TrainingResult)> {
    let clock = Clock::start(config);
    let arch = config
        .arch
        .as_ref()
        .ok_or_else(|| Error::Config("missing [arch] section".into()))?;
    let hybrid = config.effective_hybrid()?;
    let cell = cell_for(config, seed)?;
    let data = collocation(config, &cell, seed)?;
    let method = if coupled { Method::Hybrid } else { Method::Pinn };
    let mut row = RunRow::new(method, config, &cell, seed);
    let reference = if config.reference.errors {
        let (r, _, state) = run_reference(config, seed)?;
        row.band_low = r.band_low;
        row.band_high = r.band_high;
        row.k_micro = r.k11;
        Some(ReferenceField::from_state(&state, &cell, config.reference.stride))
    } else {
        None
    };
    let result = if coupled {
        hybrid_train(&cell, &data, &hybrid, arch, None, reference.as_ref(), seed)?
    } else {
        pinn_train(&cell, &data, &hybrid, arch, reference.as_ref(), seed)?
    };
    row.k11 = Some(result.k_hat);
    if let Some(e) = result.trace.records.last().and_then(|r| r.errors) {
        row.err_u1 = Some(e[0]);
        row.err_u2 = Some(e[1]);
        row.err_p = Some(e[2]);
    }
    if let (Some(lo), Some(hi)) = (row.band_low, row.band_high) {
        if result.k_hat > hi {
            row.note = "overshoot above the reference band".into();
        } else if result.k_hat < lo {
            row.note = "below the reference band".into();
        }
    }
    row.runtime_s = clock.seconds();
    Ok((row, result))
}

/// MV, SD and CV of K11 over the runs of one method and lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: Method,
    pub n_side: usize,
    pub fvc: f64,
    pub runs: usize,
    pub mv: f64,
    pub sd: f64,
    pub cv: f64,
    pub runtime_mean_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

/// Groups runs by (method, n_side); SD is the sample deviation and is 0
/// for a single run. Runs without a K11 are left out.
pub fn sweep_and_report(runs: &[RunRow]) -> ComparisonReport {
    let mut keys: Vec<(Method, usize)> = runs.iter().map(|r| (r.method, r.n_side)).collect();
    keys.sort();
    keys.dedup();
    let mut rows = Vec::new();
    for (method, n_side) in keys {
        let group: Vec<&RunRow> = runs
            .iter()
            .filter(|r| r.method == method && r.n_side == n_side && r.k11.is_some())
            .collect();
        if group.is_empty() {
            continue;
        }
        let n = group.len() as f64;
        let ks: Vec<f64> = group.iter().map(|r| r.k11.unwrap()).collect();
        let mv = ks.iter().sum::<f64>() / n;
        let sd = if group.len() > 1 {
            (ks.iter().map(|k| (k - mv).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(ComparisonRow {
            method,
            n_side,
            fvc: group.iter().map(|r| r.fvc).sum::<f64>() / n,
            runs: group.len(),
            mv,
            sd,
            cv: if mv != 0.0 { sd / mv } else { 0.0 },
            runtime_mean_s: group.iter().map(|r| r.runtime_s).sum::<f64>() / n,
        });
    }
    rows.sort_by(|a, b| (a.method, a.fvc).partial_cmp(&(b.method, b.fvc)).expect("finite fvc"));
    ComparisonReport { rows }
}

/// Summary written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub method: Method,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub deterministic: bool,
    pub runtime_s: f64,
    /// `(file name, sha256)` of every output.
    pub files: Vec<(String, String)>,
}

struct Output {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push((name.to_string(), hex(&Sha256::digest(bytes))));
        Ok(())
    }

    fn csv<T: CsvRow>(&mut self, name: &str, rows: &[T], meta: &RunMeta) -> Result<()> {
        let mut s = T::header().join(",") + ",config_hash,version\n";
        for r in rows {
            s += &r.fields().join(",");
            s += &format!(",{},{}\n", meta.config_hash, meta.version);
        }
        self.write(name, s.as_bytes())
    }
}

struct RunMeta {
    config_hash: String,
    version: &'static str,
}

trait CsvRow {
    fn header() -> Vec<&'static str>;
    fn fields(&self) -> Vec<String>;
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl CsvRow for RunRow {
    fn header() -> Vec<&'static str> {
        vec![
            "method", "n_side", "radius", "fvc", "seed", "k11", "k_micro", "band_low", "band_high", "err_u1", "err_u2",
            "err_p", "runtime_s", "note",
        ]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.method.name().to_string(),
            self.n_side.to_string(),
            self.radius.to_string(),
            self.fvc.to_string(),
            self.seed.to_string(),
            opt(self.k11),
            opt(self.k_micro),
            opt(self.band_low),
            opt(self.band_high),
            opt(self.err_u1),
            opt(self.err_u2),
            opt(self.err_p),
            self.runtime_s.to_string(),
            format!("\"{}\"", self.note.replace('"', "'")),
        ]
    }
}

impl CsvRow for ComparisonRow {
    fn header() -> Vec<&'static str> {
        vec!["method", "n_side", "fvc", "runs", "mv", "sd", "cv", "runtime_mean_s"]
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.method.name().to_string(),
            self.n_side.to_string(),
            self.fvc.to_string(),
            self.runs.to_string(),
            self.mv.to_string(),
            self.sd.to_string(),
            self.cv.to_string(),
            self.runtime_mean_s.to_string(),
        ]
    }
}

#[derive(Serialize)]
struct SeededRecord<'a> {
    seed: u64,
    #[serde(flatten)]
    record: &'a crate::pinn_hybrid::TraceRecord,
}

fn kvsfvc(report: &ComparisonReport) -> Vec<u8> {
    let mut s = String::from("method,fvc,k_mean\n");
    for r in &report.rows {
        s.push_str(&format!("{},{},{}\n", r.method.name(), r.fvc, r.mv));
    }
    s.into_bytes()
}

/// Runs `config.method` for every seed and writes `runs.csv`,
/// `report.csv`, method-specific files and `manifest.json` into `out`.
pub fn execute(config: &RunConfig, out: &Path) -> Result<Manifest> {
    config.validate()?;
    let clock = Clock::start(config);
    let meta = RunMeta {
        config_hash: config.hash(),
        version: VERSION,
    };
    let mut output = Output::new(out)?;
    let mut runs = Vec::new();
    match config.method {
        Method::Reference => {
            for &seed in &config.seeds {
                let (row, est, state) = run_reference(config, seed)?;
                let cell = cell_for(config, seed)?;
                let doc = cell.to_document(Some(seed)).to_json()?;
                output.write(&format!("geometry-{seed}.json"), doc.as_bytes())?;
                output.write(
                    &format!("permeability-{seed}.json"),
                    serde_json::to_string_pretty(&est.to_record())?.as_bytes(),
                )?;
                if config.reference.export_field {
                    let mut buf = Vec::new();
                    state.write_binary(&mut buf)?;
                    output.write(&format!("field-{seed}.bin"), &buf)?;
                }
                runs.push(row);
            }
        }
        Method::Num | Method::Sbm | Method::Frm => {
            let model = if config.method == Method::Sbm || config.num.micro_source == MicroSource::Surrogate {
                Some(load_model(config)?)
            } else {
                None
            };
            for &seed in &config.seeds {
                runs.push(run_method(config, config.method, seed, model.as_ref())?);
            }
        }
        Method::Pinn | Method::Hybrid => {
            let mut trace = Vec::new();
            for &seed in &config.seeds {
                let (row, result) = run_training(config, seed, config.method == Method::Hybrid)?;
                for record in &result.trace.records {
                    serde_json::to_writer(&mut trace, &SeededRecord { seed, record })?;
                    trace.push(b'\n');
                }
                let mut ckpt = Vec::new();
                write_checkpoint(&result.params, &mut ckpt)?;
                output.write(&format!("network-{seed}.dpnn"), &ckpt)?;
                runs.push(row);
            }
            output.write("trace.ndjson", &trace)?;
        }
        Method::Sweep => {
            let model = if config.sweep.methods.contains(&Method::Sbm)
                || config.num.micro_source == MicroSource::Surrogate
            {
                Some(load_model(config)?)
            } else {
                None
            };
            for &m in &config.sweep.methods {
                for &n_side in &config.sweep.n_sides {
                    let mut c = config.clone();
                    c.geometry.n_side = n_side;
                    for &seed in &config.seeds {
                        runs.push(run_method(&c, m, seed, model.as_ref())?);
                    }
                }
            }
        }
        Method::Dataset => {
            let d = &config.dataset;
            let ds = generate_dataset(
                &d.fvc_grid,
                &d.radius_grid,
                d.grid_n,
                config.seeds[0],
                &config.solver,
                config.window.measure,
                config.threads,
            )?;
            output.write("dataset.json", ds.to_json()?.as_bytes())?;
        }
        Method::TrainSurrogate => {
            let path = config.surrogate.dataset.as_ref().expect("validated");
            let ds = Dataset::from_json(&fs::read_to_string(path)?)?;
            let emu = EmulatorConfig {
                seed: config.seeds[0],
                ..config.surrogate.emulator.clone()
            };
            let cv = cross_validate(&ds, &emu)?;
            let mut model = train_emulator(&ds, &emu)?;
            model.heldout_median_error = Some(cv.median);
            output.write("model.json", model.to_json()?.as_bytes())?;
            let mut s = String::from("fvc,radius,k11,heldout_rel_error\n");
            for (row, e) in ds.rows.iter().zip(&cv.errors) {
                s.push_str(&format!("{},{},{},{}\n", row.features.fvc, row.features.radius, row.k11, e));
            }
            output.write("cross_validation.csv", s.as_bytes())?;
        }
    }
    let report = sweep_and_report(&runs);
    if !matches!(config.method, Method::Dataset | Method::TrainSurrogate) {
        output.csv("runs.csv", &runs, &meta)?;
        output.csv("report.csv", &report.rows, &meta)?;
        if config.method == Method::Sweep {
            output.write("k_vs_fvc.csv", &kvsfvc(&report))?;
        }
    }
    let manifest = Manifest {
        version: VERSION.to_string(),
        method: config.method,
        config_hash: meta.config_hash.clone(),
        seeds: config.seeds.clone(),
        deterministic: config.deterministic,
        runtime_s: clock.seconds(),
        files: output.files.clone(),
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

fn run_method(config: &RunConfig, method: Method, seed: u64, model: Option<&EmulatorModel>) -> Result<RunRow> {
    match method {
        Method::Num => run_num(config, seed, model),
        Method::Frm => run_frm(config, seed),
        Method::Sbm => run_sbm(
            config,
            seed,
            model.ok_or_else(|| Error::Config("sbm needs surrogate.model".into()))?,
        ),
        Method::Reference => Ok(run_reference(config, seed)?.0),
        Method::Pinn | Method::Hybrid => Ok(run_training(config, seed, method == Method::Hybrid)?.0),
        m => Err(Error::Config(format!("{} cannot be swept", m.name()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast() -> RunConfig {
        RunConfig {
            deterministic: true,
            grid: GridConfig { micro_n: 128, meso_n: 64 },
            geometry: GeometryConfig {
                n_side: 2,
                radius: 0.06,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_parses_dotted_keys_and_tables() {
        let a = RunConfig::from_toml("method = \"num\"\nseeds = [1, 2]\nsolver.mu = 2.0\n[grid]\nmicro_n = 256\n").unwrap();
        assert_eq!(a.method, Method::Num);
        assert_eq!(a.seeds, vec![1, 2]);
        assert_eq!(a.solver.mu, 2.0);
        assert_eq!(a.grid.micro_n, 256);
        assert_eq!(a.grid.meso_n, 128);
        let b = RunConfig::from_toml("method = \"num\"\n[solver]\nmu = 2.0\n[grid]\nmicro_n = 256\nseeds_typo = 1\n");
        assert!(matches!(b, Err(Error::Config(_))));
    }

    #[test]
    fn config_hash_ignores_formatting() {
        let a = RunConfig::from_toml("seeds = [3]\nsolver.mu = 2.0").unwrap();
        let b = RunConfig::from_toml("# comment\n[solver]\nmu = 2.0\n\n[grid]\n").unwrap();
        let b = RunConfig { seeds: vec![3], ..b };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig::default().hash());
    }

    #[test]
    fn missing_sections_are_config_errors() {
        let c = RunConfig {
            seeds: vec![],
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig {
            method: Method::Hybrid,
            hybrid: Some(HybridConfig::default()),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = RunConfig {
            method: Method::Hybrid,
            arch: Some(ArchitectureConfig::default()),
            hybrid: Some(HybridConfig::default()),
            ..Default::default()
        };
        assert!(c.validate().is_ok());
    }

    fn row(method: Method, n_side: usize, k: f64) -> RunRow {
        RunRow {
            method,
            n_side,
            radius: 0.03,
            fvc: n_side as f64 / 10.0,
            seed: 0,
            k11: Some(k),
            k_micro: None,
            band_low: None,
            band_high: None,
            err_u1: None,
            err_u2: None,
            err_p: None,
            runtime_s: 0.0,
            note: String::new(),
        }
    }

    #[test]
    fn report_statistics() {
        let single = sweep_and_report(&[row(Method::Num, 5, 2.0)]);
        assert_eq!((single.rows[0].sd, single.rows[0].cv), (0.0, 0.0));
        let twins = sweep_and_report(&[row(Method::Num, 5, 2.0), row(Method::Num, 5, 2.0)]);
        assert_eq!(twins.rows[0].sd, 0.0);
        let r = sweep_and_report(&[
            row(Method::Frm, 4, 1.0),
            row(Method::Num, 5, 1.0),
            row(Method::Num, 5, 3.0),
            row(Method::Num, 3, 9.0),
        ]);
        let order: Vec<(Method, usize)> = r.rows.iter().map(|x| (x.method, x.n_side)).collect();
        assert_eq!(order, vec![(Method::Num, 3), (Method::Num, 5), (Method::Frm, 4)]);
        let g = &r.rows[1];
        assert_eq!(g.mv, 2.0);
        assert!((g.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!((g.cv - g.sd / g.mv).abs() < 1e-15);
    }

    #[test]
    fn num_is_monotone_in_tow_permeability() {
        let c = fast();
        let cell = cell_for(&c, 0).unwrap();
        let k = |kp: f64| brinkman_k(&MesoCell::uniform(cell.tow_box, Tensor2::iso(kp)).unwrap(), &c).unwrap();
        assert!(k(5e-5) < k(5e-4));
    }

    #[test]
    fn sbm_with_pinned_predictor_matches_num() {
        let c = RunConfig {
            sbm: SbmConfig { n_x: 1, n_y: 1 },
            ..fast()
        };
        let num = run_num(&c, 0, None).unwrap();
        let pinned = Tensor2::iso(num.k_micro.unwrap());
        let sbm = run_sbm(&c, 0, &pinned).unwrap();
        assert_eq!(sbm.k11, num.k11);
        let capped = RunConfig {
            sbm: SbmConfig { n_x: 16, n_y: 16 },
            ..fast()
        };
        assert!(matches!(run_sbm(&capped, 0, &pinned), Err(Error::SegmentCap { .. })));
    }

    #[test]
    fn frm_flags_fiber_free_cell() {
        let c = RunConfig {
            geometry: GeometryConfig {
                n_side: 0,
                ..fast().geometry
            },
            ..fast()
        };
        let r = run_frm(&c, 0).unwrap();
        assert!(r.k11.is_none());
        assert!(r.note.starts_with("degenerate"));
    }

    #[test]
    fn radius_jitter_is_seeded() {
        let c = RunConfig {
            geometry: GeometryConfig {
                radius_jitter: 0.05,
                ..fast().geometry
            },
            ..fast()
        };
        let (a, b) = (cell_for(&c, 1).unwrap(), cell_for(&c, 2).unwrap());
        assert_eq!(a, cell_for(&c, 1).unwrap());
        assert_ne!(a.mean_radius(), b.mean_radius());
        assert!((a.mean_radius() / 0.06 - 1.0).abs() <= 0.05);
    }

    #[test]
    fn deterministic_reruns_are_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let c = RunConfig {
            method: Method::Frm,
            seeds: vec![0, 1],
            ..fast()
        };
        let m1 = execute(&c, &dir.path().join("a")).unwrap();
        let m2 = execute(&c, &dir.path().join("b")).unwrap();
        assert_eq!(m1, m2);
        for name in ["runs.csv", "report.csv", "manifest.json"] {
            let a = fs::read(dir.path().join("a").join(name)).unwrap();
            let b = fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(a, b, "{name}");
        }
        let text = fs::read_to_string(dir.path().join("a/runs.csv")).unwrap();
        assert!(text.lines().next().unwrap().contains("config_hash"));
        assert!(text.contains(&c.hash()));
    }
}
