//! Simulation designs with a known projection parameter, and the Monte
//! Carlo experiments built on them.
//!
//! Every design generates `y = xᵀβ₀ + g(x) + σ(x)·ε` where the symmetry of
//! the design makes `E[x g(x)] = 0` and `E[x σ(x) ε] = 0`, so the
//! population least-squares coefficient is exactly `β₀`.
//!
//! Experiments run replications in parallel. Each replication draws its
//! data from a seed derived from `(seed, replication index)`, so reports do
//! not depend on scheduling.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{
    bonferroni_quantile, default_bootstrap_draws, sidak_quantile, QuantileMethod, QuantileValue,
};
use crate::confset::{
    calibrate_lin, calibrate_reclin, calibrate_wald, diameter_estimate, hausdorff_member_rect,
    CalibratedSet, ProbeConfig, WaldOracle,
};
use crate::error::{Error, Result};
use crate::estimating::{linreg_psi, RegressionSample};
use crate::numlin::{dot, least_squares, Mat};
use crate::rng::{self, derive_seed, tag};
use crate::statistic::{plugin_correlation, CorrelationMatrix};

/// Rows generated per random stream.
const CHUNK_ROWS: usize = 4096;

/// Default size of the plug-in sample behind oracle quantities.
pub const DEFAULT_ORACLE_ROWS: usize = 1_000_000;

/// Environment variable naming the on-disk oracle cache directory.
pub const CACHE_DIR_ENV: &str = "SELFNORM_CACHE_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Design {
    Gaussian,
    /// Student t with `df` degrees of freedom, rescaled to unit variance.
    Student {
        df: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    Homoskedastic {
        sigma: f64,
    },
    /// `σ(x) = sqrt(1 + (xᵀγ)²)`.
    Heteroskedastic {
        gamma: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Misspec {
    None,
    /// `g(x) = x_j² − 1`, with `coordinate` the 0-based index `j`.
    Quadratic {
        coordinate: usize,
    },
}

/// A data-generating process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_total: usize,
    pub p: usize,
    pub design: Design,
    pub noise: Noise,
    pub misspec: Misspec,
    pub beta0: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl DgpSpec {
    /// Gaussian design, unit homoskedastic noise, no misspecification,
    /// `β₀ = (1, …, 1)`.
    pub fn standard(n_total: usize, p: usize) -> Self {
        DgpSpec {
            n_total,
            p,
            design: Design::Gaussian,
            noise: Noise::Homoskedastic { sigma: 1.0 },
            misspec: Misspec::None,
            beta0: vec![1.0; p],
            seed: 0,
        }
    }

    pub fn with_n_total(&self, n_total: usize) -> Self {
        DgpSpec {
            n_total,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DgpSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.n_total < 2 || 2 * self.p > self.n_total {
            return bad(format!(
                "need p <= n_total/2, got p = {} and n_total = {}",
                self.p, self.n_total
            ));
        }
        if self.beta0.len() != self.p || self.beta0.iter().any(|b| !b.is_finite()) {
            return bad(format!("beta0 must hold {} finite values", self.p));
        }
        if let Design::Student { df } = self.design {
            if !(df > 8.0) || !df.is_finite() {
                return bad(format!("student design needs finite df > 8, got {df}"));
            }
        }
        match &self.noise {
            Noise::Homoskedastic { sigma } if !(*sigma >= 0.0) || !sigma.is_finite() => {
                return bad(format!(
                    "noise sigma must be finite and non-negative, got {sigma}"
                ));
            }
            Noise::Heteroskedastic { gamma }
                if gamma.len() != self.p || gamma.iter().any(|g| !g.is_finite()) =>
            {
                return bad(format!(
                    "heteroskedastic gamma must hold {} finite values",
                    self.p
                ));
            }
            _ => {}
        }
        if let Misspec::Quadratic { coordinate } = self.misspec {
            if coordinate >= self.p {
                return bad(format!(
                    "quadratic coordinate {coordinate} out of range for p = {}",
                    self.p
                ));
            }
            if self.design != Design::Gaussian {
                return bad("quadratic misspecification requires the gaussian design".into());
            }
        }
        Ok(())
    }

    fn noise_scale(&self, x: &[f64]) -> f64 {
        match &self.noise {
            Noise::Homoskedastic { sigma } => *sigma,
            Noise::Heteroskedastic { gamma } => {
                let v = dot(x, gamma);
                (1.0 + v * v).sqrt()
            }
        }
    }

    fn misspec_term(&self, x: &[f64]) -> f64 {
        match self.misspec {
            Misspec::None => 0.0,
            Misspec::Quadratic { coordinate } => x[coordinate] * x[coordinate] - 1.0,
        }
    }

    /// Fills `x` and returns `y − xᵀβ₀` for one row.
    fn draw_row<R: rand::Rng>(
        &self,
        rng: &mut R,
        student: Option<(&StudentT<f64>, f64)>,
        x: &mut [f64],
    ) -> f64 {
        match student {
            None => x.iter_mut().for_each(|v| *v = StandardNormal.sample(rng)),
            Some((t, scale)) => x.iter_mut().for_each(|v| *v = scale * t.sample(rng)),
        }
        let eps: f64 = StandardNormal.sample(rng);
        self.misspec_term(x) + self.noise_scale(x) * eps
    }

    fn student(&self) -> Option<(StudentT<f64>, f64)> {
        match self.design {
            Design::Gaussian => None,
            Design::Student { df } => Some((
                StudentT::new(df).expect("validated df"),
                ((df - 2.0) / df).sqrt(),
            )),
        }
    }

    /// One chunk of `len` rows drawn from its own stream under `seed`: the
    /// covariates row-major and the errors `y − xᵀβ₀`.
    fn chunk(&self, seed: u64, chunk: usize, len: usize) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let student = self.student();
        let student = student.as_ref().map(|(t, s)| (t, *s));
        let mut rng = rng::stream(seed, chunk as u64);
        let mut x = vec![0.0; len * p];
        let mut err = vec![0.0; len];
        for i in 0..len {
            err[i] = self.draw_row(&mut rng, student, &mut x[i * p..(i + 1) * p]);
        }
        (x, err)
    }
}

fn chunk_lengths(rows: usize) -> Vec<usize> {
    (0..rows.div_ceil(CHUNK_ROWS))
        .map(|c| CHUNK_ROWS.min(rows - c * CHUNK_ROWS))
        .collect()
}

/// Draws `n_total` rows from the design.
pub fn dgp_generate(spec: &DgpSpec) -> Result<RegressionSample> {
    spec.validate()?;
    let seed = derive_seed(spec.seed, tag::DATA);
    let chunks: Vec<(Vec<f64>, Vec<f64>)> = chunk_lengths(spec.n_total)
        .into_par_iter()
        .enumerate()
        .map(|(c, len)| spec.chunk(seed, c, len))
        .collect();
    let mut x = Vec::with_capacity(spec.n_total * spec.p);
    let mut y = Vec::with_capacity(spec.n_total);
    for (cx, cerr) in chunks {
        for (row, e) in cx.chunks(spec.p).zip(cerr) {
            y.push(dot(row, &spec.beta0) + e);
        }
        x.extend(cx);
    }
    RegressionSample::new(Mat::new(spec.n_total, spec.p, x)?, y)
}

/// Large-sample plug-in quantities at `β₀`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Oracle {
    pub key: String,
    pub rows: usize,
    /// `V(β₀) ≈ (1/N) Σ x xᵀ (y − xᵀβ₀)²`.
    pub vstar: Mat,
    /// The correlation matrix of `vstar`.
    pub gamma: CorrelationMatrix,
}

impl Oracle {
    /// Wald oracle with the analytic `Σ = I` of unit-variance designs.
    pub fn wald(&self) -> WaldOracle {
        WaldOracle {
            sigma: Mat::identity(self.vstar.rows()),
            vstar: self.vstar.clone(),
        }
    }
}

#[derive(Serialize)]
struct OracleKey<'a> {
    p: usize,
    design: &'a Design,
    noise: &'a Noise,
    misspec: &'a Misspec,
    rows: usize,
}

/// Stable hash of the parts of a `DgpSpec` that determine the oracle.
pub fn oracle_key(spec: &DgpSpec, rows: usize) -> String {
    let key = OracleKey {
        p: spec.p,
        design: &spec.design,
        noise: &spec.noise,
        misspec: &spec.misspec,
        rows,
    };
    let json = serde_json::to_vec(&key).expect("oracle key serializes");
    Sha256::digest(&json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn compute_oracle(spec: &DgpSpec, rows: usize, key: String) -> Result<Oracle> {
    let p = spec.p;
    let seed = derive_seed(
        u64::from_str_radix(&key[..16], 16).unwrap_or(0),
        tag::ORACLE,
    );
    let partials: Vec<Vec<f64>> = chunk_lengths(rows)
        .into_par_iter()
        .enumerate()
        .map(|(c, len)| {
            let (x, err) = spec.chunk(seed, c, len);
            let mut acc = vec![0.0; p * p];
            for (row, e) in x.chunks(p).zip(err) {
                let w = e * e;
                for k in 0..p {
                    let wk = w * row[k];
                    for l in 0..=k {
                        acc[k * p + l] += wk * row[l];
                    }
                }
            }
            acc
        })
        .collect();
    let mut v = Mat::zeros(p, p);
    for acc in partials {
        for k in 0..p {
            for l in 0..=k {
                v[(k, l)] += acc[k * p + l];
            }
        }
    }
    for k in 0..p {
        for l in 0..=k {
            let val = v[(k, l)] / rows as f64;
            v[(k, l)] = val;
            v[(l, k)] = val;
        }
    }
    let gamma = CorrelationMatrix::from_second_moments(&v)?;
    Ok(Oracle {
        key,
        rows,
        vstar: v,
        gamma,
    })
}

/// In-memory oracle cache, optionally backed by a directory of JSON files.
pub struct OracleCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<String, Arc<Oracle>>>,
}

impl OracleCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            dir,
            memory: Mutex::new(HashMap::new()),
        }
    }

    /// The process-wide cache, on disk under `$SELFNORM_CACHE_DIR` or the
    /// system temp directory.
    pub fn global() -> &'static OracleCache {
        static CACHE: OnceLock<OracleCache> = OnceLock::new();
        CACHE.get_or_init(|| {
            let dir = std::env::var_os(CACHE_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| std::env::temp_dir().join("selfnorm-oracle-cache"));
            OracleCache::new(Some(dir))
        })
    }

    pub fn get(&self, spec: &DgpSpec, rows: usize) -> Result<Arc<Oracle>> {
        spec.validate()?;
        if rows == 0 {
            return Err(Error::TooFew { min: 1, got: 0 });
        }
        let key = oracle_key(spec, rows);
        if let Some(o) = self.memory.lock().unwrap().get(&key) {
            return Ok(o.clone());
        }
        let oracle = match self.load(&key) {
            Some(o) => o,
            None => {
                let o = compute_oracle(spec, rows, key.clone())?;
                self.store(&o);
                o
            }
        };
        let oracle = Arc::new(oracle);
        self.memory.lock().unwrap().insert(key, oracle.clone());
        Ok(oracle)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("oracle-{key}.json")))
    }

    fn load(&self, key: &str) -> Option<Oracle> {
        let text = fs::read_to_string(self.path(key)?).ok()?;
        let o: Oracle = serde_json::from_str(&text).ok()?;
        (o.key == key).then_some(o)
    }

    /// Best effort: an unwritable cache directory only costs recomputation.
    fn store(&self, oracle: &Oracle) {
        let (Some(dir), Some(path)) = (&self.dir, self.path(&oracle.key)) else {
            return;
        };
        let Ok(json) = serde_json::to_string(oracle) else {
            return;
        };
        if fs::create_dir_all(dir).is_err() {
            return;
        }
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        if fs::write(&tmp, json).is_ok() && fs::rename(&tmp, &path).is_err() {
            let _ = fs::remove_file(&tmp);
        }
    }
}

fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

fn replication_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(derive_seed(seed, tag::REPLICATION), rep as u64)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha",
            value: alpha,
            expected: "0 < alpha < 1",
        });
    }
    Ok(())
}

fn check_reps(reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::OutOfRange {
            name: "reps",
            value: 0.0,
            expected: "reps >= 1",
        });
    }
    Ok(())
}

fn check_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidSpec("n_grid must not be empty".into()));
    }
    Ok(())
}

fn default_oracle_rows() -> usize {
    DEFAULT_ORACLE_ROWS
}

fn default_directions() -> usize {
    50
}

fn default_relative_tol() -> f64 {
    1e-4
}

fn default_wald_quantile() -> QuantileMethod {
    QuantileMethod::Sidak
}

/// Probe settings for a set whose width is of order `1/sqrt(n)`.
fn scaled_probe(n: usize, directions: usize, relative_tol: f64, seed: u64) -> ProbeConfig {
    let scale = 1.0 / (n as f64).sqrt();
    ProbeConfig {
        random_directions: directions,
        tol: relative_tol * scale,
        t_max: 1e3,
        scale,
        seed,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetMethod {
    Lin,
    Reclin,
    WaldPlugin,
    WaldOracle,
}

impl SetMethod {
    pub fn name(self) -> &'static str {
        match self {
            SetMethod::Lin => "lin",
            SetMethod::Reclin => "reclin",
            SetMethod::WaldPlugin => "wald_plugin",
            SetMethod::WaldOracle => "wald_oracle",
        }
    }

    fn is_wald(self) -> bool {
        matches!(self, SetMethod::WaldPlugin | SetMethod::WaldOracle)
    }
}

fn wald_quantile(method: QuantileMethod, alpha: f64, p: usize) -> Result<QuantileValue> {
    match method {
        QuantileMethod::Sidak => sidak_quantile(alpha, p),
        QuantileMethod::Bonferroni => bonferroni_quantile(alpha, p),
        QuantileMethod::Bootstrap => Err(Error::InvalidSpec(
            "wald sets take a bonferroni or sidak critical value".into(),
        )),
    }
}

struct SetRequest<'a> {
    alpha: f64,
    draws: Option<usize>,
    wald_quantile: QuantileMethod,
    oracle: Option<&'a Oracle>,
}

fn build_set(
    method: SetMethod,
    sample: &RegressionSample,
    req: &SetRequest,
    seed: u64,
) -> Result<CalibratedSet> {
    let analysis_n = sample.n().div_ceil(2);
    let draws = req
        .draws
        .unwrap_or_else(|| default_bootstrap_draws(analysis_n));
    match method {
        SetMethod::Lin => calibrate_lin(sample, req.alpha, draws, seed),
        SetMethod::Reclin => calibrate_reclin(sample, req.alpha, draws, seed),
        SetMethod::WaldPlugin => calibrate_wald(
            sample,
            wald_quantile(req.wald_quantile, req.alpha, sample.p())?,
            None,
        ),
        SetMethod::WaldOracle => {
            let oracle = req.oracle.expect("oracle prepared for wald_oracle").wald();
            calibrate_wald(
                sample,
                wald_quantile(req.wald_quantile, req.alpha, sample.p())?,
                Some(&oracle),
            )
        }
    }
}

/// A point where the set's statistic is zero, used as the probing center.
fn set_center(set: &CalibratedSet) -> Result<Vec<f64>> {
    if let Some(c) = &set.wald_center {
        return Ok(c.clone());
    }
    let a = set
        .analysis_sample
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("set has no analysis sample".into()))?;
    least_squares(a.x(), a.y())
}

fn set_diameters(set: &CalibratedSet, probe: &ProbeConfig) -> Result<(f64, f64)> {
    if set.wald_center.is_some() {
        let r = set.rectangle()?;
        return Ok((r.diam2(), r.diam_inf()));
    }
    let g = diameter_estimate(set, &set_center(set)?, probe)?;
    Ok((g.diam2, g.diam_inf))
}

/// Monte Carlo coverage experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub dgp: DgpSpec,
    pub methods: Vec<SetMethod>,
    pub alpha: f64,
    /// Bootstrap draws; defaults to `max(n, 2000)` for the analysis half size `n`.
    #[serde(default)]
    pub draws: Option<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_wald_quantile")]
    pub wald_quantile: QuantileMethod,
    /// Also estimate each set's diameter.
    #[serde(default)]
    pub geometry: bool,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_relative_tol")]
    pub relative_tol: f64,
    #[serde(default = "default_oracle_rows")]
    pub oracle_rows: usize,
}

impl CoverageConfig {
    pub fn new(dgp: DgpSpec, methods: Vec<SetMethod>, alpha: f64, reps: usize, seed: u64) -> Self {
        CoverageConfig {
            dgp,
            methods,
            alpha,
            draws: None,
            reps,
            seed,
            wald_quantile: default_wald_quantile(),
            geometry: false,
            directions: default_directions(),
            relative_tol: default_relative_tol(),
            oracle_rows: DEFAULT_ORACLE_ROWS,
        }
    }

    /// Fills in defaults that depend on the design.
    fn resolved(&self) -> Self {
        let mut c = self.clone();
        if c.draws.is_none() && c.methods.iter().any(|m| !m.is_wald()) {
            c.draws = Some(default_bootstrap_draws(c.dgp.n_total.div_ceil(2)));
        }
        c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Hit,
    Miss,
    Failure,
}

/// One method on one replication.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub method: SetMethod,
    pub seed: u64,
    pub outcome: Outcome,
    pub khat: Option<f64>,
    /// The set's statistic at `β₀`.
    pub statistic: Option<f64>,
    pub diam2: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: SetMethod,
    pub reps_attempted: usize,
    pub hits: usize,
    pub misses: usize,
    pub failures: usize,
    /// `hits / (hits + misses)`; absent when every replication failed.
    pub coverage: Option<f64>,
    pub mc_se: Option<f64>,
    pub mean_khat: Option<f64>,
    pub median_diam2: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoverageReport {
    pub config: CoverageConfig,
    pub methods: Vec<MethodSummary>,
    #[serde(skip)]
    pub records: Vec<ReplicationRecord>,
    pub runtime_s: f64,
}

impl CoverageReport {
    pub fn method(&self, m: SetMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

fn summarize(method: SetMethod, records: &[&ReplicationRecord]) -> MethodSummary {
    let count = |o: Outcome| records.iter().filter(|r| r.outcome == o).count();
    let (hits, misses, failures) = (
        count(Outcome::Hit),
        count(Outcome::Miss),
        count(Outcome::Failure),
    );
    let valid = hits + misses;
    let coverage = (valid > 0).then(|| hits as f64 / valid as f64);
    let mc_se = coverage.map(|c| (c * (1.0 - c) / valid as f64).sqrt());
    let khats: Vec<f64> = records.iter().filter_map(|r| r.khat).collect();
    let mean_khat = (!khats.is_empty()).then(|| khats.iter().sum::<f64>() / khats.len() as f64);
    let diams: Vec<f64> = records.iter().filter_map(|r| r.diam2).collect();
    MethodSummary {
        method,
        reps_attempted: records.len(),
        hits,
        misses,
        failures,
        coverage,
        mc_se,
        mean_khat,
        median_diam2: median(&diams),
    }
}

fn coverage_replication(
    cfg: &CoverageConfig,
    oracle: Option<&Oracle>,
    rep: usize,
) -> Vec<ReplicationRecord> {
    let seed = replication_seed(cfg.seed, rep);
    let data = dgp_generate(&cfg.dgp.with_seed(seed));
    let req = SetRequest {
        alpha: cfg.alpha,
        draws: cfg.draws,
        wald_quantile: cfg.wald_quantile,
        oracle,
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let attempt = data.as_ref().map_err(|e| e.to_string()).and_then(|sample| {
                let set = build_set(method, sample, &req, seed).map_err(|e| e.to_string())?;
                let stat = set.statistic(&cfg.dgp.beta0).map_err(|e| e.to_string())?;
                let hit = set.member(&cfg.dgp.beta0).map_err(|e| e.to_string())?;
                let diam2 = if cfg.geometry || method.is_wald() {
                    let n = set.analysis_sample.as_ref().map_or(sample.n(), |a| a.n());
                    let probe = scaled_probe(n, cfg.directions, cfg.relative_tol, seed);
                    Some(set_diameters(&set, &probe).map_err(|e| e.to_string())?.0)
                } else {
                    None
                };
                Ok((set.khat_value(), stat, hit, diam2))
            });
            match attempt {
                Ok((khat, stat, hit, diam2)) => ReplicationRecord {
                    rep,
                    method,
                    seed,
                    outcome: if hit { Outcome::Hit } else { Outcome::Miss },
                    khat: Some(khat),
                    statistic: Some(stat),
                    diam2,
                    error: None,
                },
                Err(msg) => ReplicationRecord {
                    rep,
                    method,
                    seed,
                    outcome: Outcome::Failure,
                    khat: None,
                    statistic: None,
                    diam2: None,
                    error: Some(msg),
                },
            }
        })
        .collect()
}

/// Coverage of `β₀` by each requested set over `reps` replications.
///
/// Replications whose calibration fails are counted as failures, listed in
/// the records with their error, and left out of the coverage ratio.
pub fn run_coverage(cfg: &CoverageConfig) -> Result<CoverageReport> {
    let start = Instant::now();
    cfg.dgp.validate()?;
    check_alpha(cfg.alpha)?;
    check_reps(cfg.reps)?;
    if cfg.methods.is_empty() {
        return Err(Error::InvalidSpec("no methods requested".into()));
    }
    if cfg.wald_quantile == QuantileMethod::Bootstrap && cfg.methods.iter().any(|m| m.is_wald()) {
        return Err(Error::InvalidSpec(
            "wald sets take a bonferroni or sidak critical value".into(),
        ));
    }
    let cfg = cfg.resolved();
    let oracle = if cfg.methods.contains(&SetMethod::WaldOracle) {
        Some(OracleCache::global().get(&cfg.dgp, cfg.oracle_rows)?)
    } else {
        None
    };
    let records: Vec<ReplicationRecord> = (0..cfg.reps)
        .into_par_iter()
        .flat_map_iter(|rep| coverage_replication(&cfg, oracle.as_deref(), rep))
        .collect();
    for r in records.iter().filter(|r| r.outcome == Outcome::Failure) {
        log_failure(r.rep, r.method.name(), r.error.as_deref().unwrap_or(""));
    }
    let methods = cfg
        .methods
        .iter()
        .map(|&m| {
            let rs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == m).collect();
            summarize(m, &rs)
        })
        .collect();
    Ok(CoverageReport {
        config: cfg,
        methods,
        records,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

fn log_failure(rep: usize, what: &str, msg: &str) {
    eprintln!("replication {rep} ({what}) failed: {msg}");
}

/// Median diameter of a set across an `n` grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthConfig {
    /// `n_total` is replaced by `2n` for each grid value `n`.
    pub dgp: DgpSpec,
    pub n_grid: Vec<usize>,
    pub method: SetMethod,
    pub alpha: f64,
    #[serde(default)]
    pub draws: Option<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_wald_quantile")]
    pub wald_quantile: QuantileMethod,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_relative_tol")]
    pub relative_tol: f64,
    #[serde(default = "default_oracle_rows")]
    pub oracle_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidthRow {
    pub n: usize,
    pub n_total: usize,
    pub reps_ok: usize,
    pub failures: usize,
    pub median_diam2: Option<f64>,
    pub median_diam_inf: Option<f64>,
    /// Previous row's median `diam_2` over this row's.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WidthReport {
    pub config: WidthConfig,
    pub rows: Vec<WidthRow>,
    pub runtime_s: f64,
}

/// Fills in the ratio column, previous value over current value.
fn ratios<T>(
    rows: &mut [T],
    value: impl Fn(&T) -> Option<f64>,
    mut set: impl FnMut(&mut T, Option<f64>),
) {
    for i in 1..rows.len() {
        let r = match (value(&rows[i - 1]), value(&rows[i])) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
        set(&mut rows[i], r);
    }
}

pub fn run_width_scaling(cfg: &WidthConfig) -> Result<WidthReport> {
    let start = Instant::now();
    check_alpha(cfg.alpha)?;
    check_reps(cfg.reps)?;
    check_grid(&cfg.n_grid)?;
    for &n in &cfg.n_grid {
        cfg.dgp.with_n_total(2 * n).validate()?;
    }
    let req_oracle = if cfg.method == SetMethod::WaldOracle {
        Some(OracleCache::global().get(&cfg.dgp.with_n_total(2 * cfg.n_grid[0]), cfg.oracle_rows)?)
    } else {
        None
    };
    let req = SetRequest {
        alpha: cfg.alpha,
        draws: cfg.draws,
        wald_quantile: cfg.wald_quantile,
        oracle: req_oracle.as_deref(),
    };
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let spec = cfg.dgp.with_n_total(2 * n);
        let grid_seed = derive_seed(cfg.seed, g as u64);
        let results: Vec<Result<(f64, f64)>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(grid_seed, rep);
                let sample = dgp_generate(&spec.with_seed(seed))?;
                let set = build_set(cfg.method, &sample, &req, seed)?;
                let probe = scaled_probe(n, cfg.directions, cfg.relative_tol, seed);
                set_diameters(&set, &probe)
            })
            .collect();
        let mut d2 = Vec::new();
        let mut dinf = Vec::new();
        let mut failures = 0;
        for (rep, r) in results.into_iter().enumerate() {
            match r {
                Ok((a, b)) => {
                    d2.push(a);
                    dinf.push(b);
                }
                Err(e) => {
                    failures += 1;
                    log_failure(rep, &format!("width n={n}"), &e.to_string());
                }
            }
        }
        rows.push(WidthRow {
            n,
            n_total: 2 * n,
            reps_ok: d2.len(),
            failures,
            median_diam2: median(&d2),
            median_diam_inf: median(&dinf),
            ratio: None,
        });
    }
    ratios(&mut rows, |r| r.median_diam2, |r, v| r.ratio = v);
    Ok(WidthReport {
        config: cfg.clone(),
        rows,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Deviation of the plug-in correlation at `β₀` from its oracle value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationConfig {
    /// `n_total` is replaced by each grid value.
    pub dgp: DgpSpec,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_oracle_rows")]
    pub oracle_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub n: usize,
    pub reps_ok: usize,
    pub failures: usize,
    /// Median of `max_kl |Γ̂_kl(β₀) − Γ_kl|`.
    pub median_deviation: Option<f64>,
    /// Previous row's median over this row's.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub config: ConcentrationConfig,
    pub oracle_rows: usize,
    pub rows: Vec<ConcentrationRow>,
    pub runtime_s: f64,
}

pub fn run_concentration(cfg: &ConcentrationConfig) -> Result<ConcentrationReport> {
    let start = Instant::now();
    check_reps(cfg.reps)?;
    check_grid(&cfg.n_grid)?;
    for &n in &cfg.n_grid {
        cfg.dgp.with_n_total(n).validate()?;
    }
    let oracle =
        OracleCache::global().get(&cfg.dgp.with_n_total(cfg.n_grid[0]), cfg.oracle_rows)?;
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let spec = cfg.dgp.with_n_total(n);
        let grid_seed = derive_seed(cfg.seed, g as u64);
        let results: Vec<Result<f64>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                let sample = dgp_generate(&spec.with_seed(replication_seed(grid_seed, rep)))?;
                let gamma = plugin_correlation(&linreg_psi(&sample, &spec.beta0)?)?;
                gamma.as_mat().max_abs_diff(oracle.gamma.as_mat())
            })
            .collect();
        let mut devs = Vec::new();
        let mut failures = 0;
        for (rep, r) in results.into_iter().enumerate() {
            match r {
                Ok(d) => devs.push(d),
                Err(e) => {
                    failures += 1;
                    log_failure(rep, &format!("concentration n={n}"), &e.to_string());
                }
            }
        }
        rows.push(ConcentrationRow {
            n,
            reps_ok: devs.len(),
            failures,
            median_deviation: median(&devs),
            ratio: None,
        });
    }
    ratios(&mut rows, |r| r.median_deviation, |r, v| r.ratio = v);
    Ok(ConcentrationReport {
        config: cfg.clone(),
        oracle_rows: oracle.rows,
        rows,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Distance between the rectangular self-normalized set and the oracle
/// Wald rectangle built on the same analysis half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffConfig {
    /// `n_total` is replaced by `2n` for each grid value `n`.
    pub dgp: DgpSpec,
    pub n_grid: Vec<usize>,
    pub alpha: f64,
    #[serde(default)]
    pub draws: Option<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_relative_tol")]
    pub relative_tol: f64,
    #[serde(default = "default_oracle_rows")]
    pub oracle_rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffRow {
    pub n: usize,
    pub n_total: usize,
    pub reps_ok: usize,
    pub failures: usize,
    pub median_d2: Option<f64>,
    pub median_diam2: Option<f64>,
    /// Median over replications of `d₂ / diam₂`.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HausdorffReport {
    pub config: HausdorffConfig,
    pub rows: Vec<HausdorffRow>,
    pub runtime_s: f64,
}

fn hausdorff_replication(
    spec: &DgpSpec,
    cfg: &HausdorffConfig,
    oracle: &WaldOracle,
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let sample = dgp_generate(&spec.with_seed(seed))?;
    let draws = cfg.draws.unwrap_or_else(|| default_bootstrap_draws(n));
    let rec = calibrate_reclin(&sample, cfg.alpha, draws, seed)?;
    let analysis = rec
        .analysis_sample
        .as_ref()
        .expect("reclin keeps its analysis half");
    let wald = calibrate_wald(analysis, rec.khat.clone(), Some(oracle))?;
    let rect = wald.rectangle()?;
    let probe = scaled_probe(analysis.n(), cfg.directions, cfg.relative_tol, seed);
    let est = hausdorff_member_rect(&rec, &rect.center, &rect, &probe)?;
    Ok((est.d2, rect.diam2()))
}

pub fn run_hausdorff_similarity(cfg: &HausdorffConfig) -> Result<HausdorffReport> {
    let start = Instant::now();
    check_alpha(cfg.alpha)?;
    check_reps(cfg.reps)?;
    check_grid(&cfg.n_grid)?;
    for &n in &cfg.n_grid {
        cfg.dgp.with_n_total(2 * n).validate()?;
    }
    let oracle = OracleCache::global()
        .get(&cfg.dgp.with_n_total(2 * cfg.n_grid[0]), cfg.oracle_rows)?
        .wald();
    let mut rows = Vec::with_capacity(cfg.n_grid.len());
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let spec = cfg.dgp.with_n_total(2 * n);
        let grid_seed = derive_seed(cfg.seed, g as u64);
        let results: Vec<Result<(f64, f64)>> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                hausdorff_replication(&spec, cfg, &oracle, n, replication_seed(grid_seed, rep))
            })
            .collect();
        let (mut d2, mut diam, mut ratio) = (Vec::new(), Vec::new(), Vec::new());
        let mut failures = 0;
        for (rep, r) in results.into_iter().enumerate() {
            match r {
                Ok((d, w)) => {
                    d2.push(d);
                    diam.push(w);
                    ratio.push(d / w);
                }
                Err(e) => {
                    failures += 1;
                    log_failure(rep, &format!("hausdorff n={n}"), &e.to_string());
                }
            }
        }
        rows.push(HausdorffRow {
            n,
            n_total: 2 * n,
            reps_ok: d2.len(),
            failures,
            median_d2: median(&d2),
            median_diam2: median(&diam),
            ratio: median(&ratio),
        });
    }
    Ok(HausdorffReport {
        config: cfg.clone(),
        rows,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Writes rows as CSV with a header.
pub fn write_csv_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a value as pretty JSON followed by a newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_design_recovers_beta0() {
        let mut spec = DgpSpec::standard(50, 3);
        spec.noise = Noise::Homoskedastic { sigma: 0.0 };
        spec.beta0 = vec![0.5, -2.0, 3.0];
        let s = dgp_generate(&spec).unwrap();
        let b = least_squares(s.x(), s.y()).unwrap();
        for (a, e) in b.iter().zip(&spec.beta0) {
            assert!((a - e).abs() < 1e-10);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = DgpSpec::standard(5000, 2).with_seed(4);
        let a = dgp_generate(&spec).unwrap();
        let b = dgp_generate(&spec).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        let c = dgp_generate(&spec.with_seed(5)).unwrap();
        assert_ne!(a.y(), c.y());
        let short = dgp_generate(&spec.with_n_total(100)).unwrap();
        assert_eq!(short.y(), &a.y()[..100]);
    }

    #[test]
    fn spec_validation() {
        let mut s = DgpSpec::standard(10, 6);
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        s = DgpSpec::standard(100, 3);
        s.design = Design::Student { df: 8.0 };
        assert!(s.validate().is_err());
        s.design = Design::Student { df: 10.0 };
        assert!(s.validate().is_ok());
        s.misspec = Misspec::Quadratic { coordinate: 0 };
        assert!(s.validate().is_err());
        s.design = Design::Gaussian;
        assert!(s.validate().is_ok());
        s.misspec = Misspec::Quadratic { coordinate: 3 };
        assert!(s.validate().is_err());
        s.misspec = Misspec::None;
        s.noise = Noise::Heteroskedastic { gamma: vec![1.0] };
        assert!(s.validate().is_err());
    }

    #[test]
    fn student_design_has_unit_variance() {
        let mut spec = DgpSpec::standard(200_000, 1);
        spec.design = Design::Student { df: 12.0 };
        let s = dgp_generate(&spec).unwrap();
        let var = s.x().as_slice().iter().map(|v| v * v).sum::<f64>() / 200_000.0;
        // sd of x² is sqrt(E x⁴ − 1) = sqrt(3(df−2)/(df−4) − 1) ≈ 1.66.
        assert!(
            (var - 1.0).abs() < 4.0 * 1.66 / (200_000f64).sqrt(),
            "{var}"
        );
    }

    #[test]
    fn oracle_cache_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DgpSpec::standard(10, 2);
        let cache = OracleCache::new(Some(dir.path().to_path_buf()));
        let a = cache.get(&spec, 20_000).unwrap();
        // Homoskedastic unit noise: V = E[xxᵀ] = I.
        assert!(a.vstar.max_abs_diff(&Mat::identity(2)).unwrap() < 0.05);
        let fresh = OracleCache::new(Some(dir.path().to_path_buf()));
        let b = fresh
            .get(&spec.with_n_total(40).with_seed(9), 20_000)
            .unwrap();
        assert_eq!(a.vstar, b.vstar);
        assert_eq!(a.gamma.as_mat(), b.gamma.as_mat());
    }

    #[test]
    fn coverage_accounting() {
        let mut cfg = CoverageConfig::new(
            DgpSpec::standard(60, 2),
            vec![SetMethod::Lin, SetMethod::WaldPlugin],
            0.1,
            7,
            3,
        );
        cfg.draws = Some(200);
        let r = run_coverage(&cfg).unwrap();
        for m in &r.methods {
            assert_eq!(m.reps_attempted, 7);
            assert_eq!(m.hits + m.misses + m.failures, 7);
            assert!(m.median_diam2.is_some() == (m.method == SetMethod::WaldPlugin));
        }
        let again = run_coverage(&cfg).unwrap();
        assert_eq!(r.records, again.records);
        assert_eq!(r.records.len(), 14);

        cfg.reps = 1;
        let one = run_coverage(&cfg).unwrap();
        let c = one.methods[0].coverage.unwrap();
        assert!(c == 0.0 || c == 1.0);
    }

    #[test]
    fn concentration_p1_is_exactly_zero() {
        let cfg = ConcentrationConfig {
            dgp: DgpSpec::standard(10, 1),
            n_grid: vec![20, 80],
            reps: 5,
            seed: 0,
            oracle_rows: 1000,
        };
        let r = run_concentration(&cfg).unwrap();
        for row in &r.rows {
            assert_eq!(row.median_deviation, Some(0.0));
        }
    }
}
