//! Estimating functions and the point estimators that solve them.
//!
//! Three plugins are provided: linear regression (`x (y − xᵀβ)`), canonical
//! GLMs (`(Ȧ(θᵀx) − y) x`), and the scalar quantile (`1(x ≤ θ) − τ`). Each
//! returns a [`PsiMatrix`] whose row `i` is the estimating function evaluated
//! at observation `i`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{cholesky_jittered, dot, least_squares, norm2, Mat};

const GLM_SCORE_TOL: f64 = 1e-9;
const GLM_STEP_TOL: f64 = 1e-6;
const GLM_MAX_ITER: usize = 100;
const GLM_MAX_HALVINGS: usize = 30;
const GLM_DIVERGENCE_NORM: f64 = 1e6;

/// Covariates and responses for a regression problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SampleRepr", into = "SampleRepr")]
pub struct RegressionSample {
    x: Mat,
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct SampleRepr {
    x: Mat,
    y: Vec<f64>,
}

impl TryFrom<SampleRepr> for RegressionSample {
    type Error = Error;

    fn try_from(r: SampleRepr) -> Result<Self> {
        RegressionSample::new(r.x, r.y)
    }
}

impl From<RegressionSample> for SampleRepr {
    fn from(s: RegressionSample) -> Self {
        SampleRepr { x: s.x, y: s.y }
    }
}

impl RegressionSample {
    pub fn new(x: Mat, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::dims(format!("{} responses", x.rows()), y.len()));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidResponse {
                row: i,
                reason: "non-finite response".into(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, idx: &[usize]) -> RegressionSample {
        RegressionSample {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// `y_i − x_iᵀβ` for every row.
    pub fn residuals(&self, beta: &[f64]) -> Result<Vec<f64>> {
        check_beta(self.p(), beta)?;
        Ok((0..self.n())
            .map(|i| self.y[i] - dot(self.x.row(i), beta))
            .collect())
    }

    /// Reads a CSV with header `x1,…,xp,y` (columns in any order).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
        let y_col = names
            .iter()
            .position(|h| h == "y")
            .ok_or_else(|| Error::InvalidInput("missing column y".into()))?;
        let mut x_cols = Vec::new();
        for (j, name) in names.iter().enumerate() {
            if j == y_col {
                continue;
            }
            let k = name
                .strip_prefix('x')
                .and_then(|s| s.parse::<usize>().ok())
                .filter(|&k| k >= 1)
                .ok_or_else(|| Error::InvalidInput(format!("unexpected column {name:?}")))?;
            x_cols.push((k, j));
        }
        x_cols.sort_unstable();
        let p = x_cols.len();
        if p == 0 {
            return Err(Error::InvalidInput("missing column x1".into()));
        }
        for (want, &(k, _)) in (1..=p).zip(&x_cols) {
            if k != want {
                return Err(Error::InvalidInput(format!("missing column x{want}")));
            }
        }
        let mut data = Vec::new();
        let mut y = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                let raw = rec.get(j).unwrap_or("").trim();
                if raw.is_empty() {
                    return Err(Error::InvalidInput(format!(
                        "missing value in column {} at data row {}",
                        names[j],
                        row + 1
                    )));
                }
                raw.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "bad number {raw:?} in column {} at data row {}",
                            names[j],
                            row + 1
                        ))
                    })
            };
            for &(_, j) in &x_cols {
                data.push(parse(j)?);
            }
            y.push(parse(y_col)?);
        }
        if y.is_empty() {
            return Err(Error::TooFew { min: 1, got: 0 });
        }
        RegressionSample::new(Mat::new(y.len(), p, data)?, y)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f)
    }

    /// Writes the sample as CSV with header `x1,…,xp,y`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.p()).map(|j| format!("x{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.y[i]));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_beta(p: usize, beta: &[f64]) -> Result<()> {
    if beta.len() != p {
        return Err(Error::dims(format!("parameter of length {p}"), beta.len()));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidInput("non-finite parameter".into()));
    }
    Ok(())
}

/// Estimating-function evaluations: row `i` is `ψ(X_i, θ)ᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiMatrix(Mat);

impl PsiMatrix {
    pub fn new(values: Mat) -> Self {
        PsiMatrix(values)
    }

    pub fn values(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn p(&self) -> usize {
        self.0.cols()
    }
}

/// `ψ_i = x_i (y_i − x_iᵀβ)`.
pub fn linreg_psi(sample: &RegressionSample, beta: &[f64]) -> Result<PsiMatrix> {
    let r = sample.residuals(beta)?;
    let (n, p) = (sample.n(), sample.p());
    let mut out = Mat::zeros(n, p);
    for (i, ri) in r.iter().enumerate() {
        for (o, &xij) in out.row_mut(i).iter_mut().zip(sample.x.row(i)) {
            *o = xij * ri;
        }
    }
    Ok(PsiMatrix(out))
}

/// Canonical GLM family, identified by its cumulant function `A`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmFamily {
    Gaussian,
    Logistic,
    Poisson,
}

impl GlmFamily {
    /// `Ȧ(v)`, the mean function.
    pub fn mean(self, v: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => v,
            GlmFamily::Logistic => {
                if v >= 0.0 {
                    1.0 / (1.0 + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (1.0 + e)
                }
            }
            GlmFamily::Poisson => v.exp(),
        }
    }

    /// `Ä(v)`, the variance function.
    pub fn variance(self, v: f64) -> f64 {
        match self {
            GlmFamily::Gaussian => 1.0,
            GlmFamily::Logistic => {
                let m = self.mean(v);
                m * (1.0 - m)
            }
            GlmFamily::Poisson => v.exp(),
        }
    }

    fn check_response(self, y: &[f64]) -> Result<()> {
        let bad = match self {
            GlmFamily::Gaussian => None,
            GlmFamily::Logistic => y
                .iter()
                .position(|&v| v != 0.0 && v != 1.0)
                .map(|i| (i, "logistic response must be 0 or 1")),
            GlmFamily::Poisson => y
                .iter()
                .position(|&v| v < 0.0)
                .map(|i| (i, "poisson response must be non-negative")),
        };
        match bad {
            Some((row, reason)) => Err(Error::InvalidResponse {
                row,
                reason: reason.into(),
            }),
            None => Ok(()),
        }
    }
}

/// `ψ_i = (Ȧ(θᵀx_i) − y_i) x_i`.
///
/// For the gaussian family this is exactly `−1 ×` [`linreg_psi`].
pub fn glm_psi(sample: &RegressionSample, family: GlmFamily, theta: &[f64]) -> Result<PsiMatrix> {
    check_beta(sample.p(), theta)?;
    family.check_response(&sample.y)?;
    let (n, p) = (sample.n(), sample.p());
    let mut out = Mat::zeros(n, p);
    for i in 0..n {
        let xi = sample.x.row(i);
        let r = family.mean(dot(xi, theta)) - sample.y[i];
        for (o, &xij) in out.row_mut(i).iter_mut().zip(xi) {
            *o = xij * r;
        }
    }
    Ok(PsiMatrix(out))
}

fn glm_score(sample: &RegressionSample, family: GlmFamily, theta: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; sample.p()];
    for i in 0..sample.n() {
        let xi = sample.x.row(i);
        let r = family.mean(dot(xi, theta)) - sample.y[i];
        for (sj, &xij) in s.iter_mut().zip(xi) {
            *sj += xij * r;
        }
    }
    let inv_n = 1.0 / sample.n() as f64;
    s.iter_mut().for_each(|v| *v *= inv_n);
    s
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `(1/n) Σ ψ(X_i, θ) = 0` for a canonical GLM.
///
/// Newton's method on the score with step halving. The gaussian family
/// short-circuits to [`least_squares`].
pub fn glm_fit(sample: &RegressionSample, family: GlmFamily) -> Result<Vec<f64>> {
    family.check_response(&sample.y)?;
    if family == GlmFamily::Gaussian {
        return least_squares(&sample.x, &sample.y);
    }
    let (n, p) = (sample.n(), sample.p());
    let mut theta = vec![0.0; p];
    let mut score = glm_score(sample, family, &theta);
    let mut score_norm = max_abs(&score);
    for _ in 0..GLM_MAX_ITER {
        let mut jac = Mat::zeros(p, p);
        for i in 0..n {
            let xi = sample.x.row(i);
            let w = family.variance(dot(xi, &theta));
            for k in 0..p {
                for l in 0..=k {
                    jac[(k, l)] += w * xi[k] * xi[l];
                }
            }
        }
        for k in 0..p {
            for l in 0..=k {
                let v = jac[(k, l)] / n as f64;
                jac[(k, l)] = v;
                jac[(l, k)] = v;
            }
        }
        // Saturated weights shrink the whole Jacobian, so factor it at unit scale.
        let jac_scale = jac.diag().into_iter().fold(0.0f64, f64::max);
        if !(jac_scale > 0.0) {
            return Err(Error::SingularDesign { pivot_ratio: 0.0 });
        }
        let unit = Mat::new(p, p, jac.as_slice().iter().map(|v| v / jac_scale).collect())?;
        let step: Vec<f64> = cholesky_jittered(&unit)
            .map_err(|_| Error::SingularDesign { pivot_ratio: 0.0 })?
            .solve(&score)?
            .into_iter()
            .map(|v| v / jac_scale)
            .collect();
        let step_norm = norm2(&step);
        if score_norm <= GLM_SCORE_TOL && step_norm <= GLM_STEP_TOL * (1.0 + norm2(&theta)) {
            return Ok(theta);
        }

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=GLM_MAX_HALVINGS {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, d)| t - scale * d)
                .collect();
            let theta_norm = norm2(&cand);
            if theta_norm > GLM_DIVERGENCE_NORM {
                return Err(Error::Separation { theta_norm });
            }
            let s = glm_score(sample, family, &cand);
            let sn = max_abs(&s);
            if sn < score_norm {
                accepted = Some((cand, s, sn));
                break;
            }
            scale *= 0.5;
        }
        match accepted {
            Some((t, s, sn)) => {
                theta = t;
                score = s;
                score_norm = sn;
            }
            None if score_norm <= GLM_SCORE_TOL => {
                return Err(Error::Separation {
                    theta_norm: norm2(&theta) + step_norm,
                })
            }
            None => {
                return Err(Error::NoConvergence {
                    iterations: GLM_MAX_ITER,
                    score_norm,
                })
            }
        }
    }
    // A vanishing score with steps that refuse to shrink means the
    // likelihood keeps improving toward infinity.
    if score_norm <= GLM_SCORE_TOL {
        Err(Error::Separation {
            theta_norm: norm2(&theta),
        })
    } else {
        Err(Error::NoConvergence {
            iterations: GLM_MAX_ITER,
            score_norm,
        })
    }
}

/// Quantile level `τ ∈ (0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileSpec {
    tau: f64,
}

impl QuantileSpec {
    pub fn new(tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::OutOfRange {
                name: "tau",
                value: tau,
                expected: "0 < tau < 1",
            });
        }
        Ok(Self { tau })
    }

    pub fn tau(self) -> f64 {
        self.tau
    }
}

/// `ψ_i = 1(x_i ≤ θ) − τ`, as an n×1 matrix.
pub fn quantile_psi(data: &[f64], spec: QuantileSpec, theta: f64) -> Result<PsiMatrix> {
    let vals = data
        .iter()
        .map(|&x| {
            if x <= theta {
                1.0 - spec.tau
            } else {
                -spec.tau
            }
        })
        .collect();
    Ok(PsiMatrix(Mat::new(data.len(), 1, vals)?))
}

/// Smallest `θ` with `(1/n) Σ 1(x_i ≤ θ) ≥ τ`: the order statistic `x_(⌈τn⌉)`.
pub fn quantile_fit(data: &[f64], spec: QuantileSpec) -> Result<f64> {
    let n = data.len();
    if n == 0 {
        return Err(Error::TooFew { min: 1, got: 0 });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite observation".into()));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Smallest k with k/n >= tau, evaluated in the same arithmetic as the score.
    let floor = (spec.tau * n as f64).floor() as usize;
    let k = if floor as f64 / n as f64 >= spec.tau {
        floor
    } else {
        floor + 1
    };
    Ok(sorted[k.clamp(1, n) - 1])
}
