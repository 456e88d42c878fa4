//! Self-normalized max statistics and plug-in correlation matrices.
//!
//! For an estimating-function matrix `ψ` (n×p), coordinate `j` contributes
//! `|Σ_i ψ_ij| / sqrt(Σ_i ψ_ij²)`; the statistic is the maximum over `j`.
//! The rotated variant first maps each row through `Q⁻¹`. The plug-in
//! correlation matrix is the Gram matrix of the normalized columns, which is
//! the covariance the Gaussian bootstrap draws from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimating::PsiMatrix;
use crate::numlin::{cholesky_jittered, LuFactor, Mat};

/// Value of a self-normalized max statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfNormStat {
    pub value: f64,
    /// `|Σ_i ψ_ij| / sqrt(Σ_i ψ_ij²)` per coordinate (0 for an all-zero column).
    pub per_coordinate: Vec<f64>,
    /// First coordinate attaining the maximum.
    pub argmax: usize,
}

impl SelfNormStat {
    fn from_ratios(per_coordinate: Vec<f64>) -> Self {
        let (argmax, value) = per_coordinate.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |best, (j, r)| if r > best.1 { (j, r) } else { best },
        );
        SelfNormStat {
            value,
            per_coordinate,
            argmax,
        }
    }
}

fn ratio(sum: f64, sumsq: f64) -> f64 {
    if sumsq == 0.0 {
        0.0
    } else {
        sum.abs() / sumsq.sqrt()
    }
}

/// Self-normalized statistic of the columns of `values`.
pub fn self_normalized_stat_of(values: &Mat) -> SelfNormStat {
    let p = values.cols();
    let mut sum = vec![0.0; p];
    let mut sumsq = vec![0.0; p];
    for i in 0..values.rows() {
        for ((s, q), &v) in sum.iter_mut().zip(sumsq.iter_mut()).zip(values.row(i)) {
            *s += v;
            *q += v * v;
        }
    }
    SelfNormStat::from_ratios(sum.iter().zip(&sumsq).map(|(&s, &q)| ratio(s, q)).collect())
}

/// `T_n = max_j |Σ_i ψ_ij| / sqrt(Σ_i ψ_ij²)`.
pub fn self_normalized_stat(psi: &PsiMatrix) -> SelfNormStat {
    self_normalized_stat_of(psi.values())
}

/// Statistic of the columns `w_ij · r_i` without materializing them.
///
/// With `w = X` and `r` the residuals this is the linear-regression statistic;
/// with `w = X Q⁻ᵀ` it is the rotated one.
pub(crate) fn weighted_stat(weights: &Mat, r: &[f64]) -> SelfNormStat {
    let p = weights.cols();
    let mut sum = vec![0.0; p];
    let mut sumsq = vec![0.0; p];
    for (i, &ri) in r.iter().enumerate() {
        for ((s, q), &w) in sum.iter_mut().zip(sumsq.iter_mut()).zip(weights.row(i)) {
            let v = w * ri;
            *s += v;
            *q += v * v;
        }
    }
    SelfNormStat::from_ratios(sum.iter().zip(&sumsq).map(|(&s, &q)| ratio(s, q)).collect())
}

/// Returns the matrix whose row `i` is `Q⁻¹ m_i`.
pub fn rotate_rows(m: &Mat, rotation: &Mat) -> Result<Mat> {
    if !rotation.is_square() || rotation.rows() != m.cols() {
        return Err(Error::dims(
            format!("{0}x{0} rotation", m.cols()),
            format!("{}x{}", rotation.rows(), rotation.cols()),
        ));
    }
    let lu = LuFactor::new(rotation).ok_or(Error::SingularRotation)?;
    let mut out = Mat::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let z = lu.solve(m.row(i))?;
        out.row_mut(i).copy_from_slice(&z);
    }
    Ok(out)
}

/// Rotated statistic: [`self_normalized_stat`] of the rows `Q⁻¹ ψ_i`.
pub fn rotated_stat(psi: &PsiMatrix, rotation: &Mat) -> Result<SelfNormStat> {
    Ok(self_normalized_stat_of(&rotate_rows(
        psi.values(),
        rotation,
    )?))
}

/// Symmetric matrix with unit diagonal and entries in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(into = "Mat")]
pub struct CorrelationMatrix(Mat);

impl From<CorrelationMatrix> for Mat {
    fn from(c: CorrelationMatrix) -> Self {
        c.0
    }
}

impl CorrelationMatrix {
    /// Validates a user-supplied correlation matrix.
    ///
    /// Accepts asymmetry and diagonal error up to `1e-10`, then mirrors the
    /// lower triangle and sets the diagonal to exactly one. Rejects matrices
    /// whose smallest eigenvalue is below `-1e-8`.
    pub fn from_mat(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dims(
                "square matrix",
                format!("{}x{}", m.rows(), m.cols()),
            ));
        }
        let asym = m.max_asymmetry();
        if asym > 1e-10 {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let p = m.rows();
        for i in 0..p {
            if (m[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidInput(format!(
                    "correlation diagonal entry {i} is {} (expected 1)",
                    m[(i, i)]
                )));
            }
            for j in 0..i {
                if m[(i, j)].abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidInput(format!(
                        "correlation entry ({i}, {j}) = {} outside [-1, 1]",
                        m[(i, j)]
                    )));
                }
            }
        }
        let mut c = m;
        for i in 0..p {
            c[(i, i)] = 1.0;
            for j in 0..i {
                let v = c[(i, j)].clamp(-1.0, 1.0);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
        let mut shifted = c.clone();
        for i in 0..p {
            shifted[(i, i)] += 1e-8;
        }
        match cholesky_jittered(&shifted) {
            Ok(f) if f.jitter() == 0.0 => Ok(CorrelationMatrix(c)),
            _ => Err(Error::InvalidInput(
                "correlation matrix is not positive semidefinite".into(),
            )),
        }
    }

    /// Normalizes a matrix of second moments `G` into `G_kl / sqrt(G_kk G_ll)`.
    ///
    /// The caller guarantees `G` is a Gram matrix (hence PSD).
    pub fn from_second_moments(g: &Mat) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::dims(
                "square matrix",
                format!("{}x{}", g.rows(), g.cols()),
            ));
        }
        let p = g.rows();
        let d = g.diag();
        if let Some(column) = d.iter().position(|&v| !(v > 0.0)) {
            return Err(Error::DegenerateColumn { column });
        }
        let mut c = Mat::zeros(p, p);
        for k in 0..p {
            c[(k, k)] = 1.0;
            for l in 0..k {
                let v = (g[(k, l)] / (d[k] * d[l]).sqrt()).clamp(-1.0, 1.0);
                c[(k, l)] = v;
                c[(l, k)] = v;
            }
        }
        Ok(CorrelationMatrix(c))
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }
}

impl<'de> Deserialize<'de> for CorrelationMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Mat::deserialize(d)?;
        CorrelationMatrix::from_mat(m).map_err(serde::de::Error::custom)
    }
}

/// Unnormalized column Gram matrix `Σ_i m_i m_iᵀ`.
fn column_gram(m: &Mat) -> Mat {
    let p = m.cols();
    let mut g = Mat::zeros(p, p);
    for i in 0..m.rows() {
        let r = m.row(i);
        for k in 0..p {
            let rk = r[k];
            if rk == 0.0 {
                continue;
            }
            for l in 0..=k {
                g[(k, l)] += rk * r[l];
            }
        }
    }
    for k in 0..p {
        for l in 0..k {
            g[(l, k)] = g[(k, l)];
        }
    }
    g
}

/// Plug-in correlation `Σ_i ψ_ik ψ_il / (sqrt(Σ_i ψ_ik²) sqrt(Σ_i ψ_il²))`.
pub fn plugin_correlation(psi: &PsiMatrix) -> Result<CorrelationMatrix> {
    CorrelationMatrix::from_second_moments(&column_gram(psi.values()))
}

/// [`plugin_correlation`] of the rotated rows `Q⁻¹ ψ_i`.
pub fn rotated_plugin_correlation(psi: &PsiMatrix, rotation: &Mat) -> Result<CorrelationMatrix> {
    CorrelationMatrix::from_second_moments(&column_gram(&rotate_rows(psi.values(), rotation)?))
}
