//! Critical values for the max statistic.
//!
//! Bonferroni and Šidák need only `α` and `p`. The bootstrap quantile draws
//! `Z_b ~ N(0, Γ̂)` and takes the smallest `t ≥ 0` whose empirical exceedance
//! frequency `#{b : ‖Z_b‖_∞ > t} / B` is at most `α`. Over a finite sample
//! that infimum is the `(B − ⌊αB⌋)`-th smallest maximum, or 0 when
//! `⌊αB⌋ = B`.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numlin::{cholesky_jittered, normal_quantile, SpdFactor};
use crate::rng;
use crate::statistic::CorrelationMatrix;

/// Number of bootstrap draws used when the caller does not choose one.
pub fn default_bootstrap_draws(n: usize) -> usize {
    n.max(2000)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantileMethod {
    Bonferroni,
    Sidak,
    Bootstrap,
}

impl std::str::FromStr for QuantileMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonferroni" => Ok(QuantileMethod::Bonferroni),
            "sidak" => Ok(QuantileMethod::Sidak),
            "bootstrap" => Ok(QuantileMethod::Bootstrap),
            other => Err(Error::InvalidInput(format!(
                "unknown quantile method {other:?}"
            ))),
        }
    }
}

/// A critical value and how it was obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileValue {
    pub khat: f64,
    pub method: QuantileMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
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

fn check_dim(p: usize) -> Result<()> {
    if p == 0 {
        return Err(Error::OutOfRange {
            name: "p",
            value: 0.0,
            expected: "p >= 1",
        });
    }
    Ok(())
}

/// `Φ⁻¹(1 − α/(2p))`.
pub fn bonferroni_quantile(alpha: f64, p: usize) -> Result<QuantileValue> {
    check_alpha(alpha)?;
    check_dim(p)?;
    Ok(QuantileValue {
        khat: normal_quantile(1.0 - alpha / (2.0 * p as f64))?,
        method: QuantileMethod::Bonferroni,
        draws: None,
        seed: None,
    })
}

/// `Φ⁻¹((1 + (1 − α)^{1/p}) / 2)`.
pub fn sidak_quantile(alpha: f64, p: usize) -> Result<QuantileValue> {
    check_alpha(alpha)?;
    check_dim(p)?;
    // (1 − α)^{1/p} = 1 − δ with δ = −expm1(log1p(−α)/p); the quantile of
    // 1 − δ/2 is reflected into the lower tail so δ keeps full precision.
    let delta = -(((-alpha).ln_1p()) / p as f64).exp_m1();
    Ok(QuantileValue {
        khat: -normal_quantile(0.5 * delta)?,
        method: QuantileMethod::Sidak,
        draws: None,
        seed: None,
    })
}

/// Largest exceedance count `k` with `k / B ≤ α`.
fn allowed_exceedances(alpha: f64, draws: usize) -> usize {
    let k = (alpha * draws as f64).floor() as usize;
    // Guard against αB landing a hair below an integer it represents.
    if ((k + 1) as f64) / (draws as f64) <= alpha {
        k + 1
    } else {
        k
    }
}

/// The infimum `inf{t ≥ 0 : #{M_b > t} / B ≤ α}` over an explicit sample
/// of maxima. Reorders `maxima`.
pub fn quantile_from_maxima(maxima: &mut [f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let b = maxima.len();
    if b == 0 {
        return Err(Error::TooFew { min: 1, got: 0 });
    }
    let k = allowed_exceedances(alpha, b);
    if k >= b {
        return Ok(0.0);
    }
    let rank = b - k - 1;
    let (_, v, _) = maxima.select_nth_unstable_by(rank, f64::total_cmp);
    Ok(v.max(0.0))
}

/// `‖L g_b‖_∞` for draw `b`, where `g_b` comes from stream `b` of `seed`.
fn draw_max(factor: &SpdFactor, seed: u64, b: usize, g: &mut [f64], z: &mut [f64]) -> f64 {
    let mut rng = rng::stream(seed, b as u64);
    for gi in g.iter_mut() {
        *gi = StandardNormal.sample(&mut rng);
    }
    factor.mul_lower(g, z);
    z.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Draws `B` maxima `‖Z_b‖_∞` with `Z_b ~ N(0, Γ)`, in draw order.
///
/// Draw `b` uses its own counter-addressed stream, so the output is
/// identical for any thread count.
pub fn bootstrap_maxima(gamma: &CorrelationMatrix, draws: usize, seed: u64) -> Result<Vec<f64>> {
    if draws == 0 {
        return Err(Error::OutOfRange {
            name: "B",
            value: 0.0,
            expected: "B >= 1",
        });
    }
    let factor = cholesky_jittered(gamma.as_mat())?;
    let p = gamma.dim();
    Ok((0..draws)
        .into_par_iter()
        .map_init(
            || (vec![0.0; p], vec![0.0; p]),
            |(g, z), b| draw_max(&factor, seed, b, g, z),
        )
        .collect())
}

/// Feasible Gaussian bootstrap quantile `K̂(α, B; Γ̂)`.
pub fn bootstrap_quantile(
    gamma: &CorrelationMatrix,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<QuantileValue> {
    check_alpha(alpha)?;
    let mut maxima = bootstrap_maxima(gamma, draws, seed)?;
    Ok(QuantileValue {
        khat: quantile_from_maxima(&mut maxima, alpha)?,
        method: QuantileMethod::Bootstrap,
        draws: Some(draws),
        seed: Some(seed),
    })
}
