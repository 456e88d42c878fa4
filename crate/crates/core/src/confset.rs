//! Confidence sets for the projection parameter of a linear regression.
//!
//! The self-normalized sets split the sample in two. The second half `I2`
//! yields a pilot fit `β̂^{I2}` (and, for the rectangular variant, the Gram
//! matrix `Σ_a^{I2}`), from which the bootstrap critical value `K̂` is
//! calibrated. The set itself is `{β : T(β) ≤ K̂}` with `T` evaluated on the
//! first half `I1`. It is never materialized; membership is an oracle query.
//!
//! Wald sets are explicit hyper-rectangles around the full-sample least
//! squares fit, with half-widths from the plug-in or oracle sandwich variance.
//!
//! Geometry (diameters, Hausdorff distances) of implicit sets is estimated
//! by probing rays from a center point, so the reported values are built
//! from points known to lie in the set.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{bootstrap_quantile, QuantileValue};
use crate::error::{Error, Result};
use crate::estimating::{linreg_psi, RegressionSample};
use crate::numlin::{cholesky_jittered, least_squares, norm2, norm_inf, Mat};
use crate::rng::{self, derive_seed, tag};
use crate::statistic::{
    plugin_correlation, rotate_rows, rotated_plugin_correlation, weighted_stat, CorrelationMatrix,
};

/// Exhaustive corner enumeration is used up to this dimension.
const MAX_ENUMERATED_CORNER_DIM: usize = 12;

/// Disjoint halves of `0..N`; `first` gets the extra index when `N` is odd.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

/// Uniformly random split of `0..n` into halves of size `⌈n/2⌉` and `⌊n/2⌋`.
pub fn split_sample(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 2 {
        return Err(Error::TooFew { min: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, 0));
    let second = idx.split_off(n.div_ceil(2));
    Ok(SplitIndices { first: idx, second })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "lin")]
    Lin,
    #[serde(rename = "reclin")]
    RecLin,
    #[serde(rename = "wald")]
    Wald,
    #[serde(rename = "wald_oracle")]
    WaldOracle,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lin => "lin",
            Variant::RecLin => "reclin",
            Variant::Wald => "wald",
            Variant::WaldOracle => "wald_oracle",
        }
    }

    fn is_wald(self) -> bool {
        matches!(self, Variant::Wald | Variant::WaldOracle)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lin" => Ok(Variant::Lin),
            "reclin" => Ok(Variant::RecLin),
            "wald" => Ok(Variant::Wald),
            "wald_oracle" => Ok(Variant::WaldOracle),
            other => Err(Error::InvalidInput(format!(
                "unknown set variant {other:?}"
            ))),
        }
    }
}

/// A calibrated confidence set, frozen for membership queries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibratedSet {
    pub variant: Variant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub khat: QuantileValue,
    /// The `I1` half (Lin/RecLin).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis_sample: Option<RegressionSample>,
    /// `β̂^{I2}` (Lin/RecLin).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pilot_beta: Option<Vec<f64>>,
    /// `Σ_a^{I2}` (RecLin).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<Mat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wald_center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wald_halfwidths: Option<Vec<f64>>,
    /// The settings that produced the set, kept for provenance only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    /// Rows `Σ_a⁻¹ x_i` of the analysis half, built on first use.
    #[serde(skip)]
    rotated_covariates: OnceLock<Mat>,
}

impl CalibratedSet {
    fn self_normalized(
        variant: Variant,
        alpha: f64,
        khat: QuantileValue,
        analysis: RegressionSample,
        pilot: Vec<f64>,
        rotation: Option<Mat>,
    ) -> Self {
        CalibratedSet {
            variant,
            alpha: Some(alpha),
            khat,
            analysis_sample: Some(analysis),
            pilot_beta: Some(pilot),
            rotation,
            wald_center: None,
            wald_halfwidths: None,
            config: None,
            rotated_covariates: OnceLock::new(),
        }
    }

    /// Dimension of the parameter.
    pub fn dim(&self) -> usize {
        match (&self.analysis_sample, &self.wald_center) {
            (Some(s), _) => s.p(),
            (None, Some(c)) => c.len(),
            (None, None) => 0,
        }
    }

    pub fn khat_value(&self) -> f64 {
        self.khat.khat
    }

    /// Checks that the fields required by the variant are present and
    /// consistent. Sets built by this module always pass; this guards sets
    /// loaded from JSON.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::InvalidInput(format!(
                "{} set: {msg}",
                self.variant.name()
            )))
        };
        if !(self.khat.khat >= 0.0) || !self.khat.khat.is_finite() {
            return bad("khat must be a finite non-negative number");
        }
        match self.variant {
            Variant::Lin | Variant::RecLin => {
                let Some(s) = &self.analysis_sample else {
                    return bad("missing analysis_sample");
                };
                let Some(b) = &self.pilot_beta else {
                    return bad("missing pilot_beta");
                };
                if b.len() != s.p() {
                    return bad("pilot_beta length does not match the sample");
                }
                match (&self.rotation, self.variant) {
                    (None, Variant::RecLin) => return bad("missing rotation"),
                    (Some(_), Variant::Lin) => return bad("unexpected rotation"),
                    (Some(r), _) if r.rows() != s.p() || r.cols() != s.p() => {
                        return bad("rotation has the wrong shape")
                    }
                    _ => {}
                }
            }
            Variant::Wald | Variant::WaldOracle => {
                let (Some(c), Some(h)) = (&self.wald_center, &self.wald_halfwidths) else {
                    return bad("missing wald_center or wald_halfwidths");
                };
                if c.len() != h.len() || c.is_empty() {
                    return bad("wald_center and wald_halfwidths lengths differ");
                }
                if h.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return bad("half-widths must be finite and non-negative");
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: CalibratedSet = serde_json::from_str(s)?;
        set.validate()?;
        Ok(set)
    }

    fn expect(&self, want: Variant) -> Result<()> {
        if self.variant != want {
            return Err(Error::WrongVariant {
                expected: want.name(),
                got: self.variant.name(),
            });
        }
        Ok(())
    }

    fn analysis(&self) -> Result<&RegressionSample> {
        self.analysis_sample
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("set has no analysis sample".into()))
    }

    fn rotated_covariates(&self) -> Result<&Mat> {
        if let Some(w) = self.rotated_covariates.get() {
            return Ok(w);
        }
        let rotation = self
            .rotation
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("set has no rotation".into()))?;
        let w = rotate_rows(self.analysis()?.x(), rotation)?;
        Ok(self.rotated_covariates.get_or_init(|| w))
    }

    /// The test statistic at `beta`: `T` (Lin), `T̃` (RecLin), or the Wald
    /// max-ratio `K · max_j |β_j − c_j| / h_j`.
    pub fn statistic(&self, beta: &[f64]) -> Result<f64> {
        match self.variant {
            Variant::Lin => {
                let s = self.analysis()?;
                Ok(weighted_stat(s.x(), &s.residuals(beta)?).value)
            }
            Variant::RecLin => {
                let s = self.analysis()?;
                let r = s.residuals(beta)?;
                Ok(weighted_stat(self.rotated_covariates()?, &r).value)
            }
            Variant::Wald | Variant::WaldOracle => {
                let rect = self.rectangle()?;
                check_len(rect.dim(), beta)?;
                let ratio = beta
                    .iter()
                    .zip(&rect.center)
                    .zip(&rect.halfwidths)
                    .map(|((b, c), h)| {
                        let d = (b - c).abs();
                        if d == 0.0 {
                            0.0
                        } else {
                            d / h
                        }
                    })
                    .fold(0.0, f64::max);
                Ok(self.khat.khat * ratio)
            }
        }
    }

    /// Membership of `beta`, dispatched on the variant.
    pub fn member(&self, beta: &[f64]) -> Result<bool> {
        match self.variant {
            Variant::Lin => member_lin(self, beta),
            Variant::RecLin => member_reclin(self, beta),
            Variant::Wald | Variant::WaldOracle => member_wald(self, beta),
        }
    }

    /// The explicit rectangle of a Wald set.
    pub fn rectangle(&self) -> Result<Rectangle> {
        if !self.variant.is_wald() {
            return Err(Error::WrongVariant {
                expected: "wald",
                got: self.variant.name(),
            });
        }
        match (&self.wald_center, &self.wald_halfwidths) {
            (Some(c), Some(h)) => Rectangle::new(c.clone(), h.clone()),
            _ => Err(Error::InvalidInput("wald set without rectangle".into())),
        }
    }

    /// The plug-in correlation matrix the critical value was calibrated on.
    pub fn correlation(&self) -> Result<CorrelationMatrix> {
        let s = self.analysis()?;
        let pilot = self
            .pilot_beta
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("set has no pilot_beta".into()))?;
        let psi = linreg_psi(s, pilot)?;
        match self.variant {
            Variant::Lin => plugin_correlation(&psi),
            Variant::RecLin => rotated_plugin_correlation(&psi, self.rotation.as_ref().unwrap()),
            _ => Err(Error::WrongVariant {
                expected: "lin or reclin",
                got: self.variant.name(),
            }),
        }
    }
}

fn check_len(p: usize, beta: &[f64]) -> Result<()> {
    if beta.len() != p {
        return Err(Error::dims(format!("parameter of length {p}"), beta.len()));
    }
    Ok(())
}

struct SplitFit {
    analysis: RegressionSample,
    pilot: RegressionSample,
    pilot_beta: Vec<f64>,
}

fn split_and_fit(sample: &RegressionSample, seed: u64) -> Result<SplitFit> {
    let split = split_sample(sample.n(), derive_seed(seed, tag::SPLIT))?;
    let analysis = sample.subset(&split.first);
    let pilot = sample.subset(&split.second);
    let pilot_beta = least_squares(pilot.x(), pilot.y())?;
    Ok(SplitFit {
        analysis,
        pilot,
        pilot_beta,
    })
}

/// Calibrates the self-normalized set `{β : T_{I1}(β) ≤ K̂}`.
///
/// `seed` drives both the split and the bootstrap through derived streams.
pub fn calibrate_lin(
    sample: &RegressionSample,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<CalibratedSet> {
    let fit = split_and_fit(sample, seed)?;
    let gamma = plugin_correlation(&linreg_psi(&fit.analysis, &fit.pilot_beta)?)?;
    let khat = bootstrap_quantile(&gamma, alpha, draws, derive_seed(seed, tag::BOOTSTRAP))?;
    Ok(CalibratedSet::self_normalized(
        Variant::Lin,
        alpha,
        khat,
        fit.analysis,
        fit.pilot_beta,
        None,
    ))
}

/// Calibrates the rectangular set `{β : T̃_{I1}(β; Σ_a^{I2}) ≤ K̂}`.
pub fn calibrate_reclin(
    sample: &RegressionSample,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<CalibratedSet> {
    let fit = split_and_fit(sample, seed)?;
    let rotation = fit.pilot.x().scaled_gram();
    let psi = linreg_psi(&fit.analysis, &fit.pilot_beta)?;
    let gamma = rotated_plugin_correlation(&psi, &rotation)?;
    let khat = bootstrap_quantile(&gamma, alpha, draws, derive_seed(seed, tag::BOOTSTRAP))?;
    Ok(CalibratedSet::self_normalized(
        Variant::RecLin,
        alpha,
        khat,
        fit.analysis,
        fit.pilot_beta,
        Some(rotation),
    ))
}

/// `T_{I1}(β) ≤ K̂`.
pub fn member_lin(set: &CalibratedSet, beta: &[f64]) -> Result<bool> {
    set.expect(Variant::Lin)?;
    Ok(set.statistic(beta)? <= set.khat.khat)
}

/// `T̃_{I1}(β; Σ_a) ≤ K̂`.
pub fn member_reclin(set: &CalibratedSet, beta: &[f64]) -> Result<bool> {
    set.expect(Variant::RecLin)?;
    Ok(set.statistic(beta)? <= set.khat.khat)
}

/// `|β_j − c_j| ≤ h_j` for every coordinate.
pub fn member_wald(set: &CalibratedSet, beta: &[f64]) -> Result<bool> {
    let rect = set.rectangle()?;
    check_len(rect.dim(), beta)?;
    Ok(rect.contains_point(beta))
}

/// Plug-in `V̂(β) = (1/n) Σ_i x_i x_iᵀ (y_i − x_iᵀβ)²`.
pub fn sandwich_variance(sample: &RegressionSample, beta: &[f64]) -> Result<Mat> {
    let r = sample.residuals(beta)?;
    let p = sample.p();
    let mut v = Mat::zeros(p, p);
    for (i, ri) in r.iter().enumerate() {
        let w = ri * ri;
        if w == 0.0 {
            continue;
        }
        let x = sample.x().row(i);
        for k in 0..p {
            let wk = w * x[k];
            for l in 0..=k {
                v[(k, l)] += wk * x[l];
            }
        }
    }
    let inv_n = 1.0 / sample.n() as f64;
    for k in 0..p {
        for l in 0..=k {
            let val = v[(k, l)] * inv_n;
            v[(k, l)] = val;
            v[(l, k)] = val;
        }
    }
    Ok(v)
}

/// Population `Σ = E[XXᵀ]` and `V(β*) = E[XXᵀ(Y − Xᵀβ*)²]` for the oracle Wald set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaldOracle {
    pub sigma: Mat,
    pub vstar: Mat,
}

/// Diagonal of `S⁻¹ V S⁻¹` for SPD `S`.
fn sandwich_diagonal(gram: &Mat, v: &Mat) -> Result<Vec<f64>> {
    let p = gram.rows();
    let f = cholesky_jittered(gram)?;
    if f.jitter() > 0.0 {
        return Err(Error::SingularDesign { pivot_ratio: 0.0 });
    }
    (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            let u = f.solve(&e)?;
            let vu = v.matvec(&u)?;
            Ok(u.iter().zip(&vu).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect()
}

/// Builds a Wald rectangle centered at the full-sample least-squares fit
/// with half-widths `K · sqrt(M_jj / n)`, where `M` is the plug-in sandwich
/// `Σ̂⁻¹ V̂(β̂) Σ̂⁻¹` or, given an oracle, `Σ⁻¹ V(β*) Σ⁻¹`.
pub fn calibrate_wald(
    sample: &RegressionSample,
    k: QuantileValue,
    oracle: Option<&WaldOracle>,
) -> Result<CalibratedSet> {
    let p = sample.p();
    let n = sample.n() as f64;
    let center = least_squares(sample.x(), sample.y())?;
    let (variant, diag) = match oracle {
        None => {
            let gram = sample.x().scaled_gram();
            let v = sandwich_variance(sample, &center)?;
            (Variant::Wald, sandwich_diagonal(&gram, &v)?)
        }
        Some(o) => {
            for (name, m) in [("sigma", &o.sigma), ("vstar", &o.vstar)] {
                if m.rows() != p || m.cols() != p {
                    return Err(Error::dims(
                        format!("{p}x{p} oracle {name}"),
                        format!("{}x{}", m.rows(), m.cols()),
                    ));
                }
                match cholesky_jittered(m) {
                    Ok(f) if f.jitter() == 0.0 => {}
                    _ => {
                        return Err(Error::InvalidInput(format!(
                            "oracle {name} is not positive definite"
                        )))
                    }
                }
            }
            (Variant::WaldOracle, sandwich_diagonal(&o.sigma, &o.vstar)?)
        }
    };
    let halfwidths = diag
        .iter()
        .map(|m| k.khat * (m.max(0.0) / n).sqrt())
        .collect();
    Ok(CalibratedSet {
        variant,
        alpha: None,
        khat: k,
        analysis_sample: None,
        pilot_beta: None,
        rotation: None,
        wald_center: Some(center),
        wald_halfwidths: Some(halfwidths),
        config: None,
        rotated_covariates: OnceLock::new(),
    })
}

/// Anything that answers point-membership queries.
pub trait Membership {
    fn contains(&self, point: &[f64]) -> bool;
}

impl<F: Fn(&[f64]) -> bool> Membership for F {
    fn contains(&self, point: &[f64]) -> bool {
        self(point)
    }
}

impl Membership for CalibratedSet {
    /// Query errors (only possible on a dimension mismatch) count as "outside".
    fn contains(&self, point: &[f64]) -> bool {
        self.member(point).unwrap_or(false)
    }
}

/// Axis-aligned box `{x : |x_j − c_j| ≤ h_j}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub center: Vec<f64>,
    pub halfwidths: Vec<f64>,
}

impl Rectangle {
    pub fn new(center: Vec<f64>, halfwidths: Vec<f64>) -> Result<Self> {
        if center.len() != halfwidths.len() || center.is_empty() {
            return Err(Error::dims(center.len(), halfwidths.len()));
        }
        if halfwidths.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::InvalidInput(
                "half-widths must be non-negative".into(),
            ));
        }
        Ok(Self { center, halfwidths })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.center)
            .zip(&self.halfwidths)
            .all(|((x, c), h)| (x - c).abs() <= *h)
    }

    /// Exact `(‖·‖₂, ‖·‖_∞)` distance from `x` to the box, by clamping.
    pub fn distance(&self, x: &[f64]) -> (f64, f64) {
        let excess: Vec<f64> = x
            .iter()
            .zip(&self.center)
            .zip(&self.halfwidths)
            .map(|((x, c), h)| ((x - c).abs() - h).max(0.0))
            .collect();
        (norm2(&excess), norm_inf(&excess))
    }

    /// `diam_2 = 2‖h‖₂`.
    pub fn diam2(&self) -> f64 {
        2.0 * norm2(&self.halfwidths)
    }

    /// `diam_∞ = 2 max_j h_j`.
    pub fn diam_inf(&self) -> f64 {
        2.0 * norm_inf(&self.halfwidths)
    }
}

impl Membership for Rectangle {
    fn contains(&self, point: &[f64]) -> bool {
        self.contains_point(point)
    }
}

/// Ray-probing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Random unit directions in addition to the `2p` signed axes.
    pub random_directions: usize,
    /// Absolute bisection tolerance on exit radii.
    pub tol: f64,
    /// Largest radius probed before declaring the set unbounded.
    pub t_max: f64,
    /// Length scale; bracketing starts at `1e-3 · scale`.
    pub scale: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            random_directions: 50,
            tol: 1e-6,
            t_max: 1e6,
            scale: 1.0,
            seed: 0,
        }
    }
}

/// Exit radii along one line through the center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionExit {
    pub direction: Vec<f64>,
    pub t_plus: f64,
    pub t_minus: f64,
}

/// Direction-sampled diameters of an implicit set.
///
/// Both values are lower bounds: every exit radius is the last radius known
/// to be inside the set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySummary {
    pub diam2: f64,
    pub diam_inf: f64,
    pub directions_used: usize,
    pub per_direction_exit: Vec<DirectionExit>,
}

fn along(center: &[f64], dir: &[f64], t: f64) -> Vec<f64> {
    center.iter().zip(dir).map(|(c, d)| c + t * d).collect()
}

/// Largest radius in `[0, cap]` known to be inside before the first exit
/// along `dir`, and whether an exit was found at all.
fn first_exit<M: Membership + ?Sized>(
    member: &M,
    center: &[f64],
    dir: &[f64],
    cap: f64,
    cfg: &ProbeConfig,
) -> (f64, bool) {
    let mut lo = 0.0;
    let mut hi = (1e-3 * cfg.scale).min(cap);
    loop {
        if !member.contains(&along(center, dir, hi)) {
            break;
        }
        lo = hi;
        if hi >= cap {
            return (cap, false);
        }
        hi = (2.0 * hi).min(cap);
    }
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if member.contains(&along(center, dir, mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, true)
}

fn random_unit(p: usize, seed: u64, index: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, index);
    loop {
        let v: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm2(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn probe_directions(p: usize, cfg: &ProbeConfig) -> Vec<Vec<f64>> {
    let mut dirs = Vec::with_capacity(p + cfg.random_directions);
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        dirs.push(e);
    }
    let seed = derive_seed(cfg.seed, tag::PROBE);
    for k in 0..cfg.random_directions {
        dirs.push(random_unit(p, seed, k as u64));
    }
    dirs
}

/// Estimates `diam_2` and `diam_∞` of `{x : member(x)}` by probing the `2p`
/// signed axes and `m` random lines through `center`.
///
/// `diam_2` is the longest probed chord `t⁺(v) + t⁻(v)`; `diam_∞` is the
/// largest max-norm length of a probed chord.
pub fn diameter_estimate<M: Membership + Sync + ?Sized>(
    member: &M,
    center: &[f64],
    cfg: &ProbeConfig,
) -> Result<GeometrySummary> {
    if !member.contains(center) {
        return Err(Error::CenterOutside);
    }
    let dirs = probe_directions(center.len(), cfg);
    let exits: Vec<Result<DirectionExit>> = dirs
        .into_par_iter()
        .enumerate()
        .map(|(k, v)| {
            let neg: Vec<f64> = v.iter().map(|x| -x).collect();
            let (t_plus, ok_plus) = first_exit(member, center, &v, cfg.t_max, cfg);
            let (t_minus, ok_minus) = first_exit(member, center, &neg, cfg.t_max, cfg);
            if !(ok_plus && ok_minus) {
                return Err(Error::Unbounded {
                    direction: k,
                    t_max: cfg.t_max,
                });
            }
            Ok(DirectionExit {
                direction: v,
                t_plus,
                t_minus,
            })
        })
        .collect();
    let exits = exits.into_iter().collect::<Result<Vec<_>>>()?;
    let diam2 = exits
        .iter()
        .map(|e| e.t_plus + e.t_minus)
        .fold(0.0, f64::max);
    let diam_inf = exits
        .iter()
        .map(|e| (e.t_plus + e.t_minus) * norm_inf(&e.direction))
        .fold(0.0, f64::max);
    Ok(GeometrySummary {
        diam2,
        diam_inf,
        directions_used: exits.len(),
        per_direction_exit: exits,
    })
}

/// Directed and symmetric Hausdorff distances between two boxes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectHausdorff {
    pub d2: f64,
    pub d_inf: f64,
}

fn check_halfwidths(h: &[f64]) -> Result<()> {
    if h.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidInput(
            "half-widths must be non-negative".into(),
        ));
    }
    Ok(())
}

/// Directed distance `d(A → B)` for `A = [−a, a]` and `B = offset + [−b, b]`.
///
/// The distance from a point to a box separates by coordinate, so the
/// supremum over `A` is attained coordinate-wise at
/// `(a_j + |offset_j| − b_j)_+`.
pub fn directed_rect_rect(a_half: &[f64], b_half: &[f64], offset: &[f64]) -> Result<RectHausdorff> {
    let p = a_half.len();
    if b_half.len() != p || offset.len() != p {
        return Err(Error::dims(
            p,
            format!("{} and {}", b_half.len(), offset.len()),
        ));
    }
    check_halfwidths(a_half)?;
    check_halfwidths(b_half)?;
    let excess: Vec<f64> = (0..p)
        .map(|j| (a_half[j] + offset[j].abs() - b_half[j]).max(0.0))
        .collect();
    Ok(RectHausdorff {
        d2: norm2(&excess),
        d_inf: norm_inf(&excess),
    })
}

/// Hausdorff distance between `[−a, a]` and `offset + [−b, b]` in the
/// Euclidean and max norms.
pub fn hausdorff_rect_rect(
    a_half: &[f64],
    b_half: &[f64],
    offset: &[f64],
) -> Result<RectHausdorff> {
    let ab = directed_rect_rect(a_half, b_half, offset)?;
    let ba = directed_rect_rect(b_half, a_half, offset)?;
    Ok(RectHausdorff {
        d2: ab.d2.max(ba.d2),
        d_inf: ab.d_inf.max(ba.d_inf),
    })
}

/// Sampled Hausdorff distance between an implicit set and a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HausdorffEstimate {
    /// Estimate of `d₂(implicit → box)`.
    pub to_rect: f64,
    /// Estimate of `d₂(box → implicit)`.
    pub from_rect: f64,
    /// `max(to_rect, from_rect)`.
    pub d2: f64,
    pub boundary_points: usize,
}

/// Boundary samples of a box: every corner (or sampled corners above
/// dimension 12), face centers, and random face points.
fn rect_boundary_points(rect: &Rectangle, m: usize, seed: u64) -> Vec<Vec<f64>> {
    let p = rect.dim();
    let corner = |signs: &dyn Fn(usize) -> bool| -> Vec<f64> {
        (0..p)
            .map(|j| {
                let h = rect.halfwidths[j];
                rect.center[j] + if signs(j) { h } else { -h }
            })
            .collect()
    };
    let mut pts = Vec::new();
    if p <= MAX_ENUMERATED_CORNER_DIM {
        for mask in 0u64..(1u64 << p) {
            pts.push(corner(&|j| mask >> j & 1 == 1));
        }
    } else {
        let mut rng = rng::stream(seed, 0);
        for _ in 0..m {
            let bits: Vec<bool> = (0..p).map(|_| rng.random()).collect();
            pts.push(corner(&|j| bits[j]));
        }
    }
    for j in 0..p {
        for s in [-1.0, 1.0] {
            let mut q = rect.center.clone();
            q[j] += s * rect.halfwidths[j];
            pts.push(q);
        }
    }
    let mut rng = rng::stream(seed, 1);
    for _ in 0..m {
        let mut q: Vec<f64> = (0..p)
            .map(|j| rect.center[j] + rect.halfwidths[j] * rng.random_range(-1.0..=1.0))
            .collect();
        let j = rng.random_range(0..p);
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        q[j] = rect.center[j] + s * rect.halfwidths[j];
        pts.push(q);
    }
    pts
}

/// Estimates the Euclidean Hausdorff distance between the implicit set
/// `{x : member(x)}` (star-shaped about `center`) and a box.
///
/// Implicit-set boundary points come from the diameter probes plus rays
/// from `center` toward each sampled boundary point of the box; their
/// distance to the box is exact. A box boundary point beyond the implicit
/// boundary on its ray is charged the distance to that boundary point.
pub fn hausdorff_member_rect<M: Membership + Sync + ?Sized>(
    member: &M,
    center: &[f64],
    rect: &Rectangle,
    cfg: &ProbeConfig,
) -> Result<HausdorffEstimate> {
    if rect.dim() != center.len() {
        return Err(Error::dims(center.len(), rect.dim()));
    }
    let geom = diameter_estimate(member, center, cfg)?;
    let mut to_rect: f64 = 0.0;
    for e in &geom.per_direction_exit {
        for t in [e.t_plus, -e.t_minus] {
            to_rect = to_rect.max(rect.distance(&along(center, &e.direction, t)).0);
        }
    }
    let pts = rect_boundary_points(
        rect,
        cfg.random_directions,
        derive_seed(cfg.seed, tag::GRID),
    );
    let n_pts = pts.len();
    let per_point: Vec<(f64, f64)> = pts
        .into_par_iter()
        .map(|q| {
            let diff: Vec<f64> = q.iter().zip(center).map(|(a, b)| a - b).collect();
            let len = norm2(&diff);
            if len == 0.0 {
                return Ok((0.0, 0.0));
            }
            let u: Vec<f64> = diff.iter().map(|d| d / len).collect();
            let (t, exited) = first_exit(member, center, &u, cfg.t_max, cfg);
            if !exited {
                return Err(Error::Unbounded {
                    direction: geom.directions_used,
                    t_max: cfg.t_max,
                });
            }
            let to = rect.distance(&along(center, &u, t)).0;
            Ok((to, (len - t).max(0.0)))
        })
        .collect::<Result<_>>()?;
    let mut from_rect: f64 = 0.0;
    for (to, from) in per_point {
        to_rect = to_rect.max(to);
        from_rect = from_rect.max(from);
    }
    Ok(HausdorffEstimate {
        to_rect,
        from_rect,
        d2: to_rect.max(from_rect),
        boundary_points: 2 * geom.directions_used + n_pts,
    })
}
