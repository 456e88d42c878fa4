//! Library results checked against independent reference computations.

mod common;

use common::*;
use rand::Rng;
use selfnorm::calibrate::{
    bonferroni_quantile, bootstrap_quantile, sidak_quantile, QuantileMethod, QuantileValue,
};
use selfnorm::confset::{
    calibrate_lin, calibrate_reclin, calibrate_wald, diameter_estimate, hausdorff_member_rect,
    hausdorff_rect_rect, member_lin, member_wald, sandwich_variance, ProbeConfig, Rectangle,
    WaldOracle,
};
use selfnorm::estimating::PsiMatrix;
use selfnorm::estimating::{
    glm_fit, glm_psi, linreg_psi, quantile_fit, GlmFamily, QuantileSpec, RegressionSample,
};
use selfnorm::numlin::{cholesky_jittered, least_squares, normal_quantile, Mat};
use selfnorm::simharness::{dgp_generate, DgpSpec, Misspec};
use selfnorm::statistic::{
    plugin_correlation, rotated_plugin_correlation, rotated_stat, self_normalized_stat,
    CorrelationMatrix,
};

#[test]
fn cholesky_reconstructs_gram() {
    let mut r = rng(1);
    let a = random_mat(&mut r, 5, 5).to_rows();
    let at: Vec<Vec<f64>> = (0..5)
        .map(|j| a.iter().map(|row| row[j]).collect())
        .collect();
    let g = naive_matmul(&at, &a);
    let f = cholesky_jittered(&Mat::from_rows(g.clone()).unwrap()).unwrap();
    let l = f.lower().to_rows();
    let lt: Vec<Vec<f64>> = (0..5)
        .map(|j| l.iter().map(|row| row[j]).collect())
        .collect();
    let back = naive_matmul(&l, &lt);
    assert!(max_abs_diff(&back, &Mat::from_rows(g).unwrap()) <= 1e-10);
}

#[test]
fn spd_solve_satisfies_system() {
    let mut r = rng(2);
    let a = random_mat(&mut r, 9, 6);
    let m = a.scaled_gram();
    let b = normals(&mut r, 6);
    let x = cholesky_jittered(&m).unwrap().solve(&b).unwrap();
    let mx = m.matvec(&x).unwrap();
    for (u, v) in mx.iter().zip(&b) {
        assert!((u - v).abs() < 1e-10);
    }
    let reference = naive_solve(&m.to_rows(), &b);
    for (u, v) in x.iter().zip(&reference) {
        assert!((u - v).abs() < 1e-9);
    }
}

#[test]
fn least_squares_matches_normal_equations() {
    let s = linear_sample(3, 50, &[1.0, -2.0, 0.5, 3.0], 0.7);
    let rows = s.x().to_rows();
    let xt: Vec<Vec<f64>> = (0..4)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect();
    let xtx = naive_matmul(&xt, &rows);
    let xty: Vec<f64> = xt
        .iter()
        .map(|c| c.iter().zip(s.y()).map(|(a, b)| a * b).sum())
        .collect();
    let reference = naive_solve(&xtx, &xty);
    let fit = least_squares(s.x(), s.y()).unwrap();
    for (a, b) in fit.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn normal_quantile_matches_bisection() {
    for (u, expect) in [(0.975, 1.959964), (0.9975, 2.807034)] {
        let z = normal_quantile(u).unwrap();
        let b = bisect_quantile(u);
        assert!((z - b).abs() < 1e-9, "{z} vs {b}");
        assert!((z - expect).abs() < 5e-7);
    }
    for k in 1..200 {
        let u = k as f64 / 200.0;
        assert!((normal_quantile(u).unwrap() - bisect_quantile(u)).abs() < 1e-9);
    }
}

#[test]
fn linreg_psi_matches_loop() {
    let s = linear_sample(4, 10, &[0.3, -1.0, 2.0], 1.0);
    let beta = [0.1, 0.2, 0.3];
    let psi = linreg_psi(&s, &beta).unwrap();
    for i in 0..10 {
        let x = s.x().row(i);
        let resid = s.y()[i] - (x[0] * beta[0] + x[1] * beta[1] + x[2] * beta[2]);
        for j in 0..3 {
            assert!((psi.values()[(i, j)] - x[j] * resid).abs() <= 1e-14);
        }
    }
}

fn logistic_sample(seed: u64, n: usize, theta: [f64; 2]) -> RegressionSample {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for _ in 0..n {
        let z: f64 = normals(&mut r, 1)[0];
        let prob = 1.0 / (1.0 + (-(theta[0] + theta[1] * z)).exp());
        rows.push(vec![1.0, z]);
        y.push(if r.random::<f64>() < prob { 1.0 } else { 0.0 });
    }
    RegressionSample::new(Mat::from_rows(rows).unwrap(), y).unwrap()
}

#[test]
fn logistic_fit_matches_grid_search() {
    let s = logistic_sample(5, 100, [0.5, 1.0]);
    let score_norm = |t: [f64; 2]| -> f64 {
        let mut g = [0.0; 2];
        for i in 0..s.n() {
            let x = s.x().row(i);
            let mu = 1.0 / (1.0 + (-(t[0] * x[0] + t[1] * x[1])).exp());
            g[0] += (mu - s.y()[i]) * x[0];
            g[1] += (mu - s.y()[i]) * x[1];
        }
        (g[0] * g[0] + g[1] * g[1]).sqrt()
    };
    let (mut center, mut half) = ([0.0, 0.0], 4.0);
    for _ in 0..30 {
        let mut best = (f64::INFINITY, center);
        for a in 0..=20 {
            for b in 0..=20 {
                let t = [
                    center[0] - half + half * a as f64 / 10.0,
                    center[1] - half + half * b as f64 / 10.0,
                ];
                let v = score_norm(t);
                if v < best.0 {
                    best = (v, t);
                }
            }
        }
        center = best.1;
        half *= 0.3;
    }
    let fit = glm_fit(&s, GlmFamily::Logistic).unwrap();
    assert!((fit[0] - center[0]).abs() < 1e-4 && (fit[1] - center[1]).abs() < 1e-4);
    let score = glm_psi(&s, GlmFamily::Logistic, &fit).unwrap();
    let total: f64 = (0..s.n()).map(|i| score.values()[(i, 1)]).sum();
    assert!(total.abs() < 1e-6);
}

#[test]
fn quantile_fit_matches_sort() {
    let mut r = rng(6);
    let data = normals(&mut r, 101);
    let mut sorted = data.clone();
    sorted.sort_by(f64::total_cmp);
    let q = quantile_fit(&data, QuantileSpec::new(0.9).unwrap()).unwrap();
    // Smallest order statistic with at least 90% of the sample at or below it.
    assert_eq!(q, sorted[90]);
}

fn psi_from(m: &Mat) -> PsiMatrix {
    PsiMatrix::new(m.clone())
}

#[test]
fn statistic_and_correlation_match_brute_force() {
    let mut r = rng(7);
    for _ in 0..100 {
        let m = random_mat(&mut r, 6, 3);
        let rows = m.to_rows();
        let t = self_normalized_stat(&psi_from(&m)).value;
        assert!((t - brute_stat(&rows)).abs() <= 1e-13);
        let c = plugin_correlation(&psi_from(&m)).unwrap();
        assert!(max_abs_diff(&brute_corr(&rows), c.as_mat()) <= 1e-13);
    }
}

#[test]
fn rotated_statistic_matches_two_step() {
    let mut r = rng(8);
    for _ in 0..20 {
        let m = random_mat(&mut r, 8, 3);
        let mut q = random_mat(&mut r, 3, 3).to_rows();
        for (i, row) in q.iter_mut().enumerate() {
            row[i] += 4.0;
        }
        let qinv = naive_inverse(&q);
        let rotated: Vec<Vec<f64>> = m
            .to_rows()
            .iter()
            .map(|row| {
                qinv.iter()
                    .map(|qr| qr.iter().zip(row).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect();
        let qm = Mat::from_rows(q).unwrap();
        let t = rotated_stat(&psi_from(&m), &qm).unwrap().value;
        assert!((t - brute_stat(&rotated)).abs() <= 1e-10);
        let c = rotated_plugin_correlation(&psi_from(&m), &qm).unwrap();
        assert!(max_abs_diff(&brute_corr(&rotated), c.as_mat()) <= 1e-12);
    }
}

#[test]
fn p1_bootstrap_recovers_normal_quantile() {
    let g = CorrelationMatrix::from_mat(Mat::identity(1)).unwrap();
    let k = bootstrap_quantile(&g, 0.05, 200_000, 11).unwrap().khat;
    assert!((k - 1.959964).abs() <= 0.02, "{k}");
}

#[test]
fn far_points_are_rejected_and_rescaling_is_invisible() {
    let s = linear_sample(9, 200, &[1.0, 2.0, -1.0], 1.0);
    let set = calibrate_lin(&s, 0.1, 1000, 4).unwrap();
    let a = set.analysis_sample.clone().unwrap();
    let fit = least_squares(a.x(), a.y()).unwrap();
    assert!(member_lin(&set, &fit).unwrap());
    let mut far = fit.clone();
    far[0] += 1e6;
    let t = set.statistic(&far).unwrap();
    assert!(t > set.khat_value(), "{t}");
    assert!(!member_lin(&set, &far).unwrap());

    // Scaling column j of X by c and β_j by 1/c leaves every residual
    // unchanged and rescales ψ column j, which the statistic ignores.
    let scales = [3.0, 0.01, 70.0];
    let mut xs = s.x().clone();
    for i in 0..s.n() {
        for j in 0..3 {
            xs[(i, j)] *= scales[j];
        }
    }
    let scaled = RegressionSample::new(xs, s.y().to_vec()).unwrap();
    let set2 = calibrate_lin(&scaled, 0.1, 1000, 4).unwrap();
    assert!((set.khat_value() - set2.khat_value()).abs() < 1e-10);
    let mut r = rng(10);
    for _ in 0..50 {
        let b: Vec<f64> = fit
            .iter()
            .map(|f| f + 0.3 * normals(&mut r, 1)[0])
            .collect();
        let b2: Vec<f64> = b.iter().zip(&scales).map(|(v, c)| v / c).collect();
        let (t1, t2) = (set.statistic(&b).unwrap(), set2.statistic(&b2).unwrap());
        assert!((t1 - t2).abs() <= 1e-9 * t1.max(1.0), "{t1} vs {t2}");
    }
}

#[test]
fn diagonal_rotation_leaves_correlation_unchanged() {
    let mut r = rng(12);
    for _ in 0..20 {
        let m = random_mat(&mut r, 30, 4);
        let d: Vec<f64> = (0..4).map(|_| uniform(&mut r, 0.1, 10.0)).collect();
        let a = rotated_plugin_correlation(&psi_from(&m), &Mat::from_diag(&d)).unwrap();
        let b = plugin_correlation(&psi_from(&m)).unwrap();
        assert!(a.as_mat().max_abs_diff(b.as_mat()).unwrap() < 1e-14);
        let t1 = rotated_stat(&psi_from(&m), &Mat::from_diag(&d))
            .unwrap()
            .value;
        let t2 = self_normalized_stat(&psi_from(&m)).value;
        assert!((t1 - t2).abs() < 1e-13);
    }
}

#[test]
fn sandwich_matches_triple_loop() {
    let s = linear_sample(13, 20, &[1.0, 0.0, -1.0], 2.0);
    let beta = [0.9, 0.1, -1.2];
    let v = sandwich_variance(&s, &beta).unwrap();
    for k in 0..3 {
        for l in 0..3 {
            let mut acc = 0.0;
            for i in 0..20 {
                let x = s.x().row(i);
                let r = s.y()[i] - (x[0] * beta[0] + x[1] * beta[1] + x[2] * beta[2]);
                acc += x[k] * x[l] * r * r;
            }
            assert!((v[(k, l)] - acc / 20.0).abs() <= 1e-12);
        }
    }
}

fn kval(k: f64) -> QuantileValue {
    QuantileValue {
        khat: k,
        method: QuantileMethod::Sidak,
        draws: None,
        seed: None,
    }
}

#[test]
fn wald_halfwidths_match_formula() {
    let s = linear_sample(14, 40, &[2.0, -1.0, 0.5], 1.5);
    let k = 2.3;
    let set = calibrate_wald(&s, kval(k), None).unwrap();
    let rect = set.rectangle().unwrap();
    let center = least_squares(s.x(), s.y()).unwrap();
    let sinv = naive_inverse(&s.x().scaled_gram().to_rows());
    let v = sandwich_variance(&s, &center).unwrap().to_rows();
    let m = naive_matmul(&naive_matmul(&sinv, &v), &sinv);
    for j in 0..3 {
        let h = k * (m[j][j] / 40.0).sqrt();
        assert!((rect.halfwidths[j] - h).abs() <= 1e-10);
        assert!((rect.center[j] - center[j]).abs() <= 1e-12);
    }

    let sigma = Mat::from_rows(vec![
        vec![2.0, 0.5, 0.0],
        vec![0.5, 1.0, 0.2],
        vec![0.0, 0.2, 1.5],
    ])
    .unwrap();
    let vstar = Mat::from_rows(vec![
        vec![1.0, 0.1, 0.0],
        vec![0.1, 3.0, 0.4],
        vec![0.0, 0.4, 2.0],
    ])
    .unwrap();
    let oracle = WaldOracle {
        sigma: sigma.clone(),
        vstar: vstar.clone(),
    };
    let o = calibrate_wald(&s, kval(k), Some(&oracle))
        .unwrap()
        .rectangle()
        .unwrap();
    let sinv = naive_inverse(&sigma.to_rows());
    let m = naive_matmul(&naive_matmul(&sinv, &vstar.to_rows()), &sinv);
    for j in 0..3 {
        assert!((o.halfwidths[j] - k * (m[j][j] / 40.0).sqrt()).abs() <= 1e-10);
    }
    let bad = WaldOracle {
        sigma: Mat::from_diag(&[1.0, -1.0, 1.0]),
        vstar,
    };
    assert!(calibrate_wald(&s, kval(k), Some(&bad)).is_err());
}

#[test]
fn wald_membership_matches_max_ratio() {
    let s = linear_sample(15, 60, &[0.0, 1.0], 1.0);
    let set = calibrate_wald(&s, kval(2.0), None).unwrap();
    let rect = set.rectangle().unwrap();
    let mut r = rng(16);
    let mut seen = [false, false];
    for _ in 0..500 {
        let b: Vec<f64> = rect
            .center
            .iter()
            .zip(&rect.halfwidths)
            .map(|(c, h)| c + h * uniform(&mut r, -1.5, 1.5))
            .collect();
        let ratio = (0..2)
            .map(|j| (b[j] - rect.center[j]).abs() / rect.halfwidths[j])
            .fold(0.0, f64::max);
        let expect = ratio <= 1.0;
        assert_eq!(member_wald(&set, &b).unwrap(), expect);
        seen[expect as usize] = true;
    }
    assert_eq!(seen, [true, true]);
}

#[test]
fn rectangle_diameters() {
    let rect = Rectangle::new(vec![0.5, -1.0, 2.0], vec![0.3, 1.2, 0.7]).unwrap();
    let axes = ProbeConfig {
        random_directions: 0,
        tol: 1e-10,
        ..Default::default()
    };
    let g = diameter_estimate(&rect, &rect.center, &axes).unwrap();
    assert!((g.diam_inf - 2.4).abs() < 1e-9);
    let sampled = diameter_estimate(
        &rect,
        &rect.center,
        &ProbeConfig {
            random_directions: 200,
            tol: 1e-10,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(sampled.diam2 <= rect.diam2() + 1e-9);
    assert!(sampled.diam2 >= 2.4 - 1e-9);
    // Along the corner direction the chord is the full diagonal.
    let h = &rect.halfwidths;
    let norm = (h.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let corner_dir: Vec<f64> = h.iter().map(|v| v / norm).collect();
    let along = |t: f64| -> Vec<f64> {
        rect.center
            .iter()
            .zip(&corner_dir)
            .map(|(c, d)| c + t * d)
            .collect()
    };
    assert!(rect.contains_point(&along(norm * (1.0 - 1e-12))));
    assert!(!rect.contains_point(&along(norm * (1.0 + 1e-9))));
}

#[test]
fn rect_hausdorff_matches_boundary_sampling() {
    let mut r = rng(17);
    for _ in 0..5 {
        let a: Vec<f64> = (0..3).map(|_| uniform(&mut r, 0.1, 2.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| uniform(&mut r, 0.1, 2.0)).collect();
        let zero = [0.0; 3];
        let exact = hausdorff_rect_rect(&a, &b, &zero).unwrap();
        let ab = sampled_directed_box(&a, &b, &zero, 101, 40_000, &mut r);
        let ba = sampled_directed_box(&b, &a, &zero, 101, 40_000, &mut r);
        assert!(
            (exact.d2 - ab.max(ba)).abs() <= 1e-3,
            "{} vs {}",
            exact.d2,
            ab.max(ba)
        );

        let offset: Vec<f64> = (0..3).map(|_| uniform(&mut r, -1.0, 1.0)).collect();
        let exact = hausdorff_rect_rect(&a, &b, &offset).unwrap();
        let neg: Vec<f64> = offset.iter().map(|o| -o).collect();
        let ab = sampled_directed_box(&a, &b, &offset, 101, 10_000, &mut r);
        let ba = sampled_directed_box(&b, &a, &neg, 101, 10_000, &mut r);
        assert!(
            (exact.d2 - ab.max(ba)).abs() <= 1e-3,
            "{} vs {}",
            exact.d2,
            ab.max(ba)
        );
    }
}

#[test]
fn member_rect_matches_exact_for_boxes() {
    let small = Rectangle::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.1, 0.4, 0.2, 0.3]).unwrap();
    let big = Rectangle::new(
        small.center.clone(),
        small.halfwidths.iter().map(|h| 2.0 * h).collect(),
    )
    .unwrap();
    let cfg = ProbeConfig {
        tol: 1e-10,
        ..Default::default()
    };
    let exact = hausdorff_rect_rect(&big.halfwidths, &small.halfwidths, &[0.0; 4])
        .unwrap()
        .d2;
    let est = hausdorff_member_rect(&big, &big.center, &small, &cfg).unwrap();
    assert!((est.d2 - exact).abs() <= 1e-8, "{} vs {exact}", est.d2);
    let same = hausdorff_member_rect(&small, &small.center, &small, &cfg).unwrap();
    assert!(same.d2 <= 1e-9);
}

/// Roots of `(A − Bβ)² = K² Σ_i (a_i − b_i β)²`, with `a_i = x_i y_i` and
/// `b_i = x_i²`: the endpoints of the one-dimensional self-normalized set.
fn p1_interval(s: &RegressionSample, k: f64) -> (f64, f64) {
    let (mut sa, mut sb, mut saa, mut sab, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..s.n() {
        let x = s.x()[(i, 0)];
        let (a, b) = (x * s.y()[i], x * x);
        sa += a;
        sb += b;
        saa += a * a;
        sab += a * b;
        sbb += b * b;
    }
    let qa = sb * sb - k * k * sbb;
    let qb = -2.0 * (sa * sb - k * k * sab);
    let qc = sa * sa - k * k * saa;
    let disc = (qb * qb - 4.0 * qa * qc).sqrt();
    let (r1, r2) = ((-qb - disc) / (2.0 * qa), (-qb + disc) / (2.0 * qa));
    (r1.min(r2), r1.max(r2))
}

#[test]
fn p1_sets_match_closed_form_intervals() {
    let s = linear_sample(18, 400, &[1.5], 1.0);
    let rec = calibrate_reclin(&s, 0.1, 2000, 3).unwrap();
    let a = rec.analysis_sample.clone().unwrap();
    let (lo, hi) = p1_interval(&a, rec.khat_value());
    let center = least_squares(a.x(), a.y()).unwrap();
    let cfg = ProbeConfig {
        random_directions: 0,
        tol: 1e-10,
        scale: 0.1,
        ..Default::default()
    };
    let g = diameter_estimate(&rec, &center, &cfg).unwrap();
    assert!(
        (g.diam2 - (hi - lo)).abs() <= 1e-8,
        "{} vs {}",
        g.diam2,
        hi - lo
    );

    let oracle = WaldOracle {
        sigma: Mat::identity(1),
        vstar: Mat::identity(1),
    };
    let wald = calibrate_wald(&a, rec.khat.clone(), Some(&oracle))
        .unwrap()
        .rectangle()
        .unwrap();
    let (wl, wh) = (
        wald.center[0] - wald.halfwidths[0],
        wald.center[0] + wald.halfwidths[0],
    );
    let exact = (lo - wl).abs().max((hi - wh).abs());
    let est = hausdorff_member_rect(&rec, &wald.center, &wald, &cfg).unwrap();
    assert!((est.d2 - exact).abs() <= 1e-8, "{} vs {exact}", est.d2);
}

#[test]
fn quadratic_misspecification_keeps_beta0() {
    let mut spec = DgpSpec::standard(1_000_000, 3);
    spec.misspec = Misspec::Quadratic { coordinate: 1 };
    spec.beta0 = vec![0.5, -1.0, 2.0];
    spec.seed = 19;
    let s = dgp_generate(&spec).unwrap();
    let fit = least_squares(s.x(), s.y()).unwrap();
    let m = sandwich_variance(&s, &fit).unwrap();
    let gram_inv = naive_inverse(&s.x().scaled_gram().to_rows());
    let cov = naive_matmul(&naive_matmul(&gram_inv, &m.to_rows()), &gram_inv);
    for j in 0..3 {
        let se = (cov[j][j] / 1e6).sqrt();
        assert!(
            (fit[j] - spec.beta0[j]).abs() <= 3.0 * se,
            "coordinate {j}: {} vs {}",
            fit[j],
            spec.beta0[j]
        );
    }
}

#[test]
fn bonferroni_and_sidak_match_bisection() {
    for p in [1usize, 2, 5, 10, 20, 100] {
        let b = bonferroni_quantile(0.05, p).unwrap().khat;
        assert!((b - bisect_quantile(1.0 - 0.05 / (2.0 * p as f64))).abs() < 1e-9);
        let s = sidak_quantile(0.05, p).unwrap().khat;
        let target = 0.5 * (1.0 + 0.95f64.powf(1.0 / p as f64));
        assert!((s - bisect_quantile(target)).abs() < 1e-8);
    }
    assert!((sidak_quantile(0.05, 10).unwrap().khat - 2.799625).abs() < 1e-6);
}
