//! Helpers shared by the integration tests: seeded random inputs and
//! deliberately naive reference computations.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use selfnorm::estimating::RegressionSample;
use selfnorm::numlin::Mat;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

pub fn random_mat(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    Mat::new(rows, cols, normals(r, rows * cols)).unwrap()
}

/// `y = Xβ + noise·ε` with standard normal `X` and `ε`.
pub fn linear_sample(seed: u64, n: usize, beta: &[f64], noise: f64) -> RegressionSample {
    let mut r = rng(seed);
    let x = random_mat(&mut r, n, beta.len());
    let y = (0..n)
        .map(|i| {
            let xb: f64 = x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum();
            let e: f64 = StandardNormal.sample(&mut r);
            xb + noise * e
        })
        .collect();
    RegressionSample::new(x, y).unwrap()
}

pub fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.random_range(lo..hi)
}

/// Plain nested-loop product.
pub fn naive_matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for l in 0..k {
                out[i][j] += a[i][l] * b[l][j];
            }
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn naive_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for i in 0..n {
            if i != c {
                let f = m[i][c];
                let pivot_row = m[c].clone();
                for (v, pv) in m[i].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn naive_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    naive_inverse(a)
        .iter()
        .map(|row| row.iter().zip(b).map(|(x, y)| x * y).sum())
        .collect()
}

/// `max_j |Σ_i m_ij| / sqrt(Σ_i m_ij²)` by double loop, with 0/0 read as 0.
pub fn brute_stat(m: &[Vec<f64>]) -> f64 {
    let p = m[0].len();
    let mut best = 0.0f64;
    for j in 0..p {
        let mut s = 0.0;
        let mut q = 0.0;
        for row in m {
            s += row[j];
            q += row[j] * row[j];
        }
        let v = if q == 0.0 { 0.0 } else { s.abs() / q.sqrt() };
        best = best.max(v);
    }
    best
}

/// `Σ_i m_ik m_il / sqrt(Σ m_ik² Σ m_il²)` by double loop.
pub fn brute_corr(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = m[0].len();
    let mut g = vec![vec![0.0; p]; p];
    for k in 0..p {
        for l in 0..p {
            for row in m {
                g[k][l] += row[k] * row[l];
            }
        }
    }
    let mut c = vec![vec![0.0; p]; p];
    for k in 0..p {
        for l in 0..p {
            c[k][l] = g[k][l] / (g[k][k] * g[l][l]).sqrt();
        }
    }
    c
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &Mat) -> f64 {
    let mut d = 0.0f64;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            d = d.max((v - b[(i, j)]).abs());
        }
    }
    d
}

/// Φ⁻¹(u) by bisection on `0.5·erfc(−z/√2)`.
pub fn bisect_quantile(u: f64) -> f64 {
    let cdf = |z: f64| 0.5 * libm::erfc(-z / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Directed distance from box `A` to box `B` evaluated on a dense boundary
/// sample of `A`: a full grid on every face (edges and corners included)
/// plus uniform face points.
pub fn sampled_directed_box(
    a: &[f64],
    b: &[f64],
    offset: &[f64],
    grid: usize,
    extra: usize,
    r: &mut ChaCha8Rng,
) -> f64 {
    let p = a.len();
    let dist = |x: &[f64]| -> f64 {
        x.iter()
            .enumerate()
            .map(|(j, v)| {
                let e = ((v - offset[j]).abs() - b[j]).max(0.0);
                e * e
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut best = 0.0f64;
    let mut x = vec![0.0; p];
    for face in 0..p {
        for s in [-1.0, 1.0] {
            // Enumerate the grid over the remaining coordinates.
            let others: Vec<usize> = (0..p).filter(|&j| j != face).collect();
            let total = grid.pow(others.len() as u32);
            for code in 0..total {
                let mut c = code;
                x[face] = s * a[face];
                for &j in &others {
                    let t = (c % grid) as f64 / (grid - 1) as f64;
                    c /= grid;
                    x[j] = a[j] * (2.0 * t - 1.0);
                }
                best = best.max(dist(&x));
            }
        }
    }
    for _ in 0..extra {
        let face = r.random_range(0..p);
        for j in 0..p {
            x[j] = a[j] * r.random_range(-1.0..=1.0);
        }
        x[face] = if r.random::<bool>() {
            a[face]
        } else {
            -a[face]
        };
        best = best.max(dist(&x));
    }
    best
}
