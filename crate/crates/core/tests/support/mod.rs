//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use koopfit::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Conditional mean and variance of the OU transition over time `t`.
pub fn ou_moments(x: f64, theta: &[f64], t: f64) -> (f64, f64) {
    let e = (-theta[0] * t).exp();
    let m = theta[1] + (x - theta[1]) * e;
    let s2 = theta[2] * theta[2] * (1.0 - e * e) / (2.0 * theta[0]);
    (m, s2)
}

/// `E[exp(−l²(X_t − c)²) | X_0 = x]` for OU: a Gaussian convolution.
pub fn ou_koopman_rbf(x: f64, c: f64, l: f64, theta: &[f64], t: f64) -> f64 {
    let (m, s2) = ou_moments(x, theta, t);
    let q = 1.0 + 2.0 * l * l * s2;
    (-l * l * (m - c) * (m - c) / q).exp() / q.sqrt()
}

pub fn rbf(x: f64, c: f64, l: f64) -> f64 {
    (-l * l * (x - c) * (x - c)).exp()
}

/// `(1/T) Σ_k (K^t ψ_i)(x_k) ψ_j(x_k)`, laid out like the cross matrix.
pub fn analytic_cross(centers: &[f64], l: f64, theta: &[f64], t: f64, xs: &[f64]) -> DMatrix<f64> {
    let n = centers.len();
    let mut out = DMatrix::zeros(n, n);
    for &x in xs {
        for i in 0..n {
            let k = ou_koopman_rbf(x, centers[i], l, theta, t);
            for j in 0..n {
                out[(i, j)] += k * rbf(x, centers[j], l);
            }
        }
    }
    out / xs.len() as f64
}

/// `∫ (K^t ψ_i) ψ_j dμ` for `μ = N(mean, var)`, by composite Simpson over ±12 sd.
pub fn analytic_cross_gaussian(
    centers: &[f64],
    l: f64,
    theta: &[f64],
    t: f64,
    mean: f64,
    var: f64,
) -> DMatrix<f64> {
    let n = centers.len();
    let sd = var.sqrt();
    let (a, b) = (mean - 12.0 * sd, mean + 12.0 * sd);
    let m = 20_000;
    let h = (b - a) / m as f64;
    let mut out = DMatrix::zeros(n, n);
    for k in 0..=m {
        let x = a + h * k as f64;
        let w = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let dens = (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt();
        for i in 0..n {
            let kv = ou_koopman_rbf(x, centers[i], l, theta, t);
            for j in 0..n {
                out[(i, j)] += w * dens * kv * rbf(x, centers[j], l);
            }
        }
    }
    out * (h / 3.0)
}

/// `E[X_t²]` for the bounded mean-reversion SDE, from the moment ODE
/// `m' = 2θ2 − (4θ1 + 2θ2) m`.
pub fn bmr_second_moment(x0: f64, theta: &[f64], t: f64) -> f64 {
    let rate = 4.0 * theta[0] + 2.0 * theta[1];
    let m_inf = 2.0 * theta[1] / rate;
    m_inf + (x0 * x0 - m_inf) * (-rate * t).exp()
}

/// Euler–Maruyama for the bounded mean-reversion SDE, clamped into (−1, 1).
/// Returns the endpoint of each path at time `horizon`.
pub fn bmr_euler_endpoints(theta: &[f64], x0: f64, dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Vec<f64> {
    let steps = (horizon / dt).round() as usize;
    let sq = dt.sqrt();
    let lim = 1.0 - 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_paths)
        .map(|_| {
            let mut x = x0;
            for _ in 0..steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                let vol = (2.0 * theta[1] * (1.0 - x * x)).max(0.0).sqrt();
                x += -2.0 * theta[0] * x * dt + vol * sq * z;
                x = x.clamp(-lim, lim);
            }
            x
        })
        .collect()
}

pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Prints the per-criterion verdict line.
pub fn report(id: &str, pass: bool, detail: &str) -> bool {
    println!("{} criterion {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}
