//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use diffservo::world::{spherical_to_cartesian, FeaturePose};

pub fn norm3(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Scaled two-sample energy statistic `nm/(n+m) * E`.
pub fn energy_statistic(x: &[[f64; 2]], y: &[[f64; 2]]) -> f64 {
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mean_pair = |a: &[[f64; 2]], b: &[[f64; 2]]| {
        let mut s = 0.0;
        for p in a {
            for q in b {
                s += dist(p, q);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    let (n, m) = (x.len() as f64, y.len() as f64);
    let e = 2.0 * mean_pair(x, y) - mean_pair(x, x) - mean_pair(y, y);
    n * m / (n + m) * e
}

/// Builds the N+1 points of the straight slide explicitly and sums their
/// discounted negative norms.
pub fn slide_return(r0: [f64; 3], rn: [f64; 3], discount: f64, n: usize) -> f64 {
    let mut points = Vec::new();
    for k in 0..=n {
        let a = k as f64 / n as f64;
        points.push([
            r0[0] + a * (rn[0] - r0[0]),
            r0[1] + a * (rn[1] - r0[1]),
            r0[2] + a * (rn[2] - r0[2]),
        ]);
    }
    points
        .iter()
        .enumerate()
        .map(|(k, p)| -discount.powi(k as i32) * norm3(*p))
        .sum()
}

pub fn target_frame(fp: &FeaturePose) -> [f64; 3] {
    let b = spherical_to_cartesian(fp.r, fp.theta, fp.phi);
    let (s, c) = fp.gamma.sin_cos();
    [c * b[0] - s * b[1], s * b[0] + c * b[1], b[2]]
}

/// `KL(N(mu, sigma^2) || N(0, 1))` by composite Simpson integration of
/// `q log(q / p)` over +-14 sigma.
pub fn kl_numeric_1d(mu: f64, sigma: f64) -> f64 {
    let q = |x: f64| (-(x - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let log_ratio = |x: f64| -(x - mu).powi(2) / (2.0 * sigma * sigma) - sigma.ln() + x * x / 2.0;
    let (a, b) = (mu - 14.0 * sigma, mu + 14.0 * sigma);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let f = |x: f64| q(x) * log_ratio(x);
    let mut s = f(a) + f(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    s * h / 3.0
}
