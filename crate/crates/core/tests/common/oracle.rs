//! Straight-line reference evaluation of the CPL formulas.
//!
//! Nothing here calls into the library. Proxies on the semicircle are built by
//! rotating inside a Gram-Schmidt basis, smoothing functions use plain
//! factorials and powers, and softmax is the textbook `exp / Σ exp`.

#![allow(dead_code)]

pub fn euclidean_t(f: &[f64], p: &[f64]) -> f64 {
    let u: f64 = f.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
    -(1.0 + u).ln()
}

pub fn cosine(f: &[f64], p: &[f64], s: f64) -> f64 {
    let d: f64 = f.iter().zip(p).map(|(a, b)| a * b).sum();
    let nf = f.iter().map(|a| a * a).sum::<f64>().sqrt();
    let np = p.iter().map(|a| a * a).sum::<f64>().sqrt();
    s * d / (nf * np)
}

pub fn neg_euclidean(f: &[f64], p: &[f64]) -> f64 {
    -f.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
pub enum Sim {
    EuclideanT,
    Cosine(f64),
    NegEuclidean,
}

pub fn sim(kind: Sim, f: &[f64], p: &[f64]) -> f64 {
    match kind {
        Sim::EuclideanT => euclidean_t(f, p),
        Sim::Cosine(s) => cosine(f, p, s),
        Sim::NegEuclidean => neg_euclidean(f, p),
    }
}

pub fn linear(v0: &[f64], k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|i| v0.iter().map(|x| i as f64 * x).collect()).collect()
}

pub fn semicircle(v0: &[f64], v1: &[f64], k: usize) -> Vec<Vec<f64>> {
    let n0 = v0.iter().map(|a| a * a).sum::<f64>().sqrt();
    let e0: Vec<f64> = v0.iter().map(|a| a / n0).collect();
    let proj: f64 = e0.iter().zip(v1).map(|(a, b)| a * b).sum();
    let w: Vec<f64> = v1.iter().zip(&e0).map(|(b, a)| b - proj * a).collect();
    let nw = w.iter().map(|a| a * a).sum::<f64>().sqrt();
    let e1: Vec<f64> = w.iter().map(|a| a / nw).collect();
    let step = std::f64::consts::PI / (k - 1) as f64;
    (0..k)
        .map(|i| {
            let t = i as f64 * step;
            e0.iter().zip(&e1).map(|(a, b)| t.cos() * a + t.sin() * b).collect()
        })
        .collect()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|x| x.exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

pub fn p_dist(kind: Sim, f: &[f64], proxies: &[Vec<f64>]) -> Vec<f64> {
    softmax(&proxies.iter().map(|p| sim(kind, f, p)).collect::<Vec<_>>())
}

pub fn q_dist(kind: Sim, k_star: usize, proxies: &[Vec<f64>]) -> Vec<f64> {
    p_dist(kind, &proxies[k_star], proxies)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

fn choose(n: usize, k: usize) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

pub fn poisson(k_star: usize, kk: usize, tau: f64) -> Vec<f64> {
    let lambda = k_star as f64 + 0.5;
    let e: Vec<f64> = (0..kk)
        .map(|i| (lambda.powi(i as i32) * (-lambda).exp() / factorial(i)).ln() / tau)
        .collect();
    softmax(&e)
}

pub fn binomial(k_star: usize, kk: usize, tau: f64) -> Vec<f64> {
    let n = kk - 1;
    let p = (2 * k_star + 1) as f64 / (2 * kk) as f64;
    let e: Vec<f64> = (0..kk)
        .map(|i| (choose(n, i) * p.powi(i as i32) * (1.0 - p).powi((n - i) as i32)).ln() / tau)
        .collect();
    softmax(&e)
}

pub fn exponential(k_star: usize, kk: usize, tau: f64) -> Vec<f64> {
    let w: Vec<f64> = (0..kk)
        .map(|i| (-((i as f64 - k_star as f64).abs()) / tau).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn triangular(k_star: usize, kk: usize, a: f64, b: f64) -> Vec<f64> {
    let far = (k_star as f64).max((kk - 1 - k_star) as f64);
    let w: Vec<f64> = (0..kk)
        .map(|i| a - (a - b) * (i as f64 - k_star as f64).abs() / far)
        .collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

/// `(1/K)·Σ q·ln(q/p)`.
pub fn kl_over_k(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .map(|(a, b)| if *a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum::<f64>()
        / q.len() as f64
}

pub fn loss_basic(kind: Sim, f: &[f64], k_star: usize, proxies: &[Vec<f64>]) -> f64 {
    kl_over_k(&q_dist(kind, k_star, proxies), &p_dist(kind, f, proxies))
}

pub fn loss_unimodal(kind: Sim, u: &[f64], k_star: usize, proxies: &[Vec<f64>]) -> f64 {
    kl_over_k(u, &q_dist(kind, k_star, proxies))
}

pub fn cross_entropy(kind: Sim, f: &[f64], k_star: usize, proxies: &[Vec<f64>]) -> f64 {
    -p_dist(kind, f, proxies)[k_star].ln()
}
