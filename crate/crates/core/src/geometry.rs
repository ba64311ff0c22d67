//! Similarity functions between features and proxies, and the proxy learners
//! that turn a small set of learnable vectors into one proxy per class.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, CplError, Result};

/// Bound applied to `cos γ` before taking `arccos` in the semicircular layout.
pub const SEMICIRCLE_COS_CLAMP: f64 = 1.0 - 1e-7;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unit(v: &[f64], what: &str) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(CplError::DegenerateVector(format!("{what} has norm {n}")));
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Similarity between an embedding and a proxy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Similarity {
    /// `-log(1 + ‖f − p‖²)`, the Student-t kernel in log form.
    EuclideanT,
    /// `s · cos(f, p)` with `s > 1`.
    Cosine { scale: f64 },
    /// `-‖f − p‖`; only used as an ablation.
    NegEuclidean,
}

/// Partial derivatives of one similarity evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGrad {
    pub wrt_feature: Vec<f64>,
    pub wrt_proxy: Vec<f64>,
    /// Set when the derivative does not exist at the evaluation point
    /// (negative Euclidean distance at `f = p`); both gradients are zero then.
    pub singular: bool,
}

impl Similarity {
    pub fn validate(&self) -> Result<()> {
        if let Similarity::Cosine { scale } = *self {
            if !(scale > 1.0) || !scale.is_finite() {
                return Err(CplError::config(format!(
                    "cosine scale must satisfy s > 1, got {scale}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_cosine(&self) -> bool {
        matches!(self, Similarity::Cosine { .. })
    }

    pub fn eval(&self, f: &[f64], p: &[f64]) -> Result<f64> {
        match *self {
            Similarity::EuclideanT => sim_euclidean_t(f, p),
            Similarity::Cosine { scale } => sim_cosine(f, p, scale),
            Similarity::NegEuclidean => sim_neg_euclidean(f, p),
        }
    }

    pub fn grad(&self, f: &[f64], p: &[f64]) -> Result<SimilarityGrad> {
        check_dims(f, p)?;
        match *self {
            Similarity::EuclideanT => {
                let u = sq_dist(f, p);
                let c = 2.0 / (1.0 + u);
                let wrt_feature: Vec<f64> = f.iter().zip(p).map(|(a, b)| -c * (a - b)).collect();
                let wrt_proxy = wrt_feature.iter().map(|g| -g).collect();
                Ok(SimilarityGrad {
                    wrt_feature,
                    wrt_proxy,
                    singular: false,
                })
            }
            Similarity::Cosine { scale } => {
                let nf = norm(f);
                let np = norm(p);
                if nf == 0.0 || np == 0.0 {
                    return Err(CplError::DegenerateVector(
                        "cosine similarity of a zero-norm vector".into(),
                    ));
                }
                let cos = dot(f, p) / (nf * np);
                let wrt_feature = f
                    .iter()
                    .zip(p)
                    .map(|(fi, pi)| scale * (pi / (nf * np) - cos * fi / (nf * nf)))
                    .collect();
                let wrt_proxy = f
                    .iter()
                    .zip(p)
                    .map(|(fi, pi)| scale * (fi / (nf * np) - cos * pi / (np * np)))
                    .collect();
                Ok(SimilarityGrad {
                    wrt_feature,
                    wrt_proxy,
                    singular: false,
                })
            }
            Similarity::NegEuclidean => {
                let dist = sq_dist(f, p).sqrt();
                if dist == 0.0 {
                    return Ok(SimilarityGrad {
                        wrt_feature: vec![0.0; f.len()],
                        wrt_proxy: vec![0.0; f.len()],
                        singular: true,
                    });
                }
                let wrt_feature: Vec<f64> =
                    f.iter().zip(p).map(|(a, b)| -(a - b) / dist).collect();
                let wrt_proxy = wrt_feature.iter().map(|g| -g).collect();
                Ok(SimilarityGrad {
                    wrt_feature,
                    wrt_proxy,
                    singular: false,
                })
            }
        }
    }
}

pub fn sim_euclidean_t(f: &[f64], p: &[f64]) -> Result<f64> {
    check_dims(f, p)?;
    Ok(-sq_dist(f, p).ln_1p())
}

pub fn sim_cosine(f: &[f64], p: &[f64], scale: f64) -> Result<f64> {
    check_dims(f, p)?;
    let nf = norm(f);
    let np = norm(p);
    if nf == 0.0 || np == 0.0 {
        return Err(CplError::DegenerateVector(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok(scale * dot(f, p) / (nf * np))
}

pub fn sim_neg_euclidean(f: &[f64], p: &[f64]) -> Result<f64> {
    check_dims(f, p)?;
    Ok(-sq_dist(f, p).sqrt())
}

/// One proxy per ordinal class, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySet {
    proxies: Vec<Vec<f64>>,
}

impl ProxySet {
    pub fn new(proxies: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = proxies.first() else {
            return Err(CplError::config("proxy set must not be empty"));
        };
        let dim = first.len();
        if dim == 0 || proxies.iter().any(|p| p.len() != dim) {
            return Err(CplError::config("proxies must share a dimension >= 1"));
        }
        Ok(ProxySet { proxies })
    }

    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.proxies[0].len()
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.proxies[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.proxies.iter().map(Vec::as_slice)
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.proxies
    }
}

fn check_classes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(CplError::config(format!(
            "ordinal problems need K >= 2 classes, got {k}"
        )));
    }
    Ok(())
}

/// Linear layout: `p_k = k · v0`, so `p_0` sits at the origin and adjacent
/// proxies are `‖v0‖` apart.
pub fn gen_linear_proxies(v0: &[f64], num_classes: usize) -> Result<ProxySet> {
    check_classes(num_classes)?;
    if v0.is_empty() {
        return Err(CplError::config("v0 must have dimension >= 1"));
    }
    if norm(v0) == 0.0 {
        return Err(CplError::DegenerateVector("v0 has zero norm".into()));
    }
    let proxies = (0..num_classes)
        .map(|k| v0.iter().map(|x| k as f64 * x).collect())
        .collect();
    ProxySet::new(proxies)
}

/// Quantities shared by the semicircular forward and backward passes.
struct Semicircle {
    u0: Vec<f64>,
    u1: Vec<f64>,
    n0: f64,
    n1: f64,
    gamma: f64,
    sin_gamma: f64,
    beta: f64,
    clamped: bool,
}

impl Semicircle {
    fn new(v0: &[f64], v1: &[f64], num_classes: usize) -> Result<Self> {
        check_classes(num_classes)?;
        check_dims(v0, v1)?;
        let (u0, n0) = unit(v0, "v0")?;
        let (u1, n1) = unit(v1, "v1")?;
        let raw = dot(&u0, &u1);
        if 1.0 - raw.abs() <= f64::EPSILON {
            return Err(CplError::DegeneratePlane(
                "v0 and v1 are parallel or antiparallel".into(),
            ));
        }
        let cos = raw.clamp(-SEMICIRCLE_COS_CLAMP, SEMICIRCLE_COS_CLAMP);
        let gamma = cos.acos();
        Ok(Semicircle {
            u0,
            u1,
            n0,
            n1,
            gamma,
            sin_gamma: gamma.sin(),
            beta: std::f64::consts::PI / (num_classes - 1) as f64,
            clamped: cos != raw,
        })
    }

    /// Combination weights `(a_k, b_k)` of `p_k = a_k·v̂0 + b_k·v̂1`.
    fn weights(&self, k: usize) -> (f64, f64) {
        let kb = k as f64 * self.beta;
        (
            (self.gamma - kb).sin() / self.sin_gamma,
            kb.sin() / self.sin_gamma,
        )
    }

    fn proxies(&self, num_classes: usize) -> Vec<Vec<f64>> {
        (0..num_classes)
            .map(|k| {
                let (a, b) = self.weights(k);
                self.u0.iter().zip(&self.u1).map(|(x, y)| a * x + b * y).collect()
            })
            .collect()
    }
}

/// Semicircular layout: `K` unit proxies spanning a half circle in the plane of
/// `v0, v1`, starting at `v̂0` with an angular step of `π/(K−1)`.
pub fn gen_semicircular_proxies(v0: &[f64], v1: &[f64], num_classes: usize) -> Result<ProxySet> {
    let sc = Semicircle::new(v0, v1, num_classes)?;
    ProxySet::new(sc.proxies(num_classes))
}

/// Free layout: every class owns its proxy vector.
pub fn gen_free_proxies(vectors: &[Vec<f64>], num_classes: usize) -> Result<ProxySet> {
    if vectors.len() != num_classes {
        return Err(CplError::config(format!(
            "free layout expects {num_classes} vectors, got {}",
            vectors.len()
        )));
    }
    ProxySet::new(vectors.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayoutKind {
    HardLinear,
    HardSemicircular,
    SoftFree,
}

impl LayoutKind {
    /// Number of learnable parameter vectors `N`.
    pub fn param_count(&self, num_classes: usize) -> usize {
        match self {
            LayoutKind::HardLinear => 1,
            LayoutKind::HardSemicircular => 2,
            LayoutKind::SoftFree => num_classes,
        }
    }

    pub fn is_hard(&self) -> bool {
        !matches!(self, LayoutKind::SoftFree)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "value", rename_all = "kebab-case")]
pub enum NormMode {
    #[default]
    Learnable,
    /// `‖v0‖` is projected back to this value after every optimizer step.
    Fixed(f64),
}

/// The learnable vectors of a layout together with the rule that generates
/// proxies from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyLearner {
    pub layout: LayoutKind,
    pub num_classes: usize,
    #[serde(default)]
    pub norm_mode: NormMode,
    pub vectors: Vec<Vec<f64>>,
}

impl ProxyLearner {
    pub fn new(
        layout: LayoutKind,
        num_classes: usize,
        norm_mode: NormMode,
        vectors: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_classes(num_classes)?;
        let expected = layout.param_count(num_classes);
        if vectors.len() != expected {
            return Err(CplError::config(format!(
                "{layout:?} expects {expected} parameter vectors, got {}",
                vectors.len()
            )));
        }
        if let NormMode::Fixed(c) = norm_mode {
            if layout != LayoutKind::HardLinear {
                return Err(CplError::config("fixed norm mode applies to hard-linear only"));
            }
            if !(c > 0.0) || !c.is_finite() {
                return Err(CplError::config(format!("fixed v0 norm must be > 0, got {c}")));
            }
        }
        let learner = ProxyLearner {
            layout,
            num_classes,
            norm_mode,
            vectors,
        };
        learner.proxies()?;
        Ok(learner)
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn proxies(&self) -> Result<ProxySet> {
        match self.layout {
            LayoutKind::HardLinear => gen_linear_proxies(&self.vectors[0], self.num_classes),
            LayoutKind::HardSemicircular => {
                gen_semicircular_proxies(&self.vectors[0], &self.vectors[1], self.num_classes)
            }
            LayoutKind::SoftFree => gen_free_proxies(&self.vectors, self.num_classes),
        }
    }

    /// Pulls per-proxy gradients `dL/dp_k` back onto the parameter vectors.
    pub fn backward(&self, proxy_grads: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if proxy_grads.len() != self.num_classes {
            return Err(CplError::config("one gradient per proxy expected"));
        }
        let d = self.dim();
        match self.layout {
            LayoutKind::HardLinear => {
                let mut g = vec![0.0; d];
                for (k, gk) in proxy_grads.iter().enumerate() {
                    for (acc, x) in g.iter_mut().zip(gk) {
                        *acc += k as f64 * x;
                    }
                }
                Ok(vec![g])
            }
            LayoutKind::SoftFree => Ok(proxy_grads.to_vec()),
            LayoutKind::HardSemicircular => {
                let sc = Semicircle::new(&self.vectors[0], &self.vectors[1], self.num_classes)?;
                let s2 = sc.sin_gamma * sc.sin_gamma;
                let cos_gamma = sc.gamma.cos();
                let mut g_u0 = vec![0.0; d];
                let mut g_u1 = vec![0.0; d];
                let mut g_gamma = 0.0;
                for (k, gk) in proxy_grads.iter().enumerate() {
                    let (a, b) = sc.weights(k);
                    let skb = (k as f64 * sc.beta).sin();
                    let da = skb / s2;
                    let db = -skb * cos_gamma / s2;
                    for i in 0..d {
                        g_u0[i] += a * gk[i];
                        g_u1[i] += b * gk[i];
                        g_gamma += gk[i] * (da * sc.u0[i] + db * sc.u1[i]);
                    }
                }
                if !sc.clamped {
                    // γ = arccos(û0·û1)
                    let g_cos = -g_gamma / sc.sin_gamma;
                    for i in 0..d {
                        g_u0[i] += g_cos * sc.u1[i];
                        g_u1[i] += g_cos * sc.u0[i];
                    }
                }
                Ok(vec![
                    unit_backward(&sc.u0, sc.n0, &g_u0),
                    unit_backward(&sc.u1, sc.n1, &g_u1),
                ])
            }
        }
    }

    /// Applies the fixed-norm projection `v0 ← c·v0/‖v0‖` when enabled.
    pub fn project(&mut self) -> Result<()> {
        if let NormMode::Fixed(c) = self.norm_mode {
            let v0 = &mut self.vectors[0];
            let n = norm(v0);
            if n == 0.0 {
                return Err(CplError::DegenerateVector("cannot project zero v0".into()));
            }
            v0.iter_mut().for_each(|x| *x *= c / n);
        }
        Ok(())
    }

    pub fn v0_norm(&self) -> f64 {
        norm(&self.vectors[0])
    }
}

/// Gradient through `û = v/‖v‖`.
fn unit_backward(u: &[f64], n: f64, g: &[f64]) -> Vec<f64> {
    let radial = dot(g, u);
    g.iter().zip(u).map(|(gi, ui)| (gi - radial * ui) / n).collect()
}
