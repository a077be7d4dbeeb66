//! Parameter-space subspaces: anchor sets, simplex weights, convex and
//! Bezier mixing, and the squared-cosine anchor-divergence penalty.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Gradient, ParamVector};

/// How anchors are combined into a single parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixMode {
    /// Weighted sum over the simplex. N=2 is the line-of-policies case.
    Convex,
    /// Quadratic Bezier curve through 3 anchors (Bernstein weights).
    Bezier3,
}

/// A point on the (N-1)-simplex selecting one policy in the subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeight {
    w: Vec<f64>,
    /// Generating scalar for N=2 lines and Bezier curves.
    scalar_z: Option<f64>,
}

impl SimplexWeight {
    pub fn new(w: Vec<f64>, scalar_z: Option<f64>) -> Result<Self> {
        if w.len() < 1 {
            return Err(Error::InvalidArg("simplex weight needs at least one component".into()));
        }
        if w.iter().any(|&x| x < -1e-12 || x > 1.0 + 1e-12) {
            return Err(Error::InvalidArg(format!("simplex weight out of [0,1]: {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArg(format!("simplex weight sums to {sum}, not 1")));
        }
        Ok(Self { w, scalar_z })
    }

    /// Vertex e_k of the N-simplex.
    pub fn vertex(n: usize, k: usize) -> Self {
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        let scalar_z = match (n, k) {
            (2, 0) => Some(1.0), // w = (z, 1-z)
            (2, 1) => Some(0.0),
            _ => None,
        };
        Self { w, scalar_z }
    }

    /// Line/Bezier weight generated by a scalar z in [0, 1].
    pub fn from_scalar(mode: MixMode, z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::InvalidArg(format!("scalar z must be in [0,1], got {z}")));
        }
        match mode {
            MixMode::Convex => Ok(Self { w: vec![z, 1.0 - z], scalar_z: Some(z) }),
            MixMode::Bezier3 => Ok(bezier3_weights(z)?),
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn scalar_z(&self) -> Option<f64> {
        self.scalar_z
    }

    /// The value appended to critic inputs: the generating scalar when one
    /// exists, otherwise the full weight vector.
    pub fn embed(&self) -> Vec<f64> {
        match self.scalar_z {
            Some(z) => vec![z],
            None => self.w.clone(),
        }
    }

    /// Dimension of [`SimplexWeight::embed`] for a given mode and anchor count.
    pub fn embed_dim(mode: MixMode, n_anchors: usize) -> usize {
        match (mode, n_anchors) {
            (MixMode::Bezier3, _) | (MixMode::Convex, 2) => 1,
            (MixMode::Convex, n) => n,
        }
    }
}

/// Bernstein weights of the quadratic Bezier curve: ((1-z)^2, 2(1-z)z, z^2).
pub fn bezier3_weights(z: f64) -> Result<SimplexWeight> {
    if !(0.0..=1.0).contains(&z) {
        return Err(Error::InvalidArg(format!("bezier parameter must be in [0,1], got {z}")));
    }
    let omz = 1.0 - z;
    Ok(SimplexWeight {
        w: vec![omz * omz, 2.0 * omz * z, z * z],
        scalar_z: Some(z),
    })
}

/// N anchor parameter vectors plus the mixing mode and the weight of the
/// anti-collapse penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<ParamVector>,
    mix_mode: MixMode,
    beta: f64,
}

impl AnchorSet {
    pub fn new(anchors: Vec<ParamVector>, mix_mode: MixMode, beta: f64) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::InvalidArg("anchor set needs N >= 2".into()));
        }
        if mix_mode == MixMode::Bezier3 && anchors.len() != 3 {
            return Err(Error::InvalidArg(format!(
                "Bezier3 requires exactly 3 anchors, got {}",
                anchors.len()
            )));
        }
        let p = anchors[0].len();
        for (i, a) in anchors.iter().enumerate() {
            if a.len() != p {
                return Err(Error::DimMismatch { what: "anchor", expected: p, got: a.len() });
            }
            if !a.is_finite() {
                return Err(Error::NonFinite { term: "anchor", value: f64::NAN });
            }
            let _ = i;
        }
        if !(beta >= 0.0) {
            return Err(Error::InvalidArg(format!("beta must be >= 0, got {beta}")));
        }
        Ok(Self { anchors, mix_mode, beta })
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn param_count(&self) -> usize {
        self.anchors[0].len()
    }

    pub fn mix_mode(&self) -> MixMode {
        self.mix_mode
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn anchor(&self, k: usize) -> &ParamVector {
        &self.anchors[k]
    }

    pub fn anchors(&self) -> &[ParamVector] {
        &self.anchors
    }

    pub fn anchor_mut(&mut self, k: usize) -> &mut ParamVector {
        &mut self.anchors[k]
    }

    /// sum_k w_k * anchor_k.
    pub fn mix(&self, weight: &SimplexWeight) -> Result<ParamVector> {
        mix_anchors(self, weight)
    }
}

/// Elementwise convex combination of the anchors.
pub fn mix_anchors(set: &AnchorSet, weight: &SimplexWeight) -> Result<ParamVector> {
    if weight.len() != set.n_anchors() {
        return Err(Error::DimMismatch {
            what: "simplex weight",
            expected: set.n_anchors(),
            got: weight.len(),
        });
    }
    let mut out = ParamVector::zeros(set.param_count());
    for (k, a) in set.anchors.iter().enumerate() {
        out.add_scaled(a, weight.as_slice()[k]);
    }
    Ok(out)
}

/// One uniform draw over the subspace: scalar Uniform[0,1] for lines and
/// Bezier curves, Dirichlet(1,...,1) for the N>=3 convex hull.
pub fn sample_simplex_weight(mode: MixMode, n: usize, rng: &mut ChaCha8Rng) -> SimplexWeight {
    assert!(n >= 2);
    match (mode, n) {
        (MixMode::Convex, 2) | (MixMode::Bezier3, _) => {
            let z: f64 = rng.gen();
            SimplexWeight::from_scalar(mode, z).expect("z in [0,1)")
        }
        (MixMode::Convex, n) => {
            // Dirichlet(1,..,1) via normalized Exp(1) draws.
            let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
            let sum: f64 = e.iter().sum();
            SimplexWeight { w: e.into_iter().map(|x| x / sum).collect(), scalar_z: None }
        }
    }
}

/// K weights uniformly spread over the subspace, endpoints included.
///
/// N=2 and Bezier use the scalar grid z_i = i/(K-1) (K=1 gives the midpoint).
/// The N>=3 convex hull uses the coarsest triangular lattice with at least K
/// nodes, enumerated lexicographically and truncated.
pub fn grid_weights(mode: MixMode, n: usize, k: usize) -> Vec<SimplexWeight> {
    assert!(n >= 2);
    assert!(k >= 1);
    match (mode, n) {
        (MixMode::Convex, 2) | (MixMode::Bezier3, _) => scalar_grid(k)
            .into_iter()
            .map(|z| SimplexWeight::from_scalar(mode, z).expect("grid z in [0,1]"))
            .collect(),
        (MixMode::Convex, n) => {
            if k == 1 {
                let w = vec![1.0 / n as f64; n];
                return vec![SimplexWeight { w, scalar_z: None }];
            }
            // Smallest lattice resolution m with C(m + n - 1, n - 1) >= k.
            let mut m = 1usize;
            while lattice_size(m, n) < k {
                m += 1;
            }
            let mut out = Vec::with_capacity(k);
            enumerate_compositions(m, n, &mut vec![0; n], 0, &mut |comp| {
                if out.len() < k {
                    let w: Vec<f64> = comp.iter().map(|&c| c as f64 / m as f64).collect();
                    out.push(SimplexWeight { w, scalar_z: None });
                }
            });
            out
        }
    }
}

/// Scalar evaluation grid: i/(K-1), with the K=1 midpoint convention.
pub fn scalar_grid(k: usize) -> Vec<f64> {
    if k == 1 {
        vec![0.5]
    } else {
        (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
    }
}

/// Prefix-nested scalar grids: the first K elements of a fixed
/// dyadic-refinement sequence (0.5, then endpoints, then midpoints of every
/// dyadic interval, level by level). Any K' >= K prefix is a superset of the
/// K prefix, which makes best-of-K sweeps monotone on deterministic
/// environments. The K=1 and K=5 prefixes coincide with [`scalar_grid`] as
/// sets.
pub fn nested_scalar_grid(k: usize) -> Vec<f64> {
    let mut seq = vec![0.5, 0.0, 1.0];
    let mut denom = 4u64;
    while seq.len() < k {
        let mut num = 1;
        while num < denom && seq.len() < k + denom as usize {
            seq.push(num as f64 / denom as f64);
            num += 2;
        }
        denom *= 2;
    }
    seq.truncate(k);
    seq
}

fn lattice_size(m: usize, n: usize) -> usize {
    // C(m + n - 1, n - 1)
    let mut num = 1usize;
    let mut den = 1usize;
    for i in 0..n - 1 {
        num *= m + n - 1 - i;
        den *= i + 1;
    }
    num / den
}

fn enumerate_compositions(
    remaining: usize,
    slots: usize,
    prefix: &mut Vec<usize>,
    depth: usize,
    f: &mut impl FnMut(&[usize]),
) {
    if depth == slots - 1 {
        prefix[depth] = remaining;
        f(prefix);
        return;
    }
    for c in (0..=remaining).rev() {
        prefix[depth] = c;
        enumerate_compositions(remaining - c, slots, prefix, depth + 1, f);
    }
}

/// Squared cosine between two vectors.
fn cos_sq(a: &ParamVector, b: &ParamVector) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c * c
}

/// Anti-collapse penalty C = sum over unordered anchor pairs of
/// cos^2(anchor_i, anchor_j), with its exact gradient per anchor.
///
/// Each pair is counted once; a doubled convention only rescales beta.
pub fn cosine_sq_penalty(set: &AnchorSet) -> Result<(f64, Vec<Gradient>)> {
    let n = set.n_anchors();
    for (idx, a) in set.anchors.iter().enumerate() {
        if a.norm() == 0.0 {
            return Err(Error::ZeroNormAnchor { index: idx });
        }
    }
    let p = set.param_count();
    let mut total = 0.0;
    let mut grads: Vec<Gradient> = (0..n).map(|_| Gradient::zeros(p)).collect();
    for i in 0..n {
        for j in i + 1..n {
            let a = &set.anchors[i];
            let b = &set.anchors[j];
            let na = a.norm();
            let nb = b.norm();
            let c = a.dot(b) / (na * nb);
            total += c * c;
            // d(c^2)/da = 2c * (b/(|a||b|) - c*a/|a|^2), symmetric in b.
            let ga = grads[i].as_mut_slice();
            for t in 0..p {
                ga[t] += 2.0 * c * (b.as_slice()[t] / (na * nb) - c * a.as_slice()[t] / (na * na));
            }
            let gb = grads[j].as_mut_slice();
            for t in 0..p {
                gb[t] += 2.0 * c * (a.as_slice()[t] / (na * nb) - c * b.as_slice()[t] / (nb * nb));
            }
        }
    }
    Ok((total, grads))
}

/// Pairwise diagnostics for logging: cos^2 and L2 distance matrices.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CollapseMetrics {
    /// Upper-triangle (i < j) pairs in row order.
    pub cos_sq: Vec<f64>,
    pub l2: Vec<f64>,
}

pub fn collapse_metrics(set: &AnchorSet) -> CollapseMetrics {
    let n = set.n_anchors();
    let mut cos = Vec::new();
    let mut l2 = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let a = &set.anchors[i];
            let b = &set.anchors[j];
            cos.push(cos_sq(a, b));
            let mut d = a.clone();
            d.add_scaled(b, -1.0);
            l2.push(d.norm());
        }
    }
    CollapseMetrics { cos_sq: cos, l2 }
}
