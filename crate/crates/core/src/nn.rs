//! Minimal differentiable MLP engine.
//!
//! Networks are plain ReLU MLPs described by an [`MlpSpec`], with all weights
//! flattened into a [`ParamVector`] (row-major weight matrix then bias, per
//! layer). Forward passes, action-distribution heads, and exact reverse-mode
//! gradients of scalar losses are implemented by hand; a central
//! finite-difference checker ([`finite_diff_check`]) verifies the analytic
//! gradients independently.
//!
//! All math is in `f64`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Output head of a network.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Softmax over `n_actions` logits.
    Categorical { n_actions: usize },
    /// Gaussian with learned mean, fixed std, squashed through tanh.
    /// Actions live in (-1, 1)^action_dim.
    SquashedGaussian { action_dim: usize, std: f64 },
    /// Single scalar output (critics, density means of dim 1, ...).
    Scalar,
}

impl Head {
    pub fn output_dim(&self) -> usize {
        match self {
            Head::Categorical { n_actions } => *n_actions,
            Head::SquashedGaussian { action_dim, .. } => *action_dim,
            Head::Scalar => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Head::Categorical { n_actions } if *n_actions < 1 => {
                Err(Error::InvalidArg("categorical head needs n_actions >= 1".into()))
            }
            Head::SquashedGaussian { action_dim, std } => {
                if *action_dim < 1 {
                    return Err(Error::InvalidArg("gaussian head needs action_dim >= 1".into()));
                }
                if !(*std > 0.0) {
                    return Err(Error::InvalidArg(format!("gaussian std must be > 0, got {std}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Architecture of one MLP: dims plus output head. The parameter count is a
/// pure function of the spec.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, head: Head) -> Result<Self> {
        if input_dim < 1 || hidden.iter().any(|&h| h < 1) {
            return Err(Error::InvalidArg("all layer dims must be >= 1".into()));
        }
        head.validate()?;
        Ok(Self { input_dim, hidden, head })
    }

    pub fn output_dim(&self) -> usize {
        self.head.output_dim()
    }

    /// (in, out) of every dense layer, input to head.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim()));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer,
    /// weights and biases alike.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamVector {
        let mut values = Vec::with_capacity(self.param_count());
        for (fan_in, fan_out) in self.layer_dims() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out + fan_out {
                values.push(rng.gen_range(-bound..bound));
            }
        }
        ParamVector::new(values)
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimMismatch {
                what: "param vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        Ok(())
    }

    fn check_input(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.input_dim {
            return Err(Error::DimMismatch {
                what: "network input",
                expected: self.input_dim,
                got: obs.len(),
            });
        }
        Ok(())
    }

    /// Forward pass: distribution parameters (logits / pre-squash mean / scalar).
    pub fn forward(&self, params: &ParamVector, obs: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        self.check_input(obs)?;
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let p = params.as_slice();
        let mut x = obs.to_vec();
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &p[offset..offset + fan_in * fan_out];
            let b = &p[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let mut z = vec![0.0; fan_out];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let mut acc = b[j];
                for i in 0..fan_in {
                    acc += row[i] * x[i];
                }
                z[j] = if l < last { acc.max(0.0) } else { acc };
            }
            x = z;
        }
        Ok(x)
    }

    /// Forward pass keeping every activation, for [`MlpSpec::backward`].
    pub fn forward_cached(&self, params: &ParamVector, obs: &[f64]) -> Result<FwdCache> {
        self.check_params(params)?;
        self.check_input(obs)?;
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        let p = params.as_slice();
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(dims.len() + 1);
        acts.push(obs.to_vec());
        let mut offset = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &p[offset..offset + fan_in * fan_out];
            let b = &p[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let x = acts.last().unwrap();
            let mut z = vec![0.0; fan_out];
            for j in 0..fan_out {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let mut acc = b[j];
                for i in 0..fan_in {
                    acc += row[i] * x[i];
                }
                z[j] = if l < last { acc.max(0.0) } else { acc };
            }
            acts.push(z);
        }
        Ok(FwdCache { activations: acts })
    }

    /// Reverse pass. Accumulates `scale * dL/dparams` into `grad` given
    /// `d_output = dL/d(head input)`, and returns `scale * dL/d(obs)`.
    ///
    /// `grad` must have the same length as the params; panics otherwise
    /// (programmer error, not a recoverable condition).
    pub fn backward(
        &self,
        params: &ParamVector,
        cache: &FwdCache,
        d_output: &[f64],
        scale: f64,
        grad: &mut Gradient,
    ) -> Vec<f64> {
        let dims = self.layer_dims();
        let last = dims.len() - 1;
        assert_eq!(grad.len(), self.param_count(), "gradient buffer length");
        assert_eq!(d_output.len(), self.output_dim(), "d_output length");
        let p = params.as_slice();
        let g = grad.as_mut_slice();

        // Parameter offset of each layer.
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }

        let mut delta = d_output.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            if l < last {
                // ReLU mask: activations[l + 1] is post-ReLU.
                let act = &cache.activations[l + 1];
                for j in 0..fan_out {
                    if act[j] <= 0.0 {
                        delta[j] = 0.0;
                    }
                }
            }
            let x = &cache.activations[l];
            let wg = &mut g[offsets[l]..offsets[l] + fan_in * fan_out + fan_out];
            for j in 0..fan_out {
                let dj = scale * delta[j];
                let row = &mut wg[j * fan_in..(j + 1) * fan_in];
                for i in 0..fan_in {
                    row[i] += dj * x[i];
                }
                wg[fan_in * fan_out + j] += dj;
            }
            // Propagate to previous layer.
            let w = &p[offsets[l]..offsets[l] + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for j in 0..fan_out {
                let dj = delta[j];
                if dj == 0.0 {
                    continue;
                }
                let row = &w[j * fan_in..(j + 1) * fan_in];
                for i in 0..fan_in {
                    prev[i] += row[i] * dj;
                }
            }
            delta = prev;
        }
        delta.iter_mut().for_each(|d| *d *= scale);
        delta
    }
}

/// Per-layer activations of one forward pass (input first, head input last).
#[derive(Debug, Clone)]
pub struct FwdCache {
    activations: Vec<Vec<f64>>,
}

impl FwdCache {
    /// Distribution parameters produced by the pass.
    pub fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Flat vector of all weights of one network, in spec layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len());
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// self += c * other
    pub fn add_scaled(&mut self, other: &ParamVector, c: f64) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// Gradient of a scalar loss w.r.t. a [`ParamVector`]; same length and layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// self += c * other
    pub fn add_scaled(&mut self, other: &Gradient, c: f64) {
        assert_eq!(self.len(), other.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.values.iter_mut().for_each(|v| *v *= c);
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Gradient {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// An action as passed to environments.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionValue {
    Discrete(usize),
    /// Squashed action, each component in (-1, 1).
    Continuous(Vec<f64>),
}

/// Result of sampling a head.
#[derive(Debug, Clone)]
pub struct SampledAction {
    pub action: ActionValue,
    pub log_prob: f64,
    /// Pre-squash Gaussian draw, kept so later log-prob evaluations of the
    /// same action avoid the atanh round trip.
    pub pre_squash: Option<Vec<f64>>,
}

const LN_2PI: f64 = 1.8378770664093453;

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// ln(1 - tanh(u)^2), computed without forming tanh(u).
fn ln_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

impl Head {
    /// Draw an action. Deterministic given the rng state.
    pub fn sample(&self, dist: &[f64], rng: &mut ChaCha8Rng) -> Result<SampledAction> {
        match self {
            Head::Categorical { n_actions } => {
                debug_assert_eq!(dist.len(), *n_actions);
                let probs = softmax(dist);
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut action = *n_actions - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        action = i;
                        break;
                    }
                }
                let log_prob = log_softmax(dist)[action];
                Ok(SampledAction {
                    action: ActionValue::Discrete(action),
                    log_prob,
                    pre_squash: None,
                })
            }
            Head::SquashedGaussian { action_dim, std } => {
                debug_assert_eq!(dist.len(), *action_dim);
                let mut u = Vec::with_capacity(*action_dim);
                let mut a = Vec::with_capacity(*action_dim);
                let mut log_prob = 0.0;
                for d in 0..*action_dim {
                    let z = standard_normal(rng);
                    let ud = dist[d] + std * z;
                    log_prob += -0.5 * ((ud - dist[d]) / std).powi(2)
                        - std.ln()
                        - 0.5 * LN_2PI
                        - ln_one_minus_tanh_sq(ud);
                    a.push(ud.tanh());
                    u.push(ud);
                }
                Ok(SampledAction {
                    action: ActionValue::Continuous(a),
                    log_prob,
                    pre_squash: Some(u),
                })
            }
            Head::Scalar => Err(Error::InvalidArg("scalar head has no action distribution".into())),
        }
    }

    /// Log-probability of a given action.
    ///
    /// For the squashed Gaussian the action must lie strictly inside (-1, 1);
    /// values within float distance of +-1 are clamped before atanh.
    pub fn log_prob(&self, dist: &[f64], action: &ActionValue) -> Result<f64> {
        match (self, action) {
            (Head::Categorical { n_actions }, ActionValue::Discrete(a)) => {
                if *a >= *n_actions {
                    return Err(Error::InvalidArg(format!(
                        "action index {a} out of range for {n_actions} actions"
                    )));
                }
                Ok(log_softmax(dist)[*a])
            }
            (Head::SquashedGaussian { action_dim, std }, ActionValue::Continuous(a)) => {
                if a.len() != *action_dim {
                    return Err(Error::DimMismatch {
                        what: "continuous action",
                        expected: *action_dim,
                        got: a.len(),
                    });
                }
                let mut lp = 0.0;
                for d in 0..*action_dim {
                    if a[d] <= -1.0 || a[d] >= 1.0 {
                        return Err(Error::InvalidArg(format!(
                            "squashed-Gaussian log-prob undefined at action {} outside (-1, 1)",
                            a[d]
                        )));
                    }
                    let ad = a[d].clamp(-(1.0 - 1e-12), 1.0 - 1e-12);
                    let u = ad.atanh();
                    lp += -0.5 * ((u - dist[d]) / std).powi(2)
                        - std.ln()
                        - 0.5 * LN_2PI
                        - ln_one_minus_tanh_sq(u);
                }
                Ok(lp)
            }
            (Head::Scalar, _) => Err(Error::InvalidArg("scalar head has no action distribution".into())),
            _ => Err(Error::InvalidArg("action kind does not match head".into())),
        }
    }

    /// Log-probability evaluated at a stored pre-squash draw (continuous heads).
    pub fn log_prob_pre_squash(&self, dist: &[f64], u: &[f64]) -> f64 {
        match self {
            Head::SquashedGaussian { action_dim, std } => {
                debug_assert_eq!(u.len(), *action_dim);
                let mut lp = 0.0;
                for d in 0..*action_dim {
                    lp += -0.5 * ((u[d] - dist[d]) / std).powi(2)
                        - std.ln()
                        - 0.5 * LN_2PI
                        - ln_one_minus_tanh_sq(u[d]);
                }
                lp
            }
            _ => panic!("log_prob_pre_squash only applies to continuous heads"),
        }
    }

    /// d log_prob / d dist-params, for an action expressed as (discrete index |
    /// pre-squash draw).
    pub fn d_log_prob(&self, dist: &[f64], action: &ActionValue, pre_squash: Option<&[f64]>) -> Vec<f64> {
        match self {
            Head::Categorical { .. } => {
                let a = match action {
                    ActionValue::Discrete(a) => *a,
                    _ => panic!("categorical head expects discrete action"),
                };
                let probs = softmax(dist);
                let mut d: Vec<f64> = probs.iter().map(|p| -p).collect();
                d[a] += 1.0;
                d
            }
            Head::SquashedGaussian { action_dim, std } => {
                let u: Vec<f64> = match (pre_squash, action) {
                    (Some(u), _) => u.to_vec(),
                    (None, ActionValue::Continuous(a)) => a
                        .iter()
                        .map(|x| x.clamp(-(1.0 - 1e-12), 1.0 - 1e-12).atanh())
                        .collect(),
                    _ => panic!("gaussian head expects continuous action"),
                };
                (0..*action_dim).map(|d| (u[d] - dist[d]) / (std * std)).collect()
            }
            Head::Scalar => panic!("scalar head has no action distribution"),
        }
    }

    /// Distribution entropy. For the fixed-std squashed Gaussian this is the
    /// entropy of the underlying Gaussian (constant in the mean), so its
    /// gradient w.r.t. the dist params is zero.
    pub fn entropy(&self, dist: &[f64]) -> f64 {
        match self {
            Head::Categorical { .. } => {
                let lp = log_softmax(dist);
                -lp.iter().map(|l| l.exp() * l).sum::<f64>()
            }
            Head::SquashedGaussian { action_dim, std } => {
                *action_dim as f64 * (0.5 * (LN_2PI + 1.0) + std.ln())
            }
            Head::Scalar => 0.0,
        }
    }

    /// d entropy / d dist-params.
    pub fn d_entropy(&self, dist: &[f64]) -> Vec<f64> {
        match self {
            Head::Categorical { .. } => {
                let lp = log_softmax(dist);
                let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
                lp.iter().map(|l| -l.exp() * (l + h)).collect()
            }
            _ => vec![0.0; dist.len()],
        }
    }

    /// Evaluation-time action rule: argmax for categorical, squashed mean for
    /// the Gaussian.
    pub fn deterministic_action(&self, dist: &[f64]) -> ActionValue {
        match self {
            Head::Categorical { .. } => {
                let mut best = 0;
                for (i, v) in dist.iter().enumerate() {
                    if *v > dist[best] {
                        best = i;
                    }
                }
                ActionValue::Discrete(best)
            }
            Head::SquashedGaussian { .. } => {
                ActionValue::Continuous(dist.iter().map(|m| m.tanh()).collect())
            }
            Head::Scalar => panic!("scalar head has no action"),
        }
    }
}

/// Standard normal draw via Box-Muller (two uniform draws, one result; the
/// second variate is discarded to keep the consumption pattern fixed).
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct FiniteDiffReport {
    /// max over coordinates of |analytic - numeric| / max(1, |numeric|)
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

/// Central-difference check of `analytic` against `loss` (step `h`,
/// default 1e-5). Diagnostic only; never fails.
pub fn finite_diff_check(
    params: &ParamVector,
    analytic: &Gradient,
    mut loss: impl FnMut(&ParamVector) -> f64,
    h: f64,
) -> FiniteDiffReport {
    assert!(h > 0.0);
    assert_eq!(params.len(), analytic.len());
    let mut report = FiniteDiffReport {
        max_rel_err: 0.0,
        worst_coord: 0,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    let mut work = params.clone();
    for i in 0..params.len() {
        let orig = params.as_slice()[i];
        work.as_mut_slice()[i] = orig + h;
        let up = loss(&work);
        work.as_mut_slice()[i] = orig - h;
        let down = loss(&work);
        work.as_mut_slice()[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.as_slice()[i];
        let rel = (a - numeric).abs() / numeric.abs().max(1.0);
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = i;
            report.analytic_at_worst = a;
            report.numeric_at_worst = numeric;
        }
    }
    report
}

pub const FD_DEFAULT_STEP: f64 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn cat_spec(input: usize, hidden: Vec<usize>, n: usize) -> MlpSpec {
        MlpSpec::new(input, hidden, Head::Categorical { n_actions: n }).unwrap()
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let spec = cat_spec(3, vec![4], 5);
        let params = ParamVector::zeros(spec.param_count());
        let logits = spec.forward(&params, &[0.3, -1.0, 2.0]).unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
        let probs = softmax(&logits);
        for p in probs {
            assert!((p - 0.2).abs() < 1e-15);
        }
        // Entropy of the uniform distribution is ln(n) (up to float summation).
        let h = spec.head.entropy(&logits);
        assert!((h - (5.0f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn identity_single_layer() {
        // 2 -> 2 linear layer (no hidden), identity weights, zero bias.
        let spec = cat_spec(2, vec![], 2);
        let mut params = ParamVector::zeros(spec.param_count());
        params.as_mut_slice()[0] = 1.0; // W[0][0]
        params.as_mut_slice()[3] = 1.0; // W[1][1]
        let out = spec.forward(&params, &[0.3, -0.2]).unwrap();
        assert_eq!(out, vec![0.3, -0.2]);
    }

    #[test]
    fn two_layer_hand_computed_forward() {
        // 2 -> 2 (ReLU) -> 1, hand-chosen weights.
        let spec = MlpSpec::new(2, vec![2], Head::Scalar).unwrap();
        // layer0: W = [[0.5, -1.0], [0.25, 0.5]], b = [0.1, -0.2]
        // layer1: W = [[2.0, -1.0]], b = [0.05]
        let params = ParamVector::new(vec![0.5, -1.0, 0.25, 0.5, 0.1, -0.2, 2.0, -1.0, 0.05]);
        let obs = [0.4, 0.2];
        // z0 = 0.5*0.4 - 1.0*0.2 + 0.1 = 0.1 ; z1 = 0.25*0.4 + 0.5*0.2 - 0.2 = -0.0
        // relu -> (0.1, 0.0); out = 2.0*0.1 - 1.0*0.0 + 0.05 = 0.25
        let out = spec.forward(&params, &obs).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = cat_spec(3, vec![4], 2);
        let params = ParamVector::zeros(spec.param_count());
        assert!(matches!(
            spec.forward(&params, &[1.0, 2.0]),
            Err(Error::DimMismatch { .. })
        ));
        let bad = ParamVector::zeros(spec.param_count() + 1);
        assert!(matches!(
            spec.forward(&bad, &[1.0, 2.0, 3.0]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn uniform_logits_log_prob() {
        let head = Head::Categorical { n_actions: 4 };
        let lp = head.log_prob(&[0.7, 0.7, 0.7, 0.7], &ActionValue::Discrete(2)).unwrap();
        assert!((lp - (0.25f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_log_prob() {
        let head = Head::Categorical { n_actions: 2 };
        let lp = head.log_prob(&[1000.0, 0.0], &ActionValue::Discrete(0)).unwrap();
        assert!(lp.abs() < 1e-9);
        let lp1 = head.log_prob(&[1000.0, 0.0], &ActionValue::Discrete(1)).unwrap();
        assert!((lp1 + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn logit_shift_invariance() {
        let head = Head::Categorical { n_actions: 3 };
        let logits = [0.3, -0.7, 1.2];
        let shifted: Vec<f64> = logits.iter().map(|l| l + 123.456).collect();
        for a in 0..3 {
            let l0 = head.log_prob(&logits, &ActionValue::Discrete(a)).unwrap();
            let l1 = head.log_prob(&shifted, &ActionValue::Discrete(a)).unwrap();
            assert!((l0 - l1).abs() < 1e-12);
        }
    }

    #[test]
    fn action_index_out_of_range() {
        let head = Head::Categorical { n_actions: 3 };
        assert!(head.log_prob(&[0.0, 0.0, 0.0], &ActionValue::Discrete(3)).is_err());
    }

    #[test]
    fn squashed_gaussian_rejects_out_of_range_actions() {
        let head = Head::SquashedGaussian { action_dim: 1, std: 0.5 };
        assert!(head.log_prob(&[0.0], &ActionValue::Continuous(vec![1.0])).is_err());
        assert!(head.log_prob(&[0.0], &ActionValue::Continuous(vec![-1.3])).is_err());
    }

    #[test]
    fn squashed_gaussian_density_oracle() {
        // Independent change-of-variables computation: for a = tanh(u),
        // p_A(a) = N(atanh a; mean, std) / (1 - a^2).
        let head = Head::SquashedGaussian { action_dim: 1, std: 0.5 };
        for &(mean, a) in &[(0.0, 0.0), (0.3, 0.5), (-1.0, -0.8)] {
            let lp = head.log_prob(&[mean], &ActionValue::Continuous(vec![a])).unwrap();
            let u = (a as f64).atanh();
            let normal_pdf =
                (-0.5 * ((u - mean) / 0.5f64).powi(2)).exp() / (0.5 * (2.0 * std::f64::consts::PI).sqrt());
            let oracle = (normal_pdf / (1.0 - a * a)).ln();
            assert!(
                (lp - oracle).abs() < 1e-9,
                "mean={mean} a={a}: {lp} vs oracle {oracle}"
            );
        }
        // Spot value: mean 0, std 0.5, action 0 -> log N(0;0,0.5) = -ln(0.5*sqrt(2pi)).
        let lp = head.log_prob(&[0.0], &ActionValue::Continuous(vec![0.0])).unwrap();
        let expect = -(0.5 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((lp - expect).abs() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_given_rng_state() {
        let spec = cat_spec(2, vec![4], 3);
        let mut init_rng = rng::stream(1, "init");
        let params = spec.init_params(&mut init_rng);
        let logits = spec.forward(&params, &[0.5, -0.5]).unwrap();
        let mut r1 = rng::stream(9, "a");
        let mut r2 = rng::stream(9, "a");
        for _ in 0..32 {
            let s1 = spec.head.sample(&logits, &mut r1).unwrap();
            let s2 = spec.head.sample(&logits, &mut r2).unwrap();
            assert_eq!(s1.action, s2.action);
            assert_eq!(s1.log_prob, s2.log_prob);
        }
        let head = Head::SquashedGaussian { action_dim: 2, std: 0.3 };
        let s1 = head.sample(&[0.1, -0.2], &mut r1).unwrap();
        let mut r3 = r2.clone();
        let s2 = head.sample(&[0.1, -0.2], &mut r3).unwrap();
        assert_eq!(s1.action, s2.action);
    }

    #[test]
    fn pre_squash_log_prob_matches_atanh_path() {
        let head = Head::SquashedGaussian { action_dim: 1, std: 0.4 };
        let mut r = rng::stream(5, "s");
        let s = head.sample(&[0.2], &mut r).unwrap();
        let via_action = head.log_prob(&[0.2], &s.action).unwrap();
        let via_u = head.log_prob_pre_squash(&[0.2], s.pre_squash.as_ref().unwrap());
        assert!((via_action - via_u).abs() < 1e-8);
        assert!((s.log_prob - via_u).abs() < 1e-12);
    }

    #[test]
    fn quadratic_loss_gradient_is_params() {
        // loss = 0.5 ||params||^2 -> grad = params. Backprop is not involved;
        // this exercises the finite-diff harness on an exactly known gradient.
        let spec = cat_spec(3, vec![5, 4], 2);
        let mut r = rng::stream(2, "init");
        let params = spec.init_params(&mut r);
        let grad = Gradient::from(params.as_slice().to_vec());
        let report = finite_diff_check(
            &params,
            &grad,
            |p| 0.5 * p.as_slice().iter().map(|v| v * v).sum::<f64>(),
            FD_DEFAULT_STEP,
        );
        assert!(report.max_rel_err < 1e-8, "err {}", report.max_rel_err);
    }

    #[test]
    fn softmax_log_prob_gradient_matches_hand_derivation() {
        // One linear layer, categorical head. loss = -log pi(a | obs).
        // d loss / d logit_j = softmax_j - 1{j == a}; weight grads follow by
        // the outer product with obs.
        let spec = cat_spec(2, vec![], 3);
        let params = ParamVector::new(vec![0.2, -0.1, 0.0, 0.4, -0.3, 0.25, 0.05, -0.05, 0.1]);
        let obs = [0.7, -0.4];
        let action = 1usize;
        let cache = spec.forward_cached(&params, &obs).unwrap();
        let probs = softmax(cache.output());
        let mut d_out: Vec<f64> = probs.clone();
        d_out[action] -= 1.0; // d(-logp)/dlogits
        let mut grad = Gradient::zeros(spec.param_count());
        spec.backward(&params, &cache, &d_out, 1.0, &mut grad);
        // Hand check a few coordinates: dW[j][i] = (p_j - 1{j=a}) * obs_i.
        for j in 0..3 {
            for i in 0..2 {
                let expect = (probs[j] - if j == action { 1.0 } else { 0.0 }) * obs[i];
                let got = grad.as_slice()[j * 2 + i];
                assert!((got - expect).abs() < 1e-12);
            }
            let expect_b = probs[j] - if j == action { 1.0 } else { 0.0 };
            assert!((grad.as_slice()[6 + j] - expect_b).abs() < 1e-12);
        }
    }

    #[test]
    fn backprop_matches_finite_differences_on_random_nets() {
        // Random spec/params/loss triples; loss = -log pi(a|obs) summed over a
        // small batch, plus entropy. Checked for categorical and gaussian heads.
        let mut meta = rng::stream(42, "fd-meta");
        for trial in 0..30 {
            let input = 2 + (meta.gen::<u64>() % 3) as usize;
            let h1 = 3 + (meta.gen::<u64>() % 3) as usize;
            let gaussian = trial % 3 == 2;
            let spec = if gaussian {
                MlpSpec::new(input, vec![h1], Head::SquashedGaussian { action_dim: 2, std: 0.6 }).unwrap()
            } else {
                cat_spec(input, vec![h1, 3], 4)
            };
            let mut ir = rng::stream(100 + trial, "fd-init");
            let params = spec.init_params(&mut ir);
            let mut batch = Vec::new();
            let mut ar = rng::stream(200 + trial, "fd-act");
            for _ in 0..4 {
                let obs: Vec<f64> = (0..input).map(|_| ar.gen_range(-1.0..1.0)).collect();
                let dist = spec.forward(&params, &obs).unwrap();
                let s = spec.head.sample(&dist, &mut ar).unwrap();
                batch.push((obs, s));
            }
            // Analytic gradient of sum over batch of (-logp - 0.1 * entropy).
            let mut grad = Gradient::zeros(spec.param_count());
            for (obs, s) in &batch {
                let cache = spec.forward_cached(&params, obs).unwrap();
                let mut d = spec.head.d_log_prob(cache.output(), &s.action, s.pre_squash.as_deref());
                let de = spec.head.d_entropy(cache.output());
                for (dd, e) in d.iter_mut().zip(de) {
                    *dd = -*dd - 0.1 * e;
                }
                spec.backward(&params, &cache, &d, 1.0, &mut grad);
            }
            let report = finite_diff_check(
                &params,
                &grad,
                |p| {
                    batch
                        .iter()
                        .map(|(obs, s)| {
                            let dist = spec.forward(p, obs).unwrap();
                            let lp = match &s.pre_squash {
                                Some(u) => spec.head.log_prob_pre_squash(&dist, u),
                                None => spec.head.log_prob(&dist, &s.action).unwrap(),
                            };
                            -lp - 0.1 * spec.head.entropy(&dist)
                        })
                        .sum()
                },
                FD_DEFAULT_STEP,
            );
            assert!(
                report.max_rel_err < 1e-4,
                "trial {trial}: rel err {} at coord {}",
                report.max_rel_err,
                report.worst_coord
            );
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let spec = MlpSpec::new(2, vec![3], Head::Scalar).unwrap();
        let mut r = rng::stream(7, "init");
        let params = spec.init_params(&mut r);
        let obs = [0.5, -0.25];
        let cache = spec.forward_cached(&params, &obs).unwrap();
        let mut grad = Gradient::zeros(spec.param_count());
        spec.backward(&params, &cache, &[1.0], 1.0, &mut grad);
        let corrupt_at = 4;
        grad.as_mut_slice()[corrupt_at] += 1.0;
        let report = finite_diff_check(
            &params,
            &grad,
            |p| spec.forward(p, &obs).unwrap()[0],
            FD_DEFAULT_STEP,
        );
        assert_eq!(report.worst_coord, corrupt_at);
        assert!((report.max_rel_err - 1.0).abs() < 1e-3, "err {}", report.max_rel_err);
    }

    #[test]
    fn backward_returns_input_gradient() {
        // d(out)/d(obs) for a linear net is the weight matrix row.
        let spec = MlpSpec::new(2, vec![], Head::Scalar).unwrap();
        let params = ParamVector::new(vec![0.3, -0.7, 0.1]);
        let obs = [0.9, 0.4];
        let cache = spec.forward_cached(&params, &obs).unwrap();
        let mut grad = Gradient::zeros(spec.param_count());
        let d_in = spec.backward(&params, &cache, &[1.0], 1.0, &mut grad);
        assert!((d_in[0] - 0.3).abs() < 1e-15);
        assert!((d_in[1] + 0.7).abs() < 1e-15);
    }
}
