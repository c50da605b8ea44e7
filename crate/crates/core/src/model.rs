//! Multinomial logistic regression and a one-hidden-layer ReLU network, with
//! hand-derived gradients.
//!
//! Flat parameter layout, layer by layer, weights row-major then biases:
//!
//! * MLR: `W[C × D]`, then `b[C]` when `bias` is set.
//! * MLP1: `W1[H × D]`, `b1[H]`, `W2[C × H]`, `b2[C]`.
//!
//! `loss` is the mean softmax cross-entropy over the batch. For MLR it also
//! carries `l2_coeff / 2 · ‖params‖²`; `l2_coeff` is ignored for MLP1.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CgpflError, Result};
use crate::params::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlr,
    Mlp1,
}

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_L2: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub l2_coeff: f64,
    /// Bias terms. Always present for MLP1; optional for MLR.
    pub bias: bool,
}

impl ModelSpec {
    pub fn mlr(input_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlr,
            input_dim,
            hidden_dim: 0,
            num_classes,
            l2_coeff: DEFAULT_L2,
            bias: true,
        }
    }

    pub fn mlp1(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp1,
            input_dim,
            hidden_dim,
            num_classes,
            l2_coeff: 0.0,
            bias: true,
        }
    }

    pub fn with_l2(mut self, l2_coeff: f64) -> Self {
        self.l2_coeff = l2_coeff;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(CgpflError::config(
                "model input_dim and num_classes must be positive",
            ));
        }
        if self.kind == ModelKind::Mlp1 && self.hidden_dim == 0 {
            return Err(CgpflError::config("mlp1 needs hidden_dim > 0"));
        }
        if !(self.l2_coeff >= 0.0 && self.l2_coeff.is_finite()) {
            return Err(CgpflError::config("l2_coeff must be finite and >= 0"));
        }
        Ok(())
    }

    /// Flat parameter dimension `d`.
    pub fn dim(&self) -> usize {
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::Mlr => c * d + if self.bias { c } else { 0 },
            ModelKind::Mlp1 => h * d + h + c * h + c,
        }
    }

    fn effective_l2(&self) -> f64 {
        match self.kind {
            ModelKind::Mlr => self.l2_coeff,
            ModelKind::Mlp1 => 0.0,
        }
    }

    /// Uniform `[-s, s]` initialization with `s = 1/sqrt(fan_in)` per layer.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut out = Vec::with_capacity(self.dim());
        let mut push_layer = |n: usize, fan_in: usize, out: &mut Vec<f64>| {
            let s = 1.0 / (fan_in as f64).sqrt();
            out.extend((0..n).map(|_| rng.random_range(-s..=s)));
        };
        let (d, c, h) = (self.input_dim, self.num_classes, self.hidden_dim);
        match self.kind {
            ModelKind::Mlr => {
                push_layer(c * d, d, &mut out);
                if self.bias {
                    push_layer(c, d, &mut out);
                }
            }
            ModelKind::Mlp1 => {
                push_layer(h * d + h, d, &mut out);
                push_layer(c * h + c, h, &mut out);
            }
        }
        ParamVector::from_vec(out)
    }
}

/// A borrowed view of `b` samples: row-major features plus labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub features: &'a [f64],
    pub labels: &'a [usize],
    pub input_dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], labels: &'a [usize], input_dim: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(CgpflError::config("batch must contain at least one sample"));
        }
        if features.len() != labels.len() * input_dim {
            return Err(CgpflError::DimensionMismatch {
                what: "batch features",
                expected: labels.len() * input_dim,
                found: features.len(),
            });
        }
        Ok(Batch {
            features,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }
}

fn check_inputs(spec: &ModelSpec, params: &[f64], batch: &Batch<'_>) -> Result<()> {
    if params.len() != spec.dim() {
        return Err(CgpflError::DimensionMismatch {
            what: "parameter vector",
            expected: spec.dim(),
            found: params.len(),
        });
    }
    if batch.input_dim != spec.input_dim {
        return Err(CgpflError::DimensionMismatch {
            what: "batch input_dim",
            expected: spec.input_dim,
            found: batch.input_dim,
        });
    }
    if let Some(&bad) = batch.labels.iter().find(|&&y| y >= spec.num_classes) {
        return Err(CgpflError::config(format!(
            "label {bad} out of range for {} classes",
            spec.num_classes
        )));
    }
    Ok(())
}

/// Computes `out[r] = Σ_j w[r*cols + j] * x[j] (+ bias[r])`.
fn affine(w: &[f64], bias: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        if let Some(b) = bias {
            acc += b[r];
        }
        *o = acc;
    }
}

/// Converts logits into probabilities in place (max-shifted).
fn softmax_in_place(logits: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - m).exp();
        z += *l;
    }
    for l in logits.iter_mut() {
        *l /= z;
    }
}

/// Log-sum-exp form of the per-sample cross-entropy, which stays finite when
/// the correct-class probability underflows.
fn xent_only(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    m + z.ln() - logits[label]
}

struct Layout {
    w1: std::ops::Range<usize>,
    b1: Option<std::ops::Range<usize>>,
    w2: std::ops::Range<usize>,
    b2: std::ops::Range<usize>,
}

impl Layout {
    fn mlp(spec: &ModelSpec) -> Self {
        let (d, c, h) = (spec.input_dim, spec.num_classes, spec.hidden_dim);
        let w1 = 0..h * d;
        let b1 = w1.end..w1.end + h;
        let w2 = b1.end..b1.end + c * h;
        let b2 = w2.end..w2.end + c;
        Layout {
            w1,
            b1: Some(b1),
            w2,
            b2,
        }
    }

    fn mlr(spec: &ModelSpec) -> Self {
        let (d, c) = (spec.input_dim, spec.num_classes);
        let w1 = 0..c * d;
        Layout {
            b1: spec.bias.then(|| c * d..c * d + c),
            w1,
            w2: 0..0,
            b2: 0..0,
        }
    }
}

fn logits_into(spec: &ModelSpec, params: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
    match spec.kind {
        ModelKind::Mlr => {
            let l = Layout::mlr(spec);
            affine(&params[l.w1], l.b1.map(|r| &params[r]), x, logits);
        }
        ModelKind::Mlp1 => {
            let l = Layout::mlp(spec);
            affine(&params[l.w1], l.b1.map(|r| &params[r]), x, hidden);
            for h in hidden.iter_mut() {
                *h = h.max(0.0);
            }
            affine(&params[l.w2], Some(&params[l.b2]), hidden, logits);
        }
    }
}

/// Mean cross-entropy over the batch, plus the MLR weight decay.
pub fn loss(spec: &ModelSpec, params: &[f64], batch: &Batch<'_>) -> Result<f64> {
    check_inputs(spec, params, batch)?;
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut logits = vec![0.0; spec.num_classes];
    let mut total = 0.0;
    for i in 0..batch.len() {
        logits_into(spec, params, batch.row(i), &mut hidden, &mut logits);
        total += xent_only(&logits, batch.labels[i]);
    }
    let mut value = total / batch.len() as f64;
    let l2 = spec.effective_l2();
    if l2 > 0.0 {
        let sq: f64 = params.iter().map(|p| p * p).sum();
        value += 0.5 * l2 * sq;
    }
    if !value.is_finite() {
        return Err(CgpflError::numerical(format!("loss evaluated to {value}")));
    }
    Ok(value)
}

/// Gradient of [`loss`] with respect to the flat parameters.
pub fn grad(spec: &ModelSpec, params: &[f64], batch: &Batch<'_>) -> Result<ParamVector> {
    check_inputs(spec, params, batch)?;
    let mut g = vec![0.0; params.len()];
    let c = spec.num_classes;
    let mut logits = vec![0.0; c];
    match spec.kind {
        ModelKind::Mlr => {
            let l = Layout::mlr(spec);
            for i in 0..batch.len() {
                let x = batch.row(i);
                affine(&params[l.w1.clone()], l.b1.clone().map(|r| &params[r]), x, &mut logits);
                softmax_in_place(&mut logits);
                logits[batch.labels[i]] -= 1.0;
                for (k, &gk) in logits.iter().enumerate() {
                    let row = &mut g[k * spec.input_dim..(k + 1) * spec.input_dim];
                    for (gw, xj) in row.iter_mut().zip(x) {
                        *gw += gk * xj;
                    }
                }
                if let Some(b) = l.b1.clone() {
                    for (gb, gk) in g[b].iter_mut().zip(&logits) {
                        *gb += gk;
                    }
                }
            }
        }
        ModelKind::Mlp1 => {
            let l = Layout::mlp(spec);
            let h = spec.hidden_dim;
            let b1 = l.b1.clone().expect("mlp has hidden bias");
            let mut pre = vec![0.0; h];
            let mut act = vec![0.0; h];
            let mut dh = vec![0.0; h];
            for i in 0..batch.len() {
                let x = batch.row(i);
                affine(&params[l.w1.clone()], Some(&params[b1.clone()]), x, &mut pre);
                for (a, p) in act.iter_mut().zip(&pre) {
                    *a = p.max(0.0);
                }
                affine(&params[l.w2.clone()], Some(&params[l.b2.clone()]), &act, &mut logits);
                softmax_in_place(&mut logits);
                logits[batch.labels[i]] -= 1.0;

                dh.iter_mut().for_each(|v| *v = 0.0);
                let w2 = &params[l.w2.clone()];
                for (k, &gk) in logits.iter().enumerate() {
                    let off = l.w2.start + k * h;
                    for j in 0..h {
                        g[off + j] += gk * act[j];
                        dh[j] += w2[k * h + j] * gk;
                    }
                    g[l.b2.start + k] += gk;
                }
                for j in 0..h {
                    if pre[j] <= 0.0 {
                        continue;
                    }
                    let off = j * spec.input_dim;
                    for (gw, xv) in g[off..off + spec.input_dim].iter_mut().zip(x) {
                        *gw += dh[j] * xv;
                    }
                    g[b1.start + j] += dh[j];
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    let l2 = spec.effective_l2();
    for (gi, p) in g.iter_mut().zip(params) {
        *gi = *gi * inv + l2 * p;
    }
    let g = ParamVector::from_vec(g);
    g.check_finite("gradient")?;
    Ok(g)
}

fn check_prox(theta: &[f64], omega: &[f64], lambda: f64) -> Result<()> {
    if theta.len() != omega.len() {
        return Err(CgpflError::DimensionMismatch {
            what: "generalized model",
            expected: theta.len(),
            found: omega.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(CgpflError::config("lambda must be >= 0"));
    }
    Ok(())
}

/// `loss(θ) + λ/2 · ‖θ − ω‖²`
pub fn personalized_objective(
    spec: &ModelSpec,
    theta: &[f64],
    omega: &[f64],
    batch: &Batch<'_>,
    lambda: f64,
) -> Result<f64> {
    check_prox(theta, omega, lambda)?;
    let base = loss(spec, theta, batch)?;
    if lambda == 0.0 {
        return Ok(base);
    }
    Ok(base + 0.5 * lambda * crate::params::sq_dist(theta, omega))
}

/// `∇loss(θ) + λ(θ − ω)`
pub fn personalized_grad(
    spec: &ModelSpec,
    theta: &[f64],
    omega: &[f64],
    batch: &Batch<'_>,
    lambda: f64,
) -> Result<ParamVector> {
    check_prox(theta, omega, lambda)?;
    let mut g = grad(spec, theta, batch)?;
    for ((gi, t), w) in g.iter_mut().zip(theta).zip(omega) {
        *gi += lambda * (t - w);
    }
    g.check_finite("personalized gradient")?;
    Ok(g)
}

/// Anything that maps a feature row to a class index.
pub trait Classifier {
    fn predict(&self, x: &[f64]) -> usize;
}

/// A model spec paired with concrete parameters.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a [f64],
}

impl Classifier for Model<'_> {
    fn predict(&self, x: &[f64]) -> usize {
        let mut hidden = vec![0.0; self.spec.hidden_dim];
        let mut logits = vec![0.0; self.spec.num_classes];
        logits_into(self.spec, self.params, x, &mut hidden, &mut logits);
        argmax(&logits)
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn batch<'a>(f: &'a [f64], l: &'a [usize], d: usize) -> Batch<'a> {
        Batch::new(f, l, d).unwrap()
    }

    #[test]
    fn dims() {
        assert_eq!(ModelSpec::mlr(784, 10).dim(), 7850);
        assert_eq!(ModelSpec::mlr(2, 3).without_bias().dim(), 6);
        assert_eq!(ModelSpec::mlp1(784, 128, 10).dim(), 784 * 128 + 128 + 1280 + 10);
    }

    #[test]
    fn zero_mlr_loss_is_log_c() {
        for c in [2usize, 3, 10] {
            let spec = ModelSpec::mlr(4, c).with_l2(0.3);
            let f = [0.5, -1.0, 2.0, 0.1, 3.0, 3.0, -2.0, 0.0];
            let l = [0, c - 1];
            let v = loss(&spec, &vec![0.0; spec.dim()], &batch(&f, &l, 4)).unwrap();
            assert_eq!(v, (c as f64).ln());
        }
    }

    #[test]
    fn duplicated_sample_same_mean_loss() {
        let spec = ModelSpec::mlp1(3, 5, 4);
        let p = spec.init_params(&mut stream_rng(3, 0));
        let once = [0.2, -0.4, 1.0];
        let twice = [0.2, -0.4, 1.0, 0.2, -0.4, 1.0];
        let a = loss(&spec, &p, &batch(&once, &[2], 3)).unwrap();
        let b = loss(&spec, &p, &batch(&twice, &[2, 2], 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_zero_feature_sum_gives_zero_weight_grad() {
        // two samples per class, features per class sum to zero
        let spec = ModelSpec::mlr(2, 2).with_l2(0.0);
        let f = [1.0, 2.0, -1.0, -2.0, 3.0, 0.5, -3.0, -0.5];
        let l = [0, 0, 1, 1];
        let g = grad(&spec, &vec![0.0; spec.dim()], &batch(&f, &l, 2)).unwrap();
        assert!(g[..4].iter().all(|&v| v == 0.0), "{g:?}");
    }

    #[test]
    fn zero_features_leave_only_l2_on_weights() {
        let c = 0.25;
        let spec = ModelSpec::mlr(3, 2).with_l2(c);
        let p = spec.init_params(&mut stream_rng(9, 0));
        let f = [0.0; 6];
        let g = grad(&spec, &p, &batch(&f, &[0, 1], 3)).unwrap();
        for i in 0..6 {
            assert!((g[i] - c * p[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn personalized_terms() {
        let spec = ModelSpec::mlr(2, 3);
        let theta = spec.init_params(&mut stream_rng(1, 0));
        let f = [0.3, -0.7];
        let b = batch(&f, &[1], 2);
        let base = loss(&spec, &theta, &b).unwrap();
        assert_eq!(personalized_objective(&spec, &theta, &theta, &b, 12.0).unwrap(), base);
        let omega = ParamVector::zeros(spec.dim());
        assert_eq!(personalized_objective(&spec, &theta, &omega, &b, 0.0).unwrap(), base);

        let mut shifted = theta.clone();
        shifted[0] -= 1.0;
        let v = personalized_objective(&spec, &theta, &shifted, &b, 12.0).unwrap();
        assert_eq!(v, base + 6.0);

        let g = grad(&spec, &theta, &b).unwrap();
        assert_eq!(personalized_grad(&spec, &theta, &theta, &b, 12.0).unwrap(), g);
        let pg = personalized_grad(&spec, &theta, &shifted, &b, 2.0).unwrap();
        assert_eq!(pg[0], g[0] + 2.0);
        assert_eq!(&pg[1..], &g[1..]);
    }

    #[test]
    fn rejects_bad_dims_and_labels() {
        let spec = ModelSpec::mlr(2, 3);
        let f = [0.0, 1.0];
        assert!(matches!(
            loss(&spec, &[0.0; 3], &batch(&f, &[0], 2)),
            Err(CgpflError::DimensionMismatch { .. })
        ));
        assert!(loss(&spec, &vec![0.0; spec.dim()], &batch(&f, &[3], 2))
            .unwrap_err()
            .is_config());
        assert!(Batch::new(&f, &[], 2).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let spec = ModelSpec::mlr(1, 2).without_bias().with_l2(0.0);
        let p = [1e3, -1e3];
        let f = [1e3];
        let v = loss(&spec, &p, &batch(&f, &[1], 1)).unwrap();
        assert!((v - 2e6).abs() < 1e-6);
        assert!(grad(&spec, &p, &batch(&f, &[1], 1)).unwrap().is_finite());
    }

    #[test]
    fn init_is_bounded_and_deterministic() {
        let spec = ModelSpec::mlp1(16, 4, 3);
        let a = spec.init_params(&mut stream_rng(5, 1));
        let b = spec.init_params(&mut stream_rng(5, 1));
        assert_eq!(a, b);
        let (w1_end, w2_start) = (16 * 4 + 4, 16 * 4 + 4);
        assert!(a[..w1_end].iter().all(|v| v.abs() <= 0.25));
        assert!(a[w2_start..].iter().all(|v| v.abs() <= 0.5));
    }
}
