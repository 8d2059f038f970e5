//! Density-ratio estimates r(s,a) = d^E(s,a) / d^U(s,a).
//!
//! Tabular data is handled by counting. Otherwise a logistic classifier
//! separates expert from suboptimal samples and the ratio is read off its
//! logit: with c = sigmoid(z), c / (1 - c) = exp(z).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetBody, TransitionDataset};
use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, Head, Mlp, OptimizerState, DEFAULT_HIDDEN};

pub const DEFAULT_CLIP: (f64, f64) = (1e-4, 1e4);

/// c / (1 - c) for a classifier probability strictly inside (0, 1).
pub fn link(c: f64) -> Result<f64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(invalid(format!("classifier output {c} must lie strictly inside (0, 1)")));
    }
    Ok(c / (1.0 - c))
}

fn check_clip(clip: (f64, f64)) -> Result<()> {
    if !(clip.0 > 0.0 && clip.0 <= clip.1 && clip.1.is_finite()) {
        return Err(invalid(format!("clip bounds {clip:?} must satisfy 0 < lo <= hi < inf")));
    }
    Ok(())
}

/// Ratio table over (s, a) pairs, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularRatio {
    num_actions: usize,
    values: Vec<f64>,
    clip: (f64, f64),
    clipped: usize,
}

impl TabularRatio {
    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.ln()).collect()
    }

    pub fn clip_bounds(&self) -> (f64, f64) {
        self.clip
    }

    /// Number of entries moved by clipping.
    pub fn clipped_count(&self) -> usize {
        self.clipped
    }

    /// Σ w(s,a) r(s,a) / Σ w(s,a); equals 1 for the suboptimal counts when
    /// nothing was clipped or smoothed.
    pub fn expectation_under(&self, weights: &[f64]) -> Result<f64> {
        if weights.len() != self.values.len() {
            return Err(Error::ShapeMismatch("weights do not match ratio table".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(invalid("weights have no mass"));
        }
        Ok(weights.iter().zip(&self.values).map(|(w, r)| w * r).sum::<f64>() / total)
    }

    /// Per-record ratios for a tabular dataset.
    pub fn for_records(&self, data: &TransitionDataset) -> Result<Vec<f64>> {
        let tab = data.tabular()?;
        if tab.num_actions != self.num_actions || tab.num_states != self.num_states() {
            return Err(Error::ShapeMismatch("dataset and ratio table disagree on shape".into()));
        }
        Ok(tab.records.iter().map(|t| self.get(t.state, t.action)).collect())
    }
}

/// Smoothed count ratio
/// `((n_E + k) / (N_E + kK)) / ((n_U + k) / (N_U + kK))`, clipped.
/// Pairs seen in neither dataset get ratio 1.
pub fn tabular_ratio(
    counts_e: &[f64],
    counts_u: &[f64],
    num_actions: usize,
    smoothing: f64,
    clip: (f64, f64),
) -> Result<TabularRatio> {
    if counts_e.len() != counts_u.len() || num_actions == 0 || counts_e.len() % num_actions != 0 {
        return Err(Error::ShapeMismatch(format!(
            "count tables of length {} and {} with {num_actions} actions",
            counts_e.len(),
            counts_u.len()
        )));
    }
    if !(smoothing >= 0.0) || counts_e.iter().chain(counts_u).any(|c| !(*c >= 0.0)) {
        return Err(invalid("counts and smoothing must be nonnegative"));
    }
    check_clip(clip)?;
    let k = counts_e.len() as f64;
    let n_e: f64 = counts_e.iter().sum::<f64>() + smoothing * k;
    let n_u: f64 = counts_u.iter().sum::<f64>() + smoothing * k;
    if n_e <= 0.0 || n_u <= 0.0 {
        return Err(invalid("both count tables need mass"));
    }
    let mut values = Vec::with_capacity(counts_e.len());
    let mut clipped = 0;
    for (i, (&ce, &cu)) in counts_e.iter().zip(counts_u).enumerate() {
        let pe = (ce + smoothing) / n_e;
        let pu = (cu + smoothing) / n_u;
        let raw = if pu > 0.0 {
            pe / pu
        } else if pe == 0.0 {
            1.0
        } else {
            return Err(Error::SupportViolation {
                index: i,
                detail: format!(
                    "pair (s={}, a={}) appears in the expert data but not in the suboptimal data",
                    i / num_actions,
                    i % num_actions
                ),
            });
        };
        let r = raw.clamp(clip.0, clip.1);
        clipped += (r != raw) as usize;
        values.push(r);
    }
    Ok(TabularRatio { num_actions, values, clip, clipped })
}

/// Counting estimate straight from two tabular datasets.
pub fn tabular_ratio_from_data(
    expert: &TransitionDataset,
    suboptimal: &TransitionDataset,
    smoothing: f64,
    clip: (f64, f64),
) -> Result<TabularRatio> {
    if expert.space() != suboptimal.space() {
        return Err(Error::ShapeMismatch("expert and suboptimal datasets live in different spaces".into()));
    }
    let na = suboptimal.tabular()?.num_actions;
    tabular_ratio(&expert.pair_counts()?, &suboptimal.pair_counts()?, na, smoothing, clip)
}

/// How classifier inputs are built from dataset records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    /// One-hot over the (s, a) pair index.
    OneHotPair { num_states: usize, num_actions: usize },
    /// Concatenated state and action vectors.
    Concat { state_dim: usize, action_dim: usize },
}

impl FeatureMap {
    pub fn for_dataset(data: &TransitionDataset) -> Self {
        match &data.body {
            DatasetBody::Tabular(t) => FeatureMap::OneHotPair { num_states: t.num_states, num_actions: t.num_actions },
            DatasetBody::Continuous(c) => FeatureMap::Concat { state_dim: c.state_dim, action_dim: c.action_dim },
        }
    }

    pub fn dim(self) -> usize {
        match self {
            FeatureMap::OneHotPair { num_states, num_actions } => num_states * num_actions,
            FeatureMap::Concat { state_dim, action_dim } => state_dim + action_dim,
        }
    }

    /// Features for record `i`, appended to `out`.
    pub fn push_record(self, data: &TransitionDataset, i: usize, out: &mut Vec<f64>) -> Result<()> {
        match (self, &data.body) {
            (FeatureMap::OneHotPair { num_states, num_actions }, DatasetBody::Tabular(t))
                if t.num_states == num_states && t.num_actions == num_actions =>
            {
                let r = &t.records[i];
                self.push_pair(r.state, r.action, out);
                Ok(())
            }
            (FeatureMap::Concat { state_dim, action_dim }, DatasetBody::Continuous(c))
                if c.state_dim == state_dim && c.action_dim == action_dim =>
            {
                out.extend_from_slice(c.state(i));
                out.extend_from_slice(c.action(i));
                Ok(())
            }
            _ => Err(Error::ShapeMismatch("dataset does not match feature map".into())),
        }
    }

    pub fn push_pair(self, s: usize, a: usize, out: &mut Vec<f64>) {
        let start = out.len();
        out.resize(start + self.dim(), 0.0);
        if let FeatureMap::OneHotPair { num_actions, .. } = self {
            out[start + s * num_actions + a] = 1.0;
        }
    }

    pub fn encode_all(self, data: &TransitionDataset) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(data.len() * self.dim());
        for i in 0..data.len() {
            self.push_record(data, i, &mut out)?;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub steps: usize,
    /// Samples per class per minibatch.
    pub batch_per_class: usize,
    pub gp_coefficient: f64,
    pub clip: (f64, f64),
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Relu,
            learning_rate: 3e-4,
            steps: 10_000,
            batch_per_class: 128,
            gp_coefficient: 10.0,
            clip: DEFAULT_CLIP,
            seed: 0,
        }
    }
}

/// A trained expert-vs-suboptimal classifier.
#[derive(Debug, Clone)]
pub struct ClassifierRatio {
    net: Mlp,
    features: FeatureMap,
    clip: (f64, f64),
    /// Minibatch classification loss (without penalty) per step.
    pub loss_trace: Vec<f64>,
}

impl ClassifierRatio {
    pub fn from_parts(net: Mlp, features: FeatureMap, clip: (f64, f64)) -> Result<Self> {
        check_clip(clip)?;
        if net.input_dim() != features.dim() || net.head() != Head::Scalar {
            return Err(Error::ShapeMismatch("network does not fit the feature map".into()));
        }
        Ok(Self { net, features, clip, loss_trace: Vec::new() })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn features(&self) -> FeatureMap {
        self.features
    }

    /// Clipped log-ratios for a block of encoded inputs.
    pub fn log_ratio_inputs(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        let (lo, hi) = (self.clip.0.ln(), self.clip.1.ln());
        Ok(self.net.predict(inputs, batch)?.into_iter().map(|z| z.clamp(lo, hi)).collect())
    }

    pub fn log_ratio_records(&self, data: &TransitionDataset) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.features.encode_all(data)?;
        self.log_ratio_inputs(&x, data.len())
    }

    pub fn ratio_records(&self, data: &TransitionDataset) -> Result<Vec<f64>> {
        Ok(self.log_ratio_records(data)?.into_iter().map(f64::exp).collect())
    }

    /// Evaluates a one-hot classifier on every pair.
    pub fn to_tabular(&self) -> Result<TabularRatio> {
        let FeatureMap::OneHotPair { num_states, num_actions } = self.features else {
            return Err(invalid("classifier is not over tabular pairs"));
        };
        let mut x = Vec::with_capacity(num_states * num_actions * self.features.dim());
        for s in 0..num_states {
            for a in 0..num_actions {
                self.features.push_pair(s, a, &mut x);
            }
        }
        let log = self.log_ratio_inputs(&x, num_states * num_actions)?;
        let (lo, hi) = (self.clip.0.ln(), self.clip.1.ln());
        let clipped = log.iter().filter(|z| **z <= lo || **z >= hi).count();
        Ok(TabularRatio { num_actions, values: log.into_iter().map(f64::exp).collect(), clip: self.clip, clipped })
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean logistic loss `-E_E[log c] - E_U[log(1 - c)]` of a classifier on
/// full datasets.
pub fn classification_loss(classifier: &ClassifierRatio, expert: &TransitionDataset, suboptimal: &TransitionDataset) -> Result<f64> {
    let ze = classifier.net.predict(&classifier.features.encode_all(expert)?, expert.len())?;
    let zu = classifier.net.predict(&classifier.features.encode_all(suboptimal)?, suboptimal.len())?;
    let le = ze.iter().map(|z| softplus(-z)).sum::<f64>() / ze.len() as f64;
    let lu = zu.iter().map(|z| softplus(*z)).sum::<f64>() / zu.len() as f64;
    Ok(le + lu)
}

/// Trains the classifier on balanced minibatches drawn with replacement,
/// with a squared input-gradient penalty on the logit at the sampled points.
pub fn train_classifier(expert: &TransitionDataset, suboptimal: &TransitionDataset, config: &ClassifierConfig) -> Result<ClassifierRatio> {
    if expert.is_empty() || suboptimal.is_empty() {
        return Err(invalid("classifier training needs nonempty expert and suboptimal data"));
    }
    if expert.space() != suboptimal.space() {
        return Err(Error::ShapeMismatch("expert and suboptimal datasets live in different spaces".into()));
    }
    if config.batch_per_class == 0 {
        return Err(invalid("batch size must be positive"));
    }
    let features = FeatureMap::for_dataset(suboptimal);
    let net = Mlp::new(features.dim(), &config.hidden, config.activation, Head::Scalar, config.seed)?;
    let mut out = ClassifierRatio::from_parts(net, features, config.clip)?;
    let mut opt = OptimizerState::new(out.net.num_params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let m = config.batch_per_class;
    let mut x = Vec::with_capacity(2 * m * features.dim());
    let mut out_grad = vec![0.0; 2 * m];
    out.loss_trace.reserve(config.steps);
    for step in 0..config.steps {
        x.clear();
        for _ in 0..m {
            features.push_record(expert, rng.gen_range(0..expert.len()), &mut x)?;
        }
        for _ in 0..m {
            features.push_record(suboptimal, rng.gen_range(0..suboptimal.len()), &mut x)?;
        }
        let cache = out.net.forward(&x, 2 * m)?;
        let z = cache.outputs();
        let mut loss = 0.0;
        for (i, zi) in z.iter().enumerate() {
            if i < m {
                loss += softplus(-zi);
                out_grad[i] = (sigmoid(*zi) - 1.0) / m as f64;
            } else {
                loss += softplus(*zi);
                out_grad[i] = sigmoid(*zi) / m as f64;
            }
        }
        loss /= m as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { step, detail: format!("classifier loss is {loss}") });
        }
        let mut grads = out.net.backward(&cache, &out_grad)?.params;
        if config.gp_coefficient > 0.0 {
            let pen = out.net.penalty_from_cache(&cache, config.gp_coefficient)?;
            grads.iter_mut().zip(&pen.params).for_each(|(g, p)| *g += p);
        }
        opt.step_net(&mut out.net, &grads)
            .map_err(|e| Error::TrainingFailure { step, detail: e.to_string() })?;
        out.loss_trace.push(loss);
    }
    Ok(out)
}

/// Either kind of estimate.
#[derive(Debug, Clone)]
pub enum DensityRatioEstimate {
    Tabular(TabularRatio),
    Classifier(ClassifierRatio),
}

impl DensityRatioEstimate {
    /// Clipped log-ratios at each record of `data`.
    pub fn log_ratio_records(&self, data: &TransitionDataset) -> Result<Vec<f64>> {
        match self {
            DensityRatioEstimate::Tabular(t) => Ok(t.for_records(data)?.into_iter().map(f64::ln).collect()),
            DensityRatioEstimate::Classifier(c) => c.log_ratio_records(data),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn link_values() {
        assert_eq!(link(0.5).unwrap(), 1.0);
        assert!((link(2.0 / 3.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(link(0.0).is_err() && link(1.0).is_err() && link(f64::NAN).is_err());
    }

    #[test]
    fn tabular_examples() {
        let r = tabular_ratio(&[3.0, 5.0], &[3.0, 5.0], 1, 0.0, DEFAULT_CLIP).unwrap();
        assert_eq!(r.values(), &[1.0, 1.0]);
        let r = tabular_ratio(&[0.5, 0.5], &[0.25, 0.75], 2, 0.0, DEFAULT_CLIP).unwrap();
        assert!((r.get(0, 0) - 2.0).abs() < 1e-12 && (r.get(0, 1) - 2.0 / 3.0).abs() < 1e-12);
        assert!(matches!(
            tabular_ratio(&[1.0, 1.0], &[0.0, 2.0], 2, 0.0, DEFAULT_CLIP),
            Err(Error::SupportViolation { index: 0, .. })
        ));
        let r = tabular_ratio(&[1.0, 1.0], &[0.0, 2.0], 2, 1.0, DEFAULT_CLIP).unwrap();
        assert!(r.values().iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn expectation_is_one_without_clipping() {
        let ce = [4.0, 0.5, 1.0, 5.0, 0.25, 2.0];
        let cu = [1.0, 3.0, 2.0, 7.0, 1.0, 9.0];
        let r = tabular_ratio(&ce, &cu, 3, 0.0, DEFAULT_CLIP).unwrap();
        assert!((r.expectation_under(&cu).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_counts() {
        let r = tabular_ratio(&[1.0, 0.0], &[1e-9, 1.0], 2, 0.0, (0.5, 10.0)).unwrap();
        assert_eq!(r.values(), &[10.0, 0.5]);
        assert_eq!(r.clipped_count(), 2);
    }

    proptest! {
        #[test]
        fn link_reciprocal(c in 1e-6f64..(1.0 - 1e-6)) {
            prop_assert!((link(c).unwrap() * link(1.0 - c).unwrap() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn clipping_preserves_order(a in 1e-6f64..1e6, b in 1e-6f64..1e6) {
            let r = tabular_ratio(&[a, b], &[1.0, 1.0], 1, 0.0, (1e-2, 1e2)).unwrap();
            let (x, y) = (r.values()[0], r.values()[1]);
            prop_assert!(x > 0.0 && y > 0.0);
            if a <= b { prop_assert!(x <= y) } else { prop_assert!(x >= y) }
        }
    }
}
