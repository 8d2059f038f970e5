//! Policies from weighted behavior cloning.
//!
//! On tabular data every objective here is a weighted maximum-likelihood
//! problem whose maximizer is the row-normalized weight table, so tabular
//! extraction is exact. Neural extraction trains a policy network by
//! minibatch gradient ascent on the same objectives.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetBody, TransitionDataset};
use crate::error::{invalid, Error, Result};
use crate::mdp::TabularPolicy;
use crate::nn::{categorical_log_prob, gaussian_log_prob, softmax_rows, Activation, Head, Mlp, OptimizerState, DEFAULT_HIDDEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `E[ω log π]`.
    Importance,
    /// `E[ω log π] / E[ω]`.
    SelfNormalized,
}

impl Weighting {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "importance" => Ok(Weighting::Importance),
            "self-normalized" | "self_normalized" => Ok(Weighting::SelfNormalized),
            _ => Err(invalid(format!("unknown weighting {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub weighting: Weighting,
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            weighting: Weighting::SelfNormalized,
            eta: 0.5,
            steps: 20_000,
            batch_size: 256,
            learning_rate: 3e-5,
            hidden: DEFAULT_HIDDEN.to_vec(),
            seed: 0,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        Ok(())
    }
}

/// A tabular policy plus the states that had data but zero total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularExtraction {
    pub policy: TabularPolicy,
    /// Visited states whose weights were all zero; their rows are uniform.
    pub zero_weight_states: Vec<usize>,
}

fn accumulate(data: &TransitionDataset, weights: Option<&[f64]>, scale: f64, table: &mut [f64]) -> Result<Vec<bool>> {
    let t = data.tabular()?;
    if let Some(w) = weights {
        if w.len() != t.records.len() {
            return Err(Error::ShapeMismatch("one weight per record is required".into()));
        }
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
    }
    let mut visited = vec![false; t.num_states];
    for (i, r) in t.records.iter().enumerate() {
        visited[r.state] = true;
        table[r.state * t.num_actions + r.action] += scale * weights.map_or(1.0, |w| w[i]);
    }
    Ok(visited)
}

fn finish(ns: usize, na: usize, table: &[f64], visited: &[bool]) -> Result<TabularExtraction> {
    let (policy, empty) = TabularPolicy::from_weights(ns, na, table)?;
    Ok(TabularExtraction { policy, zero_weight_states: empty.into_iter().filter(|s| visited[*s]).collect() })
}

fn shape(data: &TransitionDataset) -> Result<(usize, usize)> {
    let t = data.tabular()?;
    Ok((t.num_states, t.num_actions))
}

/// Weighted-likelihood maximizer: π(a|s) ∝ Σ of ω over records at (s, a).
/// Both weightings share this maximizer; states absent from the data get
/// uniform rows.
pub fn extract_tabular(suboptimal: &TransitionDataset, omega: &[f64], weighting: Weighting) -> Result<TabularExtraction> {
    let (ns, na) = shape(suboptimal)?;
    let n = suboptimal.len().max(1) as f64;
    let scale = match weighting {
        Weighting::Importance => 1.0 / n,
        Weighting::SelfNormalized => {
            let total: f64 = omega.iter().sum();
            if total > 0.0 {
                1.0 / total
            } else {
                1.0
            }
        }
    };
    let mut table = vec![0.0; ns * na];
    let visited = accumulate(suboptimal, Some(omega), scale, &mut table)?;
    finish(ns, na, &table, &visited)
}

/// Policy from an implied occupancy table over pairs.
pub fn extract_from_mass(num_states: usize, num_actions: usize, mass: &[f64]) -> Result<TabularExtraction> {
    let visited: Vec<bool> = mass.chunks(num_actions).map(|_| true).collect();
    finish(num_states, num_actions, mass, &visited)
}

fn check_space(expert: &TransitionDataset, suboptimal: &TransitionDataset) -> Result<()> {
    if expert.space() != suboptimal.space() {
        return Err(Error::ShapeMismatch("expert and suboptimal datasets live in different spaces".into()));
    }
    Ok(())
}

/// Minimizer of `-η E_{D^E}[log π] - (1-η) E_{D^U}[log π]`.
pub fn bc_eta_tabular(expert: &TransitionDataset, suboptimal: &TransitionDataset, eta: f64) -> Result<TabularExtraction> {
    bc_drc_eta_tabular(expert, suboptimal, eta, None)
}

/// As [`bc_eta_tabular`] with the suboptimal term weighted by `r̂(s,a)`
/// (given per pair).
pub fn bc_drc_eta_tabular(
    expert: &TransitionDataset,
    suboptimal: &TransitionDataset,
    eta: f64,
    ratio: Option<&[f64]>,
) -> Result<TabularExtraction> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(invalid(format!("eta must lie in [0, 1], got {eta}")));
    }
    check_space(expert, suboptimal)?;
    let (ns, na) = shape(suboptimal)?;
    let mut table = vec![0.0; ns * na];
    let mut visited = vec![false; ns];
    if eta > 0.0 {
        let v = accumulate(expert, None, eta / expert.len().max(1) as f64, &mut table)?;
        visited.iter_mut().zip(v).for_each(|(a, b)| *a |= b);
    }
    if eta < 1.0 {
        let per_record = match ratio {
            Some(r) => {
                if r.len() != ns * na {
                    return Err(Error::ShapeMismatch("ratio table does not match the dataset".into()));
                }
                let t = suboptimal.tabular()?;
                Some(t.records.iter().map(|x| r[x.state * na + x.action]).collect::<Vec<_>>())
            }
            None => None,
        };
        let v = accumulate(suboptimal, per_record.as_deref(), (1.0 - eta) / suboptimal.len().max(1) as f64, &mut table)?;
        visited.iter_mut().zip(v).for_each(|(a, b)| *a |= b);
    }
    finish(ns, na, &table, &visited)
}

/// A trained policy network over tabular or continuous spaces.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub net: Mlp,
}

impl NeuralPolicy {
    /// Softmax rows for a one-hot-state network with a logits head.
    pub fn to_tabular(&self) -> Result<TabularPolicy> {
        let Head::Logits { classes } = self.net.head() else {
            return Err(invalid("policy network is not categorical"));
        };
        let ns = self.net.input_dim();
        let mut x = vec![0.0; ns * ns];
        for s in 0..ns {
            x[s * ns + s] = 1.0;
        }
        let probs = softmax_rows(&self.net.predict(&x, ns)?, classes);
        // Renormalize each row so the strict simplex check holds.
        let probs: Vec<f64> = probs
            .chunks(classes)
            .flat_map(|row| {
                let z: f64 = row.iter().sum();
                row.iter().map(move |p| p / z).collect::<Vec<_>>()
            })
            .collect();
        TabularPolicy::new(ns, classes, probs)
    }

    /// Mean action of a Gaussian head.
    pub fn mean_action(&self, state: &[f64]) -> Result<Vec<f64>> {
        crate::nn::gaussian_mean(&self.net, state)
    }
}

/// One dataset contributing `coefficient · E[w log π]` to the objective.
pub struct BcSource<'a> {
    pub data: &'a TransitionDataset,
    pub weights: Option<&'a [f64]>,
    pub coefficient: f64,
}

fn push_state(data: &TransitionDataset, i: usize, out: &mut Vec<f64>) {
    match &data.body {
        DatasetBody::Tabular(t) => {
            let start = out.len();
            out.resize(start + t.num_states, 0.0);
            out[start + t.records[i].state] = 1.0;
        }
        DatasetBody::Continuous(c) => out.extend_from_slice(c.state(i)),
    }
}

/// Maximizes `Σ_k coefficient_k · E_k[w log π(a|s)]` over a policy network,
/// normalizing each source per minibatch as `weighting` says.
pub fn train_policy(sources: &[BcSource<'_>], config: &ExtractionConfig) -> Result<NeuralPolicy> {
    config.validate()?;
    let first = sources.first().ok_or_else(|| invalid("no training data"))?;
    let space = first.data.space();
    for s in sources {
        if s.data.space() != space {
            return Err(Error::ShapeMismatch("sources live in different spaces".into()));
        }
        if let Some(w) = s.weights {
            if w.len() != s.data.len() {
                return Err(Error::ShapeMismatch("one weight per record is required".into()));
            }
        }
    }
    let (input_dim, head) = match &first.data.body {
        DatasetBody::Tabular(t) => (t.num_states, Head::Logits { classes: t.num_actions }),
        DatasetBody::Continuous(c) => (c.state_dim, Head::GaussianPolicy { action_dim: c.action_dim }),
    };
    let mut net = Mlp::new(input_dim, &config.hidden, Activation::Relu, head, config.seed)?;
    let mut opt = OptimizerState::new(net.num_params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x2545_f491_4f6c_dd1d).wrapping_add(1));
    let b = config.batch_size;
    let mut x = Vec::new();
    for step in 0..config.steps {
        let mut grads = vec![0.0; net.num_params()];
        let mut loss = 0.0;
        for src in sources.iter().filter(|s| s.coefficient > 0.0 && !s.data.is_empty()) {
            x.clear();
            let idx: Vec<usize> = (0..b).map(|_| rng.gen_range(0..src.data.len())).collect();
            for &i in &idx {
                push_state(src.data, i, &mut x);
            }
            let w: Vec<f64> = idx.iter().map(|&i| src.weights.map_or(1.0, |w| w[i])).collect();
            let norm = match config.weighting {
                Weighting::Importance => b as f64,
                Weighting::SelfNormalized => w.iter().sum::<f64>(),
            };
            if !(norm > 0.0) {
                continue;
            }
            let cache = net.forward(&x, b)?;
            let (logp, dlogp) = match &src.data.body {
                DatasetBody::Tabular(t) => {
                    let actions: Vec<usize> = idx.iter().map(|&i| t.records[i].action).collect();
                    categorical_log_prob(cache.outputs(), t.num_actions, &actions)?
                }
                DatasetBody::Continuous(c) => {
                    let actions: Vec<f64> = idx.iter().flat_map(|&i| c.action(i).to_vec()).collect();
                    let (lp, g, _) = gaussian_log_prob(cache.outputs(), &actions, c.action_dim)?;
                    (lp, g)
                }
            };
            let width = net.output_dim();
            let mut out_grad = vec![0.0; b * width];
            for k in 0..b {
                let c = src.coefficient * w[k] / norm;
                loss -= c * logp[k];
                for j in 0..width {
                    out_grad[k * width + j] = -c * dlogp[k * width + j];
                }
            }
            let g = net.backward(&cache, &out_grad)?;
            grads.iter_mut().zip(&g.params).for_each(|(a, x)| *a += x);
        }
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { step, detail: format!("policy loss is {loss}") });
        }
        opt.step_net(&mut net, &grads).map_err(|e| Error::TrainingFailure { step, detail: e.to_string() })?;
    }
    Ok(NeuralPolicy { net })
}

/// Weighted BC on the suboptimal data with weights ω*.
pub fn extract_neural(suboptimal: &TransitionDataset, omega: &[f64], config: &ExtractionConfig) -> Result<NeuralPolicy> {
    train_policy(&[BcSource { data: suboptimal, weights: Some(omega), coefficient: 1.0 }], config)
}

/// Neural BC(η); pass per-record `r̂` for the density-ratio corrected form.
pub fn bc_eta_neural(
    expert: &TransitionDataset,
    suboptimal: &TransitionDataset,
    ratio_per_record: Option<&[f64]>,
    config: &ExtractionConfig,
) -> Result<NeuralPolicy> {
    check_space(expert, suboptimal)?;
    let mut cfg = config.clone();
    cfg.weighting = Weighting::Importance;
    train_policy(
        &[
            BcSource { data: expert, weights: None, coefficient: config.eta },
            BcSource { data: suboptimal, weights: ratio_per_record, coefficient: 1.0 - config.eta },
        ],
        &cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Role, TabularData, Transition};

    fn dataset(ns: usize, na: usize, pairs: &[(usize, usize)]) -> TransitionDataset {
        let records = pairs.iter().map(|&(s, a)| Transition { state: s, action: a, next_state: s }).collect();
        TransitionDataset::new(
            Role::Suboptimal,
            "test",
            DatasetBody::Tabular(TabularData { num_states: ns, num_actions: na, records, initial_states: vec![0] }),
        )
    }

    #[test]
    fn unit_weights_give_empirical_frequencies() {
        let d = dataset(3, 2, &[(0, 0), (0, 1), (0, 1), (1, 0)]);
        let ex = extract_tabular(&d, &[1.0; 4], Weighting::SelfNormalized).unwrap();
        assert!((ex.policy.prob(0, 1) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ex.policy.row(1), &[1.0, 0.0]);
        assert_eq!(ex.policy.row(2), &[0.5, 0.5]);
    }

    #[test]
    fn weighting_and_scale_invariance() {
        let d = dataset(2, 3, &[(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (0, 0)]);
        let w = [0.3, 1.7, 0.2, 2.0, 0.5, 0.9];
        let base = extract_tabular(&d, &w, Weighting::SelfNormalized).unwrap().policy;
        for scale in [0.1, 1.0, 10.0] {
            let ws: Vec<f64> = w.iter().map(|x| x * scale).collect();
            for mode in [Weighting::Importance, Weighting::SelfNormalized] {
                let p = extract_tabular(&d, &ws, mode).unwrap().policy;
                for (a, b) in p.as_slice().iter().zip(base.as_slice()) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_weight_state_is_reported() {
        let d = dataset(2, 2, &[(0, 0), (1, 1)]);
        let ex = extract_tabular(&d, &[1.0, 0.0], Weighting::SelfNormalized).unwrap();
        assert_eq!(ex.zero_weight_states, vec![1]);
        assert_eq!(ex.policy.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn bc_eta_endpoints_and_mixture() {
        let e = dataset(2, 2, &[(0, 0), (0, 0), (1, 1)]);
        let u = dataset(2, 2, &[(0, 1), (0, 0), (1, 0), (1, 0)]);
        let p1 = bc_eta_tabular(&e, &u, 1.0).unwrap().policy;
        assert_eq!(p1.row(0), &[1.0, 0.0]);
        let p0 = bc_eta_tabular(&e, &u, 0.0).unwrap().policy;
        assert_eq!(p0.row(0), &[0.5, 0.5]);
        let half = bc_eta_tabular(&e, &u, 0.5).unwrap().policy;
        // State 0: expert mass 2/3 on a0, suboptimal 1/4 on each action.
        let w0 = 0.5 * 2.0 / 3.0 + 0.5 * 0.25;
        let w1 = 0.5 * 0.25;
        assert!((half.prob(0, 0) - w0 / (w0 + w1)).abs() < 1e-12);
        let r = [1.0; 4];
        assert_eq!(bc_drc_eta_tabular(&e, &u, 0.5, Some(&r)).unwrap().policy, half);
    }

    #[test]
    fn neural_extraction_matches_closed_form() {
        let d = dataset(3, 2, &[(0, 0), (0, 1), (0, 1), (1, 0), (2, 1), (2, 1), (2, 0), (1, 0), (1, 1)]);
        let w = [1.0, 2.0, 0.5, 1.0, 0.3, 0.3, 1.2, 0.4, 0.8];
        let exact = extract_tabular(&d, &w, Weighting::SelfNormalized).unwrap().policy;
        let cfg = ExtractionConfig { steps: 3000, batch_size: 64, learning_rate: 3e-3, hidden: vec![32], ..Default::default() };
        let learned = extract_neural(&d, &w, &cfg).unwrap().to_tabular().unwrap();
        for s in 0..3 {
            let tv: f64 = 0.5 * exact.row(s).iter().zip(learned.row(s)).map(|(a, b)| (a - b).abs()).sum::<f64>();
            assert!(tv <= 0.05, "state {s}: {:?} vs {:?}", exact.row(s), learned.row(s));
        }
    }
}
