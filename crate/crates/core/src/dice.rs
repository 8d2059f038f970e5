//! Closed-form inner maximization and minimization of the dual objective
//! over the multiplier v.
//!
//! For a suboptimal-data pair with advantage `e = log r + γ(Tv)(s,a) - v(s)`
//! the inner problem is
//!
//! ```text
//! max_ω  ω e - ω log ω - α ρ f̃_β(ω / ρ)
//! ```
//!
//! with `ρ = 1` for RelaxDICE and `ρ = r̂(s,a)` for the density-ratio
//! corrected variant. Its maximizer ω* and value h are available in closed
//! form, and `dh/de = ω*` on both branches, so the outer objective
//!
//! ```text
//! L(v) = (1-γ) E_{p0}[v(s)] + E_{d^U}[h(e_v(s,a))]
//! ```
//!
//! has a cheap exact gradient. `L` is convex in v.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetBody, Transition, TransitionDataset};
use crate::divergence::{Generator, RelaxedDivergenceSpec};
use crate::error::{invalid, Error, Result};
use crate::mdp::TabularMdp;
use crate::nn::{Activation, Head, Mlp, OptimizerState, DEFAULT_HIDDEN};

pub const DEFAULT_EXP_CLIP: f64 = 30.0;
/// Relaxation level standing in for β → 0.
pub const DEMODICE_BETA: f64 = 1e-6;
pub const DEFAULT_BETA_DECAY: f64 = 0.99;
pub const MIN_AUTO_BETA: f64 = 1.0 + 1e-3;

/// Which side of the relaxation threshold the optimum landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// ω*/ρ > β: the regularizer acts as the full KL generator.
    AboveBeta,
    /// ω*/ρ ≤ β: the regularizer is linear there.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedForm {
    pub omega: f64,
    pub h: f64,
    pub branch: Branch,
    /// The exponent exceeded the clip and ω was capped.
    pub clipped: bool,
    /// dω*/de, used for second-order steps.
    pub curvature: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be positive and finite, got {alpha}")));
    }
    Ok(())
}

/// Inner objective `ω e - ω log ω - α ρ f̃_β(ω/ρ)` at an arbitrary ω > 0.
pub fn inner_objective(omega: f64, e: f64, log_r_hat: f64, alpha: f64, spec: &RelaxedDivergenceSpec) -> f64 {
    let rho = log_r_hat.exp();
    omega * e - Generator::Kl.f(omega) - alpha * rho * spec.f_tilde_unchecked(omega / rho)
}

fn closed_form(e: f64, log_r_hat: f64, alpha: f64, spec: &RelaxedDivergenceSpec, exp_clip: f64, force_upper: bool) -> ClosedForm {
    let lnb1 = spec.f_prime_beta();
    let upper = force_upper || (e - log_r_hat) / (1.0 + alpha) > lnb1;
    let x = if upper {
        (e + alpha * log_r_hat) / (1.0 + alpha) - 1.0
    } else {
        e - 1.0 - alpha * lnb1
    };
    let branch = if upper { Branch::AboveBeta } else { Branch::Linear };
    if x > exp_clip {
        // Maximize over ω ≤ e^clip instead: the cap is then the argmax and h
        // stays convex in e with slope ω.
        let omega = exp_clip.exp();
        let h = if force_upper {
            let rho = log_r_hat.exp();
            omega * e - omega * omega.ln() - alpha * (omega * (omega / rho).ln() + spec.c_f_beta() * rho)
        } else {
            inner_objective(omega, e, log_r_hat, alpha, spec)
        };
        return ClosedForm { omega, h, branch, clipped: true, curvature: 0.0 };
    }
    let omega = x.exp();
    let (h, curvature) = if upper {
        let rho = if log_r_hat == 0.0 { 1.0 } else { log_r_hat.exp() };
        ((1.0 + alpha) * omega - alpha * spec.c_f_beta() * rho, omega / (1.0 + alpha))
    } else {
        let rho = if log_r_hat == 0.0 { 1.0 } else { log_r_hat.exp() };
        (omega + alpha * lnb1 * rho, omega)
    };
    ClosedForm { omega, h, branch, clipped: false, curvature }
}

/// Maximizer and value of the RelaxDICE inner problem.
pub fn omega_star_relaxdice(e: f64, alpha: f64, spec: &RelaxedDivergenceSpec, exp_clip: f64) -> Result<ClosedForm> {
    check_alpha(alpha)?;
    if !e.is_finite() {
        return Err(Error::Numerical(format!("advantage {e} is not finite")));
    }
    Ok(closed_form(e, 0.0, alpha, spec, exp_clip, false))
}

/// Maximizer and value of the density-ratio corrected inner problem.
pub fn omega_star_drc(e: f64, log_r_hat: f64, alpha: f64, spec: &RelaxedDivergenceSpec, exp_clip: f64) -> Result<ClosedForm> {
    check_alpha(alpha)?;
    if !log_r_hat.is_finite() {
        return Err(invalid(format!("ratio estimate must be positive and finite, got log r = {log_r_hat}")));
    }
    if !e.is_finite() {
        return Err(Error::Numerical(format!("advantage {e} is not finite")));
    }
    Ok(closed_form(e, log_r_hat, alpha, spec, exp_clip, false))
}

/// The β → 0 limit: always the upper branch with β = [`DEMODICE_BETA`].
pub fn omega_star_demodice(e: f64, alpha: f64, exp_clip: f64) -> Result<ClosedForm> {
    check_alpha(alpha)?;
    if !e.is_finite() {
        return Err(Error::Numerical(format!("advantage {e} is not finite")));
    }
    let spec = RelaxedDivergenceSpec::new_unchecked(Generator::Kl, DEMODICE_BETA);
    Ok(closed_form(e, 0.0, alpha, &spec, exp_clip, true))
}

/// `e_v = log r + next - value`, kept in parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageTerm {
    pub log_ratio: f64,
    /// γ (Tv)(s,a), or γ v(s') for a single sample.
    pub next: f64,
    /// v(s).
    pub value: f64,
}

impl AdvantageTerm {
    pub fn e(&self) -> f64 {
        self.log_ratio + self.next - self.value
    }
}

/// Exact advantages for every pair, `[s][a]` layout.
pub fn e_v_exact(mdp: &TabularMdp, v: &[f64], log_ratio: &[f64]) -> Result<Vec<AdvantageTerm>> {
    if v.len() != mdp.num_states() || log_ratio.len() != mdp.num_pairs() {
        return Err(Error::ShapeMismatch("v or log-ratio table does not match the MDP".into()));
    }
    if let Some(i) = log_ratio.iter().position(|x| !x.is_finite()) {
        return Err(Error::SupportViolation { index: i, detail: "log ratio is not finite".into() });
    }
    let g = mdp.discount();
    let na = mdp.num_actions();
    Ok((0..mdp.num_pairs())
        .map(|i| {
            let (s, a) = (i / na, i % na);
            AdvantageTerm { log_ratio: log_ratio[i], next: g * mdp.expected_next(s, a, v), value: v[s] }
        })
        .collect())
}

/// `log r̂(s,a) + γ v(s') - v(s)` for one sample.
pub fn e_v_single_point(v: &[f64], sample: Transition, log_ratio: f64, discount: f64) -> f64 {
    log_ratio + discount * v[sample.next_state] - v[sample.state]
}

/// Running average of per-minibatch maximum ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoBeta {
    pub decay: f64,
    value: Option<f64>,
}

impl AutoBeta {
    pub fn new(decay: f64) -> Self {
        Self { decay, value: None }
    }

    pub fn with_initial(decay: f64, beta: f64) -> Self {
        Self { decay, value: Some(beta) }
    }

    /// Folds in one minibatch and returns the clamped β.
    pub fn update(&mut self, ratios: &[f64]) -> Result<f64> {
        let max = ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if ratios.is_empty() || !(ratios.iter().all(|r| *r > 0.0)) || !max.is_finite() {
            return Err(invalid("auto-beta needs a nonempty batch of positive finite ratios"));
        }
        let next = match self.value {
            None => max,
            Some(prev) => self.decay * prev + (1.0 - self.decay) * max,
        };
        self.value = Some(next);
        Ok(self.beta())
    }

    pub fn beta(&self) -> f64 {
        self.value.unwrap_or(MIN_AUTO_BETA).max(MIN_AUTO_BETA)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    RelaxDice,
    RelaxDiceDrc,
    DemoDiceLimit,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::RelaxDice => "relaxdice",
            Variant::RelaxDiceDrc => "relaxdice-drc",
            Variant::DemoDiceLimit => "demodice-limit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relaxdice" => Ok(Variant::RelaxDice),
            "relaxdice-drc" | "drc" => Ok(Variant::RelaxDiceDrc),
            "demodice-limit" | "demodice" => Ok(Variant::DemoDiceLimit),
            _ => Err(invalid(format!("unknown variant {s:?}"))),
        }
    }

    pub fn default_alpha(self) -> f64 {
        match self {
            Variant::DemoDiceLimit => 0.05,
            _ => 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// A relaxation level β > 1.
    Fixed(f64),
    /// Running average of the largest ratio estimate.
    Auto,
    /// Any β in (0, 1], for studying the small-β limit.
    Limit(f64),
}

impl BetaMode {
    pub fn name(self) -> String {
        match self {
            BetaMode::Fixed(b) => format!("fixed:{b}"),
            BetaMode::Auto => "auto".into(),
            BetaMode::Limit(b) => format!("limit:{b}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(BetaMode::Auto);
        }
        let parse = |x: &str| x.parse::<f64>().map_err(|_| invalid(format!("bad beta {x:?}")));
        if let Some(rest) = s.strip_prefix("limit:") {
            let b = parse(rest)?;
            if !(b > 0.0 && b <= 1.0) {
                return Err(invalid("limit beta must lie in (0, 1]"));
            }
            return Ok(BetaMode::Limit(b));
        }
        let b = parse(s.strip_prefix("fixed:").unwrap_or(s))?;
        if !(b > 1.0 && b.is_finite()) {
            return Err(invalid(format!("fixed beta must exceed 1, got {b}")));
        }
        Ok(BetaMode::Fixed(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// Exact (Tv)(s,a) from a known transition model.
    ExactTabular,
    /// γ v(s') from each recorded next state.
    SinglePoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: Variant,
    pub alpha: f64,
    pub beta_mode: BetaMode,
    pub beta_decay: f64,
    pub estimator: Estimator,
    pub exp_clip: f64,
    /// Iteration cap for the tabular solver.
    pub max_iterations: usize,
    /// Gradient-norm target for the tabular solver.
    pub tolerance: f64,
    /// Keep ω on every term after each tabular iteration.
    pub record_omega: bool,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gp_coefficient: f64,
    pub hidden: Vec<usize>,
    pub log_interval: usize,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            alpha: variant.default_alpha(),
            beta_mode: BetaMode::Auto,
            beta_decay: DEFAULT_BETA_DECAY,
            estimator: Estimator::ExactTabular,
            exp_clip: DEFAULT_EXP_CLIP,
            max_iterations: 500,
            tolerance: 1e-8,
            record_omega: false,
            steps: 20_000,
            batch_size: 256,
            learning_rate: 3e-4,
            gp_coefficient: 1e-4,
            hidden: DEFAULT_HIDDEN.to_vec(),
            log_interval: 100,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        match self.beta_mode {
            BetaMode::Fixed(b) if !(b > 1.0 && b.is_finite()) => {
                return Err(invalid(format!("fixed beta must exceed 1, got {b}")))
            }
            BetaMode::Limit(b) if !(b > 0.0 && b <= 1.0) => return Err(invalid("limit beta must lie in (0, 1]")),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.beta_decay) {
            return Err(invalid("beta decay must lie in [0, 1]"));
        }
        if !(self.exp_clip > 0.0) || self.batch_size == 0 || self.log_interval == 0 {
            return Err(invalid("exp clip, batch size and log interval must be positive"));
        }
        Ok(())
    }
}

/// The per-pair objective in use, with β resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub variant: Variant,
    pub alpha: f64,
    pub spec: RelaxedDivergenceSpec,
    pub exp_clip: f64,
}

impl Objective {
    pub fn new(variant: Variant, alpha: f64, beta: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let beta = if variant == Variant::DemoDiceLimit { DEMODICE_BETA } else { beta };
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(invalid(format!("beta must be positive, got {beta}")));
        }
        let spec = RelaxedDivergenceSpec::new_unchecked(Generator::Kl, beta);
        Ok(Self { variant, alpha, spec, exp_clip: DEFAULT_EXP_CLIP })
    }

    pub fn with_exp_clip(mut self, exp_clip: f64) -> Self {
        self.exp_clip = exp_clip;
        self
    }

    pub fn beta(&self) -> f64 {
        self.spec.beta()
    }

    /// Closed form for one pair. `log_r_hat` only enters the corrected variant.
    pub fn apply(&self, e: f64, log_r_hat: f64) -> ClosedForm {
        match self.variant {
            Variant::RelaxDice => closed_form(e, 0.0, self.alpha, &self.spec, self.exp_clip, false),
            Variant::RelaxDiceDrc => closed_form(e, log_r_hat, self.alpha, &self.spec, self.exp_clip, false),
            Variant::DemoDiceLimit => closed_form(e, 0.0, self.alpha, &self.spec, self.exp_clip, true),
        }
    }
}

/// One weighted summand of the suboptimal-data expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub state: usize,
    pub action: usize,
    pub weight: f64,
    pub log_ratio: f64,
    /// Successor distribution used for the next-state value.
    pub next: Vec<(usize, f64)>,
}

/// Loss, gradient and (optionally) Hessian at a given v.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub gradient: Vec<f64>,
    pub hessian: Option<DMatrix<f64>>,
    pub omega: Vec<f64>,
    pub upper_fraction: f64,
    pub clipped: usize,
}

/// The tabular dual objective as a finite sum of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularProblem {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    initial_weights: Vec<f64>,
    terms: Vec<Term>,
    record_terms: Option<Vec<usize>>,
}

fn normalized_counts(states: &[usize], n: usize) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(invalid("initial-state pool is empty"));
    }
    let mut p = vec![0.0; n];
    for &s in states {
        *p.get_mut(s).ok_or_else(|| invalid(format!("initial state {s} out of range")))? += 1.0;
    }
    let k = states.len() as f64;
    p.iter_mut().for_each(|x| *x /= k);
    Ok(p)
}

impl TabularProblem {
    /// Exact problem from distributions: `d_u` and `log_ratio` over pairs,
    /// `initial` over states.
    pub fn from_distributions(mdp: &TabularMdp, d_u: &[f64], log_ratio: &[f64], initial: &[f64]) -> Result<Self> {
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        if d_u.len() != ns * na || log_ratio.len() != ns * na || initial.len() != ns {
            return Err(Error::ShapeMismatch("distribution shapes do not match the MDP".into()));
        }
        let mut terms = Vec::new();
        for i in 0..ns * na {
            if d_u[i] > 0.0 {
                if !log_ratio[i].is_finite() {
                    return Err(Error::SupportViolation { index: i, detail: "log ratio is not finite".into() });
                }
                let (s, a) = (i / na, i % na);
                let next = mdp
                    .next_distribution(s, a)
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(j, p)| (j, *p))
                    .collect();
                terms.push(Term { state: s, action: a, weight: d_u[i], log_ratio: log_ratio[i], next });
            }
        }
        let g = mdp.discount();
        Ok(Self {
            num_states: ns,
            num_actions: na,
            discount: g,
            initial_weights: initial.iter().map(|p| (1.0 - g) * p).collect(),
            terms,
            record_terms: None,
        })
    }

    /// Problem over a tabular suboptimal dataset. `log_ratio` is per pair.
    /// The exact estimator needs the transition model; the single-point one
    /// merges identical records.
    pub fn from_dataset(
        data: &TransitionDataset,
        log_ratio: &[f64],
        discount: f64,
        estimator: Estimator,
        mdp: Option<&TabularMdp>,
    ) -> Result<Self> {
        let tab = data.tabular()?;
        if tab.records.is_empty() {
            return Err(invalid("suboptimal dataset is empty"));
        }
        let (ns, na) = (tab.num_states, tab.num_actions);
        if log_ratio.len() != ns * na {
            return Err(Error::ShapeMismatch("log-ratio table does not match the dataset".into()));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(invalid(format!("discount must lie in [0, 1), got {discount}")));
        }
        let initial = normalized_counts(&tab.initial_states, ns)?;
        let n = tab.records.len() as f64;
        let mut record_terms = Vec::with_capacity(tab.records.len());
        let mut terms: Vec<Term> = Vec::new();
        match estimator {
            Estimator::ExactTabular => {
                let mdp = mdp.ok_or_else(|| invalid("exact estimator needs the transition model"))?;
                if mdp.num_states() != ns || mdp.num_actions() != na {
                    return Err(Error::ShapeMismatch("dataset and MDP disagree on shape".into()));
                }
                let mut index = vec![usize::MAX; ns * na];
                for r in &tab.records {
                    let k = r.state * na + r.action;
                    if index[k] == usize::MAX {
                        index[k] = terms.len();
                        let next = mdp
                            .next_distribution(r.state, r.action)
                            .iter()
                            .enumerate()
                            .filter(|(_, p)| **p > 0.0)
                            .map(|(j, p)| (j, *p))
                            .collect();
                        terms.push(Term { state: r.state, action: r.action, weight: 0.0, log_ratio: log_ratio[k], next });
                    }
                    terms[index[k]].weight += 1.0 / n;
                    record_terms.push(index[k]);
                }
            }
            Estimator::SinglePoint => {
                let mut index = std::collections::HashMap::new();
                for r in &tab.records {
                    let k = r.state * na + r.action;
                    let t = *index.entry(*r).or_insert_with(|| {
                        terms.push(Term {
                            state: r.state,
                            action: r.action,
                            weight: 0.0,
                            log_ratio: log_ratio[k],
                            next: vec![(r.next_state, 1.0)],
                        });
                        terms.len() - 1
                    });
                    terms[t].weight += 1.0 / n;
                    record_terms.push(t);
                }
            }
        }
        if let Some(t) = terms.iter().find(|t| !t.log_ratio.is_finite()) {
            return Err(Error::SupportViolation {
                index: t.state * na + t.action,
                detail: "log ratio is not finite on a suboptimal-data pair".into(),
            });
        }
        Ok(Self {
            num_states: ns,
            num_actions: na,
            discount,
            initial_weights: initial.iter().map(|p| (1.0 - discount) * p).collect(),
            terms,
            record_terms: Some(record_terms),
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// `(1-γ) p0`.
    pub fn initial_weights(&self) -> &[f64] {
        &self.initial_weights
    }

    /// For dataset-built problems, the term behind each record.
    pub fn record_terms(&self) -> Option<&[usize]> {
        self.record_terms.as_deref()
    }

    /// States that are a source of at least one term.
    pub fn source_states(&self) -> Vec<bool> {
        let mut src = vec![false; self.num_states];
        for t in &self.terms {
            src[t.state] = true;
        }
        src
    }

    /// States with initial or successor mass that never appear as a source.
    /// The objective has no minimizer in those coordinates.
    pub fn unsupported_states(&self) -> Vec<usize> {
        let src = self.source_states();
        let mut touched = vec![false; self.num_states];
        for (s, w) in self.initial_weights.iter().enumerate() {
            touched[s] |= *w > 0.0;
        }
        for t in &self.terms {
            for (j, p) in &t.next {
                touched[*j] |= *p > 0.0;
            }
        }
        (0..self.num_states).filter(|s| touched[*s] && !src[*s]).collect()
    }

    /// Largest ratio over terms with positive weight.
    pub fn max_ratio(&self) -> f64 {
        self.terms.iter().map(|t| t.log_ratio).fold(f64::NEG_INFINITY, f64::max).exp()
    }

    pub fn advantage(&self, t: &Term, v: &[f64]) -> f64 {
        let next: f64 = t.next.iter().map(|(j, p)| p * v[*j]).sum();
        t.log_ratio + self.discount * next - v[t.state]
    }

    /// Objective value, its gradient and optionally its Hessian.
    pub fn evaluate(&self, v: &[f64], objective: &Objective, with_hessian: bool) -> Result<LossEval> {
        if v.len() != self.num_states {
            return Err(Error::ShapeMismatch(format!("v has {} entries, expected {}", v.len(), self.num_states)));
        }
        let g = self.discount;
        let mut loss: f64 = self.initial_weights.iter().zip(v).map(|(w, x)| w * x).sum();
        let mut gradient = self.initial_weights.clone();
        let mut hessian = with_hessian.then(|| DMatrix::zeros(self.num_states, self.num_states));
        let mut omega = Vec::with_capacity(self.terms.len());
        let (mut upper, mut clipped) = (0.0, 0);
        let mut idx: Vec<(usize, f64)> = Vec::new();
        for t in &self.terms {
            let cf = objective.apply(self.advantage(t, v), t.log_ratio);
            loss += t.weight * cf.h;
            let wo = t.weight * cf.omega;
            gradient[t.state] -= wo;
            for (j, p) in &t.next {
                gradient[*j] += g * p * wo;
            }
            if cf.branch == Branch::AboveBeta {
                upper += t.weight;
            }
            clipped += cf.clipped as usize;
            if let Some(h) = hessian.as_mut() {
                idx.clear();
                idx.push((t.state, -1.0));
                for (j, p) in &t.next {
                    idx.push((*j, g * p));
                }
                let c = t.weight * cf.curvature;
                for &(i, gi) in &idx {
                    for &(j, gj) in &idx {
                        h[(i, j)] += c * gi * gj;
                    }
                }
            }
            omega.push(cf.omega);
        }
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("objective is {loss}")));
        }
        let total: f64 = self.terms.iter().map(|t| t.weight).sum();
        Ok(LossEval { loss, gradient, hessian, omega, upper_fraction: upper / total, clipped })
    }

    pub fn loss(&self, v: &[f64], objective: &Objective) -> Result<f64> {
        Ok(self.evaluate(v, objective, false)?.loss)
    }

    /// `Σ_terms weight · ω` accumulated per pair: the implied occupancy.
    pub fn pair_mass(&self, omega: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.num_states * self.num_actions];
        for (t, w) in self.terms.iter().zip(omega) {
            m[t.state * self.num_actions + t.action] += t.weight * w;
        }
        m
    }
}

/// One logged solver iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub beta: f64,
    pub upper_fraction: f64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "step,loss,grad_norm,beta,upper_fraction";

    pub fn csv(&self) -> String {
        format!("{},{:.17e},{:.17e},{:.17e},{:.6}", self.step, self.loss, self.grad_norm, self.beta, self.upper_fraction)
    }
}

#[derive(Debug, Clone)]
pub enum Values {
    Tabular(Vec<f64>),
    Network(Mlp),
}

#[derive(Debug, Clone)]
pub struct DiceSolution {
    pub values: Values,
    /// ω* per suboptimal record (per term for distribution-built problems).
    pub omega_star: Vec<f64>,
    /// Implied occupancy per pair, tabular solves only.
    pub pair_mass: Option<Vec<f64>>,
    pub trace: Vec<TraceRow>,
    /// ω on every term after each iteration, when requested.
    pub omega_history: Vec<Vec<f64>>,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub final_loss: f64,
    pub beta: f64,
    pub clipped: usize,
    pub unsupported_states: Vec<usize>,
}

impl DiceSolution {
    pub fn tabular_values(&self) -> Option<&[f64]> {
        match &self.values {
            Values::Tabular(v) => Some(v),
            Values::Network(_) => None,
        }
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from(TraceRow::CSV_HEADER);
        s.push('\n');
        for r in &self.trace {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }
}

fn resolve_beta(config: &SolverConfig, max_ratio: f64) -> f64 {
    match (config.variant, config.beta_mode) {
        (Variant::DemoDiceLimit, _) => DEMODICE_BETA,
        (_, BetaMode::Fixed(b)) | (_, BetaMode::Limit(b)) => b,
        // Full-batch: every "minibatch" has the same max, the average's fixed point.
        (_, BetaMode::Auto) => max_ratio.max(MIN_AUTO_BETA),
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Minimizes the tabular objective by damped Newton steps with Armijo
/// backtracking. Coordinates of [`TabularProblem::unsupported_states`] and
/// states never touched by the problem stay at zero.
pub fn solve_tabular(problem: &TabularProblem, config: &SolverConfig) -> Result<DiceSolution> {
    config.validate()?;
    let beta = resolve_beta(config, problem.max_ratio());
    let objective = Objective::new(config.variant, config.alpha, beta)?.with_exp_clip(config.exp_clip);
    let ns = problem.num_states();
    let free: Vec<usize> = {
        let src = problem.source_states();
        (0..ns).filter(|s| src[*s]).collect()
    };
    let unsupported = problem.unsupported_states();
    let mut v = vec![0.0; ns];
    let mut trace = Vec::new();
    let mut history = Vec::new();
    let mut eval = problem.evaluate(&v, &objective, true)?;
    let restrict = |g: &[f64]| free.iter().map(|&s| g[s]).collect::<Vec<_>>();
    let mut converged = false;
    let mut damping = 1e-12;
    for step in 0..=config.max_iterations {
        let g_free = restrict(&eval.gradient);
        let grad_norm = norm(&g_free);
        if step % config.log_interval == 0 || grad_norm <= config.tolerance || step == config.max_iterations {
            trace.push(TraceRow { step, loss: eval.loss, grad_norm, beta, upper_fraction: eval.upper_fraction });
        }
        if config.record_omega {
            history.push(eval.omega.clone());
        }
        if grad_norm <= config.tolerance {
            converged = true;
            break;
        }
        if step == config.max_iterations {
            break;
        }
        let h = eval.hessian.as_ref().expect("hessian requested");
        let k = free.len();
        let scale = (0..k).map(|i| h[(free[i], free[i])]).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        let mut stationary = false;
        for _ in 0..12 {
            let mut hf = DMatrix::from_fn(k, k, |i, j| h[(free[i], free[j])]);
            for i in 0..k {
                hf[(i, i)] += damping * scale;
            }
            let direction = match hf.cholesky() {
                Some(ch) => ch.solve(&-DVector::from_column_slice(&g_free)),
                None => {
                    damping = (damping * 100.0).min(1e6);
                    continue;
                }
            };
            let slope: f64 = direction.iter().zip(&g_free).map(|(d, g)| d * g).sum();
            if !(slope < 0.0) {
                damping = (damping * 100.0).min(1e6);
                continue;
            }
            // Predicted decrease below the loss's rounding level: stationary at working precision.
            if -slope <= 1e-14 * eval.loss.abs().max(1.0) && grad_norm <= config.tolerance.sqrt() {
                stationary = true;
                break;
            }
            let mut t = 1.0;
            for _ in 0..60 {
                let mut trial = v.clone();
                for (i, &s) in free.iter().enumerate() {
                    trial[s] += t * direction[i];
                }
                if let Ok(l) = problem.loss(&trial, &objective) {
                    if l <= eval.loss + 1e-4 * t * slope {
                        v = trial;
                        accepted = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted {
                damping = if t == 1.0 { (damping * 0.1).max(1e-14) } else { damping };
                break;
            }
            damping = (damping * 100.0).min(1e6);
        }
        if stationary {
            trace.push(TraceRow { step, loss: eval.loss, grad_norm, beta, upper_fraction: eval.upper_fraction });
            converged = true;
            break;
        }
        if !accepted {
            break;
        }
        eval = problem.evaluate(&v, &objective, true)?;
    }
    let final_grad_norm = norm(&restrict(&eval.gradient));
    let omega_star = match problem.record_terms() {
        Some(map) => map.iter().map(|&t| eval.omega[t]).collect(),
        None => eval.omega.clone(),
    };
    Ok(DiceSolution {
        pair_mass: Some(problem.pair_mass(&eval.omega)),
        values: Values::Tabular(v),
        omega_star,
        trace,
        omega_history: history,
        converged,
        final_grad_norm,
        final_loss: eval.loss,
        beta,
        clipped: eval.clipped,
        unsupported_states: unsupported,
    })
}

/// Input encoding for the multiplier network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateFeatures {
    OneHot(usize),
    Raw(usize),
}

impl StateFeatures {
    pub fn for_dataset(data: &TransitionDataset) -> Self {
        match &data.body {
            DatasetBody::Tabular(t) => StateFeatures::OneHot(t.num_states),
            DatasetBody::Continuous(c) => StateFeatures::Raw(c.state_dim),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            StateFeatures::OneHot(n) | StateFeatures::Raw(n) => n,
        }
    }
}

/// Index-addressable state blocks of a dataset.
struct StateView<'a> {
    data: &'a TransitionDataset,
    features: StateFeatures,
}

#[derive(Clone, Copy)]
enum Slot {
    Source,
    Next,
    Initial,
}

impl StateView<'_> {
    fn push(&self, i: usize, slot: Slot, out: &mut Vec<f64>) {
        match &self.data.body {
            DatasetBody::Tabular(t) => {
                let s = match slot {
                    Slot::Source => t.records[i].state,
                    Slot::Next => t.records[i].next_state,
                    Slot::Initial => t.initial_states[i],
                };
                let start = out.len();
                out.resize(start + self.features.dim(), 0.0);
                out[start + s] = 1.0;
            }
            DatasetBody::Continuous(c) => out.extend_from_slice(match slot {
                Slot::Source => c.state(i),
                Slot::Next => c.next_state(i),
                Slot::Initial => c.initial_state(i),
            }),
        }
    }
}

/// Minibatch training of a multiplier network with the single-point
/// estimator. `log_ratio` holds one clipped log-ratio per record.
pub fn solve_approx(data: &TransitionDataset, log_ratio: &[f64], discount: f64, config: &SolverConfig) -> Result<DiceSolution> {
    config.validate()?;
    data.validate()?;
    if data.is_empty() || data.num_initial() == 0 {
        return Err(invalid("suboptimal data and its initial-state pool must be nonempty"));
    }
    if log_ratio.len() != data.len() {
        return Err(Error::ShapeMismatch("one log-ratio per record is required".into()));
    }
    if let Some(i) = log_ratio.iter().position(|x| !x.is_finite()) {
        return Err(Error::SupportViolation { index: i, detail: "log ratio is not finite".into() });
    }
    let features = StateFeatures::for_dataset(data);
    let view = StateView { data, features };
    let mut net = Mlp::new(features.dim(), &config.hidden, Activation::Relu, Head::Scalar, config.seed)?;
    let mut opt = OptimizerState::new(net.num_params(), config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5851_f42d_4c95_7f2d));
    let mut auto = AutoBeta::new(config.beta_decay);
    let b = config.batch_size;
    let (mut xs, mut xn, mut x0) = (Vec::new(), Vec::new(), Vec::new());
    let mut batch = vec![0usize; b];
    let mut trace = Vec::new();
    let mut beta = resolve_beta(config, 1.0);
    let mut clipped = 0;
    for step in 0..config.steps {
        xs.clear();
        xn.clear();
        x0.clear();
        for slot in batch.iter_mut() {
            *slot = rng.gen_range(0..data.len());
            view.push(*slot, Slot::Source, &mut xs);
            view.push(*slot, Slot::Next, &mut xn);
        }
        for _ in 0..b {
            view.push(rng.gen_range(0..data.num_initial()), Slot::Initial, &mut x0);
        }
        if config.variant != Variant::DemoDiceLimit && config.beta_mode == BetaMode::Auto {
            let ratios: Vec<f64> = batch.iter().map(|&i| log_ratio[i].exp()).collect();
            beta = auto.update(&ratios)?;
        }
        let objective = Objective::new(config.variant, config.alpha, beta)?.with_exp_clip(config.exp_clip);
        let cs = net.forward(&xs, b)?;
        let cn = net.forward(&xn, b)?;
        let c0 = net.forward(&x0, b)?;
        let inv = 1.0 / b as f64;
        let mut loss = (1.0 - discount) * c0.outputs().iter().sum::<f64>() * inv;
        let mut gs = vec![0.0; b];
        let mut gn = vec![0.0; b];
        let mut upper = 0usize;
        for k in 0..b {
            let e = log_ratio[batch[k]] + discount * cn.outputs()[k] - cs.outputs()[k];
            let cf = objective.apply(e, log_ratio[batch[k]]);
            loss += cf.h * inv;
            gs[k] = -cf.omega * inv;
            gn[k] = discount * cf.omega * inv;
            upper += (cf.branch == Branch::AboveBeta) as usize;
            clipped += cf.clipped as usize;
        }
        let mut grads = net.backward(&cs, &gs)?.params;
        let add = |acc: &mut Vec<f64>, g: &[f64]| acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
        add(&mut grads, &net.backward(&cn, &gn)?.params);
        add(&mut grads, &net.backward(&c0, &vec![(1.0 - discount) * inv; b])?.params);
        if config.gp_coefficient > 0.0 {
            let pen = net.penalty_from_cache(&cs, config.gp_coefficient)?;
            loss += pen.value;
            add(&mut grads, &pen.params);
        }
        if !loss.is_finite() {
            return Err(Error::TrainingFailure { step, detail: format!("multiplier loss is {loss}") });
        }
        let grad_norm = norm(&grads);
        if step % config.log_interval == 0 || step + 1 == config.steps {
            trace.push(TraceRow { step, loss, grad_norm, beta, upper_fraction: upper as f64 / b as f64 });
        }
        opt.step_net(&mut net, &grads).map_err(|e| Error::TrainingFailure { step, detail: e.to_string() })?;
    }
    let objective = Objective::new(config.variant, config.alpha, beta)?.with_exp_clip(config.exp_clip);
    let mut omega_star = Vec::with_capacity(data.len());
    for chunk in (0..data.len()).collect::<Vec<_>>().chunks(1024) {
        xs.clear();
        xn.clear();
        for &i in chunk {
            view.push(i, Slot::Source, &mut xs);
            view.push(i, Slot::Next, &mut xn);
        }
        let vs = net.predict(&xs, chunk.len())?;
        let vn = net.predict(&xn, chunk.len())?;
        for (k, &i) in chunk.iter().enumerate() {
            omega_star.push(objective.apply(log_ratio[i] + discount * vn[k] - vs[k], log_ratio[i]).omega);
        }
    }
    let last = trace.last().copied();
    Ok(DiceSolution {
        values: Values::Network(net),
        omega_star,
        pair_mass: None,
        trace,
        omega_history: Vec::new(),
        converged: true,
        final_grad_norm: last.map_or(f64::NAN, |r| r.grad_norm),
        final_loss: last.map_or(f64::NAN, |r| r.loss),
        beta,
        clipped,
        unsupported_states: Vec::new(),
    })
}

/// Solves from datasets: tabular data goes through [`solve_tabular`] (the
/// exact estimator needs `mdp`), continuous data through [`solve_approx`].
/// `log_ratio_pairs` is per pair for tabular data and per record otherwise.
pub fn solve(
    config: &SolverConfig,
    suboptimal: &TransitionDataset,
    log_ratio: &[f64],
    discount: f64,
    mdp: Option<&TabularMdp>,
) -> Result<DiceSolution> {
    match &suboptimal.body {
        DatasetBody::Tabular(_) => {
            let problem = TabularProblem::from_dataset(suboptimal, log_ratio, discount, config.estimator, mdp)?;
            solve_tabular(&problem, config)
        }
        DatasetBody::Continuous(_) => solve_approx(suboptimal, log_ratio, discount, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::random_simplex;
    use proptest::prelude::*;
    use rand::Rng;

    fn kl(beta: f64) -> RelaxedDivergenceSpec {
        RelaxedDivergenceSpec::new_unchecked(Generator::Kl, beta)
    }

    #[test]
    fn closed_form_examples() {
        let cf = omega_star_relaxdice(3.0, 0.2, &kl(2.0), DEFAULT_EXP_CLIP).unwrap();
        assert_eq!(cf.branch, Branch::AboveBeta);
        assert!((cf.omega - 1.5f64.exp()).abs() < 1e-12);
        assert!((cf.h - 5.316656320517666).abs() < 1e-9, "{}", cf.h);
        let cf = omega_star_relaxdice(1.0, 0.2, &kl(2.0), DEFAULT_EXP_CLIP).unwrap();
        assert_eq!(cf.branch, Branch::Linear);
        assert!((cf.omega - 0.712746518279897).abs() < 1e-12, "{}", cf.omega);
        let cf = omega_star_drc(3.0, 4f64.ln(), 0.2, &kl(2.0), DEFAULT_EXP_CLIP).unwrap();
        assert_eq!(cf.branch, Branch::Linear);
        assert!((cf.omega - 5.266524007887660).abs() < 1e-9, "{}", cf.omega);
    }

    #[test]
    fn threshold_gives_beta_and_ties_go_linear() {
        let (alpha, beta) = (0.3, 2.5);
        let spec = kl(beta);
        let e = (1.0 + alpha) * (beta.ln() + 1.0);
        let cf = omega_star_relaxdice(e, alpha, &spec, DEFAULT_EXP_CLIP).unwrap();
        assert!((cf.omega - beta).abs() < 1e-12);
        let upper = ((e / (1.0 + alpha)) - 1.0).exp();
        assert!((upper - beta).abs() < 1e-12);
    }

    #[test]
    fn demodice_limit_is_always_upper() {
        for e in [-8.0, -1.0, 0.0, 2.0, 7.0] {
            let cf = omega_star_demodice(e, 0.2, DEFAULT_EXP_CLIP).unwrap();
            assert_eq!(cf.branch, Branch::AboveBeta);
            assert!((cf.omega - (e / 1.2 - 1.0).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn clipping_caps_omega() {
        let cf = omega_star_relaxdice(100.0, 0.2, &kl(2.0), 30.0).unwrap();
        assert!(cf.clipped);
        assert_eq!(cf.omega, 30f64.exp());
        assert!(omega_star_drc(0.0, f64::NEG_INFINITY, 0.2, &kl(2.0), 30.0).is_err());
        assert!(omega_star_relaxdice(0.0, 0.0, &kl(2.0), 30.0).is_err());
    }

    #[test]
    fn auto_beta_rules() {
        let mut a = AutoBeta::with_initial(0.9, 1.5);
        let mut prev_gap = 1.5;
        for _ in 0..50 {
            let b = a.update(&[1.0, 3.0, 2.0]).unwrap();
            let gap = (3.0 - b).abs();
            assert!(gap <= prev_gap * 0.9 + 1e-12);
            prev_gap = gap;
        }
        let mut a = AutoBeta::new(0.99);
        assert_eq!(a.update(&[0.5, 0.9]).unwrap(), MIN_AUTO_BETA);
        let mut a = AutoBeta::with_initial(0.0, 5.0);
        assert_eq!(a.update(&[2.5, 1.0]).unwrap(), 2.5);
    }

    fn random_problem(seed: u64) -> (TabularMdp, TabularProblem) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(5, 3, 0.9, &mut rng).unwrap();
        let d_u = random_simplex(15, &mut rng);
        let log_r: Vec<f64> = (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p0 = mdp.initial().to_vec();
        let p = TabularProblem::from_distributions(&mdp, &d_u, &log_r, &p0).unwrap();
        (mdp, p)
    }

    #[test]
    fn e_v_constant_shift() {
        let (mdp, _) = random_problem(1);
        let log_r: Vec<f64> = (0..15).map(|i| i as f64 * 0.1).collect();
        let terms = e_v_exact(&mdp, &[0.7; 5], &log_r).unwrap();
        for (t, lr) in terms.iter().zip(&log_r) {
            assert!((t.e() - (lr + (0.9 - 1.0) * 0.7)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_v_unit_ratio_loss() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.99).unwrap();
        let p = TabularProblem::from_distributions(&mdp, &[1.0], &[0.0], &[1.0]).unwrap();
        let obj = Objective::new(Variant::RelaxDice, 0.2, 2.0).unwrap();
        assert!((p.loss(&[0.0], &obj).unwrap() - 0.6008342269536888).abs() < 1e-12);
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let (_, p) = random_problem(4);
        for variant in [Variant::RelaxDice, Variant::RelaxDiceDrc, Variant::DemoDiceLimit] {
            let obj = Objective::new(variant, 0.3, 1.7).unwrap();
            let v = [0.3, -0.2, 0.5, 0.1, -0.4];
            let ev = p.evaluate(&v, &obj, true).unwrap();
            let h = ev.hessian.unwrap();
            for j in 0..5 {
                let mut up = v;
                let mut dn = v;
                up[j] += 1e-6;
                dn[j] -= 1e-6;
                let gu = p.evaluate(&up, &obj, false).unwrap().gradient;
                let gd = p.evaluate(&dn, &obj, false).unwrap().gradient;
                for i in 0..5 {
                    let fd = (gu[i] - gd[i]) / 2e-6;
                    assert!((fd - h[(i, j)]).abs() < 1e-5 * (1.0 + fd.abs()), "{variant:?} {i},{j}: {fd} vs {}", h[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn solver_converges_and_flow_holds() {
        let (mdp, p) = random_problem(7);
        let mut config = SolverConfig::new(Variant::RelaxDice);
        config.beta_mode = BetaMode::Fixed(2.0);
        let sol = solve_tabular(&p, &config).unwrap();
        assert!(sol.converged, "grad norm {}", sol.final_grad_norm);
        let mass = sol.pair_mass.unwrap();
        let res = crate::mdp::flow_residual(&mdp, &mass).unwrap();
        assert!(res.iter().all(|r| r.abs() < 1e-7), "{res:?}");
    }

    #[test]
    fn one_state_recovers_unit_weights() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.99).unwrap();
        let p = TabularProblem::from_distributions(&mdp, &[1.0], &[0.0], &[1.0]).unwrap();
        for variant in [Variant::RelaxDice, Variant::RelaxDiceDrc, Variant::DemoDiceLimit] {
            let sol = solve_tabular(&p, &SolverConfig::new(variant)).unwrap();
            assert!((sol.omega_star[0] - 1.0).abs() < 1e-4);
            if variant != Variant::DemoDiceLimit {
                assert!(sol.final_loss.abs() < 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn unit_ratio_collapses_drc(e in -5.0f64..8.0, alpha in 0.01f64..2.0, beta in 1.001f64..10.0) {
            let spec = kl(beta);
            let a = omega_star_relaxdice(e, alpha, &spec, DEFAULT_EXP_CLIP).unwrap();
            let b = omega_star_drc(e, 0.0, alpha, &spec, DEFAULT_EXP_CLIP).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn envelope_and_positivity(e in -5.0f64..8.0, lr in -3.0f64..3.0, alpha in 0.01f64..2.0, beta in 1.001f64..10.0) {
            let spec = kl(beta);
            let h = |e: f64| omega_star_drc(e, lr, alpha, &spec, DEFAULT_EXP_CLIP).unwrap().h;
            let cf = omega_star_drc(e, lr, alpha, &spec, DEFAULT_EXP_CLIP).unwrap();
            prop_assert!(cf.omega > 0.0);
            let fd = (h(e + 1e-6) - h(e - 1e-6)) / 2e-6;
            prop_assert!((fd - cf.omega).abs() <= 1e-6 * (1.0 + cf.omega), "fd {} omega {}", fd, cf.omega);
            // h is the value of the inner objective at ω*.
            let direct = inner_objective(cf.omega, e, lr, alpha, &spec);
            prop_assert!((direct - cf.h).abs() <= 1e-9 * (1.0 + cf.h.abs()));
        }

        #[test]
        fn loss_is_convex(seed in 0u64..1000, t in 0.0f64..1.0) {
            let (_, p) = random_problem(seed);
            let obj = Objective::new(Variant::RelaxDice, 0.2, 2.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let lhs = p.loss(&mid, &obj).unwrap();
            let rhs = t * p.loss(&a, &obj).unwrap() + (1.0 - t) * p.loss(&b, &obj).unwrap();
            prop_assert!(lhs <= rhs + 1e-9);
        }
    }
}
