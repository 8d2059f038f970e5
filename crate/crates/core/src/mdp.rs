//! Finite MDPs, discounted occupancy measures and the policy/occupancy
//! correspondence.
//!
//! Everything here is exact: occupancy measures are obtained from a dense LU
//! solve of the Bellman flow equations, never by iteration.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::data::{DatasetBody, Role, TabularData, Transition, TransitionDataset};
use crate::error::{invalid, Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

fn check_simplex(row: &[f64], what: &str) -> Result<()> {
    let mut sum = 0.0;
    for &p in row {
        if !p.is_finite() || p < 0.0 {
            return Err(invalid(format!("{what}: entry {p} is not a nonnegative finite number")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid(format!("{what}: sums to {sum}, expected 1")));
    }
    Ok(())
}

/// A finite MDP without rewards.
///
/// `transition` is laid out as `[s][a][s']`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    initial: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        initial: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(invalid("MDP needs at least one state and one action"));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::ShapeMismatch(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if initial.len() != num_states {
            return Err(Error::ShapeMismatch(format!(
                "initial distribution has {} entries, expected {num_states}",
                initial.len()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(invalid(format!("discount {discount} outside [0, 1)")));
        }
        for (i, row) in transition.chunks(num_states).enumerate() {
            check_simplex(row, &format!("T(.|s={}, a={})", i / num_actions, i % num_actions))?;
        }
        check_simplex(&initial, "initial distribution")?;
        Ok(Self { num_states, num_actions, transition, initial, discount })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Raw `[s][a][s']` tensor.
    pub fn transition(&self) -> &[f64] {
        &self.transition
    }

    /// `T(.|s, a)`.
    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    /// `(Tv)(s, a) = sum_s' T(s'|s,a) v(s')`.
    pub fn expected_next(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.next_distribution(s, a).iter().zip(v).map(|(p, x)| p * x).sum()
    }

    /// Same MDP with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.initial.clone(),
            discount,
        )
    }

    /// A random MDP with Dirichlet(1)-like rows, for tests and oracles.
    pub fn random(num_states: usize, num_actions: usize, discount: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            transition.extend(random_simplex(num_states, rng));
        }
        let initial = random_simplex(num_states, rng);
        Self::new(num_states, num_actions, transition, initial, discount)
    }
}

/// Uniform draw from the probability simplex (normalized exponentials).
pub fn random_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
    v
}

/// Stochastic policy `pi[a|s]`, row-major by state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != num_states * num_actions {
            return Err(Error::ShapeMismatch(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                num_states * num_actions
            )));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            check_simplex(row, &format!("pi(.|s={s})"))?;
        }
        Ok(Self { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; num_states * num_actions],
        }
    }

    pub fn random(num_states: usize, num_actions: usize, rng: &mut impl Rng) -> Self {
        let probs = (0..num_states).flat_map(|_| random_simplex(num_actions, rng)).collect();
        Self { num_states, num_actions, probs }
    }

    /// Normalizes nonnegative per-pair weights into a policy. Rows with no
    /// mass become uniform; the returned list names those states.
    pub fn from_weights(num_states: usize, num_actions: usize, weights: &[f64]) -> Result<(Self, Vec<usize>)> {
        if weights.len() != num_states * num_actions {
            return Err(Error::ShapeMismatch(format!(
                "weights have {} entries, expected {}",
                weights.len(),
                num_states * num_actions
            )));
        }
        let mut probs = vec![0.0; weights.len()];
        let mut empty = Vec::new();
        for s in 0..num_states {
            let row = &weights[s * num_actions..(s + 1) * num_actions];
            if let Some(w) = row.iter().find(|w| !w.is_finite() || **w < 0.0) {
                return Err(invalid(format!("weight {w} at state {s} is not a nonnegative finite number")));
            }
            let total: f64 = row.iter().sum();
            let out = &mut probs[s * num_actions..(s + 1) * num_actions];
            if total > 0.0 {
                out.iter_mut().zip(row).for_each(|(o, w)| *o = w / total);
            } else {
                out.iter_mut().for_each(|o| *o = 1.0 / num_actions as f64);
                empty.push(s);
            }
        }
        Ok((Self { num_states, num_actions, probs }, empty))
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn sample(&self, s: usize, rng: &mut impl Rng) -> usize {
        sample_categorical(self.row(s), rng)
    }
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left a sliver of mass at the top; return the last supported index.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// A distribution over state-action pairs together with its Bellman-flow
/// residual under the MDP it was checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    num_states: usize,
    num_actions: usize,
    d: Vec<f64>,
    flow_residual: Vec<f64>,
}

impl OccupancyMeasure {
    /// Wraps an arbitrary nonnegative `[s][a]` table and records its flow
    /// residual under `mdp`.
    pub fn from_table(mdp: &TabularMdp, d: Vec<f64>) -> Result<Self> {
        if d.len() != mdp.num_pairs() {
            return Err(Error::ShapeMismatch(format!(
                "occupancy has {} entries, expected {}",
                d.len(),
                mdp.num_pairs()
            )));
        }
        if let Some(x) = d.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(invalid(format!("occupancy entry {x} is not a nonnegative finite number")));
        }
        let flow_residual = flow_residual(mdp, &d)?;
        Ok(Self { num_states: mdp.num_states(), num_actions: mdp.num_actions(), d, flow_residual })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[s * self.num_actions + a]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }

    pub fn flow_residual(&self) -> &[f64] {
        &self.flow_residual
    }

    pub fn max_flow_residual(&self) -> f64 {
        self.flow_residual.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn total_mass(&self) -> f64 {
        self.d.iter().sum()
    }

    pub fn state_marginal(&self) -> Vec<f64> {
        self.d.chunks(self.num_actions).map(|row| row.iter().sum()).collect()
    }
}

/// Exact discounted occupancy measure of `policy` in `mdp`.
///
/// Solves `(I - gamma P_pi^T) d_s = (1 - gamma) p0` for the state marginal,
/// then sets `d(s, a) = d_s(s) pi(a|s)`.
pub fn occupancy_of_policy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<OccupancyMeasure> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if policy.num_states() != ns || policy.num_actions() != na {
        return Err(Error::ShapeMismatch(format!(
            "policy is {}x{}, MDP is {ns}x{na}",
            policy.num_states(),
            policy.num_actions()
        )));
    }
    let gamma = mdp.discount();
    // A = I - gamma P^T where P[s][s'] = sum_a pi(a|s) T(s'|s,a).
    let mut a = DMatrix::<f64>::identity(ns, ns);
    for s in 0..ns {
        for act in 0..na {
            let p = policy.prob(s, act);
            if p == 0.0 {
                continue;
            }
            for (s2, t) in mdp.next_distribution(s, act).iter().enumerate() {
                a[(s2, s)] -= gamma * p * t;
            }
        }
    }
    let b = DVector::from_iterator(ns, mdp.initial().iter().map(|p| (1.0 - gamma) * p));
    let marginal = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Numerical("Bellman flow system is singular".into()))?;
    let mut d = vec![0.0; ns * na];
    for s in 0..ns {
        // Round-off can leave tiny negatives on unreachable states.
        let ds = marginal[s].max(0.0);
        for act in 0..na {
            d[s * na + act] = ds * policy.prob(s, act);
        }
    }
    OccupancyMeasure::from_table(mdp, d)
}

/// `pi_d(a|s) = d(s,a) / sum_a' d(s,a')`; zero-marginal states get a uniform row.
pub fn policy_of_occupancy(d: &OccupancyMeasure) -> TabularPolicy {
    TabularPolicy::from_weights(d.num_states, d.num_actions, &d.d)
        .map(|(p, _)| p)
        .expect("occupancy entries are validated nonnegative")
}

/// Per-state Bellman-flow violation
/// `sum_a d(s,a) - (1-gamma) p0(s) - gamma sum_{s',a'} T(s|s',a') d(s',a')`.
pub fn flow_residual(mdp: &TabularMdp, d: &[f64]) -> Result<Vec<f64>> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    if d.len() != ns * na {
        return Err(Error::ShapeMismatch(format!("occupancy has {} entries, expected {}", d.len(), ns * na)));
    }
    let gamma = mdp.discount();
    let mut residual: Vec<f64> = mdp.initial().iter().map(|p| -(1.0 - gamma) * p).collect();
    for s in 0..ns {
        for a in 0..na {
            let mass = d[s * na + a];
            residual[s] += mass;
            if mass == 0.0 {
                continue;
            }
            for (s2, t) in mdp.next_distribution(s, a).iter().enumerate() {
                residual[s2] -= gamma * t * mass;
            }
        }
    }
    Ok(residual)
}

/// Expected discounted return `E[sum_t gamma^t r(s_t, a_t)]` for a per-pair reward.
pub fn expected_return(mdp: &TabularMdp, policy: &TabularPolicy, reward: &[f64]) -> Result<f64> {
    if reward.len() != mdp.num_pairs() {
        return Err(Error::ShapeMismatch(format!(
            "reward has {} entries, expected {}",
            reward.len(),
            mdp.num_pairs()
        )));
    }
    let d = occupancy_of_policy(mdp, policy)?;
    let per_step: f64 = d.as_slice().iter().zip(reward).map(|(x, r)| x * r).sum();
    Ok(per_step / (1.0 - mdp.discount()))
}

/// How sampled episodes end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Each step ends the episode with probability `1 - gamma`; the record
    /// frequencies then match the discounted occupancy in expectation.
    Geometric,
    /// Episodes last exactly this many steps.
    FixedHorizon(usize),
}

/// Rolls out `policy` for exactly `num_steps` transitions, restarting from
/// `p0` whenever an episode ends. Each episode start is appended to the
/// initial-state pool.
pub fn sample_trajectories(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    num_steps: usize,
    termination: Termination,
    seed: u64,
) -> Result<TransitionDataset> {
    if num_steps == 0 {
        return Err(invalid("num_steps must be at least 1"));
    }
    if policy.num_states() != mdp.num_states() || policy.num_actions() != mdp.num_actions() {
        return Err(Error::ShapeMismatch("policy does not match MDP".into()));
    }
    if termination == Termination::FixedHorizon(0) {
        return Err(invalid("fixed horizon must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(num_steps);
    let mut initial_states = Vec::new();
    let mut state = sample_categorical(mdp.initial(), &mut rng);
    initial_states.push(state);
    let mut t = 0usize;
    for _ in 0..num_steps {
        let action = policy.sample(state, &mut rng);
        let next = sample_categorical(mdp.next_distribution(state, action), &mut rng);
        records.push(Transition { state, action, next_state: next });
        t += 1;
        let done = match termination {
            Termination::Geometric => rng.gen::<f64>() >= mdp.discount(),
            Termination::FixedHorizon(h) => t >= h,
        };
        if done {
            t = 0;
            state = sample_categorical(mdp.initial(), &mut rng);
            initial_states.push(state);
        } else {
            state = next;
        }
    }
    // The final restart, if any, produced no record.
    if t == 0 && initial_states.len() > 1 {
        initial_states.pop();
    }
    Ok(TransitionDataset::new(
        Role::Unspecified,
        format!("rollout steps={num_steps} termination={termination:?} seed={seed}"),
        DatasetBody::Tabular(TabularData {
            num_states: mdp.num_states(),
            num_actions: mdp.num_actions(),
            records,
            initial_states,
        }),
    ))
}

/// Where gridworld episodes start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartDistribution {
    /// Uniform over every non-goal cell.
    Uniform,
    /// A single cell `(x, y)`.
    Cell(usize, usize),
}

/// Parameters of the synthetic navigation task.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub goal: (usize, usize),
    /// Probability that the intended move is replaced by a uniformly random one.
    pub slip: f64,
    pub discount: f64,
    pub start: StartDistribution,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            width: 10,
            height: 10,
            goal: (9, 9),
            slip: 0.1,
            discount: 0.99,
            start: StartDistribution::Uniform,
        }
    }
}

/// A 4-action gridworld whose goal cell leads to an absorbing terminal state.
///
/// Actions are 0 = up (+y), 1 = right (+x), 2 = down (-y), 3 = left (-x);
/// moves into a wall leave the agent in place.
#[derive(Debug, Clone)]
pub struct Gridworld {
    spec: GridSpec,
    mdp: TabularMdp,
    /// Reward 1 for acting in the goal cell, 0 elsewhere. Used only for evaluation.
    reward: Vec<f64>,
}

pub const GRID_ACTIONS: usize = 4;

impl Gridworld {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let (w, h) = (spec.width, spec.height);
        if w < 2 || h < 2 {
            return Err(invalid(format!("grid must be at least 2x2, got {w}x{h}")));
        }
        if spec.goal.0 >= w || spec.goal.1 >= h {
            return Err(invalid(format!("goal {:?} outside {w}x{h} grid", spec.goal)));
        }
        if !(0.0..1.0).contains(&spec.slip) {
            return Err(invalid(format!("slip {} outside [0, 1)", spec.slip)));
        }
        let cells = w * h;
        let ns = cells + 1;
        let absorbing = cells;
        let goal = spec.goal.1 * w + spec.goal.0;
        let mut transition = vec![0.0; ns * GRID_ACTIONS * ns];
        for s in 0..ns {
            for a in 0..GRID_ACTIONS {
                let row = &mut transition[(s * GRID_ACTIONS + a) * ns..(s * GRID_ACTIONS + a + 1) * ns];
                if s == absorbing || s == goal {
                    row[absorbing] = 1.0;
                    continue;
                }
                row[Self::step_cell(w, h, s, a)] += 1.0 - spec.slip;
                for b in 0..GRID_ACTIONS {
                    row[Self::step_cell(w, h, s, b)] += spec.slip / GRID_ACTIONS as f64;
                }
            }
        }
        let mut initial = vec![0.0; ns];
        match spec.start {
            StartDistribution::Uniform => {
                for (s, p) in initial.iter_mut().enumerate().take(cells) {
                    if s != goal {
                        *p = 1.0 / (cells - 1) as f64;
                    }
                }
            }
            StartDistribution::Cell(x, y) => {
                if x >= w || y >= h {
                    return Err(invalid(format!("start cell ({x}, {y}) outside grid")));
                }
                initial[y * w + x] = 1.0;
            }
        }
        let mdp = TabularMdp::new(ns, GRID_ACTIONS, transition, initial, spec.discount)?;
        let mut reward = vec![0.0; ns * GRID_ACTIONS];
        reward[goal * GRID_ACTIONS..(goal + 1) * GRID_ACTIONS].fill(1.0);
        Ok(Self { spec, mdp, reward })
    }

    fn step_cell(w: usize, h: usize, s: usize, a: usize) -> usize {
        let (x, y) = (s % w, s / w);
        let (nx, ny) = match a {
            0 if y + 1 < h => (x, y + 1),
            1 if x + 1 < w => (x + 1, y),
            2 if y > 0 => (x, y - 1),
            3 if x > 0 => (x - 1, y),
            _ => (x, y),
        };
        ny * w + nx
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn goal_state(&self) -> usize {
        self.spec.goal.1 * self.spec.width + self.spec.goal.0
    }

    pub fn absorbing_state(&self) -> usize {
        self.spec.width * self.spec.height
    }

    /// Manhattan distance to the goal for every cell (the grid has no obstacles).
    pub fn distance_to_goal(&self) -> Vec<usize> {
        let (w, h) = (self.spec.width, self.spec.height);
        let (gx, gy) = self.spec.goal;
        (0..w * h).map(|s| (s % w).abs_diff(gx) + (s / w).abs_diff(gy)).collect()
    }

    /// Softmax over negative post-move distance to the goal with the given
    /// temperature; goal and absorbing states act uniformly.
    pub fn expert_policy(&self, temperature: f64) -> Result<TabularPolicy> {
        if !(temperature > 0.0) {
            return Err(invalid(format!("temperature {temperature} must be positive")));
        }
        let (w, h) = (self.spec.width, self.spec.height);
        let dist = self.distance_to_goal();
        let ns = self.mdp.num_states();
        let goal = self.goal_state();
        let mut probs = vec![0.0; ns * GRID_ACTIONS];
        for s in 0..ns {
            let row = &mut probs[s * GRID_ACTIONS..(s + 1) * GRID_ACTIONS];
            if s == goal || s == self.absorbing_state() {
                row.fill(1.0 / GRID_ACTIONS as f64);
                continue;
            }
            let scores: Vec<f64> = (0..GRID_ACTIONS)
                .map(|a| -(dist[Self::step_cell(w, h, s, a)] as f64) / temperature)
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|x| (x - max).exp()).sum();
            for (p, x) in row.iter_mut().zip(&scores) {
                *p = (x - max).exp() / z;
            }
        }
        TabularPolicy::new(ns, GRID_ACTIONS, probs)
    }

    pub fn random_policy(&self) -> TabularPolicy {
        TabularPolicy::uniform(self.mdp.num_states(), GRID_ACTIONS)
    }

    /// Exact expected discounted return of `policy`.
    pub fn evaluate(&self, policy: &TabularPolicy) -> Result<f64> {
        expected_return(&self.mdp, policy, &self.reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> TabularMdp {
        // 0 -> 1, 1 -> 1, single action.
        TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0], 0.5).unwrap()
    }

    #[test]
    fn single_state_self_loop_is_point_mass() {
        for gamma in [0.0, 0.5, 0.99] {
            let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], gamma).unwrap();
            let d = occupancy_of_policy(&mdp, &TabularPolicy::uniform(1, 1)).unwrap();
            assert!((d.get(0, 0) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn chain_matches_truncated_rollout_sum() {
        let mdp = chain();
        let d = occupancy_of_policy(&mdp, &TabularPolicy::uniform(2, 1)).unwrap();
        // (1-gamma) sum_t gamma^t 1[s_t = s] with s_0 = 0, s_t = 1 for t >= 1.
        let gamma: f64 = 0.5;
        let d0 = 1.0 - gamma;
        let d1: f64 = (1..=60).map(|t| (1.0 - gamma) * gamma.powi(t)).sum();
        assert!((d.get(0, 0) - d0).abs() < 1e-12);
        assert!((d.get(1, 0) - d1).abs() < 1e-12);
        assert!((d.get(0, 0) - 0.5).abs() < 1e-12 && (d.get(1, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_mdp_flow_residual_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mdp = TabularMdp::random(5, 3, 0.9, &mut rng).unwrap();
        let pi = TabularPolicy::random(5, 3, &mut rng);
        let d = occupancy_of_policy(&mdp, &pi).unwrap();
        assert!(d.max_flow_residual() <= 1e-10);
        assert!((d.total_mass() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn policy_of_occupancy_normalizes_and_fills_uniform() {
        let mdp = TabularMdp::new(1, 2, vec![1.0, 1.0], vec![1.0], 0.5).unwrap();
        let d = OccupancyMeasure::from_table(&mdp, vec![0.25, 0.75]).unwrap();
        assert_eq!(policy_of_occupancy(&d).row(0), &[0.25, 0.75]);

        let mdp2 = TabularMdp::new(2, 2, vec![0.5; 8], vec![1.0, 0.0], 0.5).unwrap();
        let d2 = OccupancyMeasure::from_table(&mdp2, vec![0.1, 0.3, 0.0, 0.0]).unwrap();
        let pi = policy_of_occupancy(&d2);
        assert_eq!(pi.row(1), &[0.5, 0.5]);
        assert!((pi.prob(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn residual_is_affine_with_offset_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(4, 2, 0.8, &mut rng).unwrap();
        let r0 = flow_residual(&mdp, &[0.0; 8]).unwrap();
        for (r, p) in r0.iter().zip(mdp.initial()) {
            assert!((r + (1.0 - 0.8) * p).abs() < 1e-15);
        }
        // Affine: residual(x + y) - residual(x) - residual(y) + residual(0) = 0.
        let x: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.gen()).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let (rx, ry, rxy) = (
            flow_residual(&mdp, &x).unwrap(),
            flow_residual(&mdp, &y).unwrap(),
            flow_residual(&mdp, &xy).unwrap(),
        );
        for i in 0..4 {
            assert!((rxy[i] - rx[i] - ry[i] + r0[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_table_is_infeasible_on_chain() {
        let mdp = chain();
        let r = flow_residual(&mdp, &[0.5, 0.5]).unwrap();
        assert!(r.iter().all(|x| x.abs() < 1e-15));
        let r = flow_residual(&mdp, &[0.2, 0.8]).unwrap();
        assert!(r.iter().any(|x| x.abs() > 1e-3));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![1.0], 0.5).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![1.0], 1.0).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.5], 0.5).is_err());
        assert!(TabularPolicy::new(1, 2, vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn sampling_single_state() {
        let mdp = TabularMdp::new(1, 1, vec![1.0], vec![1.0], 0.9).unwrap();
        let ds = sample_trajectories(&mdp, &TabularPolicy::uniform(1, 1), 10, Termination::Geometric, 1).unwrap();
        let tab = ds.tabular().unwrap();
        assert_eq!(tab.records.len(), 10);
        assert!(tab.records.iter().all(|t| *t == Transition { state: 0, action: 0, next_state: 0 }));
        assert!(tab.initial_states.iter().all(|s| *s == 0));
    }

    #[test]
    fn sampling_is_deterministic_and_horizon_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = TabularMdp::random(4, 2, 0.9, &mut rng).unwrap();
        let pi = TabularPolicy::random(4, 2, &mut rng);
        let a = sample_trajectories(&mdp, &pi, 500, Termination::FixedHorizon(7), 5).unwrap();
        let b = sample_trajectories(&mdp, &pi, 500, Termination::FixedHorizon(7), 5).unwrap();
        assert_eq!(a, b);
        // 500 = 71 * 7 + 3 -> 72 episodes.
        assert_eq!(a.tabular().unwrap().initial_states.len(), 72);
    }

    #[test]
    fn gridworld_shapes_and_rows() {
        let g = Gridworld::new(GridSpec { width: 3, height: 3, goal: (2, 2), slip: 0.0, ..Default::default() }).unwrap();
        assert_eq!(g.mdp().num_states(), 10);
        for s in 0..10 {
            for a in 0..4 {
                let row = g.mdp().next_distribution(s, a);
                assert!(row.iter().all(|p| *p == 0.0 || *p == 1.0), "slip 0 must be deterministic");
            }
        }
        let g = Gridworld::new(GridSpec { width: 3, height: 3, goal: (2, 2), slip: 0.3, ..Default::default() }).unwrap();
        for s in 0..10 {
            for a in 0..4 {
                let sum: f64 = g.mdp().next_distribution(s, a).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        assert!(Gridworld::new(GridSpec { goal: (10, 0), ..Default::default() }).is_err());
    }

    #[test]
    fn expert_beats_random() {
        let g = Gridworld::new(GridSpec::default()).unwrap();
        let expert = g.evaluate(&g.expert_policy(0.1).unwrap()).unwrap();
        let random = g.evaluate(&g.random_policy()).unwrap();
        assert!(expert > random, "expert {expert} random {random}");
    }
}
