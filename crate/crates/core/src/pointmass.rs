//! A 2-D point mass that should be steered to a goal.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ContinuousData, DatasetBody, Role, TransitionDataset};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PointMassSpec {
    pub goal: [f64; 2],
    /// Displacement per unit action.
    pub step_scale: f64,
    /// Std of the Gaussian transition noise.
    pub noise: f64,
    pub horizon: usize,
    pub discount: f64,
    /// Std of the expert's action noise.
    pub expert_noise: f64,
}

impl Default for PointMassSpec {
    fn default() -> Self {
        Self { goal: [0.7, 0.7], step_scale: 0.1, noise: 0.01, horizon: 50, discount: 0.99, expert_noise: 0.1 }
    }
}

/// Behavior used to generate data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointMassBehavior {
    Expert,
    Random,
}

#[derive(Debug, Clone)]
pub struct PointMass {
    spec: PointMassSpec,
}

impl PointMass {
    pub fn new(spec: PointMassSpec) -> Result<Self> {
        if !(spec.step_scale > 0.0) || !(spec.noise >= 0.0) || spec.horizon == 0 || !(0.0..1.0).contains(&spec.discount) {
            return Err(invalid("point-mass parameters out of range"));
        }
        if spec.goal.iter().any(|g| g.abs() > 1.0) {
            return Err(invalid("goal must lie inside [-1, 1]^2"));
        }
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &PointMassSpec {
        &self.spec
    }

    pub fn initial_state(&self, rng: &mut impl Rng) -> [f64; 2] {
        [rng.gen_range(-1.0..0.0), rng.gen_range(-1.0..0.0)]
    }

    pub fn step(&self, s: &[f64], a: &[f64], rng: &mut impl Rng) -> [f64; 2] {
        let noise = Normal::new(0.0, self.spec.noise.max(1e-300)).expect("valid std");
        let mut next = [0.0; 2];
        for i in 0..2 {
            let a = a[i].clamp(-1.0, 1.0);
            let eps = if self.spec.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            next[i] = (s[i] + self.spec.step_scale * a + eps).clamp(-1.0, 1.0);
        }
        next
    }

    pub fn reward(&self, s: &[f64]) -> f64 {
        -((s[0] - self.spec.goal[0]).powi(2) + (s[1] - self.spec.goal[1]).powi(2)).sqrt()
    }

    /// The scripted behavior's action at `s`.
    pub fn behavior_action(&self, behavior: PointMassBehavior, s: &[f64], rng: &mut impl Rng) -> [f64; 2] {
        match behavior {
            PointMassBehavior::Random => [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
            PointMassBehavior::Expert => {
                let noise = Normal::new(0.0, self.spec.expert_noise.max(1e-300)).expect("valid std");
                let mut a = [0.0; 2];
                for i in 0..2 {
                    let eps = if self.spec.expert_noise > 0.0 { noise.sample(rng) } else { 0.0 };
                    a[i] = ((self.spec.goal[i] - s[i]) / self.spec.step_scale + eps).clamp(-1.0, 1.0);
                }
                a
            }
        }
    }

    /// Fixed-horizon rollouts of a scripted behavior, `num_steps` records.
    pub fn sample(&self, behavior: PointMassBehavior, num_steps: usize, seed: u64) -> Result<TransitionDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = ContinuousData {
            state_dim: 2,
            action_dim: 2,
            states: Vec::with_capacity(2 * num_steps),
            actions: Vec::with_capacity(2 * num_steps),
            next_states: Vec::with_capacity(2 * num_steps),
            initial_states: Vec::new(),
        };
        let mut s = self.initial_state(&mut rng);
        data.initial_states.extend_from_slice(&s);
        let mut t = 0;
        for i in 0..num_steps {
            let a = self.behavior_action(behavior, &s, &mut rng);
            let next = self.step(&s, &a, &mut rng);
            data.states.extend_from_slice(&s);
            data.actions.extend_from_slice(&a);
            data.next_states.extend_from_slice(&next);
            t += 1;
            if t >= self.spec.horizon && i + 1 < num_steps {
                t = 0;
                s = self.initial_state(&mut rng);
                data.initial_states.extend_from_slice(&s);
            } else {
                s = next;
            }
        }
        Ok(TransitionDataset::new(
            Role::Unspecified,
            format!("pointmass behavior={behavior:?} steps={num_steps} seed={seed}"),
            DatasetBody::Continuous(data),
        ))
    }

    /// Mean undiscounted return of `policy` over `episodes` rollouts.
    pub fn evaluate(&self, policy: &mut dyn FnMut(&[f64], &mut ChaCha8Rng) -> Result<Vec<f64>>, episodes: usize, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for _ in 0..episodes {
            let mut s = self.initial_state(&mut rng);
            for _ in 0..self.spec.horizon {
                let a = policy(&s, &mut rng)?;
                s = self.step(&s, &a, &mut rng);
                total += self.reward(&s);
            }
        }
        Ok(total / episodes.max(1) as f64)
    }

    pub fn evaluate_behavior(&self, behavior: PointMassBehavior, episodes: usize, seed: u64) -> Result<f64> {
        self.evaluate(&mut |s, rng| Ok(self.behavior_action(behavior, s, rng).to_vec()), episodes, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expert_beats_random() {
        let env = PointMass::new(PointMassSpec::default()).unwrap();
        let e = env.evaluate_behavior(PointMassBehavior::Expert, 200, 1).unwrap();
        let r = env.evaluate_behavior(PointMassBehavior::Random, 200, 1).unwrap();
        assert!(e > r + 5.0, "expert {e} random {r}");
    }

    #[test]
    fn sampling_shapes_and_determinism() {
        let env = PointMass::new(PointMassSpec::default()).unwrap();
        let a = env.sample(PointMassBehavior::Expert, 120, 4).unwrap();
        let b = env.sample(PointMassBehavior::Expert, 120, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 120);
        assert_eq!(a.num_initial(), 3);
        a.validate().unwrap();
    }
}
