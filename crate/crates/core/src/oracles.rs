//! Brute-force reference computations.
//!
//! Nothing here calls into the solver, divergence or closed-form code: the
//! relaxed generator, the inner objective and occupancy measures are
//! re-derived from their definitions so that agreement means something.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::mdp::{TabularMdp, TabularPolicy};

/// Log-spaced grid over ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { lo: 1e-8, hi: 1e8, points: 1_000_000 }
    }
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi.is_finite()) || points < 1000 {
            return Err(invalid(format!("grid needs 0 < lo < hi and at least 1000 points, got [{lo}, {hi}] x {points}")));
        }
        Ok(Self { lo, hi, points })
    }

    fn point(&self, i: usize) -> f64 {
        let t = i as f64 / (self.points - 1) as f64;
        (self.lo.ln() + t * (self.hi.ln() - self.lo.ln())).exp()
    }

    fn expanded(&self) -> Self {
        Self { lo: self.lo * 1e-4, hi: self.hi * 1e4, points: self.points }
    }
}

/// `u ln u + β - 1 - ln β` above β, `(ln β + 1)(u - 1)` below.
pub fn relaxed_kl_generator(u: f64, beta: f64) -> f64 {
    if u >= beta {
        let ulnu = if u == 0.0 { 0.0 } else { u * u.ln() };
        ulnu + beta - 1.0 - beta.ln()
    } else {
        (beta.ln() + 1.0) * (u - 1.0)
    }
}

/// `ω e - ω ln ω - α ρ g(ω/ρ)` with the relaxed generator `g`, `ρ = r̂`.
pub fn h_dagger(omega: f64, e: f64, log_r_hat: f64, alpha: f64, beta: f64) -> f64 {
    let rho = log_r_hat.exp();
    omega * e - omega * omega.ln() - alpha * rho * relaxed_kl_generator(omega / rho, beta)
}

pub fn h(omega: f64, e: f64, alpha: f64, beta: f64) -> f64 {
    h_dagger(omega, e, 0.0, alpha, beta)
}

fn golden_max(f: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * b.abs().max(1e-300) {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Grid maximum of `f`, refined by golden section over the neighbouring
/// cells. Expands the grid once if the maximum sits on its edge.
pub fn grid_argmax(f: &dyn Fn(f64) -> f64, grid: &GridSpec) -> Result<(f64, f64)> {
    let mut g = *grid;
    for attempt in 0..2 {
        let mut best = (0, f64::NEG_INFINITY);
        for i in 0..g.points {
            let val = f(g.point(i));
            if val > best.1 {
                best = (i, val);
            }
        }
        let i = best.0;
        if i == 0 || i + 1 == g.points {
            if attempt == 0 {
                g = g.expanded();
                continue;
            }
            return Err(Error::Numerical(format!("maximum at the edge of the grid [{}, {}]", g.lo, g.hi)));
        }
        let omega = golden_max(f, g.point(i - 1), g.point(i + 1));
        let value = f(omega);
        return Ok(if value >= best.1 { (omega, value) } else { (g.point(i), best.1) });
    }
    unreachable!()
}

/// Grid maximizer of the RelaxDICE inner objective.
pub fn grid_argmax_h(e: f64, alpha: f64, beta: f64, grid: &GridSpec) -> Result<(f64, f64)> {
    grid_argmax(&|w| h(w, e, alpha, beta), grid)
}

/// Grid maximizer of the corrected inner objective.
pub fn grid_argmax_h_dagger(e: f64, log_r_hat: f64, alpha: f64, beta: f64, grid: &GridSpec) -> Result<(f64, f64)> {
    grid_argmax(&|w| h_dagger(w, e, log_r_hat, alpha, beta), grid)
}

/// Whether `f` rises strictly up to `peak` and falls strictly after it on
/// the raw grid (ignoring steps below `tol`).
pub fn unimodal_on_grid(f: &dyn Fn(f64) -> f64, grid: &GridSpec, peak: f64, tol: f64) -> bool {
    let mut prev = f(grid.point(0));
    for i in 1..grid.points {
        let x = grid.point(i);
        let cur = f(x);
        let rising = x <= peak;
        if rising && cur < prev - tol || !rising && grid.point(i - 1) >= peak && cur > prev + tol {
            return false;
        }
        prev = cur;
    }
    true
}

/// Occupancy by iterating the flow equations from zero until the update
/// is below 1e-15.
pub fn occupancy_by_iteration(mdp: &TabularMdp, policy: &TabularPolicy) -> Vec<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let g = mdp.discount();
    let p0 = mdp.initial();
    let t = mdp.transition();
    let mut ds = vec![0.0; ns];
    for _ in 0..1_000_000 {
        let mut next: Vec<f64> = p0.iter().map(|p| (1.0 - g) * p).collect();
        for s in 0..ns {
            for a in 0..na {
                let m = g * ds[s] * policy.prob(s, a);
                if m != 0.0 {
                    let row = &t[(s * na + a) * ns..(s * na + a + 1) * ns];
                    for (n, p) in next.iter_mut().zip(row) {
                        *n += m * p;
                    }
                }
            }
        }
        let delta = next.iter().zip(&ds).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ds = next;
        if delta < 1e-15 {
            break;
        }
    }
    let mut d = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            d[s * na + a] = ds[s] * policy.prob(s, a);
        }
    }
    d
}

/// `Σ q f(p/q)` with `f(u) = u ln u`, summed directly.
pub fn kl_by_summation(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::SupportViolation { index: i, detail: "reference has no mass".into() });
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

/// `Σ q g(p/q)` with the relaxed generator, summed directly.
pub fn relaxed_by_summation(p: &[f64], q: &[f64], beta: f64) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if qi == 0.0 {
            if pi > 0.0 {
                return Err(Error::SupportViolation { index: i, detail: "reference has no mass".into() });
            }
            continue;
        }
        total += qi * relaxed_kl_generator(pi / qi, beta);
    }
    Ok(total)
}

/// `-KL(d || d^E) - α D_relaxed(d || d^U)` at the occupancy of `policy`.
pub fn primal_value(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    d_e: &[f64],
    d_u: &[f64],
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    let d = occupancy_by_iteration(mdp, policy);
    if d_e.len() != d.len() || d_u.len() != d.len() {
        return Err(Error::ShapeMismatch("distributions do not match the MDP".into()));
    }
    let kl = kl_by_summation(&d, d_e)?;
    let reg = if alpha == 0.0 { 0.0 } else { relaxed_by_summation(&d, d_u, beta)? };
    Ok(-kl - alpha * reg)
}

/// Central differences, one coordinate at a time.
pub fn finite_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Monte-Carlo estimate of `Σ_{s'} T(s'|s,a) v(s')` from `samples` draws.
pub fn mc_expected_next(mdp: &TabularMdp, s: usize, a: usize, v: &[f64], samples: usize, rng: &mut impl Rng) -> f64 {
    let row = mdp.next_distribution(s, a);
    let mut total = 0.0;
    for _ in 0..samples {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = row.len() - 1;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = j;
                break;
            }
        }
        total += v[pick];
    }
    total / samples as f64
}

/// Normalized pair frequencies of `(s, a)` records.
pub fn empirical_distribution(num_pairs: usize, pairs: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut d = vec![0.0; num_pairs];
    let mut n = 0.0;
    for p in pairs {
        d[p] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        d.iter_mut().for_each(|x| *x /= n);
    }
    d
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_examples() {
        let grid = GridSpec::default();
        let (w, _) = grid_argmax_h(3.0, 0.2, 2.0, &grid).unwrap();
        assert!((w - 4.4817).abs() < 1e-3);
        let (w, _) = grid_argmax_h(1.0, 0.2, 2.0, &grid).unwrap();
        assert!((w - 0.71276).abs() < 1e-4);
        let (w, _) = grid_argmax_h_dagger(3.0, 4f64.ln(), 0.2, 2.0, &grid).unwrap();
        assert!((w - 5.26652).abs() < 1e-4, "{w}");
        let (w, _) = grid_argmax_h(2.0, 0.2, 1e-6, &grid).unwrap();
        assert!((w - (2.0f64 / 1.2 - 1.0).exp()).abs() < 1e-6);
    }

    #[test]
    fn concave_around_argmax() {
        let grid = GridSpec::new(1e-3, 1e3, 20_000).unwrap();
        let f = |w: f64| h(w, 3.0, 0.2, 2.0);
        let (w, _) = grid_argmax(&f, &grid).unwrap();
        assert!(unimodal_on_grid(&f, &grid, w, 0.0));
    }

    #[test]
    fn edge_maximum_is_an_error() {
        let grid = GridSpec::new(1.0, 2.0, 1000).unwrap();
        assert!(grid_argmax(&|w| w, &grid).is_err());
    }

    #[test]
    fn finite_difference_is_second_order() {
        let f = |x: &[f64]| x[0].sin() * x[1].exp();
        let x = [0.7, -0.3];
        let exact = [0.7f64.cos() * (-0.3f64).exp(), 0.7f64.sin() * (-0.3f64).exp()];
        let e1 = max_relative_error(&finite_difference(&f, &x, 1e-2), &exact, 1e-12);
        let e2 = max_relative_error(&finite_difference(&f, &x, 5e-3), &exact, 1e-12);
        assert!((e1 / e2 - 4.0).abs() < 0.1, "{}", e1 / e2);
        let q = |x: &[f64]| 3.0 * x[0] * x[0] - x[0] * x[1];
        let g = finite_difference(&q, &[1.0, 2.0], 1e-3);
        assert!((g[0] - 4.0).abs() < 1e-9 && (g[1] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn iteration_matches_chain() {
        let mdp = TabularMdp::new(2, 1, vec![0.0, 1.0, 0.0, 1.0], vec![1.0, 0.0], 0.5).unwrap();
        let d = occupancy_by_iteration(&mdp, &TabularPolicy::uniform(2, 1));
        assert!((d[0] - 0.5).abs() < 1e-14 && (d[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn monte_carlo_next_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(4, 2, 0.9, &mut rng).unwrap();
        let v = [1.0, -2.0, 0.5, 3.0];
        let exact = mdp.expected_next(1, 1, &v);
        let mc = mc_expected_next(&mdp, 1, 1, &v, 200_000, &mut rng);
        assert!((exact - mc).abs() < 2e-2);
    }
}
