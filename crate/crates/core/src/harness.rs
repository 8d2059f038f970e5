//! Experiment plumbing behind the command-line tool: configuration, per-seed
//! pipelines, score reports, CSV tables and α-sweep plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::data::{mix_datasets, LevelTag, MixSpec, Role, TransitionDataset};
use crate::dice::{solve, solve_approx, BetaMode, Estimator, SolverConfig, Variant};
use crate::error::{invalid, Error, Result};
use crate::extraction::{
    bc_drc_eta_tabular, bc_eta_neural, bc_eta_tabular, extract_neural, extract_tabular, ExtractionConfig, NeuralPolicy,
    Weighting,
};
use crate::mdp::{sample_trajectories, GridSpec, Gridworld, StartDistribution, TabularPolicy, Termination};
use crate::nn::{gaussian_mean, DEFAULT_HIDDEN};
use crate::pointmass::{PointMass, PointMassBehavior, PointMassSpec};
use crate::ratio::{tabular_ratio_from_data, train_classifier, ClassifierConfig, DEFAULT_CLIP};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Gridworld,
    PointMass,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Gridworld => "gridworld",
            EnvKind::PointMass => "pointmass",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gridworld" => Ok(EnvKind::Gridworld),
            "pointmass" => Ok(EnvKind::PointMass),
            _ => Err(invalid(format!("unknown environment {s:?}"))),
        }
    }
}

/// A DICE variant or one of the behavior-cloning baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Dice(Variant),
    Bc,
    BcDrc,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dice(v) => v.name(),
            Method::Bc => "bc",
            Method::BcDrc => "bc-drc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(Method::Bc),
            "bc-drc" => Ok(Method::BcDrc),
            _ => Variant::parse(s).map(Method::Dice),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvKind,
    pub grid: GridSpec,
    pub pointmass: PointMassSpec,
    /// Softmax temperature of the gridworld expert.
    pub expert_temperature: f64,
    pub level: LevelTag,
    pub n_random: usize,
    /// Expert transitions in the mixture for the custom level.
    pub n_expert_mix: usize,
    /// Size of the expert dataset.
    pub expert_data: usize,
    pub method: Method,
    pub alpha: f64,
    pub beta_mode: BetaMode,
    pub estimator: Estimator,
    pub smoothing: f64,
    pub eta: f64,
    pub seeds: Vec<u64>,
    /// Training steps for every network in the continuous pipeline.
    pub steps: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub eval_episodes: usize,
    /// Use the expert dataset as the suboptimal dataset too.
    pub identical_data: bool,
    pub output: Option<PathBuf>,
    /// Record wall-clock seconds (makes output nondeterministic).
    pub timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvKind::Gridworld,
            grid: GridSpec::default(),
            pointmass: PointMassSpec::default(),
            expert_temperature: 0.2,
            level: LevelTag::L4,
            n_random: 4000,
            n_expert_mix: 0,
            expert_data: 200,
            method: Method::Dice(Variant::RelaxDice),
            alpha: 0.2,
            beta_mode: BetaMode::Auto,
            estimator: Estimator::ExactTabular,
            smoothing: 0.0,
            eta: 0.5,
            seeds: vec![0, 1, 2, 3, 4],
            steps: 2000,
            batch_size: 256,
            hidden: DEFAULT_HIDDEN.to_vec(),
            eval_episodes: 200,
            identical_data: false,
            output: None,
            timing: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| invalid(format!("bad value {value:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse_num(key, s)).collect()
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "env" => self.env = EnvKind::parse(value)?,
            "width" => self.grid.width = parse_num(key, value)?,
            "height" => self.grid.height = parse_num(key, value)?,
            "goal_x" => self.grid.goal.0 = parse_num(key, value)?,
            "goal_y" => self.grid.goal.1 = parse_num(key, value)?,
            "slip" => self.grid.slip = parse_num(key, value)?,
            "gamma" => {
                self.grid.discount = parse_num(key, value)?;
                self.pointmass.discount = self.grid.discount;
            }
            "start" => {
                self.grid.start = match value {
                    "uniform" => StartDistribution::Uniform,
                    cell => {
                        let xy: Vec<usize> = parse_list(key, cell)?;
                        match xy[..] {
                            [x, y] => StartDistribution::Cell(x, y),
                            _ => return Err(invalid("start must be `uniform` or `x,y`")),
                        }
                    }
                }
            }
            "expert_temperature" => self.expert_temperature = parse_num(key, value)?,
            "level" => self.level = LevelTag::parse(value)?,
            "n_random" => self.n_random = parse_num(key, value)?,
            "n_expert_mix" => self.n_expert_mix = parse_num(key, value)?,
            "expert_data" => self.expert_data = parse_num(key, value)?,
            "variant" | "method" => self.method = Method::parse(value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta_mode = BetaMode::parse(value)?,
            "estimator" => {
                self.estimator = match value {
                    "exact" => Estimator::ExactTabular,
                    "single-point" => Estimator::SinglePoint,
                    _ => return Err(invalid(format!("unknown estimator {value:?}"))),
                }
            }
            "smoothing" => self.smoothing = parse_num(key, value)?,
            "eta" => self.eta = parse_num(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "steps" => self.steps = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "eval_episodes" => self.eval_episodes = parse_num(key, value)?,
            "identical_data" => self.identical_data = parse_num(key, value)?,
            "output" => self.output = Some(PathBuf::from(value)),
            "timing" => self.timing = parse_num(key, value)?,
            "horizon" => self.pointmass.horizon = parse_num(key, value)?,
            _ => return Err(invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Canonical `key = value` echo; parsing it back gives the same config.
    pub fn to_kv(&self) -> String {
        let start = match self.grid.start {
            StartDistribution::Uniform => "uniform".to_string(),
            StartDistribution::Cell(x, y) => format!("{x},{y}"),
        };
        let estimator = match self.estimator {
            Estimator::ExactTabular => "exact",
            Estimator::SinglePoint => "single-point",
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("env", self.env.name().into());
        kv("width", self.grid.width.to_string());
        kv("height", self.grid.height.to_string());
        kv("goal_x", self.grid.goal.0.to_string());
        kv("goal_y", self.grid.goal.1.to_string());
        kv("slip", self.grid.slip.to_string());
        kv("gamma", self.grid.discount.to_string());
        kv("start", start);
        kv("horizon", self.pointmass.horizon.to_string());
        kv("expert_temperature", self.expert_temperature.to_string());
        kv("level", self.level.name().into());
        kv("n_random", self.n_random.to_string());
        kv("n_expert_mix", self.n_expert_mix.to_string());
        kv("expert_data", self.expert_data.to_string());
        kv("variant", self.method.name().into());
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta_mode.name());
        kv("estimator", estimator.into());
        kv("smoothing", self.smoothing.to_string());
        kv("eta", self.eta.to_string());
        kv("seeds", join(&self.seeds));
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("hidden", join(&self.hidden));
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("identical_data", self.identical_data.to_string());
        if let Some(o) = &self.output {
            kv("output", o.display().to_string());
        }
        kv("timing", self.timing.to_string());
        s
    }

    /// CRC32 of the canonical echo, without output location or timing.
    pub fn hash(&self) -> u32 {
        let mut c = self.clone();
        c.output = None;
        c.timing = false;
        crc32fast::hash(c.to_kv().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(invalid("at least one seed is required"));
        }
        if self.env == EnvKind::PointMass && self.eval_episodes < 200 {
            return Err(invalid("continuous evaluation needs at least 200 episodes"));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(invalid("eta must lie in [0, 1]"));
        }
        if self.expert_data == 0 {
            return Err(invalid("expert dataset must be nonempty"));
        }
        self.solver_config(0).validate()
    }

    pub fn mix_spec(&self) -> Result<MixSpec> {
        match self.level {
            LevelTag::Custom => MixSpec::new(self.n_expert_mix, self.n_random, LevelTag::Custom),
            level => MixSpec::for_level(level, self.n_random),
        }
    }

    pub fn solver_config(&self, seed: u64) -> SolverConfig {
        let variant = match self.method {
            Method::Dice(v) => v,
            _ => Variant::RelaxDice,
        };
        let mut c = SolverConfig::new(variant);
        c.alpha = self.alpha;
        c.beta_mode = self.beta_mode;
        c.estimator = self.estimator;
        c.steps = self.steps;
        c.batch_size = self.batch_size;
        c.hidden = self.hidden.clone();
        c.seed = seed;
        c
    }
}

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    pub raw_return: f64,
    pub normalized_score: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub env: EnvKind,
    pub level: LevelTag,
    pub method: Method,
    pub alpha: f64,
    pub beta_mode: BetaMode,
    pub expert_score: f64,
    pub random_score: f64,
    pub per_seed: Vec<SeedResult>,
    pub mean_return: f64,
    pub mean_normalized: f64,
    /// 95% Student-t half-width of the normalized score.
    pub halfwidth: f64,
    pub config_hash: u32,
}

pub const CSV_HEADER: &str = "env,level,variant,alpha,beta_mode,seed,raw_return,normalized_score,wall_seconds";

impl ScoreReport {
    pub fn csv_rows(&self, timing: bool) -> String {
        let mut s = String::new();
        for r in &self.per_seed {
            let wall = if timing { format!("{:.3}", r.wall_seconds) } else { "0".into() };
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{:.10},{:.6},{}",
                self.env.name(),
                self.level.name(),
                self.method.name(),
                self.alpha,
                self.beta_mode.name(),
                r.seed,
                r.raw_return,
                r.normalized_score,
                wall
            );
        }
        s
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {} {} alpha={} beta={}: normalized {:.2} ± {:.2} (raw {:.4}; expert {:.4}, random {:.4}; {} seeds)",
            self.env.name(),
            self.level.name(),
            self.method.name(),
            self.alpha,
            self.beta_mode.name(),
            self.mean_normalized,
            self.halfwidth,
            self.mean_return,
            self.expert_score,
            self.random_score,
            self.per_seed.len()
        )
    }
}

/// `100 (score - random) / (expert - random)`.
pub fn normalized_score(score: f64, random_score: f64, expert_score: f64) -> Result<f64> {
    if !(expert_score > random_score) {
        return Err(invalid(format!("expert score {expert_score} must exceed random score {random_score}")));
    }
    Ok(100.0 * (score - random_score) / (expert_score - random_score))
}

/// Mean and 95% Student-t half-width (zero for a single sample).
pub fn mean_and_halfwidth(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom").inverse_cdf(0.975);
    (mean, t * (var / n as f64).sqrt())
}

fn seed_base(seed: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// The datasets of one gridworld seed.
pub struct GridData {
    pub world: Gridworld,
    pub expert: TransitionDataset,
    pub suboptimal: TransitionDataset,
}

pub fn gridworld_data(config: &ExperimentConfig, seed: u64) -> Result<GridData> {
    let world = Gridworld::new(config.grid.clone())?;
    let mdp = world.mdp();
    let expert_pi = world.expert_policy(config.expert_temperature)?;
    let base = seed_base(seed);
    let expert = sample_trajectories(mdp, &expert_pi, config.expert_data, Termination::Geometric, base ^ 1)?
        .with_role(Role::Expert);
    let suboptimal = if config.identical_data {
        expert.clone().with_role(Role::Suboptimal)
    } else {
        let mix = config.mix_spec()?;
        let e_pool = sample_trajectories(mdp, &expert_pi, mix.n_expert.max(1), Termination::Geometric, base ^ 2)?;
        let r_pool = sample_trajectories(mdp, &world.random_policy(), mix.n_random.max(1), Termination::Geometric, base ^ 3)?;
        mix_datasets(&e_pool, &r_pool, mix, base ^ 4)?
    };
    Ok(GridData { world, expert, suboptimal })
}

/// Runs `method` on one gridworld seed and returns the extracted policy.
pub fn gridworld_policy(config: &ExperimentConfig, data: &GridData, seed: u64) -> Result<TabularPolicy> {
    let ratio = || tabular_ratio_from_data(&data.expert, &data.suboptimal, config.smoothing, DEFAULT_CLIP);
    Ok(match config.method {
        Method::Dice(_) => {
            let r = ratio()?;
            let sol = solve(
                &config.solver_config(seed),
                &data.suboptimal,
                &r.log_values(),
                config.grid.discount,
                Some(data.world.mdp()),
            )?;
            extract_tabular(&data.suboptimal, &sol.omega_star, Weighting::SelfNormalized)?.policy
        }
        Method::Bc => bc_eta_tabular(&data.expert, &data.suboptimal, config.eta)?.policy,
        Method::BcDrc => bc_drc_eta_tabular(&data.expert, &data.suboptimal, config.eta, Some(ratio()?.values()))?.policy,
    })
}

fn gridworld_references(config: &ExperimentConfig) -> Result<(f64, f64)> {
    let world = Gridworld::new(config.grid.clone())?;
    let expert = world.evaluate(&world.expert_policy(config.expert_temperature)?)?;
    let random = world.evaluate(&world.random_policy())?;
    Ok((expert, random))
}

fn pointmass_references(config: &ExperimentConfig) -> Result<(f64, f64)> {
    let env = PointMass::new(config.pointmass.clone())?;
    let expert = env.evaluate_behavior(PointMassBehavior::Expert, config.eval_episodes, 0xe7a1)?;
    let random = env.evaluate_behavior(PointMassBehavior::Random, config.eval_episodes, 0xe7a1)?;
    Ok((expert, random))
}

fn pointmass_policy(config: &ExperimentConfig, seed: u64) -> Result<(PointMass, NeuralPolicy)> {
    let env = PointMass::new(config.pointmass.clone())?;
    let base = seed_base(seed);
    let expert = env.sample(PointMassBehavior::Expert, config.expert_data, base ^ 1)?.with_role(Role::Expert);
    let suboptimal = if config.identical_data {
        expert.clone().with_role(Role::Suboptimal)
    } else {
        let mix = config.mix_spec()?;
        let e_pool = env.sample(PointMassBehavior::Expert, mix.n_expert.max(1), base ^ 2)?;
        let r_pool = env.sample(PointMassBehavior::Random, mix.n_random.max(1), base ^ 3)?;
        mix_datasets(&e_pool, &r_pool, mix, base ^ 4)?
    };
    let extraction = ExtractionConfig {
        eta: config.eta,
        steps: config.steps,
        batch_size: config.batch_size,
        hidden: config.hidden.clone(),
        seed: base ^ 5,
        ..Default::default()
    };
    let classifier = || {
        train_classifier(
            &expert,
            &suboptimal,
            &ClassifierConfig {
                hidden: config.hidden.clone(),
                steps: config.steps,
                batch_per_class: (config.batch_size / 2).max(1),
                seed: base ^ 6,
                ..Default::default()
            },
        )
    };
    let policy = match config.method {
        Method::Dice(_) => {
            let log_r = classifier()?.log_ratio_records(&suboptimal)?;
            let sol = solve_approx(&suboptimal, &log_r, config.pointmass.discount, &config.solver_config(base ^ 7))?;
            extract_neural(&suboptimal, &sol.omega_star, &extraction)?
        }
        Method::Bc => bc_eta_neural(&expert, &suboptimal, None, &extraction)?,
        Method::BcDrc => {
            let r = classifier()?.ratio_records(&suboptimal)?;
            bc_eta_neural(&expert, &suboptimal, Some(&r), &extraction)?
        }
    };
    Ok((env, policy))
}

fn run_seed(config: &ExperimentConfig, seed: u64, refs: (f64, f64)) -> Result<SeedResult> {
    let start = Instant::now();
    let raw_return = match config.env {
        EnvKind::Gridworld => {
            let data = gridworld_data(config, seed)?;
            let pi = gridworld_policy(config, &data, seed)?;
            data.world.evaluate(&pi)?
        }
        EnvKind::PointMass => {
            let (env, policy) = pointmass_policy(config, seed)?;
            let mut act = |s: &[f64], _: &mut ChaCha8Rng| gaussian_mean(&policy.net, s);
            env.evaluate(&mut act, config.eval_episodes, seed_base(seed) ^ 8)?
        }
    };
    Ok(SeedResult {
        seed,
        raw_return,
        normalized_score: normalized_score(raw_return, refs.1, refs.0)?,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Reference (expert, random) scores for the configured environment.
pub fn reference_scores(config: &ExperimentConfig) -> Result<(f64, f64)> {
    match config.env {
        EnvKind::Gridworld => gridworld_references(config),
        EnvKind::PointMass => pointmass_references(config),
    }
}

/// Trains, extracts and evaluates every seed in parallel; seeds are reported
/// in sorted order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ScoreReport> {
    config.validate()?;
    let refs = reference_scores(config)?;
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            run_seed(config, seed, refs).map_err(|e| Error::TrainingFailure {
                step: 0,
                detail: format!("seed {seed}: {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let normalized: Vec<f64> = per_seed.iter().map(|r| r.normalized_score).collect();
    let (mean_normalized, halfwidth) = mean_and_halfwidth(&normalized);
    let mean_return = per_seed.iter().map(|r| r.raw_return).sum::<f64>() / per_seed.len() as f64;
    Ok(ScoreReport {
        env: config.env,
        level: config.level,
        method: config.method,
        alpha: config.alpha,
        beta_mode: config.beta_mode,
        expert_score: refs.0,
        random_score: refs.1,
        per_seed,
        mean_return,
        mean_normalized,
        halfwidth,
        config_hash: config.hash(),
    })
}

/// Writes `results.csv` and `config.txt` (canonical echo plus hash).
pub fn write_report(dir: &Path, config: &ExperimentConfig, reports: &[ScoreReport]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in reports {
        csv.push_str(&r.csv_rows(config.timing));
    }
    std::fs::write(dir.join("results.csv"), csv)?;
    std::fs::write(dir.join("config.txt"), format!("# config hash {:08x}\n{}", config.hash(), config.to_kv()))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub reports: Vec<ScoreReport>,
}

impl SweepTable {
    /// Mean normalized score per (level, method, α).
    pub fn means(&self) -> BTreeMap<(String, String), Vec<(f64, f64)>> {
        let mut out: BTreeMap<(String, String), Vec<(f64, f64)>> = BTreeMap::new();
        for r in &self.reports {
            out.entry((r.level.name().to_string(), r.method.name().to_string()))
                .or_default()
                .push((r.alpha, r.mean_normalized));
        }
        for v in out.values_mut() {
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
        out
    }

    /// `max - min` of the mean normalized score across α.
    pub fn range(&self, level: LevelTag, method: Method) -> Option<f64> {
        let means = self.means();
        let v = means.get(&(level.name().to_string(), method.name().to_string()))?;
        let max = v.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        let min = v.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
        Some(max - min)
    }

    pub fn mean_at(&self, level: LevelTag, method: Method, alpha: f64) -> Option<f64> {
        self.reports
            .iter()
            .find(|r| r.level == level && r.method == method && r.alpha == alpha)
            .map(|r| r.mean_normalized)
    }

    pub fn csv(&self, timing: bool) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.reports {
            s.push_str(&r.csv_rows(timing));
        }
        s
    }

    /// One line per method: mean normalized score against α.
    pub fn svg(&self, level: LevelTag) -> String {
        let means = self.means();
        let series: Vec<(&String, &Vec<(f64, f64)>)> =
            means.iter().filter(|((l, _), _)| l == level.name()).map(|((_, m), v)| (m, v)).collect();
        let (w, h, pad) = (560.0, 360.0, 50.0);
        let xs: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().map(|p| p.0)).collect();
        let ys: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().map(|p| p.1)).collect();
        let (x0, x1) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let y0 = ys.iter().cloned().fold(0.0, f64::min).min(0.0);
        let y1 = ys.iter().cloned().fold(100.0, f64::max);
        let sx = |x: f64| pad + if x1 > x0 { (x - x0) / (x1 - x0) } else { 0.5 } * (w - 2.0 * pad);
        let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-9) * (h - 2.0 * pad);
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">{} normalized score vs alpha</text>"#, w / 2.0, level.name());
        let _ = writeln!(s, r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - pad, w - pad, h - pad);
        let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
        for x in xs.iter().map(|x| x.to_bits()).collect::<std::collections::BTreeSet<_>>().into_iter().map(f64::from_bits) {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, sx(x), h - pad + 16.0);
        }
        for k in 0..=4 {
            let y = y0 + (y1 - y0) * k as f64 / 4.0;
            let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{y:.0}</text>"#, pad - 6.0, sy(y) + 4.0);
        }
        for (i, (name, pts)) in series.iter().enumerate() {
            let c = colors[i % colors.len()];
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
            for (x, y) in pts.iter() {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, sx(*x), sy(*y));
            }
            let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{c}">{name}</text>"#, w - pad - 110.0, pad + 16.0 * i as f64);
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Runs every (level, method, α) combination with the base config's seeds.
pub fn alpha_sweep(base: &ExperimentConfig, levels: &[LevelTag], methods: &[Method], alphas: &[f64]) -> Result<SweepTable> {
    if alphas.is_empty() || levels.is_empty() || methods.is_empty() {
        return Err(invalid("sweep needs at least one level, method and alpha"));
    }
    let mut combos = Vec::new();
    for &level in levels {
        for &method in methods {
            for &alpha in alphas {
                let mut c = base.clone();
                c.level = level;
                c.method = method;
                c.alpha = alpha;
                combos.push(c);
            }
        }
    }
    let reports = combos.par_iter().map(run_experiment).collect::<Result<Vec<_>>>()?;
    Ok(SweepTable { reports })
}

/// Writes `sweep.csv` and one `sweep_<level>.svg` per level.
pub fn write_sweep(dir: &Path, table: &SweepTable, levels: &[LevelTag], timing: bool) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), table.csv(timing))?;
    for &l in levels {
        std::fs::write(dir.join(format!("sweep_{}.svg", l.name())), table.svg(l))?;
    }
    Ok(())
}

/// Tabular policy as CSV: one row per state, one column per action.
pub fn policy_csv(policy: &TabularPolicy) -> String {
    let mut s = String::new();
    for st in 0..policy.num_states() {
        let row: Vec<String> = policy.row(st).iter().map(|p| format!("{p:.17e}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_policy_csv(text: &str) -> Result<TabularPolicy> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_list("policy", l))
        .collect::<Result<_>>()?;
    let na = rows.first().map_or(0, Vec::len);
    if na == 0 || rows.iter().any(|r| r.len() != na) {
        return Err(Error::Format("policy rows must be nonempty and equally long".into()));
    }
    TabularPolicy::new(rows.len(), na, rows.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_score_endpoints() {
        assert_eq!(normalized_score(5.0, 1.0, 5.0).unwrap(), 100.0);
        assert_eq!(normalized_score(1.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(normalized_score(3.0, 1.0, 5.0).unwrap(), 50.0);
        assert!(normalized_score(3.0, 5.0, 5.0).is_err());
    }

    #[test]
    fn halfwidth_matches_t_table() {
        let (m, hw) = mean_and_halfwidth(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        // t_{0.975, 4} = 2.7764451051977987, s = sqrt(2.5).
        assert!((hw - 2.7764451051977987 * (2.5f64 / 5.0).sqrt()).abs() < 1e-9);
        assert_eq!(mean_and_halfwidth(&[2.0]).1, 0.0);
    }

    #[test]
    fn config_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("beta", "fixed:2").unwrap();
        c.set("seeds", "3,1").unwrap();
        c.set("variant", "bc-drc").unwrap();
        let back = ExperimentConfig::from_kv(&c.to_kv()).unwrap();
        assert_eq!(back, c);
        assert!(ExperimentConfig::from_kv("nonsense = 1").is_err());
    }

    #[test]
    fn policy_csv_round_trip() {
        let p = TabularPolicy::uniform(3, 4);
        assert_eq!(parse_policy_csv(&policy_csv(&p)).unwrap(), p);
    }
}
