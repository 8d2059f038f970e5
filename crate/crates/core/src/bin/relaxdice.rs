use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relaxdice::data::{load_mdp, save_mdp, DatasetBody, LevelTag, Role, TransitionDataset};
use relaxdice::dice::{solve, BetaMode, Estimator, SolverConfig, Values, Variant};
use relaxdice::extraction::{extract_neural, extract_tabular, ExtractionConfig, Weighting};
use relaxdice::harness::{
    alpha_sweep, gridworld_data, parse_policy_csv, policy_csv, reference_scores, run_experiment, write_report,
    write_sweep, EnvKind, ExperimentConfig, Method,
};
use relaxdice::mdp::Gridworld;
use relaxdice::pointmass::{PointMass, PointMassBehavior};
use relaxdice::ratio::{tabular_ratio_from_data, train_classifier, ClassifierConfig, DEFAULT_CLIP};
use relaxdice::verify;
use relaxdice::{Error, Result};

#[derive(Parser)]
#[command(name = "relaxdice", version, about = "Offline imitation learning with relaxed occupancy matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key = value` experiment config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set alpha=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (overrides the `output` key).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("override {kv:?} is not KEY=VALUE")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample expert and suboptimal datasets (and the gridworld model) for one seed.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Solve for ω* from dataset files and extract a policy.
    Train(TrainArgs),
    /// Run the configured experiment over its seeds, or score a saved tabular policy.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Tabular policy CSV to evaluate on the configured gridworld.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Sweep α over levels and methods; writes sweep.csv and one SVG per level.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "L1,L2,L3,L4")]
        levels: String,
        #[arg(long, default_value = "relaxdice,demodice-limit")]
        methods: String,
        #[arg(long, default_value = "0.05,0.1,0.2,0.3,0.4,0.5")]
        alphas: String,
    },
    /// Run the self-check battery; exits nonzero if any check fails.
    Verify,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    expert: PathBuf,
    #[arg(long)]
    suboptimal: PathBuf,
    /// Transition model; enables the exact estimator for tabular data.
    #[arg(long)]
    mdp: Option<PathBuf>,
    #[arg(long, default_value = "relaxdice")]
    variant: String,
    #[arg(long)]
    alpha: Option<f64>,
    /// `auto`, `fixed:<b>` or `limit:<b>`.
    #[arg(long, default_value = "auto")]
    beta: String,
    #[arg(long, default_value_t = 0.99)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    smoothing: f64,
    /// Training steps for network-based solves.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig, seed: u64) -> Result<()> {
    let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    let (expert, suboptimal) = match cfg.env {
        EnvKind::Gridworld => {
            let data = gridworld_data(cfg, seed)?;
            save_mdp(data.world.mdp(), dir.join("mdp.rdxm"))?;
            (data.expert, data.suboptimal)
        }
        EnvKind::PointMass => {
            let env = PointMass::new(cfg.pointmass.clone())?;
            let expert = env.sample(PointMassBehavior::Expert, cfg.expert_data, seed)?.with_role(Role::Expert);
            let mix = cfg.mix_spec()?;
            let e = env.sample(PointMassBehavior::Expert, mix.n_expert.max(1), seed ^ 2)?;
            let r = env.sample(PointMassBehavior::Random, mix.n_random.max(1), seed ^ 3)?;
            (expert, relaxdice::data::mix_datasets(&e, &r, mix, seed ^ 4)?)
        }
    };
    expert.save(dir.join("expert.rdxd"))?;
    suboptimal.save(dir.join("suboptimal.rdxd"))?;
    println!("wrote {} expert and {} suboptimal transitions to {}", expert.len(), suboptimal.len(), dir.display());
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let expert = TransitionDataset::load(&args.expert)?;
    let suboptimal = TransitionDataset::load(&args.suboptimal)?;
    let mdp = args.mdp.as_ref().map(load_mdp).transpose()?;
    let variant = Variant::parse(&args.variant)?;
    let mut config = SolverConfig::new(variant);
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    config.beta_mode = BetaMode::parse(&args.beta)?;
    config.estimator = if mdp.is_some() { Estimator::ExactTabular } else { Estimator::SinglePoint };
    config.steps = args.steps;
    config.seed = args.seed;
    let gamma = mdp.as_ref().map_or(args.gamma, |m| m.discount());
    let out = &args.out;
    match &suboptimal.body {
        DatasetBody::Tabular(_) => {
            let ratio = tabular_ratio_from_data(&expert, &suboptimal, args.smoothing, DEFAULT_CLIP)?;
            let sol = solve(&config, &suboptimal, &ratio.log_values(), gamma, mdp.as_ref())?;
            let extraction = extract_tabular(&suboptimal, &sol.omega_star, Weighting::SelfNormalized)?;
            let mut values = String::from("state,value\n");
            for (s, v) in sol.tabular_values().unwrap_or_default().iter().enumerate() {
                let _ = writeln!(values, "{s},{v:.17e}");
            }
            write_out(out, "values.csv", &values)?;
            write_out(out, "policy.csv", &policy_csv(&extraction.policy))?;
            println!(
                "converged {} after {} iterations, beta {:.4}, loss {:.10}",
                sol.converged,
                sol.trace.len(),
                sol.beta,
                sol.final_loss
            );
            write_omega(out, &sol.omega_star)?;
            write_out(out, "trace.csv", &sol.trace_csv())?;
        }
        DatasetBody::Continuous(_) => {
            let classifier = train_classifier(
                &expert,
                &suboptimal,
                &ClassifierConfig { steps: args.steps, seed: args.seed, ..Default::default() },
            )?;
            let log_r = classifier.log_ratio_records(&suboptimal)?;
            let sol = solve(&config, &suboptimal, &log_r, gamma, None)?;
            if let Values::Network(net) = &sol.values {
                let mut buf = Vec::new();
                net.write_checkpoint(&mut buf)?;
                std::fs::create_dir_all(out)?;
                std::fs::write(out.join("values.rdxn"), buf)?;
            }
            let policy = extract_neural(
                &suboptimal,
                &sol.omega_star,
                &ExtractionConfig { steps: args.steps, seed: args.seed, ..Default::default() },
            )?;
            let mut buf = Vec::new();
            policy.net.write_checkpoint(&mut buf)?;
            std::fs::write(out.join("policy.rdxn"), buf)?;
            write_omega(out, &sol.omega_star)?;
            write_out(out, "trace.csv", &sol.trace_csv())?;
            println!("trained {} steps, final beta {:.4}", args.steps, sol.beta);
        }
    }
    Ok(())
}

fn write_omega(dir: &Path, omega: &[f64]) -> Result<()> {
    let mut s = String::from("record,omega\n");
    for (i, w) in omega.iter().enumerate() {
        let _ = writeln!(s, "{i},{w:.17e}");
    }
    write_out(dir, "omega.csv", &s)
}

fn eval(cfg: &ExperimentConfig, policy: Option<&Path>) -> Result<()> {
    if let Some(path) = policy {
        if cfg.env != EnvKind::Gridworld {
            return Err(Error::InvalidArgument("saved policies can only be scored on the gridworld".into()));
        }
        let pi = parse_policy_csv(&std::fs::read_to_string(path)?)?;
        let world = Gridworld::new(cfg.grid.clone())?;
        let raw = world.evaluate(&pi)?;
        let (expert, random) = reference_scores(cfg)?;
        let norm = relaxdice::harness::normalized_score(raw, random, expert)?;
        println!("return {raw:.10} normalized {norm:.4} (expert {expert:.10}, random {random:.10})");
        return Ok(());
    }
    let report = run_experiment(cfg)?;
    eprintln!("{}", report.summary());
    match &cfg.output {
        Some(dir) => write_report(dir, cfg, std::slice::from_ref(&report))?,
        None => print!("{}\n{}", relaxdice::harness::CSV_HEADER, report.csv_rows(cfg.timing)),
    }
    Ok(())
}

fn split<T>(s: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    s.split(',').filter(|x| !x.trim().is_empty()).map(|x| f(x.trim())).collect()
}

fn sweep(cfg: &ExperimentConfig, levels: &str, methods: &str, alphas: &str) -> Result<()> {
    let levels = split(levels, LevelTag::parse)?;
    let methods = split(methods, Method::parse)?;
    let alphas = split(alphas, |a| a.parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad alpha {a:?}"))))?;
    let table = alpha_sweep(cfg, &levels, &methods, &alphas)?;
    for r in &table.reports {
        eprintln!("{}", r.summary());
    }
    match &cfg.output {
        Some(dir) => {
            write_sweep(dir, &table, &levels, cfg.timing)?;
            write_out(dir, "config.txt", &format!("# config hash {:08x}\n{}", cfg.hash(), cfg.to_kv()))?;
        }
        None => print!("{}", table.csv(cfg.timing)),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { cfg, seed } => gen_data(&cfg.resolve()?, seed)?,
        Command::Train(args) => train(&args)?,
        Command::Eval { cfg, policy } => eval(&cfg.resolve()?, policy.as_deref())?,
        Command::Sweep { cfg, levels, methods, alphas } => sweep(&cfg.resolve()?, &levels, &methods, &alphas)?,
        Command::Verify => {
            let checks = verify::run_all();
            for c in &checks {
                println!("{}", c.line());
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
