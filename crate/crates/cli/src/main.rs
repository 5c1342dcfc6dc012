mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use otgan::gradcheck::{run_gradcheck_with, GradCheckConfig};
use otgan::numerics::Matrix;
use otgan::training::{run_consistency_experiment, run_single, ExperimentReport};
use otgan::transport::{
    exact_assignment, pairwise_cost, plan_entropy, sinkhorn, CostSpec, SinkhornConfig, SinkhornDomain,
};

use config::{ConfigError, Experiment, ExperimentConfig, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "otgan", version, about = "OT-GAN toy experiments and mini-batch transport distances")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config; flags override config keys.
    Train(TrainArgs),
    /// Transport distance between two equal-size CSV sample sets.
    Distance(DistanceArgs),
    /// Check loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print the default config as JSON.
    Defaults,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    experiment: Option<Experiment>,
    #[arg(long, env = OUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    n_gen: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    marginal_tol: Option<f64>,
    #[arg(long)]
    cost: Option<String>,
    /// A number, or `none` to never freeze.
    #[arg(long)]
    critic_freeze_iteration: Option<String>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_samples: Option<usize>,
    #[arg(long)]
    record_wall_time: bool,
}

#[derive(Args)]
struct DistanceArgs {
    x: PathBuf,
    y: PathBuf,
    #[arg(long, default_value = "raw-cosine")]
    cost: String,
    #[arg(long, default_value_t = SinkhornConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = SinkhornConfig::default().max_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = SinkhornConfig::default().marginal_tol)]
    marginal_tol: f64,
    #[arg(long, default_value = "stabilized")]
    domain: String,
    /// Solve the assignment problem exactly instead.
    #[arg(long)]
    exact: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds to check, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Comma-separated hidden widths.
    #[arg(long, value_delimiter = ',')]
    generator_hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    critic_hidden: Option<Vec<usize>>,
    #[arg(long)]
    critic_dim: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    /// Negate one analytic gradient entry before comparing (negative control).
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

/// Failure classes and their exit codes.
enum Failure {
    /// Bad usage or configuration: exit 2.
    Usage(anyhow::Error),
    /// Runtime or check failure: exit 1.
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.into())
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow!("{msg}"))
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Distance(a) => cmd_distance(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Defaults => cmd_defaults(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn print_json(value: &impl Serialize) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(value).map_err(runtime)?;
    println!("{s}");
    Ok(())
}

fn cmd_defaults() -> Result<(), Failure> {
    print_json(&ExperimentConfig::default())
}

fn apply_overrides(cfg: &mut ExperimentConfig, a: &TrainArgs) -> Result<(), Failure> {
    let t = &mut cfg.train;
    if let Some(e) = a.experiment {
        cfg.experiment = e;
    }
    if let Some(d) = &a.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    if let Some(m) = &a.mode {
        t.mode = m.parse().map_err(usage)?;
    }
    if let Some(c) = &a.cost {
        t.cost = c.parse().map_err(usage)?;
    }
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = a.$flag { $field = v; })*
        };
    }
    set! {
        iterations => t.iterations,
        batch_size => t.batch_size,
        n_gen => t.n_gen,
        seed => t.seed,
        learning_rate => t.adam.learning_rate,
        epsilon => t.sinkhorn.epsilon,
        max_iters => t.sinkhorn.max_iters,
        marginal_tol => t.sinkhorn.marginal_tol,
        eval_every => t.eval_every,
        eval_samples => t.eval_samples,
    }
    if a.record_wall_time {
        t.record_wall_time = true;
    }
    match a.critic_freeze_iteration.as_deref() {
        Some("none") => t.critic_freeze_iteration = None,
        Some(v) => {
            let f = v.parse().map_err(|_| usage(format!("--critic-freeze-iteration: expected a number or `none`, got `{v}`")))?;
            t.critic_freeze_iteration = Some(f);
        }
        // a shortened run keeps a freeze point that still lies inside it
        None => {
            if a.iterations.is_some() {
                if let Some(f) = t.critic_freeze_iteration {
                    t.critic_freeze_iteration = Some(f.min(t.iterations));
                }
            }
        }
    }
    Ok(())
}

fn print_report(report: &ExperimentReport, out: &Path) {
    for arm in &report.arms {
        let freeze = arm.covered_at_freeze.map_or("-".to_string(), |c| c.to_string());
        let min_after = arm.min_covered_after_freeze.map_or("-".to_string(), |c| c.to_string());
        println!(
            "{:<22} covered at freeze {freeze}, min after freeze {min_after}, at end {} ({:.1}s)",
            arm.mode.name(),
            arm.covered_at_end,
            arm.seconds
        );
    }
    println!("report: {}", out.join("report.json").display());
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, &a)?;
    cfg.validate()?;
    let out = cfg.resolved_output_dir();
    let report = match cfg.experiment {
        Experiment::Consistency => run_consistency_experiment(&cfg.train, Some(&out)),
        Experiment::Single => run_single(&cfg.train, Some(&out)),
    }
    .map_err(runtime)?;
    print_report(&report, &out);
    Ok(())
}

/// Reads a numeric CSV. A first row that does not parse as numbers is a header.
fn read_samples(path: &Path) -> Result<Matrix, Failure> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(r) => {
                if let Some(first) = rows.first() {
                    if r.len() != first.len() {
                        return Err(usage(format!(
                            "{}: line {} has {} fields, expected {}",
                            path.display(),
                            i + 1,
                            r.len(),
                            first.len()
                        )));
                    }
                }
                rows.push(r);
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(usage(format!("{}: line {}: {e}", path.display(), i + 1))),
        }
    }
    if rows.is_empty() {
        return Err(usage(format!("{}: no data rows", path.display())));
    }
    Matrix::from_rows(&rows).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct SinkhornReport {
    k: usize,
    cost: &'static str,
    epsilon: f64,
    distance: f64,
    iterations: usize,
    marginal_residual: f64,
    converged: bool,
    entropy: f64,
}

#[derive(Serialize)]
struct ExactReport {
    k: usize,
    cost: &'static str,
    distance: f64,
    permutation: Vec<usize>,
}

fn cmd_distance(a: DistanceArgs) -> Result<(), Failure> {
    let x = read_samples(&a.x)?;
    let y = read_samples(&a.y)?;
    if x.shape() != y.shape() {
        return Err(usage(format!(
            "sample sets differ in shape: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let cost: CostSpec = a.cost.parse().map_err(usage)?;
    if cost.uses_critic() {
        return Err(usage("learned-cosine needs a critic; use raw-cosine for raw features"));
    }
    let domain = match a.domain.as_str() {
        "stabilized" => SinkhornDomain::Stabilized,
        "log" => SinkhornDomain::Log,
        "plain" => SinkhornDomain::Plain,
        other => return Err(usage(format!("unknown domain `{other}`"))),
    };
    let c = pairwise_cost(&x, &y, cost).map_err(usage)?;
    if a.exact {
        let asg = exact_assignment(&c).map_err(runtime)?;
        return print_json(&ExactReport { k: x.rows(), cost: cost.name(), distance: asg.distance, permutation: asg.permutation });
    }
    let cfg = SinkhornConfig { epsilon: a.epsilon, max_iters: a.max_iters, marginal_tol: a.marginal_tol, domain };
    cfg.validate().map_err(usage)?;
    let r = sinkhorn(&c, &cfg).map_err(runtime)?;
    let entropy = plan_entropy(&r.plan).map_err(runtime)?;
    print_json(&SinkhornReport {
        k: x.rows(),
        cost: cost.name(),
        epsilon: cfg.epsilon,
        distance: r.distance,
        iterations: r.iterations_used,
        marginal_residual: r.marginal_residual,
        converged: r.converged,
        entropy,
    })
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let mut cfg = GradCheckConfig::default();
    if let Some(k) = a.batch_size {
        cfg.batch_size = k;
    }
    if let Some(h) = a.generator_hidden {
        cfg.generator_hidden = h;
    }
    if let Some(h) = a.critic_hidden {
        cfg.critic_hidden = h;
    }
    if let Some(d) = a.critic_dim {
        cfg.critic_dim = d;
    }
    if let Some(e) = a.epsilon {
        cfg.epsilon = e;
    }
    if let Some(t) = a.tolerance {
        cfg.tolerance = t;
    }
    if cfg.batch_size < 2 || cfg.critic_dim < 1 {
        return Err(usage("batch size must be ≥ 2 and critic dim ≥ 1"));
    }

    let mut failed = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        let report = run_gradcheck_with(seed, &cfg, |g, _| {
            if a.corrupt_backward {
                let w = &mut g.layers[0].weight;
                let v = w[(0, 0)];
                w[(0, 0)] = if v == 0.0 { 1.0 } else { -v };
            }
        })
        .with_context(|| format!("gradcheck seed {seed}"))
        .map_err(runtime)?;
        for c in &report.components {
            let worst = c.worst.as_ref().map_or("none".to_string(), |m| {
                format!("{:.3e} at parameter {}", m.relative_error, m.index)
            });
            println!(
                "seed {seed} {:<9} worst relative error {worst}; checked {}/{} (skipped at kinks {})",
                c.component, c.checked, c.params, c.skipped
            );
            for m in &c.failures {
                failed.push(format!(
                    "seed {seed} {} parameter {}: analytic {:.6e}, numeric {:.6e}, relative error {:.3e}",
                    c.component, m.index, m.analytic, m.numeric, m.relative_error
                ));
            }
        }
    }
    if failed.is_empty() {
        println!("PASS (tolerance {:e})", cfg.tolerance);
        Ok(())
    } else {
        for f in &failed {
            println!("  {f}");
        }
        println!("FAIL: {} coordinates over tolerance {:e}", failed.len(), cfg.tolerance);
        Err(runtime(anyhow!("gradient check failed")))
    }
}
