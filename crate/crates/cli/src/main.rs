use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use temsp_cli::config::{InitialSpec, Overrides, RunConfig};
use temsp_cli::ensemble::run_ensemble;
use temsp_cli::error::CliError;
use temsp_cli::{output, paper, plot};
use temsp_core::model::{check_contraction, check_dissipativity, InitialData, ModelRegistry, UniformBox};
use temsp_core::rng::SeedSpec;
use temsp_core::scheme::{coefficient_growth_check, Simulator};
use temsp_core::truncation::{parse_growth, Grid, TruncationRule, DEFAULT_NU};

#[derive(Parser)]
#[command(name = "temsp", version, about = "Truncated Euler-Maruyama segment process for stochastic delay equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an ensemble from a config file and flags.
    Run(RunArgs),
    /// Reproduce the built-in two-dimensional example.
    PaperExample(PaperArgs),
    /// Simulate one trajectory and print it as CSV.
    Simulate(SimulateArgs),
    /// Report the step-size gates and sample the model's certificates.
    Check(CheckArgs),
    /// Render means.csv and ecdf.csv as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Default)]
struct CommonArgs {
    /// TOML config file or a previous run's manifest.toml.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectories per (initial, dt) leg.
    #[arg(long)]
    samples: Option<usize>,
    /// Step size(s), comma separated; tau / dt must be an integer.
    #[arg(long, value_delimiter = ',')]
    dt: Option<Vec<f64>>,
    /// Horizon in steps (single dt only).
    #[arg(long)]
    steps: Option<usize>,
    /// Horizon in time units; must sit on the grid.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    model: Option<String>,
    /// NAME=KIND:ARGS, repeatable; replaces the configured list.
    #[arg(long, value_parser = InitialSpec::parse_flag)]
    initial: Vec<InitialSpec>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Run even when the step-size gates fail.
    #[arg(long)]
    override_admissibility: bool,
    /// exact-assignment, entropic or entropic:<epsilon>.
    #[arg(long)]
    distance_method: Option<String>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            samples: self.samples,
            dt: self.dt.clone(),
            steps: self.steps,
            horizon: self.horizon,
            model: self.model.clone(),
            initial: (!self.initial.is_empty()).then(|| self.initial.clone()),
            out_dir: self.out_dir.clone(),
            workers: self.workers,
            override_admissibility: self.override_admissibility,
            distance_method: self.distance_method.clone(),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PaperArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value = temsp_core::model::CubicDelayedNoiseModel::NAME)]
    model: String,
    /// KIND:ARGS or NAME=KIND:ARGS.
    #[arg(long, default_value = "constant:-3,4")]
    initial: String,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    trajectory: u64,
    #[arg(long)]
    growth: Option<String>,
    #[arg(long, default_value_t = DEFAULT_NU)]
    nu: f64,
    #[arg(long)]
    override_admissibility: bool,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long, default_value = temsp_core::model::CubicDelayedNoiseModel::NAME)]
    model: String,
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.0001")]
    dt: Vec<f64>,
    #[arg(long)]
    growth: Option<String>,
    #[arg(long, default_value_t = DEFAULT_NU)]
    nu: f64,
    /// Points sampled per certificate.
    #[arg(long, default_value_t = UniformBox::DEFAULT_POINTS)]
    points: usize,
    /// Half-width of the sampling box.
    #[arg(long, default_value_t = UniformBox::DEFAULT_HALF_WIDTH)]
    half_width: f64,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory holding means.csv and/or ecdf.csv.
    #[arg(long, default_value = "out")]
    input: PathBuf,
    /// Defaults to the input directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn resolve(common: &CommonArgs, base: RunConfig) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => base,
    };
    config.apply(&common.overrides());
    config.validate()?;
    Ok(config)
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let config = resolve(&args.common, RunConfig::default())?;
    let run = run_ensemble(&config, &mut |m| log(m))?;
    let files = output::write_run(&run, &[])?;
    for f in files {
        log(&format!("wrote {}", f.display()));
    }
    Ok(())
}

fn cmd_paper(args: PaperArgs) -> Result<(), CliError> {
    let horizon = args.common.horizon.unwrap_or(10.0);
    let dts = args.common.dt.clone().unwrap_or(paper::DEFAULT_DTS.to_vec());
    let base = paper::paper_config(&dts, args.common.samples.unwrap_or(2000), horizon);
    let config = resolve(&args.common, base)?;
    let run = run_ensemble(&config, &mut |m| log(m))?;
    let summary = paper::summary_text(&run);
    print!("{summary}");
    let files = output::write_run(&run, &[("summary.txt", summary.into_bytes())])?;
    for f in files {
        log(&format!("wrote {}", f.display()));
    }
    Ok(())
}

fn rule_for(model: &dyn temsp_core::model::SddeModel, growth: &Option<String>, nu: f64) -> Result<TruncationRule, CliError> {
    let growth = match growth {
        Some(g) => parse_growth(g)?,
        None => model
            .growth_function()
            .ok_or_else(|| CliError::config(format!("model '{}' needs --growth", model.name())))?,
    };
    Ok(TruncationRule::for_model(model, growth, nu)?)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let model = ModelRegistry::with_builtins().get(&args.model)?;
    let rule = rule_for(model.as_ref(), &args.growth, args.nu)?;
    let grid = Grid::from_dt(model.delay(), args.dt, args.steps)?;
    let sim = Simulator::new(Arc::clone(&model), rule.clone(), grid, args.override_admissibility)?;
    let spec = args.initial.split_once('=').map(|(_, s)| s).unwrap_or(&args.initial);
    let initial: InitialData = spec.parse()?;
    let tr = sim.simulate(&initial, &SeedSpec::scheme_noise(args.seed, args.trajectory))?;
    let growth = coefficient_growth_check(model.as_ref(), &tr, &rule)?;
    log(&format!(
        "radius {:.7}, max |u| {:.7}, states above radius {}, growth ratios drift {:.3} diffusion {:.3}",
        sim.radius(),
        tr.max_state_norm(),
        tr.truncation_excess_count(),
        growth.max_drift_ratio,
        growth.max_diffusion_ratio
    ));
    let write_err = |e| CliError::io("writing trajectory", e);
    match &args.out {
        Some(p) => {
            let f = std::fs::File::create(p).map_err(|e| CliError::io(format!("creating {}", p.display()), e))?;
            tr.write_csv(std::io::BufWriter::new(f)).map_err(write_err)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            tr.write_csv(&mut lock).map_err(write_err)?;
            lock.flush().map_err(write_err)?;
        }
    }
    Ok(())
}

fn cmd_check(args: CheckArgs) -> Result<(), CliError> {
    let model = ModelRegistry::with_builtins().get(&args.model)?;
    let rule = rule_for(model.as_ref(), &args.growth, args.nu)?;
    println!("model {}: K = {}, nu = {}", model.name(), rule.k(), rule.nu());
    let Some(certs) = model.certificates() else {
        return Err(CliError::Core(temsp_core::Error::Admissibility {
            dt: args.dt.first().copied().unwrap_or(f64::NAN),
            reason: format!("model '{}' carries no certificates", model.name()),
        }));
    };
    let rep = check_dissipativity(model.as_ref(), &certs.dissipativity, &mut UniformBox::new(args.half_width, 1), args.points)?;
    println!(
        "dissipativity: {} points, {} violations, worst margin {:.6e}",
        rep.checked, rep.violation_count, rep.worst_margin
    );
    let rep_c = check_contraction(model.as_ref(), &certs.contraction, &mut UniformBox::new(args.half_width, 2), args.points)?;
    println!(
        "contraction: {} points, {} violations, worst margin {:.6e}",
        rep_c.checked, rep_c.violation_count, rep_c.worst_margin
    );
    let mut all_ok = rep.is_consistent() && rep_c.is_consistent();
    let mut first_bad = None;
    for &dt in &args.dt {
        let radius = rule.truncation_radius(dt)?;
        let a = temsp_core::truncation::admissible_dt(&certs.dissipativity, &certs.contraction, rule.k(), rule.nu(), dt);
        println!(
            "dt = {dt}: radius {radius:.9}, margin_a {:.6} (> {}), margin_b {:.6} (> {}), dt_max {:.6e}, ok = {}",
            a.margin_a, a.threshold_a, a.margin_b, a.threshold_b, a.dt_max, a.ok
        );
        if !a.ok && first_bad.is_none() {
            first_bad = Some(dt);
        }
        all_ok &= a.ok;
    }
    if !all_ok {
        return Err(CliError::Core(temsp_core::Error::Admissibility {
            dt: first_bad.unwrap_or(f64::NAN),
            reason: "step-size gates or sampled certificates failed".into(),
        }));
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let out = args.out_dir.unwrap_or_else(|| args.input.clone());
    for f in plot::emit_plots(&args.input, &out)? {
        log(&format!("wrote {}", f.display()));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::PaperExample(a) => cmd_paper(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Check(a) => cmd_check(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
