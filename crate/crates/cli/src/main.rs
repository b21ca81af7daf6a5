use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mfs_core::model::Config;
use mfs_core::pipeline::{
    check_assumptions, player_label, read_config, run_simulate, run_sweep, run_synthesize, with_threads,
    PipelineError, EXIT_ASSUMPTION, EXIT_NUMERICAL, EXIT_OK,
};
use mfs_core::{Method, TimeGrid};

/// Synthesis and Monte Carlo checks for LQ mean-field Stackelberg games with
/// partial information and common noise.
#[derive(Parser, Debug)]
#[command(name = "mfs", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate every standing assumption and print one verdict per line.
    Check(Common),
    /// Solve the Riccati and mean-field equations and export them.
    Synthesize(WithOut),
    /// Simulate the coupled game and report costs and epsilon(N).
    Simulate {
        #[command(flatten)]
        run: WithOut,
        /// Number of followers.
        #[arg(long)]
        agents: Option<usize>,
    },
    /// Estimate epsilon(N) over a list of populations, fit its decay and
    /// test unilateral deviations at the largest one.
    Sweep {
        #[command(flatten)]
        run: WithOut,
        /// Comma-separated, strictly increasing.
        #[arg(long, value_delimiter = ',', default_values_t = [10usize, 50, 100, 200, 300])]
        agents: Vec<usize>,
    },
}

#[derive(Args, Debug)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long, env = "MFS_SEED")]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Explicit Euler for the deterministic equations instead of RK4.
    #[arg(long)]
    euler: bool,
    /// Use the equations exactly as printed where they disagree with the derivation.
    #[arg(long)]
    faithful_typos: bool,
}

#[derive(Args, Debug)]
struct WithOut {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn method(&self) -> Method {
        if self.euler {
            Method::Euler
        } else {
            Method::Rk4
        }
    }

    fn load(&self, agents: Option<usize>) -> Result<Config, PipelineError> {
        let mut config = read_config(&self.config)?;
        if let Some(steps) = self.steps {
            if steps == 0 {
                return Err(PipelineError::Arguments("--steps must be positive".into()));
            }
            config.grid = TimeGrid::new(config.grid.horizon, steps);
        }
        if let Some(paths) = self.paths {
            config.settings.mc_paths = paths;
        }
        if let Some(seed) = self.seed {
            config.settings.seed = seed;
        }
        if let Some(n) = agents {
            config.settings.agents = n;
        }
        if self.faithful_typos {
            config.settings.faithful_typos = true;
        }
        if self.threads == 0 {
            return Err(PipelineError::Arguments("--threads must be positive".into()));
        }
        Ok(config)
    }
}

fn cmd_check(args: &Common) -> Result<i32, PipelineError> {
    let config = args.load(None)?;
    let checked = with_threads(args.threads, || check_assumptions(&config, args.method()))??;
    for line in checked.report.summary_lines() {
        println!("{line}");
    }
    Ok(if checked.report.required_hold() { EXIT_OK } else { EXIT_ASSUMPTION })
}

fn cmd_synthesize(run: &WithOut) -> Result<i32, PipelineError> {
    let config = run.common.load(None)?;
    let (manifest, s) = with_threads(run.common.threads, || run_synthesize(&config, run.common.method(), &run.out))??;
    for line in &manifest.assumptions {
        println!("{line}");
    }
    println!("P1(0) = {:.10e}", s.follower.p1.first());
    println!("min R0cal = {:.10e}", s.leader.r0cal().values.iter().copied().fold(f64::INFINITY, f64::min));
    report_files(&run.out, &manifest.files);
    Ok(EXIT_OK)
}

fn cmd_simulate(run: &WithOut, agents: Option<usize>) -> Result<i32, PipelineError> {
    let config = run.common.load(agents)?;
    let (manifest, r) = with_threads(run.common.threads, || run_simulate(&config, run.common.method(), &run.out))??;
    println!("N = {}, mc_paths = {}, seed = {}", config.settings.agents, r.mc_paths, config.settings.seed);
    println!("J0           = {:.6e} +/- {:.2e}", r.j0.mean, r.j0.stderr);
    println!("J0 (limit)   = {:.6e} +/- {:.2e}", r.j0_lim.mean, r.j0_lim.stderr);
    println!("mean Ji      = {:.6e} +/- {:.2e}", r.ji_mean.mean, r.ji_mean.stderr);
    println!("mean Ji lim  = {:.6e} +/- {:.2e}", r.ji_lim_mean.mean, r.ji_lim_mean.stderr);
    println!("epsilon(N)   = {:.6e} +/- {:.2e}", r.epsilon.mean, r.epsilon.stderr);
    report_files(&run.out, &manifest.files);
    Ok(EXIT_OK)
}

fn cmd_sweep(run: &WithOut, agents: &[usize]) -> Result<i32, PipelineError> {
    let config = run.common.load(None)?;
    let (manifest, s) =
        with_threads(run.common.threads, || run_sweep(&config, run.common.method(), agents, &run.out))??;
    for p in &s.sweep.points {
        println!("N = {:>5}  epsilon = {:.6e} +/- {:.2e}", p.agents, p.epsilon.mean, p.epsilon.stderr);
    }
    match s.fit {
        Some(f) => println!("fitted slope = {:.4}, intercept = {:.4}, r2 = {:.4}", f.slope, f.intercept, f.r2),
        None => println!("fitted slope: not available"),
    }
    let worst = s.gaps.trials.iter().min_by(|a, b| a.gap.mean.total_cmp(&b.gap.mean));
    if let Some(w) = worst {
        println!(
            "smallest gap: {} direction {} delta {} -> {:.4e} +/- {:.2e}",
            player_label(w.who),
            w.direction_id,
            w.delta,
            w.gap.mean,
            w.gap.stderr
        );
    }
    if s.verdicts_claimed {
        let word = |ok: bool| if ok { "pass" } else { "FAIL" };
        println!("monotone within 2 SE: {}", word(s.monotone()));
        match s.decay_ok() {
            Some(ok) => println!("decay slope in [-0.7, -0.3] with r2 >= 0.9: {}", word(ok)),
            None => println!("decay slope: no verdict"),
        }
        println!("optimality gaps within {:.4e} + 3 SE: {}", s.epsilon_tol, word(s.gaps.verdict()));
    } else {
        println!("verdicts: not claimed (standard errors need at least two paths)");
    }
    report_files(&run.out, &manifest.files);
    Ok(EXIT_OK)
}

fn report_files(out: &Path, files: &[String]) {
    println!("wrote {} files and manifest.json to {}", files.len(), out.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Check(args) => cmd_check(args),
        Command::Synthesize(run) => cmd_synthesize(run),
        Command::Simulate { run, agents } => cmd_simulate(run, *agents),
        Command::Sweep { run, agents } => cmd_sweep(run, agents),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            if let PipelineError::Assumptions(report) = &e {
                for line in report.summary_lines() {
                    println!("{line}");
                }
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code().clamp(1, EXIT_NUMERICAL) as u8)
        }
    }
}
