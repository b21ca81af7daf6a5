//! End-to-end runs behind the command-line tool: assumption checks,
//! synthesis, simulation and sweeps, written out as CSV plus a manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::equilibrium::{
    epsilon_tolerance, fit_decay_rate, optimality_gaps, sweep, DecayFit, EpsilonSweep, EquilibriumError,
    OptimalityGapReport,
};
use crate::follower_synthesis::{check_a31, fbode_theta_entry, synthesize_follower, FollowerSynthesis, SynthesisOptions};
use crate::game_sim::{simulate_game, ClosedLoop, CostReport, PathCosts, Player, SimConfig};
use crate::leader_synthesis::{check_r0, solve_gamma1, synthesize_leader, LeaderContext, LeaderSynthesis};
use crate::model::{check_standing_assumptions, load_config, to_config_string, AssumptionReport, Config, ConfigError};
use crate::numerics::Method;
use crate::{SimError, SynthesisError};

/// Deviation sizes used by `run_sweep` for the optimality gaps.
pub const GAP_DELTAS: [f64; 2] = [0.1, 0.5];

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSUMPTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("cannot write {path}: {message}")]
    Write { path: String, message: String },
    #[error("invalid arguments: {0}")]
    Arguments(String),
    #[error("standing assumptions fail:\n{}", failing_lines(.0))]
    Assumptions(AssumptionReport),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Equilibrium(EquilibriumError),
}

fn failing_lines(report: &AssumptionReport) -> String {
    report.summary_lines().into_iter().filter(|l| !l.contains(": pass")).collect::<Vec<_>>().join("\n")
}

impl From<EquilibriumError> for PipelineError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::Sim(e) => PipelineError::Sim(e),
            EquilibriumError::Synthesis(e) => PipelineError::Synthesis(e),
            EquilibriumError::UnorderedSweep => PipelineError::Arguments(e.to_string()),
            e => PipelineError::Equilibrium(e),
        }
    }
}

impl PipelineError {
    /// 1 for a failed assumption, 2 for bad input or I/O, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Read { .. }
            | PipelineError::Config(_)
            | PipelineError::Write { .. }
            | PipelineError::Arguments(_) => EXIT_CONFIG,
            PipelineError::Assumptions(_) => EXIT_ASSUMPTION,
            PipelineError::Synthesis(_) | PipelineError::Sim(_) | PipelineError::Equilibrium(_) => EXIT_NUMERICAL,
        }
    }
}

pub fn read_config(path: &Path) -> Result<Config, PipelineError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PipelineError::Read { path: path.display().to_string(), message: e.to_string() })?;
    Ok(load_config(&text)?)
}

pub fn synthesis_options(config: &Config, method: Method) -> SynthesisOptions {
    SynthesisOptions { method, faithful_typos: config.settings.faithful_typos }
}

/// Hex SHA-256 of the canonical rendering of `config`.
pub fn config_hash(config: &Config) -> String {
    Sha256::digest(to_config_string(config).as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs `f` on a dedicated pool of `threads` workers. Results do not depend
/// on the pool size.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| PipelineError::Arguments(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checked {
    pub report: AssumptionReport,
    /// Present once the weight conditions hold.
    pub follower: Option<FollowerSynthesis>,
}

/// Evaluates every assumption, solving only as much as each needs: P1 and P2
/// for the coupling sign and `Theta(T)`, then `Gamma1` for `R0cal`.
pub fn check_assumptions(config: &Config, method: Method) -> Result<Checked, SynthesisError> {
    let coeffs = &config.coeffs;
    let grid = config.grid;
    let mut report = check_standing_assumptions(coeffs, &grid);
    if !report.a22.is_some_and(|v| v.ok) {
        return Ok(Checked { report, follower: None });
    }
    let follower = synthesize_follower(coeffs, &grid, synthesis_options(config, method))?;
    report.a31 = Some(check_a31(coeffs, &follower.p1, &grid));
    report.a34_theta_entry = Some(fbode_theta_entry(coeffs, &follower)?.0);
    let ctx = LeaderContext::new(coeffs, &follower);
    let gamma1 = solve_gamma1(&ctx)?;
    report.a35_r0_min = Some(check_r0(&ctx, &gamma1));
    Ok(Checked { report, follower: Some(follower) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesized {
    pub report: AssumptionReport,
    pub follower: FollowerSynthesis,
    pub leader: LeaderSynthesis,
}

impl Synthesized {
    pub fn closed_loop(&self, config: &Config) -> ClosedLoop {
        ClosedLoop::new(&config.coeffs, &self.follower, &self.leader)
    }
}

/// Full synthesis; refuses to proceed past a failed required assumption.
pub fn synthesize(config: &Config, method: Method) -> Result<Synthesized, PipelineError> {
    let checked = check_assumptions(config, method)?;
    let follower = match checked.follower {
        Some(f) if checked.report.required_hold() => f,
        _ => return Err(PipelineError::Assumptions(checked.report)),
    };
    let leader = synthesize_leader(&LeaderContext::new(&config.coeffs, &follower))?;
    Ok(Synthesized { report: checked.report, follower, leader })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub horizon: f64,
    pub steps: usize,
    pub dt: f64,
}

/// Everything needed to reproduce a run. Contains no timestamps, so equal
/// inputs give equal manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    pub exit_code: i32,
    pub config_hash: String,
    pub seed: u64,
    pub grid: GridManifest,
    pub method: String,
    pub faithful_typos: bool,
    pub agents: Vec<usize>,
    pub mc_paths: usize,
    pub module_versions: BTreeMap<String, String>,
    pub assumptions: Vec<String>,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

fn module_versions() -> BTreeMap<String, String> {
    ["model", "numerics", "follower_synthesis", "leader_synthesis", "game_sim", "equilibrium", "pipeline"]
        .iter()
        .map(|m| (m.to_string(), env!("CARGO_PKG_VERSION").to_string()))
        .collect()
}

/// Seventeen significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// An output directory that remembers what was written to it.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> Result<Self, PipelineError> {
        fs::create_dir_all(dir)
            .map_err(|e| PipelineError::Write { path: dir.display().to_string(), message: e.to_string() })?;
        Ok(Output { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), PipelineError> {
        let path = self.dir.join(name);
        fs::write(&path, contents)
            .map_err(|e| PipelineError::Write { path: path.display().to_string(), message: e.to_string() })?;
        if name != MANIFEST_FILE {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn csv<I: IntoIterator<Item = Vec<String>>>(&mut self, name: &str, header: &[&str], rows: I) -> Result<(), PipelineError> {
        let mut text = header.join(",");
        text.push('\n');
        for row in rows {
            text.push_str(&row.join(","));
            text.push('\n');
        }
        self.write(name, &text)
    }

    /// Writes the manifest whatever the outcome, then hands the outcome back.
    fn finish<T>(
        mut self,
        mut manifest: RunManifest,
        outcome: Result<T, PipelineError>,
    ) -> Result<(RunManifest, T), PipelineError> {
        manifest.files = std::mem::take(&mut self.files);
        match &outcome {
            Ok(_) => {
                manifest.status = "ok".into();
                manifest.exit_code = EXIT_OK;
            }
            Err(e) => {
                manifest.status = format!("error: {e}");
                manifest.exit_code = e.exit_code();
            }
        }
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let written = self.write(MANIFEST_FILE, &json);
        let value = outcome?;
        written?;
        Ok((manifest, value))
    }
}

fn manifest(command: &str, config: &Config, method: Method, agents: Vec<usize>, mc_paths: usize) -> RunManifest {
    RunManifest {
        command: command.into(),
        status: String::new(),
        exit_code: EXIT_OK,
        config_hash: config_hash(config),
        seed: config.settings.seed,
        grid: GridManifest { horizon: config.grid.horizon, steps: config.grid.steps, dt: config.grid.dt() },
        method: match method {
            Method::Rk4 => "rk4",
            Method::Euler => "euler",
        }
        .into(),
        faithful_typos: config.settings.faithful_typos,
        agents,
        mc_paths,
        module_versions: module_versions(),
        assumptions: Vec::new(),
        files: Vec::new(),
    }
}

fn synthesize_into(
    config: &Config,
    method: Method,
    manifest: &mut RunManifest,
) -> Result<Synthesized, PipelineError> {
    let result = synthesize(config, method);
    manifest.assumptions = match &result {
        Ok(s) => s.report.summary_lines(),
        Err(PipelineError::Assumptions(r)) => r.summary_lines(),
        Err(_) => Vec::new(),
    };
    result
}

fn write_synthesis(out: &mut Output, s: &Synthesized) -> Result<(), PipelineError> {
    let grid = s.follower.grid();
    let t = |k: usize| fmt_float(grid.t(k));
    out.csv(
        "p.csv",
        &["t", "P1", "P2"],
        (0..grid.len()).map(|k| vec![t(k), fmt_float(s.follower.p1.values[k]), fmt_float(s.follower.p2.values[k])]),
    )?;
    for (name, traj) in [("gamma1.csv", &s.leader.gamma1), ("gamma2.csv", &s.leader.gamma2)] {
        let prefix = &name[..6];
        let header: Vec<String> =
            std::iter::once("t".to_string()).chain((1..=3).flat_map(|i| (1..=3).map(move |j| format!("{prefix}_{i}{j}")))).collect();
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv(
            name,
            &header,
            (0..grid.len()).map(|k| {
                let m = &traj.values[k];
                std::iter::once(t(k)).chain((0..3).flat_map(|i| (0..3).map(move |j| fmt_float(m[(i, j)])))).collect()
            }),
        )?;
    }
    let l = &s.leader;
    out.csv(
        "mean_profiles.csv",
        &["t", "EX1", "EX2", "EX3", "EPhi1", "EPhi2", "EPhi3", "Ephi_star", "Eu0"],
        (0..grid.len()).map(|k| {
            let (ex, ephi) = (l.ex.values[k], l.ephi.values[k]);
            vec![
                t(k),
                fmt_float(ex[0]),
                fmt_float(ex[1]),
                fmt_float(ex[2]),
                fmt_float(ephi[0]),
                fmt_float(ephi[1]),
                fmt_float(ephi[2]),
                fmt_float(l.ephi_star.values[k]),
                fmt_float(l.eu0.values[k]),
            ]
        }),
    )
}

/// Writes `p.csv`, `gamma1.csv`, `gamma2.csv`, `mean_profiles.csv` and the manifest.
pub fn run_synthesize(config: &Config, method: Method, out_dir: &Path) -> Result<(RunManifest, Synthesized), PipelineError> {
    let mut out = Output::create(out_dir)?;
    let mut m = manifest("synthesize", config, method, Vec::new(), 0);
    let outcome = synthesize_into(config, method, &mut m).and_then(|s| {
        write_synthesis(&mut out, &s)?;
        Ok(s)
    });
    out.finish(m, outcome)
}

fn estimate_row(name: &str, e: crate::game_sim::Estimate) -> Vec<String> {
    vec![name.to_string(), fmt_float(e.mean), fmt_float(e.stderr)]
}

fn mean_of(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Writes `paths.csv` (path 0), `costs.csv` (aggregates), `path_costs.csv`
/// (one row per Monte Carlo path) and the manifest.
pub fn run_simulate(config: &Config, method: Method, out_dir: &Path) -> Result<(RunManifest, CostReport), PipelineError> {
    let mut out = Output::create(out_dir)?;
    let s = config.settings;
    let mut m = manifest("simulate", config, method, vec![s.agents], s.mc_paths);
    let outcome = synthesize_into(config, method, &mut m).and_then(|syn| {
        let model = syn.closed_loop(config);
        let sim = SimConfig { agents: s.agents, mc_paths: s.mc_paths, seed: s.seed, record_paths: true };
        let result = simulate_game(&model, &sim, None)?;
        if let Some(r) = &result.record {
            out.csv(
                "paths.csv",
                &["t", "x_N", "z", "x0", "xcheck1", "xcheck2", "xcheck3"],
                (0..r.t.len()).map(|k| {
                    vec![
                        fmt_float(r.t[k]),
                        fmt_float(r.xn[k]),
                        fmt_float(r.z[k]),
                        fmt_float(r.x0[k]),
                        fmt_float(r.xcheck[k][0]),
                        fmt_float(r.xcheck[k][1]),
                        fmt_float(r.xcheck[k][2]),
                    ]
                }),
            )?;
        }
        let report = result.report();
        let mut rows = vec![
            estimate_row("J0", report.j0),
            estimate_row("J0_limit", report.j0_lim),
            estimate_row("Ji_mean", report.ji_mean),
            estimate_row("Ji_limit_mean", report.ji_lim_mean),
            estimate_row("epsilon", report.epsilon),
        ];
        rows.extend(report.ji.iter().enumerate().map(|(i, e)| estimate_row(&format!("J{}", i + 1), *e)));
        out.csv("costs.csv", &["quantity", "mean", "stderr"], rows)?;
        out.csv(
            "path_costs.csv",
            &["path", "J0", "J0_limit", "Ji_mean", "Ji_limit_mean", "gap_sq"],
            result.paths.iter().enumerate().map(|(p, c): (usize, &PathCosts)| {
                vec![
                    p.to_string(),
                    fmt_float(c.leader),
                    fmt_float(c.leader_limit),
                    fmt_float(mean_of(&c.followers)),
                    fmt_float(mean_of(&c.followers_limit)),
                    fmt_float(c.gap_sq),
                ]
            }),
        )?;
        Ok(report)
    });
    out.finish(m, outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub sweep: EpsilonSweep,
    /// Absent when fewer than two points have positive epsilon.
    pub fit: Option<DecayFit>,
    pub epsilon_tol: f64,
    pub gaps: OptimalityGapReport,
    /// Verdicts need standard errors, hence at least two paths.
    pub verdicts_claimed: bool,
}

impl SweepSummary {
    pub fn monotone(&self) -> bool {
        self.sweep.monotone_within(2.0)
    }

    /// Slope in `[-0.7, -0.3]` with `r^2 >= 0.9`.
    pub fn decay_ok(&self) -> Option<bool> {
        self.fit.map(|f| (-0.7..=-0.3).contains(&f.slope) && f.r2 >= 0.9)
    }
}

pub fn player_label(who: Player) -> String {
    match who {
        Player::Leader => "leader".into(),
        Player::Follower(i) => format!("follower{i}"),
    }
}

/// Writes `epsilon_sweep.csv`, then the optimality gaps at the largest
/// population to `gaps.csv`, with the tolerance taken from the sweep.
pub fn run_sweep(
    config: &Config,
    method: Method,
    agents: &[usize],
    out_dir: &Path,
) -> Result<(RunManifest, SweepSummary), PipelineError> {
    let mut out = Output::create(out_dir)?;
    let s = config.settings;
    let mut m = manifest("sweep", config, method, agents.to_vec(), s.mc_paths);
    let outcome = synthesize_into(config, method, &mut m).and_then(|syn| {
        let model = syn.closed_loop(config);
        let sweep = sweep(&model, agents, s.mc_paths, s.seed)?;
        out.csv(
            "epsilon_sweep.csv",
            &["N", "epsilon", "stderr"],
            sweep.points.iter().map(|p| vec![p.agents.to_string(), fmt_float(p.epsilon.mean), fmt_float(p.epsilon.stderr)]),
        )?;
        let fit = fit_decay_rate(&sweep).ok();
        let largest = *agents.last().expect("sweep checked the list");
        let epsilon_tol = epsilon_tolerance(&sweep, largest).unwrap_or(0.0);
        let sim = SimConfig { agents: largest, mc_paths: s.mc_paths, seed: s.seed, record_paths: false };
        let gaps = optimality_gaps(&config.coeffs, &syn.follower, &syn.leader, sim, &GAP_DELTAS, epsilon_tol)?;
        out.csv(
            "gaps.csv",
            &["who", "direction_id", "delta", "gap", "stderr"],
            gaps.trials.iter().map(|t| {
                vec![
                    player_label(t.who),
                    t.direction_id.to_string(),
                    fmt_float(t.delta),
                    fmt_float(t.gap.mean),
                    fmt_float(t.gap.stderr),
                ]
            }),
        )?;
        Ok(SweepSummary { sweep, fit, epsilon_tol, gaps, verdicts_claimed: s.mc_paths >= 2 })
    });
    out.finish(m, outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelCoefficients, SimSettings, TimeGrid};

    fn reference(steps: usize) -> Config {
        Config {
            coeffs: ModelCoefficients::reference_example(),
            grid: TimeGrid::new(1.0, steps),
            settings: SimSettings { agents: 5, mc_paths: 4, ..SimSettings::default() },
        }
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        assert_eq!(fmt_float(0.5), "5.0000000000000000e-1");
        let v = 0.1 + 0.2;
        assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn hash_tracks_config() {
        let a = reference(100);
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
        b.settings.seed = 9;
        assert_ne!(config_hash(&a), config_hash(&b));
    }

    #[test]
    fn reference_check_evaluates_everything() {
        let c = check_assumptions(&reference(200), Method::Rk4).unwrap();
        assert!(c.report.required_hold());
        assert!(c.report.a31.is_some() && c.follower.is_some());
        assert_eq!(c.report.summary_lines().len(), 4);
    }

    #[test]
    fn zero_control_weight_stops_at_weights() {
        let mut cfg = reference(100);
        cfg.coeffs.r1 = crate::model::Coefficient::Constant(0.0);
        let c = check_assumptions(&cfg, Method::Rk4).unwrap();
        assert!(!c.report.a22.unwrap().ok);
        assert!(c.follower.is_none() && c.report.a34_theta_entry.is_none());
        let e = synthesize(&cfg, Method::Rk4).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_ASSUMPTION);
        assert!(e.to_string().contains("A2.2"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::from(ConfigError::NegativeHorizon).exit_code(), EXIT_CONFIG);
        assert_eq!(PipelineError::from(SynthesisError::Gamma2Unsolvable { t: 0.1 }).exit_code(), EXIT_NUMERICAL);
        assert_eq!(PipelineError::from(EquilibriumError::UnorderedSweep).exit_code(), EXIT_CONFIG);
        assert_eq!(PipelineError::from(EquilibriumError::Sim(SimError::NoPaths)).exit_code(), EXIT_NUMERICAL);
        let missing = read_config(Path::new("/nonexistent/config.txt")).unwrap_err();
        assert_eq!(missing.exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn synthesize_writes_listed_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = reference(50);
        let (m, _) = run_synthesize(&cfg, Method::Rk4, dir.path()).unwrap();
        assert_eq!(m.files, ["p.csv", "gamma1.csv", "gamma2.csv", "mean_profiles.csv"]);
        for f in &m.files {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            assert_eq!(text.lines().count(), 52, "{f}");
        }
        let header = fs::read_to_string(dir.path().join("gamma1.csv")).unwrap();
        assert!(header.starts_with("t,gamma1_11,gamma1_12,gamma1_13,gamma1_21"));
        let on_disk: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(on_disk, m);
        assert_eq!(m.status, "ok");
    }

    #[test]
    fn failed_run_still_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = reference(50);
        cfg.coeffs.r0 = crate::model::Coefficient::Constant(-1.0);
        let e = run_simulate(&cfg, Method::Rk4, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_ASSUMPTION);
        let m: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(m.exit_code, EXIT_ASSUMPTION);
        assert!(m.files.is_empty());
        assert!(m.status.starts_with("error"));
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn simulate_outputs_are_reproducible() {
        let cfg = reference(40);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let (ma, ra) = run_simulate(&cfg, Method::Rk4, a.path()).unwrap();
        let (mb, rb) = with_threads(3, || run_simulate(&cfg, Method::Rk4, b.path())).unwrap().unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ra, rb);
        for f in ma.files.iter().chain([&MANIFEST_FILE.to_string()]) {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let costs = fs::read_to_string(a.path().join("costs.csv")).unwrap();
        assert_eq!(costs.lines().count(), 1 + 5 + cfg.settings.agents);
    }

    #[test]
    fn single_path_sweep_claims_no_verdict() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = reference(20);
        cfg.settings.mc_paths = 1;
        let (m, s) = run_sweep(&cfg, Method::Rk4, &[2, 4], dir.path()).unwrap();
        assert!(!s.verdicts_claimed);
        assert!(s.sweep.points.iter().all(|p| p.epsilon.stderr.is_infinite()));
        assert_eq!(m.files, ["epsilon_sweep.csv", "gaps.csv"]);
        let gaps = fs::read_to_string(dir.path().join("gaps.csv")).unwrap();
        assert_eq!(gaps.lines().count(), 1 + 2 * 10 * GAP_DELTAS.len());
    }

    #[test]
    fn unordered_sweep_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = run_sweep(&reference(20), Method::Rk4, &[10, 5], dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
    }
}
