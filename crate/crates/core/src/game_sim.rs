//! Monte Carlo simulation of the closed-loop game.
//!
//! Controls come from the filter states (leader `Xcheck`, followers `xhat_i`)
//! simulated on the same noise as the coupled system, and are then injected
//! open-loop into the centralized dynamics where `x^(N)` couples everyone.

use nalgebra::{RowVector3, Vector3};
use rayon::prelude::*;

use crate::follower_synthesis::{FbodeSolution, FollowerSynthesis};
use crate::leader_synthesis::LeaderSynthesis;
use crate::model::{CoefficientsAt, ModelCoefficients, TimeGrid};
use crate::numerics::{escaped, NoiseBundle, OdeState, Trajectory};
use crate::SimError;

/// Deterministic profiles the followers plug into their feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerProfiles {
    pub ez: Trajectory<f64>,
    pub ephi: Trajectory<f64>,
}

impl FollowerProfiles {
    pub fn from_leader(leader: &LeaderSynthesis) -> Self {
        FollowerProfiles { ez: leader.ez.clone(), ephi: leader.ephi_star.clone() }
    }

    pub fn from_fbode(solution: &FbodeSolution) -> Self {
        FollowerProfiles { ez: solution.ez.clone(), ephi: solution.ephi.clone() }
    }
}

/// Everything one time step needs, frozen at a grid node.
#[derive(Debug, Clone, Copy)]
struct Node {
    c: CoefficientsAt,
    k1: f64,
    /// Follower control at `xhat = 0`.
    follower_offset: f64,
    ez: f64,
    /// Mean follower control.
    eu: f64,
    theta1: RowVector3<f64>,
    /// Leader control at `Xcheck = 0`.
    leader_offset: f64,
    ex1: f64,
    l11: nalgebra::Matrix3<f64>,
    l21: nalgebra::Matrix3<f64>,
    b: Vector3<f64>,
    d: Vector3<f64>,
    /// `Xcheck` drift minus `L11 Xcheck + B u0`.
    drift_rest: Vector3<f64>,
    f2: Vector3<f64>,
}

impl Node {
    fn leader_control(&self, xcheck: &Vector3<f64>) -> f64 {
        (self.theta1 * xcheck)[0] + self.leader_offset
    }

    fn follower_control(&self, xhat: f64) -> f64 {
        -self.k1 * xhat + self.follower_offset
    }

    fn leader_filter_step(&self, x: &Vector3<f64>, u0: f64, dt: f64, dw0: f64) -> Vector3<f64> {
        let drift = self.l11 * x + self.b * u0 + self.drift_rest;
        let diffusion = self.l21 * x + self.d * u0 + self.f2;
        x + drift * dt + diffusion * dw0
    }

    fn follower_filter_step(&self, x: f64, u: f64, dt: f64, dwi: f64) -> f64 {
        let f = &self.c.follower;
        x + (f.a * x + f.b * u + f.e * self.ez + f.drift) * dt + (f.c * x + f.d * u + f.f * self.ez + f.sigma) * dwi
    }

    fn z_step(&self, z: f64, dt: f64, dw: f64) -> f64 {
        let f = &self.c.follower;
        z + ((f.a + f.e) * z + f.b * self.eu + f.drift) * dt
            + ((f.c_t + f.f_t) * z + f.d_t * self.eu + f.sigma_t) * dw
    }

    /// One step of the leader state with population term `m` (`x^(N)` or `z`).
    fn leader_state_step(&self, x: f64, u: f64, m: f64, dt: f64, dw0: f64, dw: f64) -> f64 {
        let l = &self.c.leader;
        x + (l.a * x + l.b * u + l.e * m + l.drift) * dt
            + (l.c * x + l.d * u + l.f * m + l.sigma) * dw0
            + (l.c_t * x + l.d_t * u + l.f_t * m + l.sigma_t) * dw
    }

    fn follower_state_step(&self, x: f64, u: f64, m: f64, dt: f64, dwi: f64, dw: f64) -> f64 {
        let f = &self.c.follower;
        x + (f.a * x + f.b * u + f.e * m + f.drift) * dt
            + (f.c * x + f.d * u + f.f * m + f.sigma) * dwi
            + (f.c_t * x + f.d_t * u + f.f_t * m + f.sigma_t) * dw
    }
}

/// The synthesized strategies tabulated on the grid, ready to simulate.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub grid: TimeGrid,
    pub coeffs: ModelCoefficients,
    pub profiles: FollowerProfiles,
    nodes: Vec<Node>,
}

impl ClosedLoop {
    /// Followers use the profiles implied by the leader's solution.
    pub fn new(coeffs: &ModelCoefficients, follower: &FollowerSynthesis, leader: &LeaderSynthesis) -> Self {
        Self::with_profiles(coeffs, follower, leader, FollowerProfiles::from_leader(leader))
    }

    pub fn with_profiles(
        coeffs: &ModelCoefficients,
        follower: &FollowerSynthesis,
        leader: &LeaderSynthesis,
        profiles: FollowerProfiles,
    ) -> Self {
        let grid = follower.grid();
        let zero = Vector3::zeros();
        let nodes = (0..=grid.steps)
            .map(|k| {
                let c = coeffs.at(grid.t(k));
                let g = follower.gains_at_node(coeffs, k);
                let (ez, ephi) = (profiles.ez.values[k], profiles.ephi.values[k]);
                let follower_offset = g.control_offset(c.follower.b, ez, ephi);
                let lm = leader.system.nodes[k];
                let (g1, g2) = (leader.gamma1.values[k], leader.gamma2.values[k]);
                let (ex, phi) = (leader.ex.values[k], leader.ephi.values[k]);
                let lg = leader.gains[k];
                let leader_offset = lg.control(&zero, &ex, &phi);
                let drift_rest = lm.xcheck_drift(&g1, &g2, &zero, &ex, &phi) - lm.b * leader_offset;
                Node {
                    c,
                    k1: g.k1,
                    follower_offset,
                    ez,
                    eu: follower_offset - g.k1 * ez,
                    theta1: lg.theta1,
                    leader_offset,
                    ex1: ex[0],
                    l11: lm.l11,
                    l21: lm.l21,
                    b: lm.b,
                    d: lm.d,
                    drift_rest,
                    f2: lm.f2,
                }
            })
            .collect();
        ClosedLoop { grid, coeffs: coeffs.clone(), profiles, nodes }
    }

    /// Mean leader state `EX_1` at node `k`.
    pub fn ex1(&self, k: usize) -> f64 {
        self.nodes[k].ex1
    }

    /// Mean follower control at node `k`.
    pub fn mean_follower_control(&self, k: usize) -> f64 {
        self.nodes[k].eu
    }
}

fn guard<S: OdeState>(v: S, what: &'static str, t: f64) -> Result<S, SimError> {
    if escaped(&v) {
        Err(SimError::BlowUp { what, t })
    } else {
        Ok(v)
    }
}

/// `Xcheck` and the equilibrium leader control along one `W0` path.
pub fn simulate_leader_filter(model: &ClosedLoop, dw0: &[f64]) -> Result<(Vec<Vector3<f64>>, Vec<f64>), SimError> {
    let grid = model.grid;
    let dt = grid.dt();
    let mut x = Vector3::new(model.coeffs.xi0, model.coeffs.xi, 0.0);
    let mut xs = Vec::with_capacity(grid.len());
    let mut us = Vec::with_capacity(grid.len());
    for (k, node) in model.nodes.iter().enumerate() {
        let u0 = node.leader_control(&x);
        xs.push(x);
        us.push(u0);
        if k < grid.steps {
            x = guard(node.leader_filter_step(&x, u0, dt, dw0[k]), "leader filter", grid.t(k + 1))?;
        }
    }
    Ok((xs, us))
}

/// Per-agent values on the grid, time-major: entry `k * agents + (i - 1)`
/// holds agent `i` at node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentPaths {
    pub agents: usize,
    pub values: Vec<f64>,
}

impl AgentPaths {
    fn filled(agents: usize, nodes: usize, v: f64) -> Self {
        AgentPaths { agents, values: vec![v; agents * nodes] }
    }

    /// All agents at node `k`.
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.agents..(k + 1) * self.agents]
    }

    fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.agents..(k + 1) * self.agents]
    }

    /// Path of agent `i` (1-based).
    pub fn agent(&self, i: usize) -> Vec<f64> {
        self.values.iter().skip(i - 1).step_by(self.agents).copied().collect()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.values[k * self.agents + (i - 1)]
    }
}

/// `xhat_i` and the equilibrium control of one follower along its `W_i` path.
pub fn simulate_follower_filter(model: &ClosedLoop, dwi: &[f64]) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    let grid = model.grid;
    let dt = grid.dt();
    let mut x = model.coeffs.xi;
    let mut xs = Vec::with_capacity(grid.len());
    let mut us = Vec::with_capacity(grid.len());
    for (k, node) in model.nodes.iter().enumerate() {
        let u = node.follower_control(x);
        xs.push(x);
        us.push(u);
        if k < grid.steps {
            x = guard(node.follower_filter_step(x, u, dt, dwi[k]), "follower filter", grid.t(k + 1))?;
        }
    }
    Ok((xs, us))
}

/// All followers' filters and equilibrium controls, stepped in lockstep.
/// Agent `i` performs exactly the arithmetic of [`simulate_follower_filter`].
pub fn simulate_follower_filters(model: &ClosedLoop, noise: &NoiseBundle) -> Result<(AgentPaths, AgentPaths), SimError> {
    let grid = model.grid;
    let dt = grid.dt();
    let n = noise.agents;
    let mut xs = AgentPaths::filled(n, grid.len(), model.coeffs.xi);
    let mut us = AgentPaths::filled(n, grid.len(), 0.0);
    for (k, node) in model.nodes.iter().enumerate() {
        for (u, x) in us.at_mut(k).iter_mut().zip(&xs.values[k * n..(k + 1) * n]) {
            *u = node.follower_control(*x);
        }
        if k < grid.steps {
            let t_next = grid.t(k + 1);
            let dwi = &noise.followers[k * n..(k + 1) * n];
            let (now, next) = xs.values[k * n..(k + 2) * n].split_at_mut(n);
            for i in 0..n {
                next[i] = guard(node.follower_filter_step(now[i], us.values[k * n + i], dt, dwi[i]), "follower filter", t_next)?;
            }
        }
    }
    Ok((xs, us))
}

/// The frozen population term along one common-noise path.
pub fn simulate_mean_field_z(model: &ClosedLoop, dw: &[f64]) -> Result<Vec<f64>, SimError> {
    let grid = model.grid;
    let dt = grid.dt();
    let mut z = model.coeffs.xi;
    let mut out = Vec::with_capacity(grid.len());
    out.push(z);
    for k in 0..grid.steps {
        z = guard(model.nodes[k].z_step(z, dt, dw[k]), "z", grid.t(k + 1))?;
        out.push(z);
    }
    Ok(out)
}

/// Centralized states under the given open-loop controls.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledPaths {
    pub x0: Vec<f64>,
    pub xs: AgentPaths,
    pub xn: Vec<f64>,
}

fn mean(v: impl Iterator<Item = f64>, n: usize) -> f64 {
    v.sum::<f64>() / n as f64
}

/// Average through an exact fixed-point sum. Each term is rounded to a
/// multiple of 2^-80 on its own and integer addition is associative, so
/// relabeling agents cannot change a bit. States are guarded below `BLOW_UP`
/// (< 2^27), which leaves room for 2^20 agents in an `i128`.
fn symmetric_mean(values: &[f64]) -> f64 {
    const SCALE: f64 = (1u128 << 80) as f64;
    debug_assert!(values.len() < 1 << 20);
    let total: i128 = values.iter().map(|v| (v * SCALE).round() as i128).sum();
    total as f64 / SCALE / values.len() as f64
}

/// Joint Euler-Maruyama of the leader and all followers, with `x^(N)`
/// recomputed from the current states at every step.
pub fn simulate_coupled_game(
    model: &ClosedLoop,
    u0: &[f64],
    us: &AgentPaths,
    noise: &NoiseBundle,
) -> Result<CoupledPaths, SimError> {
    let grid = model.grid;
    let dt = grid.dt();
    let n = noise.agents;
    let mut x0 = vec![model.coeffs.xi0; grid.len()];
    let mut xs = AgentPaths::filled(n, grid.len(), model.coeffs.xi);
    let mut xn = vec![model.coeffs.xi; grid.len()];
    for k in 0..grid.steps {
        let node = &model.nodes[k];
        let t_next = grid.t(k + 1);
        let m = xn[k];
        let (dw0, dw) = (noise.w0[k], noise.common[k]);
        x0[k + 1] = guard(node.leader_state_step(x0[k], u0[k], m, dt, dw0, dw), "leader state", t_next)?;
        let dwi = &noise.followers[k * n..(k + 1) * n];
        let u = us.at(k);
        let (now, next) = xs.values[k * n..(k + 2) * n].split_at_mut(n);
        for i in 0..n {
            next[i] = guard(node.follower_state_step(now[i], u[i], m, dt, dwi[i], dw), "follower state", t_next)?;
        }
        xn[k + 1] = symmetric_mean(next);
    }
    Ok(CoupledPaths { x0, xs, xn })
}

/// Limiting leader and follower states, driven by `z` in place of `x^(N)`.
pub fn simulate_limiting_states(
    model: &ClosedLoop,
    u0: &[f64],
    us: &AgentPaths,
    z: &[f64],
    noise: &NoiseBundle,
) -> Result<(Vec<f64>, AgentPaths), SimError> {
    let grid = model.grid;
    let dt = grid.dt();
    let n = noise.agents;
    let mut x0 = vec![model.coeffs.xi0; grid.len()];
    let mut xs = AgentPaths::filled(n, grid.len(), model.coeffs.xi);
    for k in 0..grid.steps {
        let node = &model.nodes[k];
        let t_next = grid.t(k + 1);
        let (dw0, dw) = (noise.w0[k], noise.common[k]);
        x0[k + 1] = guard(node.leader_state_step(x0[k], u0[k], z[k], dt, dw0, dw), "limiting leader state", t_next)?;
        let dwi = &noise.followers[k * n..(k + 1) * n];
        let u = us.at(k);
        let (now, next) = xs.values[k * n..(k + 2) * n].split_at_mut(n);
        for i in 0..n {
            next[i] = guard(node.follower_state_step(now[i], u[i], z[k], dt, dwi[i], dw), "limiting follower state", t_next)?;
        }
    }
    Ok((x0, xs))
}

/// Whose control is perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Player {
    Leader,
    /// 1-based follower index.
    Follower(usize),
}

/// An additive deviation from the equilibrium control. The closure receives
/// the node index and the player's own filter deviation (`Xcheck_1 - EX_1`
/// for the leader, `xhat_i - Ez` for a follower), so it stays adapted to the
/// player's own information.
#[derive(Clone, Copy)]
pub struct ControlPerturbation<'a> {
    pub who: Player,
    pub tweak: &'a (dyn Fn(usize, f64) -> f64 + Sync),
}

/// One Monte Carlo path with every simulated quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub noise: NoiseBundle,
    pub xcheck: Vec<Vector3<f64>>,
    pub u0: Vec<f64>,
    pub xhat: AgentPaths,
    pub u: AgentPaths,
    pub z: Vec<f64>,
    pub xbar0: Vec<f64>,
    pub xbar: AgentPaths,
    pub coupled: CoupledPaths,
}

pub fn simulate_path(
    model: &ClosedLoop,
    noise: NoiseBundle,
    perturbation: Option<ControlPerturbation<'_>>,
) -> Result<PathBundle, SimError> {
    let (xcheck, mut u0) = simulate_leader_filter(model, &noise.w0)?;
    let (xhat, mut u) = simulate_follower_filters(model, &noise)?;
    if let Some(p) = perturbation {
        match p.who {
            Player::Leader => {
                for (k, v) in u0.iter_mut().enumerate() {
                    *v += (p.tweak)(k, xcheck[k][0] - model.nodes[k].ex1);
                }
            }
            Player::Follower(i) => {
                let n = noise.agents;
                for k in 0..model.grid.len() {
                    u.values[k * n + i - 1] += (p.tweak)(k, xhat.get(i, k) - model.nodes[k].ez);
                }
            }
        }
    }
    let z = simulate_mean_field_z(model, &noise.common)?;
    let (xbar0, xbar) = simulate_limiting_states(model, &u0, &u, &z, &noise)?;
    let coupled = simulate_coupled_game(model, &u0, &u, &noise)?;
    Ok(PathBundle { noise, xcheck, u0, xhat, u, z, xbar0, xbar, coupled })
}

/// Realized costs of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCosts {
    pub leader: f64,
    pub leader_limit: f64,
    pub followers: Vec<f64>,
    pub followers_limit: Vec<f64>,
    /// `int_0^T |z - x^(N)|^2 dt`.
    pub gap_sq: f64,
}

/// Trapezoid weights on the grid.
fn trapezoid(grid: &TimeGrid, k: usize) -> f64 {
    if k == 0 || k == grid.steps {
        0.5 * grid.dt()
    } else {
        grid.dt()
    }
}

pub fn evaluate_path_costs(model: &ClosedLoop, p: &PathBundle) -> PathCosts {
    let grid = model.grid;
    let n = p.noise.agents;
    let last = grid.steps;
    let (mut j0, mut j0_lim, mut gap_sq) = (0.0, 0.0, 0.0);
    let mut ji = vec![0.0; n];
    let mut ji_lim = vec![0.0; n];
    for (k, node) in model.nodes.iter().enumerate() {
        let w = trapezoid(&grid, k);
        let c = &node.c;
        let (x0, xn, z, xbar0) = (p.coupled.x0[k], p.coupled.xn[k], p.z[k], p.xbar0[k]);
        let ctrl = c.r0 * p.u0[k] * p.u0[k];
        j0 += w * (ctrl + c.q0 * (x0 - xn).powi(2));
        j0_lim += w * (ctrl + c.q0 * (xbar0 - z).powi(2));
        gap_sq += w * (z - xn).powi(2);
        let target = c.lambda * x0 + (1.0 - c.lambda) * xn;
        let target_lim = c.lambda * xbar0 + (1.0 - c.lambda) * z;
        let (u, x, xbar) = (p.u.at(k), p.coupled.xs.at(k), p.xbar.at(k));
        for i in 0..n {
            let ctrl = c.r1 * u[i] * u[i];
            ji[i] += w * (ctrl + c.q1 * (x[i] - target).powi(2));
            ji_lim[i] += w * (ctrl + c.q1 * (xbar[i] - target_lim).powi(2));
        }
    }
    let (g0, g1) = (model.coeffs.g0, model.coeffs.g1);
    let half = |running: f64, terminal: f64| 0.5 * (running + terminal);
    let (x_end, xbar_end) = (p.coupled.xs.at(last), p.xbar.at(last));
    PathCosts {
        leader: half(j0, g0 * p.coupled.x0[last].powi(2)),
        leader_limit: half(j0_lim, g0 * p.xbar0[last].powi(2)),
        followers: (0..n).map(|i| half(ji[i], g1 * x_end[i].powi(2))).collect(),
        followers_limit: (0..n).map(|i| half(ji_lim[i], g1 * xbar_end[i].powi(2))).collect(),
        gap_sq,
    }
}

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    /// Sample mean and `sd / sqrt(n)`; a single sample has infinite error.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let stderr = if samples.len() < 2 {
            f64::INFINITY
        } else {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        Estimate { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub mc_paths: usize,
    pub j0: Estimate,
    pub j0_lim: Estimate,
    pub ji: Vec<Estimate>,
    pub ji_lim: Vec<Estimate>,
    /// Population average of the follower costs.
    pub ji_mean: Estimate,
    pub ji_lim_mean: Estimate,
    /// `sqrt(E int |z - x^(N)|^2)`; the error is propagated by the delta method.
    pub epsilon: Estimate,
}

pub fn cost_report(paths: &[PathCosts]) -> CostReport {
    let column = |f: &dyn Fn(&PathCosts) -> f64| Estimate::from_samples(&paths.iter().map(f).collect::<Vec<_>>());
    let n = paths.first().map_or(0, |p| p.followers.len());
    let sq = column(&|p| p.gap_sq);
    let eps = sq.mean.sqrt();
    CostReport {
        mc_paths: paths.len(),
        j0: column(&|p| p.leader),
        j0_lim: column(&|p| p.leader_limit),
        ji: (0..n).map(|i| column(&|p| p.followers[i])).collect(),
        ji_lim: (0..n).map(|i| column(&|p| p.followers_limit[i])).collect(),
        ji_mean: column(&|p| mean(p.followers.iter().copied(), n)),
        ji_lim_mean: column(&|p| mean(p.followers_limit.iter().copied(), n)),
        epsilon: Estimate { mean: eps, stderr: if eps > 0.0 { sq.stderr / (2.0 * eps) } else { 0.0 } },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimConfig {
    pub agents: usize,
    pub mc_paths: usize,
    pub seed: u64,
    /// Keep path 0 for export.
    pub record_paths: bool,
}

/// Path 0 as exported: `t, x^(N), z, x0, Xcheck`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub t: Vec<f64>,
    pub xn: Vec<f64>,
    pub z: Vec<f64>,
    pub x0: Vec<f64>,
    pub xcheck: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub paths: Vec<PathCosts>,
    pub record: Option<PathRecord>,
}

impl SimOutput {
    pub fn report(&self) -> CostReport {
        cost_report(&self.paths)
    }
}

/// Runs `mc_paths` independent paths in parallel. Results are collected in
/// path order, so the output does not depend on scheduling.
pub fn simulate_game(
    model: &ClosedLoop,
    sim: &SimConfig,
    perturbation: Option<ControlPerturbation<'_>>,
) -> Result<SimOutput, SimError> {
    if sim.agents == 0 {
        return Err(SimError::EmptyPopulation);
    }
    if sim.mc_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let results: Vec<Result<(PathCosts, Option<PathRecord>), SimError>> = (0..sim.mc_paths as u64)
        .into_par_iter()
        .map(|path_id| {
            let noise = NoiseBundle::generate(sim.seed, path_id, sim.agents, &model.grid);
            let p = simulate_path(model, noise, perturbation)?;
            let record = (sim.record_paths && path_id == 0).then(|| PathRecord {
                t: model.grid.nodes().collect(),
                xn: p.coupled.xn.clone(),
                z: p.z.clone(),
                x0: p.coupled.x0.clone(),
                xcheck: p.xcheck.clone(),
            });
            Ok((evaluate_path_costs(model, &p), record))
        })
        .collect();
    let mut paths = Vec::with_capacity(sim.mc_paths);
    let mut record = None;
    for r in results {
        let (costs, rec) = r?;
        paths.push(costs);
        record = record.or(rec);
    }
    Ok(SimOutput { paths, record })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::follower_synthesis::{synthesize_follower, SynthesisOptions};
    use crate::leader_synthesis::{synthesize_leader, LeaderContext};
    use crate::numerics::{integrate_ode, Direction, Method};

    fn closed_loop(c: &ModelCoefficients, steps: usize) -> ClosedLoop {
        let grid = TimeGrid::new(c.horizon, steps);
        let f = synthesize_follower(c, &grid, SynthesisOptions::default()).unwrap();
        let l = synthesize_leader(&LeaderContext::new(c, &f)).unwrap();
        ClosedLoop::new(c, &f, &l)
    }

    fn leader_synthesis(c: &ModelCoefficients, steps: usize) -> LeaderSynthesis {
        let grid = TimeGrid::new(c.horizon, steps);
        let f = synthesize_follower(c, &grid, SynthesisOptions::default()).unwrap();
        synthesize_leader(&LeaderContext::new(c, &f)).unwrap()
    }

    fn noiseless(mut c: ModelCoefficients) -> ModelCoefficients {
        for d in [&mut c.leader, &mut c.follower] {
            for slot in [&mut d.c, &mut d.d, &mut d.f, &mut d.c_t, &mut d.d_t, &mut d.f_t, &mut d.sigma, &mut d.sigma_t] {
                *slot = 0.0.into();
            }
        }
        c
    }

    #[test]
    fn zero_noise_filters_follow_mean_profiles() {
        let c = noiseless(ModelCoefficients::reference_example());
        let steps = 1000;
        let model = closed_loop(&c, steps);
        let leader = leader_synthesis(&c, steps);
        let noise = NoiseBundle::generate(3, 0, 4, &model.grid);
        let (xcheck, _) = simulate_leader_filter(&model, &noise.w0).unwrap();
        let tol = 5.0 * model.grid.dt() * c.horizon;
        for (a, b) in xcheck.iter().zip(&leader.ex.values) {
            assert!((a - b).amax() <= tol);
        }
        let (xhat, _) = simulate_follower_filters(&model, &noise).unwrap();
        for k in 0..=steps {
            assert!(xhat.at(k).iter().all(|x| *x == xhat.get(1, k)));
        }
        let z = simulate_mean_field_z(&model, &noise.common).unwrap();
        for k in 0..=steps {
            assert!((xhat.get(1, k) - leader.ez.values[k]).abs() <= tol);
            assert!((z[k] - leader.ez.values[k]).abs() <= tol);
        }
    }

    /// Mean of `v` over paths, with its standard error, at node `k`.
    fn mc_mean(paths: &[Vec<f64>], k: usize) -> Estimate {
        Estimate::from_samples(&paths.iter().map(|p| p[k]).collect::<Vec<_>>())
    }

    #[test]
    fn leader_filter_mean_matches_ex() {
        let c = ModelCoefficients::reference_example();
        let steps = 200;
        let model = closed_loop(&c, steps);
        let leader = leader_synthesis(&c, steps);
        // Zero increments give the Euler recursion of the mean ODE.
        let (mean_path, mean_u) = simulate_leader_filter(&model, &vec![0.0; steps]).unwrap();
        let runs: Vec<(Vec<Vector3<f64>>, Vec<f64>)> = (0..10_000u64)
            .into_par_iter()
            .map(|p| {
                let dw0 = crate::numerics::brownian_increments(11, p, crate::numerics::STREAM_W0, &model.grid);
                simulate_leader_filter(&model, &dw0).unwrap()
            })
            .collect();
        for j in 0..3 {
            let comp: Vec<Vec<f64>> = runs.iter().map(|(x, _)| x.iter().map(|v| v[j]).collect()).collect();
            for k in (0..=steps).step_by(10) {
                let e = mc_mean(&comp, k);
                assert!((e.mean - mean_path[k][j]).abs() <= 3.0 * e.stderr + 1e-12, "component {j} node {k}");
                assert!((mean_path[k][j] - leader.ex.values[k][j]).abs() <= 5.0 * model.grid.dt());
            }
        }
        let us: Vec<Vec<f64>> = runs.iter().map(|(_, u)| u.clone()).collect();
        for k in (0..=steps).step_by(10) {
            let e = mc_mean(&us, k);
            assert!(e.mean.is_finite());
            assert!((e.mean - mean_u[k]).abs() <= 3.0 * e.stderr + 1e-12);
            assert!((mean_u[k] - leader.eu0.values[k]).abs() <= 5.0 * model.grid.dt() * 10.0);
        }
    }

    #[test]
    fn z_mean_matches_ez() {
        let c = ModelCoefficients::reference_example();
        let steps = 200;
        let model = closed_loop(&c, steps);
        let mean_path = simulate_mean_field_z(&model, &vec![0.0; steps]).unwrap();
        let zs: Vec<Vec<f64>> = (0..4000u64)
            .map(|p| {
                let dw = crate::numerics::brownian_increments(5, p, crate::numerics::STREAM_COMMON, &model.grid);
                simulate_mean_field_z(&model, &dw).unwrap()
            })
            .collect();
        for k in (0..=steps).step_by(10) {
            let e = mc_mean(&zs, k);
            assert!((e.mean - mean_path[k]).abs() <= 3.0 * e.stderr + 1e-12, "node {k}");
            assert!((mean_path[k] - model.profiles.ez.values[k]).abs() <= 5.0 * model.grid.dt());
        }
    }

    #[test]
    fn follower_filters_mean_matches_ez() {
        let c = ModelCoefficients::reference_example();
        let steps = 200;
        let model = closed_loop(&c, steps);
        let mean_path = simulate_follower_filter(&model, &vec![0.0; steps]).unwrap().0;
        let agents = 20;
        let per_path: Vec<Vec<f64>> = (0..200u64)
            .map(|p| {
                let noise = NoiseBundle::generate(2, p, agents, &model.grid);
                let (xhat, _) = simulate_follower_filters(&model, &noise).unwrap();
                (0..=steps).map(|k| xhat.at(k).iter().sum::<f64>() / agents as f64).collect()
            })
            .collect();
        for k in (0..=steps).step_by(10) {
            let e = mc_mean(&per_path, k);
            assert!((e.mean - mean_path[k]).abs() <= 3.0 * e.stderr + 1e-12, "node {k}");
        }
    }

    #[test]
    fn lockstep_filters_match_single_agent_runs() {
        let model = closed_loop(&ModelCoefficients::reference_example(), 100);
        let noise = NoiseBundle::generate(8, 3, 7, &model.grid);
        let (xs, us) = simulate_follower_filters(&model, &noise).unwrap();
        for i in 1..=7 {
            let (x, u) = simulate_follower_filter(&model, &noise.follower(i)).unwrap();
            assert_eq!(xs.agent(i), x);
            assert_eq!(us.agent(i), u);
        }
    }

    #[test]
    fn partial_information() {
        let c = ModelCoefficients::reference_example();
        let model = closed_loop(&c, 100);
        let base = NoiseBundle::generate(1, 0, 5, &model.grid);
        let run = |noise: NoiseBundle| simulate_path(&model, noise, None).unwrap();
        let reference = run(base.clone());

        let mut common = base.clone();
        common.common.iter_mut().for_each(|v| *v = -*v + 0.1);
        let p = run(common);
        assert_eq!(p.u, reference.u);
        assert_eq!(p.u0, reference.u0);
        assert_ne!(p.z, reference.z);

        let mut w0 = base.clone();
        w0.w0.iter_mut().for_each(|v| *v *= 2.0);
        let p = run(w0);
        assert_eq!(p.u, reference.u);
        assert_ne!(p.u0, reference.u0);

        let mut wi = base.clone();
        for k in 0..wi.steps {
            wi.followers[k * wi.agents + 2] += 0.05;
        }
        let p = run(wi);
        assert_eq!(p.u0, reference.u0);
        for j in [1, 2, 4, 5] {
            assert_eq!(p.u.agent(j), reference.u.agent(j));
        }
        assert_ne!(p.u.agent(3), reference.u.agent(3));
    }

    #[test]
    fn relabeling_agents_permutes_paths() {
        let c = ModelCoefficients::reference_example();
        let model = closed_loop(&c, 100);
        let base = NoiseBundle::generate(4, 1, 6, &model.grid);
        let mut swapped = base.clone();
        for k in 0..base.steps {
            swapped.followers.swap(k * 6 + 1, k * 6 + 4);
        }
        let a = simulate_path(&model, base, None).unwrap();
        let b = simulate_path(&model, swapped, None).unwrap();
        let perm = |v: &AgentPaths| {
            let mut v = v.clone();
            for k in 0..=100 {
                v.values.swap(k * 6 + 1, k * 6 + 4);
            }
            v
        };
        assert_eq!(perm(&a.xhat), b.xhat);
        assert_eq!(perm(&a.u), b.u);
        assert_eq!(perm(&a.coupled.xs), b.coupled.xs);
        assert_eq!(a.coupled.xn, b.coupled.xn);
        assert_eq!(a.coupled.x0, b.coupled.x0);
    }

    #[test]
    fn single_decoupled_agent_matches_limit() {
        let mut c = ModelCoefficients::reference_example();
        c.follower.e = 0.0.into();
        c.follower.f = 0.0.into();
        c.follower.f_t = 0.0.into();
        let model = closed_loop(&c, 200);
        let p = simulate_path(&model, NoiseBundle::generate(0, 0, 1, &model.grid), None).unwrap();
        assert_eq!(p.coupled.xs, p.xbar);
        assert_eq!(p.coupled.xn, p.coupled.xs.agent(1));
    }

    #[test]
    fn noiseless_decoupled_leader_solves_linear_ode() {
        let mut c = noiseless(ModelCoefficients::reference_example());
        c.leader.e = 0.0.into();
        let steps = 1000;
        let model = closed_loop(&c, steps);
        let p = simulate_path(&model, NoiseBundle::generate(0, 0, 3, &model.grid), None).unwrap();
        // dx0 = (A0 x0 + B0 u0 + b0) dt with u0 tabulated on the grid.
        let u0 = Trajectory::new(model.grid, p.u0.clone());
        let reference = integrate_ode(
            |t, x: &f64| 0.1 * x + 5.0 * u0.interpolate(t) + 1.0,
            c.xi0,
            &model.grid,
            Direction::Forward,
            Method::Rk4,
        )
        .unwrap();
        for k in 0..=steps {
            assert!((p.coupled.x0[k] - reference.values[k]).abs() <= 5.0 * model.grid.dt());
        }
    }

    #[test]
    fn cost_quadrature_exact_cases() {
        let mut c = ModelCoefficients::uniform(0.0);
        c.r0 = 1.0.into();
        c.r1 = 1.0.into();
        c.horizon = 2.0;
        let model = closed_loop(&c, 50);
        let mut p = simulate_path(&model, NoiseBundle::generate(0, 0, 2, &model.grid), None).unwrap();
        let costs = evaluate_path_costs(&model, &p);
        assert_eq!(costs.leader, 0.0);
        p.u0 = vec![0.7; model.grid.len()];
        let costs = evaluate_path_costs(&model, &p);
        assert!((costs.leader - 0.49 * 2.0 / 2.0).abs() < 1e-14);

        let mut c = ModelCoefficients::reference_example();
        c.q0 = 0.0.into();
        c.r0 = 0.0.into();
        c.g0 = 0.0;
        // R0 = 0 makes the leader problem degenerate, so cost a fixed path.
        let model = closed_loop(&ModelCoefficients::reference_example(), 50);
        let p = simulate_path(&model, NoiseBundle::generate(0, 0, 2, &model.grid), None).unwrap();
        let zeroed = ClosedLoop { coeffs: c.clone(), nodes: model.nodes.iter().map(|n| Node { c: c.at(0.0), ..*n }).collect(), ..model };
        let costs = evaluate_path_costs(&zeroed, &p);
        assert_eq!(costs.leader, 0.0);
        assert_eq!(costs.leader_limit, 0.0);
    }

    #[test]
    fn symmetric_mean_is_order_free() {
        let v = [0.1, 1e7, -3.3e-5, 2.0 / 3.0, -1e7 + 0.5];
        let mut w = v;
        w.reverse();
        assert_eq!(symmetric_mean(&v), symmetric_mean(&w));
        // The large terms cancel exactly.
        let exact = (0.1 - 3.3e-5 + 2.0 / 3.0 + 0.5) / 5.0;
        assert!((symmetric_mean(&v) - exact).abs() < 1e-15);
        assert_eq!(symmetric_mean(&[0.75]), 0.75);
    }

    #[test]
    fn estimate_statistics() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[3.0]).stderr, f64::INFINITY);
    }

    #[test]
    fn monte_carlo_is_thread_independent() {
        let c = ModelCoefficients::reference_example();
        let model = closed_loop(&c, 100);
        let sim = SimConfig { agents: 10, mc_paths: 16, seed: 9, record_paths: true };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_game(&model, &sim, None).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        assert_eq!(one.paths.len(), 16);
        let rec = one.record.unwrap();
        assert_eq!(rec.t.len(), 101);
        assert_eq!(rec.xcheck[0], Vector3::new(0.5, 0.5, 0.0));
    }

    #[test]
    fn standard_errors_shrink_with_paths() {
        // Additive noise only; with multiplicative noise the costs are too
        // heavy-tailed for the rate to show at this sample size.
        let mut c = noiseless(ModelCoefficients::reference_example());
        for d in [&mut c.leader, &mut c.follower] {
            d.sigma = 1.0.into();
            d.sigma_t = 1.0.into();
        }
        let model = closed_loop(&c, 50);
        let se = |paths| {
            let sim = SimConfig { agents: 5, mc_paths: paths, seed: 1, record_paths: false };
            let r = simulate_game(&model, &sim, None).unwrap().report();
            (r.j0.stderr, r.ji_mean.stderr)
        };
        let (small, large) = (se(100), se(1600));
        for ratio in [small.0 / large.0, small.1 / large.1] {
            assert!((3.0..5.5).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let c = ModelCoefficients::reference_example();
        let model = closed_loop(&c, 50);
        let noise = NoiseBundle::generate(0, 0, 3, &model.grid);
        let zero = |_: usize, _: f64| 0.0 * 1.0;
        let base = simulate_path(&model, noise.clone(), None).unwrap();
        for who in [Player::Leader, Player::Follower(2)] {
            let p = simulate_path(&model, noise.clone(), Some(ControlPerturbation { who, tweak: &zero })).unwrap();
            assert_eq!(p, base);
        }
        let bump = |k: usize, _: f64| if k < 10 { 1.0 } else { 0.0 };
        let p = simulate_path(&model, noise, Some(ControlPerturbation { who: Player::Follower(2), tweak: &bump })).unwrap();
        assert_eq!(p.u.agent(1), base.u.agent(1));
        assert_eq!(p.u.get(2, 3), base.u.get(2, 3) + 1.0);
        assert_eq!(p.u.get(2, 20), base.u.get(2, 20));
    }

    #[test]
    fn escape_is_reported() {
        let c = ModelCoefficients::reference_example();
        let model = closed_loop(&c, 20);
        let mut loud = c.clone();
        loud.follower.sigma_t = 1e12.into();
        let model = ClosedLoop { nodes: model.nodes.iter().map(|n| Node { c: loud.at(0.0), ..*n }).collect(), ..model };
        let sim = SimConfig { agents: 2, mc_paths: 4, seed: 0, record_paths: false };
        assert!(matches!(simulate_game(&model, &sim, None), Err(SimError::BlowUp { t, .. }) if t == 0.05));
        let sim = SimConfig { agents: 0, ..sim };
        assert_eq!(simulate_game(&model, &sim, None).unwrap_err(), SimError::EmptyPopulation);
        let sim = SimConfig { agents: 1, mc_paths: 0, ..sim };
        assert_eq!(simulate_game(&model, &sim, None).unwrap_err(), SimError::NoPaths);
    }
}
