//! Empirical checks of the epsilon-equilibrium: the decay of
//! `eps(N) = sqrt(E int |z - x^(N)|^2)` and the cost of unilateral deviations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::follower_synthesis::{solve_fbode, FollowerSynthesis};
use crate::game_sim::{
    simulate_game, ClosedLoop, ControlPerturbation, Estimate, FollowerProfiles, PathCosts, Player, SimConfig,
};
use crate::leader_synthesis::LeaderSynthesis;
use crate::model::{ModelCoefficients, TimeGrid};
use crate::numerics::Trajectory;
use crate::{SimError, SynthesisError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("decay fit needs at least two distinct agent counts with positive epsilon")]
    DegenerateFit,
    #[error("agent counts must be positive and strictly increasing")]
    UnorderedSweep,
    #[error("a perturbation of {who:?} may not read {reads:?}")]
    InadmissibleDirection { who: Player, reads: FilterSource },
    #[error("follower {0} is not in the population")]
    UnknownFollower(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonPoint {
    pub agents: usize,
    pub epsilon: Estimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonSweep {
    pub points: Vec<EpsilonPoint>,
}

impl EpsilonSweep {
    /// Every consecutive pair satisfies `eps_{j+1} <= eps_j + k * sqrt(se_j^2 + se_{j+1}^2)`.
    pub fn monotone_within(&self, k: f64) -> bool {
        self.points.windows(2).all(|w| {
            let (a, b) = (w[0].epsilon, w[1].epsilon);
            b.mean <= a.mean + k * a.stderr.hypot(b.stderr)
        })
    }
}

/// `eps(N)` from `mc_paths` coupled simulations with `agents` followers.
pub fn epsilon_of_n(model: &ClosedLoop, agents: usize, mc_paths: usize, seed: u64) -> Result<Estimate, SimError> {
    let sim = SimConfig { agents, mc_paths, seed, record_paths: false };
    Ok(simulate_game(model, &sim, None)?.report().epsilon)
}

/// One `eps(N)` estimate per agent count. Every point reuses the same seed,
/// so the common noise and the first followers' streams are shared.
pub fn sweep(model: &ClosedLoop, agents: &[usize], mc_paths: usize, seed: u64) -> Result<EpsilonSweep, EquilibriumError> {
    if agents.is_empty() || agents[0] == 0 || agents.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EquilibriumError::UnorderedSweep);
    }
    let points = agents
        .iter()
        .map(|&n| Ok(EpsilonPoint { agents: n, epsilon: epsilon_of_n(model, n, mc_paths, seed)? }))
        .collect::<Result<_, SimError>>()?;
    Ok(EpsilonSweep { points })
}

/// Least-squares line through `(ln N, ln eps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn fit_decay_rate(sweep: &EpsilonSweep) -> Result<DecayFit, EquilibriumError> {
    let pts = &sweep.points;
    if pts.len() < 2 || pts.iter().any(|p| !(p.epsilon.mean > 0.0 && p.epsilon.mean.is_finite())) {
        return Err(EquilibriumError::DegenerateFit);
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| (p.agents as f64).ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.epsilon.mean.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(EquilibriumError::DegenerateFit);
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(DecayFit { slope, intercept: my - slope * mx, r2 })
}

/// `c / sqrt(N)` with `c` fitted to the sweep at the theoretical slope `-1/2`.
pub fn epsilon_tolerance(sweep: &EpsilonSweep, agents: usize) -> Result<f64, EquilibriumError> {
    let pts = &sweep.points;
    if pts.is_empty() || pts.iter().any(|p| !(p.epsilon.mean > 0.0 && p.epsilon.mean.is_finite())) {
        return Err(EquilibriumError::DegenerateFit);
    }
    let log_c = pts.iter().map(|p| p.epsilon.mean.ln() + 0.5 * (p.agents as f64).ln()).sum::<f64>() / pts.len() as f64;
    Ok(log_c.exp() / (agents as f64).sqrt())
}

/// The filter state a feedback direction reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterSource {
    Leader,
    Follower(usize),
}

/// A deviation shape on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationDirection {
    Constant(f64),
    /// `height` on `[start, end)` (closed at `T`), zero elsewhere.
    Bump { start: f64, end: f64, height: f64 },
    /// Equal-length pieces covering `[0, T]`.
    Piecewise(Vec<f64>),
    /// `gain` times the deviation of the source filter from its mean.
    Feedback { gain: f64, source: FilterSource },
}

impl PerturbationDirection {
    fn deterministic_part(&self, t: f64, horizon: f64) -> f64 {
        match self {
            PerturbationDirection::Constant(c) => *c,
            PerturbationDirection::Bump { start, end, height } => {
                let inside = t >= *start && (t < *end || (*end >= horizon && t <= horizon));
                if inside {
                    *height
                } else {
                    0.0
                }
            }
            PerturbationDirection::Piecewise(values) => {
                let j = ((t / horizon) * values.len() as f64).floor() as usize;
                values[j.min(values.len() - 1)]
            }
            PerturbationDirection::Feedback { .. } => 0.0,
        }
    }

    /// Value at time `t` given the player's own filter deviation.
    pub fn value(&self, t: f64, horizon: f64, deviation: f64) -> f64 {
        match self {
            PerturbationDirection::Feedback { gain, .. } => gain * deviation,
            other => other.deterministic_part(t, horizon),
        }
    }

    /// Mean of the direction; feedback directions act on zero-mean deviations.
    pub fn mean(&self, t: f64, horizon: f64) -> f64 {
        self.deterministic_part(t, horizon)
    }

    pub fn check_admissible(&self, who: Player) -> Result<(), EquilibriumError> {
        if let PerturbationDirection::Feedback { source, .. } = self {
            let own = match (who, source) {
                (Player::Leader, FilterSource::Leader) => true,
                (Player::Follower(i), FilterSource::Follower(j)) => i == *j,
                _ => false,
            };
            if !own {
                return Err(EquilibriumError::InadmissibleDirection { who, reads: *source });
            }
        }
        Ok(())
    }
}

/// Ten seeded directions: constants `+1` and `-1`, six bumps on dyadic
/// subintervals with random signs, one random eight-piece step function and
/// one feedback on the player's own filter.
pub fn default_directions(seed: u64, who: Player, horizon: f64) -> Vec<PerturbationDirection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d1ec);
    let sign = |rng: &mut ChaCha8Rng| if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let mut dirs = vec![PerturbationDirection::Constant(1.0), PerturbationDirection::Constant(-1.0)];
    for (a, b) in [(0.0, 0.5), (0.5, 1.0), (0.0, 0.25), (0.25, 0.5), (0.5, 0.75), (0.75, 1.0)] {
        let height = sign(&mut rng);
        dirs.push(PerturbationDirection::Bump { start: a * horizon, end: b * horizon, height });
    }
    dirs.push(PerturbationDirection::Piecewise((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    let source = match who {
        Player::Leader => FilterSource::Leader,
        Player::Follower(i) => FilterSource::Follower(i),
    };
    dirs.push(PerturbationDirection::Feedback { gain: sign(&mut rng), source });
    dirs
}

/// Cost change of one deviation, kept per path for further contrasts.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTrial {
    pub who: Player,
    pub direction_id: usize,
    pub delta: f64,
    /// Perturbed minus equilibrium cost of `who`, path by path.
    pub per_path: Vec<f64>,
    pub gap: Estimate,
}

/// Equilibrium runs shared by all deviations of one study.
pub struct GapStudy<'a> {
    coeffs: &'a ModelCoefficients,
    follower: &'a FollowerSynthesis,
    leader: &'a LeaderSynthesis,
    pub sim: SimConfig,
    equilibrium: ClosedLoop,
    baseline: Vec<PathCosts>,
    /// Leader deviations re-derive the followers' profiles; the baseline
    /// takes the same route with no deviation.
    leader_baseline: Vec<f64>,
}

fn follower_index(who: Player, agents: usize) -> Result<Option<usize>, EquilibriumError> {
    match who {
        Player::Leader => Ok(None),
        Player::Follower(i) if (1..=agents).contains(&i) => Ok(Some(i)),
        Player::Follower(i) => Err(EquilibriumError::UnknownFollower(i)),
    }
}

impl<'a> GapStudy<'a> {
    pub fn new(
        coeffs: &'a ModelCoefficients,
        follower: &'a FollowerSynthesis,
        leader: &'a LeaderSynthesis,
        sim: SimConfig,
    ) -> Result<Self, EquilibriumError> {
        let sim = SimConfig { record_paths: false, ..sim };
        let equilibrium = ClosedLoop::new(coeffs, follower, leader);
        let baseline = simulate_game(&equilibrium, &sim, None)?.paths;
        let mut study =
            GapStudy { coeffs, follower, leader, sim, equilibrium, baseline, leader_baseline: Vec::new() };
        let route = study.leader_route(&PerturbationDirection::Constant(0.0), 0.0)?;
        study.leader_baseline = simulate_game(&route, &sim, None)?.paths.iter().map(|p| p.leader).collect();
        Ok(study)
    }

    pub fn grid(&self) -> TimeGrid {
        self.equilibrium.grid
    }

    /// Closed loop in which the followers respond to the leader's mean
    /// control shifted by `delta` times the direction's mean.
    fn leader_route(&self, direction: &PerturbationDirection, delta: f64) -> Result<ClosedLoop, EquilibriumError> {
        let grid = self.grid();
        let eu0 = Trajectory::new(
            grid,
            (0..=grid.steps)
                .map(|k| self.leader.eu0.values[k] + delta * direction.mean(grid.t(k), grid.horizon))
                .collect(),
        );
        let fbode = solve_fbode(self.coeffs, self.follower, &eu0)?;
        Ok(ClosedLoop::with_profiles(self.coeffs, self.follower, self.leader, FollowerProfiles::from_fbode(&fbode)))
    }

    pub fn gap(
        &self,
        who: Player,
        direction_id: usize,
        direction: &PerturbationDirection,
        delta: f64,
    ) -> Result<GapTrial, EquilibriumError> {
        direction.check_admissible(who)?;
        let index = follower_index(who, self.sim.agents)?;
        let grid = self.grid();
        let tweak = |k: usize, deviation: f64| delta * direction.value(grid.t(k), grid.horizon, deviation);
        let perturbation = Some(ControlPerturbation { who, tweak: &tweak });
        let per_path: Vec<f64> = match index {
            None => {
                let route = self.leader_route(direction, delta)?;
                let out = simulate_game(&route, &self.sim, perturbation)?;
                out.paths.iter().zip(&self.leader_baseline).map(|(p, b)| p.leader - b).collect()
            }
            Some(i) => {
                let out = simulate_game(&self.equilibrium, &self.sim, perturbation)?;
                out.paths.iter().zip(&self.baseline).map(|(p, b)| p.followers[i - 1] - b.followers[i - 1]).collect()
            }
        };
        Ok(GapTrial { who, direction_id, delta, gap: Estimate::from_samples(&per_path), per_path })
    }
}

/// Single deviation, with its own equilibrium baseline.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_gap(
    coeffs: &ModelCoefficients,
    follower: &FollowerSynthesis,
    leader: &LeaderSynthesis,
    sim: SimConfig,
    who: Player,
    direction: &PerturbationDirection,
    delta: f64,
) -> Result<GapTrial, EquilibriumError> {
    direction.check_admissible(who)?;
    follower_index(who, sim.agents)?;
    GapStudy::new(coeffs, follower, leader, sim)?.gap(who, 0, direction, delta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimalityGapReport {
    pub trials: Vec<GapTrial>,
    pub epsilon_tol: f64,
}

impl OptimalityGapReport {
    /// No deviation improves its cost by more than `epsilon_tol + 3 SE`.
    pub fn verdict(&self) -> bool {
        self.trials.iter().all(|t| t.gap.mean >= -(self.epsilon_tol + 3.0 * t.gap.stderr))
    }
}

/// Default directions at each `delta`, for the leader and for follower 1.
pub fn optimality_gaps(
    coeffs: &ModelCoefficients,
    follower: &FollowerSynthesis,
    leader: &LeaderSynthesis,
    sim: SimConfig,
    deltas: &[f64],
    epsilon_tol: f64,
) -> Result<OptimalityGapReport, EquilibriumError> {
    let study = GapStudy::new(coeffs, follower, leader, sim)?;
    let mut trials = Vec::new();
    for who in [Player::Leader, Player::Follower(1)] {
        for (id, dir) in default_directions(sim.seed, who, coeffs.horizon).iter().enumerate() {
            for &delta in deltas {
                trials.push(study.gap(who, id, dir, delta)?);
            }
        }
    }
    Ok(OptimalityGapReport { trials, epsilon_tol })
}
