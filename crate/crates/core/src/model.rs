//! Game coefficients, the flat `key = value` configuration format and the
//! standing-assumption checks on the raw data.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Lower bound used to operationalize `R >> 0` on the grid.
pub const TOL_R: f64 = 1e-12;
/// Slack on the pointwise follower coupling condition.
pub const A31_SLACK: f64 = 1e-10;
/// Threshold on `|Theta(T)_33|` and on the shooting sensitivity.
pub const TOL_DET: f64 = 1e-8;
/// Strict positivity threshold for the leader's effective control weight.
pub const TOL_R0: f64 = 1e-12;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_AGENTS: usize = 300;
pub const DEFAULT_PATHS: usize = 200;
pub const DEFAULT_SEED: u64 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("value of `{0}` is not numeric")]
    NonNumeric(String),
    #[error("horizon T_horizon must be positive")]
    NegativeHorizon,
    #[error("malformed piecewise table for `{0}`")]
    MalformedTable(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("`{0}` is out of range")]
    OutOfRange(String),
    #[error("line {0} is not of the form `key = value`")]
    Syntax(usize),
}

/// A real function of time: either constant or piecewise constant.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// Breakpoints `(t_j, v_j)`, strictly increasing in `t_j`. The value `v_j`
    /// holds on `(t_j, t_{j+1}]`; before the first breakpoint `v_0` applies.
    Table(Vec<(f64, f64)>),
}

impl Coefficient {
    /// Left-continuous evaluation.
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Table(points) => {
                let idx = points.partition_point(|&(tj, _)| tj < t);
                points[idx.saturating_sub(1)].1
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Coefficient::Constant(v) => v.is_finite(),
            Coefficient::Table(points) => points.iter().all(|(t, v)| t.is_finite() && v.is_finite()),
        }
    }

    fn parse(key: &str, raw: &str) -> Result<Self, ConfigError> {
        let raw = raw.trim();
        let Some(body) = raw.strip_prefix("table:") else {
            return raw
                .parse::<f64>()
                .map(Coefficient::Constant)
                .map_err(|_| ConfigError::NonNumeric(key.to_string()));
        };
        let malformed = || ConfigError::MalformedTable(key.to_string());
        let mut points = Vec::new();
        for entry in body.split(',') {
            let (t, v) = entry.split_once(':').ok_or_else(malformed)?;
            let t: f64 = t.trim().parse().map_err(|_| malformed())?;
            let v: f64 = v.trim().parse().map_err(|_| malformed())?;
            points.push((t, v));
        }
        if points.is_empty() || points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(malformed());
        }
        Ok(Coefficient::Table(points))
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Constant(v)
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(v) => write!(f, "{v:?}"),
            Coefficient::Table(points) => {
                write!(f, "table:")?;
                for (j, (t, v)) in points.iter().enumerate() {
                    let sep = if j == 0 { " " } else { ", " };
                    write!(f, "{sep}{t:?}:{v:?}")?;
                }
                Ok(())
            }
        }
    }
}

/// Coefficients of one agent's state equation
/// `dx = (a x + b u + e m + drift) dt + (c x + d u + f m + sigma) dW_own
///      + (c_t x + d_t u + f_t m + sigma_t) dW`,
/// where `m` is the population term and `W` the common noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub a: Coefficient,
    pub b: Coefficient,
    pub c: Coefficient,
    pub d: Coefficient,
    pub e: Coefficient,
    pub f: Coefficient,
    pub c_t: Coefficient,
    pub d_t: Coefficient,
    pub f_t: Coefficient,
    pub drift: Coefficient,
    pub sigma: Coefficient,
    pub sigma_t: Coefficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynamicsAt {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
    pub c_t: f64,
    pub d_t: f64,
    pub f_t: f64,
    pub drift: f64,
    pub sigma: f64,
    pub sigma_t: f64,
}

impl Dynamics {
    pub fn constant(v: f64) -> Self {
        let c = Coefficient::Constant(v);
        Dynamics {
            a: c.clone(),
            b: c.clone(),
            c: c.clone(),
            d: c.clone(),
            e: c.clone(),
            f: c.clone(),
            c_t: c.clone(),
            d_t: c.clone(),
            f_t: c.clone(),
            drift: c.clone(),
            sigma: c.clone(),
            sigma_t: c,
        }
    }

    pub fn at(&self, t: f64) -> DynamicsAt {
        DynamicsAt {
            a: self.a.at(t),
            b: self.b.at(t),
            c: self.c.at(t),
            d: self.d.at(t),
            e: self.e.at(t),
            f: self.f.at(t),
            c_t: self.c_t.at(t),
            d_t: self.d_t.at(t),
            f_t: self.f_t.at(t),
            drift: self.drift.at(t),
            sigma: self.sigma.at(t),
            sigma_t: self.sigma_t.at(t),
        }
    }

    fn slots(&self) -> [(&'static str, &Coefficient); 12] {
        [
            ("A", &self.a),
            ("B", &self.b),
            ("C", &self.c),
            ("D", &self.d),
            ("E", &self.e),
            ("F", &self.f),
            ("Ct", &self.c_t),
            ("Dt", &self.d_t),
            ("Ft", &self.f_t),
            ("b", &self.drift),
            ("sigma", &self.sigma),
            ("sigmat", &self.sigma_t),
        ]
    }

    fn slots_mut(&mut self) -> [(&'static str, &mut Coefficient); 12] {
        [
            ("A", &mut self.a),
            ("B", &mut self.b),
            ("C", &mut self.c),
            ("D", &mut self.d),
            ("E", &mut self.e),
            ("F", &mut self.f),
            ("Ct", &mut self.c_t),
            ("Dt", &mut self.d_t),
            ("Ft", &mut self.f_t),
            ("b", &mut self.drift),
            ("sigma", &mut self.sigma),
            ("sigmat", &mut self.sigma_t),
        ]
    }
}

/// Every primitive datum of the game.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCoefficients {
    pub leader: Dynamics,
    pub follower: Dynamics,
    pub q0: Coefficient,
    pub r0: Coefficient,
    pub q1: Coefficient,
    pub r1: Coefficient,
    pub g0: f64,
    pub g1: f64,
    pub lambda: f64,
    pub xi: f64,
    pub xi0: f64,
    pub horizon: f64,
}

/// All coefficients frozen at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientsAt {
    pub leader: DynamicsAt,
    pub follower: DynamicsAt,
    pub q0: f64,
    pub r0: f64,
    pub q1: f64,
    pub r1: f64,
    pub g0: f64,
    pub g1: f64,
    pub lambda: f64,
}

impl ModelCoefficients {
    /// The parameter set of the reference experiment.
    pub fn reference_example() -> Self {
        let mut leader = Dynamics::constant(1.0);
        leader.a = 0.1.into();
        leader.b = 5.0.into();
        leader.e = 0.5.into();
        let mut follower = Dynamics::constant(1.0);
        follower.a = (-2.0).into();
        follower.b = 5.0.into();
        ModelCoefficients {
            leader,
            follower,
            q0: 1.0.into(),
            r0: 1.0.into(),
            q1: 1.0.into(),
            r1: 1.0.into(),
            g0: 0.05,
            g1: 0.3,
            lambda: 0.5,
            xi: 0.5,
            xi0: 0.5,
            horizon: 1.0,
        }
    }

    /// Every coefficient set to `v`, with unit horizon and `lambda = 0`.
    pub fn uniform(v: f64) -> Self {
        ModelCoefficients {
            leader: Dynamics::constant(v),
            follower: Dynamics::constant(v),
            q0: v.into(),
            r0: v.into(),
            q1: v.into(),
            r1: v.into(),
            g0: v,
            g1: v,
            lambda: 0.0,
            xi: v,
            xi0: v,
            horizon: 1.0,
        }
    }

    pub fn at(&self, t: f64) -> CoefficientsAt {
        CoefficientsAt {
            leader: self.leader.at(t),
            follower: self.follower.at(t),
            q0: self.q0.at(t),
            r0: self.r0.at(t),
            q1: self.q1.at(t),
            r1: self.r1.at(t),
            g0: self.g0,
            g1: self.g1,
            lambda: self.lambda,
        }
    }

    fn time_slots(&self) -> Vec<(String, &Coefficient)> {
        let mut out = Vec::with_capacity(28);
        for (name, c) in self.leader.slots() {
            out.push((format!("{name}0"), c));
        }
        for (name, c) in self.follower.slots() {
            out.push((format!("{name}1"), c));
        }
        out.push(("Q0".into(), &self.q0));
        out.push(("R0".into(), &self.r0));
        out.push(("Q1".into(), &self.q1));
        out.push(("R1".into(), &self.r1));
        out
    }

    fn time_slots_mut(&mut self) -> Vec<(String, &mut Coefficient)> {
        let mut out = Vec::with_capacity(28);
        for (name, c) in self.leader.slots_mut() {
            out.push((format!("{name}0"), c));
        }
        for (name, c) in self.follower.slots_mut() {
            out.push((format!("{name}1"), c));
        }
        out.push(("Q0".into(), &mut self.q0));
        out.push(("R0".into(), &mut self.r0));
        out.push(("Q1".into(), &mut self.q1));
        out.push(("R1".into(), &mut self.r1));
        out
    }
}

/// Uniform grid `t_k = k * T / steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Self {
        assert!(horizon > 0.0 && steps > 0, "grid needs T > 0 and steps > 0");
        TimeGrid { horizon, steps }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node `k`; the last node is exactly `T`.
    pub fn t(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.t(k))
    }

    pub fn refined(&self, factor: usize) -> Self {
        TimeGrid::new(self.horizon, self.steps * factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub agents: usize,
    pub mc_paths: usize,
    pub seed: u64,
    /// Use the equations exactly as printed where they disagree with the
    /// derivation.
    pub faithful_typos: bool,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            agents: DEFAULT_AGENTS,
            mc_paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
            faithful_typos: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub coeffs: ModelCoefficients,
    pub grid: TimeGrid,
    pub settings: SimSettings,
}

const SCALAR_KEYS: [&str; 6] = ["G0", "G1", "lambda", "xi", "xi0", "T_horizon"];
const SETTING_KEYS: [&str; 5] = ["steps", "agents_N", "mc_paths", "seed", "faithful_typos"];

/// Parses the flat configuration format. `#` starts a comment.
pub fn load_config(text: &str) -> Result<Config, ConfigError> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(lineno + 1))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax(lineno + 1));
        }
        entries.insert(key.to_string(), value.trim().to_string());
    }

    let mut coeffs = ModelCoefficients::uniform(0.0);
    let mut known: Vec<String> = Vec::new();
    for (key, slot) in coeffs.time_slots_mut() {
        let raw = entries.get(&key).ok_or_else(|| ConfigError::MissingKey(key.clone()))?;
        *slot = Coefficient::parse(&key, raw)?;
        known.push(key);
    }
    let scalar = |key: &str| -> Result<f64, ConfigError> {
        let raw = entries.get(key).ok_or_else(|| ConfigError::MissingKey(key.to_string()))?;
        raw.parse::<f64>().map_err(|_| ConfigError::NonNumeric(key.to_string()))
    };
    coeffs.g0 = scalar("G0")?;
    coeffs.g1 = scalar("G1")?;
    coeffs.lambda = scalar("lambda")?;
    coeffs.xi = scalar("xi")?;
    coeffs.xi0 = scalar("xi0")?;
    coeffs.horizon = scalar("T_horizon")?;
    known.extend(SCALAR_KEYS.iter().map(|s| s.to_string()));
    known.extend(SETTING_KEYS.iter().map(|s| s.to_string()));

    if let Some(unknown) = entries.keys().find(|k| !known.contains(k)) {
        return Err(ConfigError::UnknownKey(unknown.clone()));
    }
    if !(coeffs.horizon > 0.0) {
        return Err(ConfigError::NegativeHorizon);
    }
    if !(0.0..=1.0).contains(&coeffs.lambda) {
        return Err(ConfigError::OutOfRange("lambda".into()));
    }

    let integer = |key: &str, default: u64| -> Result<u64, ConfigError> {
        match entries.get(key) {
            None => Ok(default),
            Some(raw) => raw.parse::<u64>().map_err(|_| ConfigError::NonNumeric(key.to_string())),
        }
    };
    let steps = integer("steps", DEFAULT_STEPS as u64)? as usize;
    let agents = integer("agents_N", DEFAULT_AGENTS as u64)? as usize;
    let mc_paths = integer("mc_paths", DEFAULT_PATHS as u64)? as usize;
    let seed = integer("seed", DEFAULT_SEED)?;
    if steps == 0 {
        return Err(ConfigError::OutOfRange("steps".into()));
    }
    if agents == 0 {
        return Err(ConfigError::OutOfRange("agents_N".into()));
    }
    if mc_paths == 0 {
        return Err(ConfigError::OutOfRange("mc_paths".into()));
    }
    let faithful_typos = match entries.get("faithful_typos").map(String::as_str) {
        None | Some("false") => false,
        Some("true") => true,
        Some(_) => return Err(ConfigError::NonNumeric("faithful_typos".into())),
    };

    Ok(Config {
        grid: TimeGrid::new(coeffs.horizon, steps),
        coeffs,
        settings: SimSettings { agents, mc_paths, seed, faithful_typos },
    })
}

/// Renders a configuration that `load_config` reads back unchanged.
pub fn to_config_string(config: &Config) -> String {
    let mut out = String::new();
    for (key, c) in config.coeffs.time_slots() {
        out.push_str(&format!("{key} = {c}\n"));
    }
    let c = &config.coeffs;
    for (key, v) in SCALAR_KEYS.iter().zip([c.g0, c.g1, c.lambda, c.xi, c.xi0, c.horizon]) {
        out.push_str(&format!("{key} = {v:?}\n"));
    }
    let s = &config.settings;
    out.push_str(&format!("steps = {}\n", config.grid.steps));
    out.push_str(&format!("agents_N = {}\n", s.agents));
    out.push_str(&format!("mc_paths = {}\n", s.mc_paths));
    out.push_str(&format!("seed = {}\n", s.seed));
    out.push_str(&format!("faithful_typos = {}\n", s.faithful_typos));
    out
}

/// Pass/fail plus the first grid time at which the condition failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub ok: bool,
    pub first_violation: Option<f64>,
}

impl Verdict {
    pub fn from_first_violation(first_violation: Option<f64>) -> Self {
        Verdict { ok: first_violation.is_none(), first_violation }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AssumptionReport {
    /// Nonnegative state weights, strictly positive control weights.
    pub a22: Option<Verdict>,
    /// Pointwise sign condition on the follower coupling terms.
    pub a31: Option<Verdict>,
    /// Lower-right entry of `Theta(T)`.
    pub a34_theta_entry: Option<f64>,
    /// Minimum over the grid of the leader's effective control weight.
    pub a35_r0_min: Option<f64>,
}

impl AssumptionReport {
    pub fn a34_ok(&self) -> Option<bool> {
        self.a34_theta_entry.map(|v| v.abs() > TOL_DET)
    }

    pub fn a35_ok(&self) -> Option<bool> {
        self.a35_r0_min.map(|v| v > TOL_R0)
    }

    /// Conditions without which the synthesis is undefined. The follower
    /// coupling sign condition is only sufficient for the P2 equation and is
    /// reported separately.
    pub fn required_hold(&self) -> bool {
        self.a22.is_some_and(|v| v.ok)
            && self.a34_ok().unwrap_or(false)
            && self.a35_ok().unwrap_or(false)
    }

    pub fn all_hold(&self) -> bool {
        self.required_hold() && self.a31.is_some_and(|v| v.ok)
    }

    /// One line per assumption.
    pub fn summary_lines(&self) -> Vec<String> {
        fn verdict(name: &str, v: Option<Verdict>, note: &str) -> String {
            match v {
                None => format!("{name}: not evaluated"),
                Some(Verdict { ok: true, .. }) => format!("{name}: pass{note}"),
                Some(Verdict { ok: false, first_violation }) => format!(
                    "{name}: FAIL{note} (first violation at t = {})",
                    first_violation.map_or("?".to_string(), |t| format!("{t:.6}"))
                ),
            }
        }
        let a34 = match self.a34_theta_entry {
            None => "A3.4 FBODE solvability: not evaluated".to_string(),
            Some(v) => format!(
                "A3.4 FBODE solvability: {} (Theta(T)_33 = {v:.10e})",
                if v.abs() > TOL_DET { "pass" } else { "FAIL" }
            ),
        };
        let a35 = match self.a35_r0_min {
            None => "A3.5 leader control weight: not evaluated".to_string(),
            Some(v) => format!(
                "A3.5 leader control weight: {} (min R0cal = {v:.10e})",
                if v > TOL_R0 { "pass" } else { "FAIL" }
            ),
        };
        vec![
            verdict("A2.2 weights", self.a22, ""),
            verdict("A3.1 follower coupling sign", self.a31, " [sufficient condition, advisory]"),
            a34,
            a35,
        ]
    }
}

/// Checks `Q0, Q1 >= 0`, `R0, R1 >= TOL_R` at every node and `G0, G1 >= 0`.
pub fn check_standing_assumptions(coeffs: &ModelCoefficients, grid: &TimeGrid) -> AssumptionReport {
    let finite = coeffs.time_slots().iter().all(|(_, c)| c.is_finite())
        && [coeffs.g0, coeffs.g1, coeffs.lambda, coeffs.xi, coeffs.xi0].iter().all(|v| v.is_finite());
    let terminal_ok = coeffs.g0 >= 0.0 && coeffs.g1 >= 0.0 && finite;
    let first = grid.nodes().find(|&t| {
        let c = coeffs.at(t);
        !(c.q0 >= 0.0 && c.q1 >= 0.0 && c.r0 >= TOL_R && c.r1 >= TOL_R)
    });
    let first = first.or(if terminal_ok { None } else { Some(grid.horizon) });
    AssumptionReport { a22: Some(Verdict::from_first_violation(first)), ..Default::default() }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn coefficient() -> impl Strategy<Value = Coefficient> {
        prop_oneof![
            (-10.0f64..10.0).prop_map(Coefficient::Constant),
            prop::collection::vec((0.0f64..1.0, -10.0f64..10.0), 1..5).prop_map(|mut pts| {
                pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                pts.dedup_by(|a, b| a.0 == b.0);
                Coefficient::Table(pts)
            }),
        ]
    }

    proptest! {
        #[test]
        fn config_round_trip_preserves_grid_samples(
            cs in prop::collection::vec(coefficient(), 28),
            g0 in 0.0f64..2.0, lambda in 0.0f64..=1.0, horizon in 0.1f64..3.0, steps in 1usize..50,
        ) {
            let mut coeffs = ModelCoefficients::uniform(1.0);
            coeffs.g0 = g0;
            coeffs.lambda = lambda;
            coeffs.horizon = horizon;
            for ((_, slot), c) in coeffs.time_slots_mut().into_iter().zip(cs) {
                *slot = c;
            }
            let cfg = Config { coeffs, grid: TimeGrid::new(horizon, steps), settings: SimSettings::default() };
            let back = load_config(&to_config_string(&cfg)).unwrap();
            for t in cfg.grid.nodes() {
                prop_assert_eq!(back.coeffs.at(t), cfg.coeffs.at(t));
            }
            prop_assert_eq!(back.grid, cfg.grid);
        }

        #[test]
        fn assumption_check_is_pure(r1 in -1.0f64..1.0, q0 in -1.0f64..1.0) {
            let mut c = ModelCoefficients::reference_example();
            c.r1 = r1.into();
            c.q0 = q0.into();
            let grid = TimeGrid::new(1.0, 20);
            prop_assert_eq!(check_standing_assumptions(&c, &grid), check_standing_assumptions(&c, &grid));
        }
    }
}
