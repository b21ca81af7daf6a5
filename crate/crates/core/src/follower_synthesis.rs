//! The followers' limiting problem: Riccati equations P1 and P2, feedback
//! gains, and the mean-field FBODE for (Ez, Ex0bar, Ephi).

use nalgebra::{Matrix3, Vector3};

use crate::model::{CoefficientsAt, ModelCoefficients, TimeGrid, Verdict, A31_SLACK, TOL_DET, TOL_R};
use crate::numerics::{fundamental_matrix, integrate_ode, Direction, Method, Trajectory};
use crate::SynthesisError;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthesisOptions {
    pub method: Method,
    /// Use the P2 equation exactly as printed (without `1/R1cal` on the
    /// cross term) and the printed leader-side variants.
    pub faithful_typos: bool,
}

/// Gains and auxiliary constants at one instant.
///
/// The follower control is `u = -k1 xhat + k2 Ez + k3 - B1 Ephi / r1cal`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FollowerGains {
    pub p1: f64,
    pub p2: f64,
    pub r1cal: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub m1: f64,
    pub m2: f64,
    pub n1: f64,
    pub n2: f64,
}

impl FollowerGains {
    pub fn compute(c: &CoefficientsAt, p1: f64, p2: f64) -> Self {
        let f = &c.follower;
        let r1cal = c.r1 + (f.d * f.d + f.d_t * f.d_t) * p1;
        let bcd = (f.b + f.c * f.d + f.c_t * f.d_t) * p1;
        let dfs = (f.d * f.f + f.d_t * f.f_t) * p1;
        let dsig = (f.d * f.sigma + f.d_t * f.sigma_t) * p1;
        let k1 = bcd / r1cal;
        let k2 = -(f.b * p2 + dfs) / r1cal;
        let k3 = -dsig / r1cal;
        let m1 = bcd * f.b / r1cal - f.a + p2 * f.b * f.b / r1cal;
        let m2 = bcd * dsig / r1cal + p2 * f.b * dsig / r1cal
            - (p1 + p2) * f.drift
            - f.c * p1 * f.sigma
            - f.c_t * p1 * f.sigma_t;
        let n1 = f.a + f.e - f.b * (bcd + f.b * p2 + dfs) / r1cal;
        let n2 = -f.b * dsig / r1cal + f.drift;
        FollowerGains { p1, p2, r1cal, k1, k2, k3, m1, m2, n1, n2 }
    }

    /// Mean-field part of the control: `k2 Ez + k3 - B1 Ephi / r1cal`.
    pub fn control_offset(&self, b1: f64, ez: f64, ephi: f64) -> f64 {
        self.k2 * ez + self.k3 - b1 * ephi / self.r1cal
    }
}

/// Everything the followers need, sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerSynthesis {
    pub p1: Trajectory<f64>,
    pub p2: Trajectory<f64>,
    pub r1cal: Trajectory<f64>,
    pub k1: Trajectory<f64>,
    pub k2: Trajectory<f64>,
    pub k3: Trajectory<f64>,
    pub m1: Trajectory<f64>,
    pub m2: Trajectory<f64>,
    pub n1: Trajectory<f64>,
    pub n2: Trajectory<f64>,
    pub options: SynthesisOptions,
}

impl FollowerSynthesis {
    pub fn grid(&self) -> TimeGrid {
        self.p1.grid
    }

    pub fn gains_at_node(&self, coeffs: &ModelCoefficients, k: usize) -> FollowerGains {
        let t = self.grid().t(k);
        FollowerGains::compute(&coeffs.at(t), self.p1.values[k], self.p2.values[k])
    }

    /// Gains off the grid, from interpolated P1 and P2.
    pub fn gains_at(&self, coeffs: &ModelCoefficients, t: f64) -> FollowerGains {
        FollowerGains::compute(&coeffs.at(t), self.p1.interpolate(t), self.p2.interpolate(t))
    }
}

fn p1_field(c: &CoefficientsAt, p1: f64) -> f64 {
    let f = &c.follower;
    let r1cal = c.r1 + (f.d * f.d + f.d_t * f.d_t) * p1;
    let bcd = f.b + f.c * f.d + f.c_t * f.d_t;
    -(2.0 * f.a + f.c * f.c + f.c_t * f.c_t) * p1 + bcd * bcd * p1 * p1 / r1cal - c.q1
}

fn p2_field(c: &CoefficientsAt, p1: f64, p2: f64, faithful_typos: bool) -> f64 {
    let f = &c.follower;
    let r1cal = c.r1 + (f.d * f.d + f.d_t * f.d_t) * p1;
    let bcd = f.b + f.c * f.d + f.c_t * f.d_t;
    let dfs = f.d * f.f + f.d_t * f.f_t;
    let cross = if faithful_typos { f.b * dfs * p1 } else { f.b * dfs * p1 / r1cal };
    let linear = 2.0 * f.a + f.e - 2.0 * bcd * p1 * f.b / r1cal - cross;
    -(p2 * linear - f.b * f.b * p2 * p2 / r1cal + a31_expression(c, p1))
}

/// Source term of the P2 equation; the coupling sign condition asks for it
/// to be nonnegative.
fn a31_expression(c: &CoefficientsAt, p1: f64) -> f64 {
    let f = &c.follower;
    let r1cal = c.r1 + (f.d * f.d + f.d_t * f.d_t) * p1;
    let bcd = f.b + f.c * f.d + f.c_t * f.d_t;
    let dfs = f.d * f.f + f.d_t * f.f_t;
    p1 * (f.e + f.c * f.f + f.c_t * f.f_t) - bcd * p1 * p1 * dfs / r1cal - c.q1 * (1.0 - c.lambda)
}

pub fn solve_p1(coeffs: &ModelCoefficients, grid: &TimeGrid, method: Method) -> Result<Trajectory<f64>, SynthesisError> {
    integrate_ode(|t, p: &f64| p1_field(&coeffs.at(t), *p), coeffs.g1, grid, Direction::Backward, method)
        .map_err(|e| SynthesisError::blow_up("P1", e))
}

pub fn solve_p2(
    coeffs: &ModelCoefficients,
    p1: &Trajectory<f64>,
    grid: &TimeGrid,
    options: SynthesisOptions,
) -> Result<Trajectory<f64>, SynthesisError> {
    integrate_ode(
        |t, p2: &f64| p2_field(&coeffs.at(t), p1.interpolate(t), *p2, options.faithful_typos),
        0.0,
        grid,
        Direction::Backward,
        options.method,
    )
    .map_err(|e| SynthesisError::blow_up("P2", e))
}

pub fn check_a31(coeffs: &ModelCoefficients, p1: &Trajectory<f64>, grid: &TimeGrid) -> Verdict {
    let first = (0..=grid.steps)
        .find(|&k| !(a31_expression(&coeffs.at(grid.t(k)), p1.values[k]) >= -A31_SLACK))
        .map(|k| grid.t(k));
    Verdict::from_first_violation(first)
}

pub fn follower_gains(
    coeffs: &ModelCoefficients,
    p1: Trajectory<f64>,
    p2: Trajectory<f64>,
    options: SynthesisOptions,
) -> Result<FollowerSynthesis, SynthesisError> {
    let grid = p1.grid;
    let gains: Vec<FollowerGains> =
        (0..=grid.steps).map(|k| FollowerGains::compute(&coeffs.at(grid.t(k)), p1.values[k], p2.values[k])).collect();
    if let Some(k) = gains.iter().position(|g| !(g.r1cal > TOL_R)) {
        return Err(SynthesisError::DivisionDegenerate { what: "R1cal", t: grid.t(k) });
    }
    let series = |f: fn(&FollowerGains) -> f64| Trajectory::new(grid, gains.iter().map(f).collect());
    Ok(FollowerSynthesis {
        r1cal: series(|g| g.r1cal),
        k1: series(|g| g.k1),
        k2: series(|g| g.k2),
        k3: series(|g| g.k3),
        m1: series(|g| g.m1),
        m2: series(|g| g.m2),
        n1: series(|g| g.n1),
        n2: series(|g| g.n2),
        p1,
        p2,
        options,
    })
}

/// P1, P2 and the gains in one call.
pub fn synthesize_follower(
    coeffs: &ModelCoefficients,
    grid: &TimeGrid,
    options: SynthesisOptions,
) -> Result<FollowerSynthesis, SynthesisError> {
    let p1 = solve_p1(coeffs, grid, options.method)?;
    let p2 = solve_p2(coeffs, &p1, grid, options)?;
    follower_gains(coeffs, p1, p2, options)
}

pub fn pi_matrix(c: &CoefficientsAt, g: &FollowerGains) -> Matrix3<f64> {
    let b1 = c.follower.b;
    Matrix3::new(
        g.n1, 0.0, -b1 * b1 / g.r1cal, //
        c.leader.e, c.leader.a, 0.0, //
        0.0, c.q1 * c.lambda, g.m1,
    )
}

pub fn delta_vector(c: &CoefficientsAt, g: &FollowerGains, eu0: f64) -> Vector3<f64> {
    Vector3::new(g.n2, c.leader.b * eu0 + c.leader.drift, g.m2)
}

/// `(Pi, Delta)` sampled at the grid nodes.
pub fn build_pi_delta(
    coeffs: &ModelCoefficients,
    synthesis: &FollowerSynthesis,
    eu0: &Trajectory<f64>,
) -> (Trajectory<Matrix3<f64>>, Trajectory<Vector3<f64>>) {
    let grid = synthesis.grid();
    let mut pi = Vec::with_capacity(grid.len());
    let mut delta = Vec::with_capacity(grid.len());
    for k in 0..=grid.steps {
        let c = coeffs.at(grid.t(k));
        let g = synthesis.gains_at_node(coeffs, k);
        pi.push(pi_matrix(&c, &g));
        delta.push(delta_vector(&c, &g, eu0.values[k]));
    }
    (Trajectory::new(grid, pi), Trajectory::new(grid, delta))
}

/// Returns `Theta(T)_33` and whether it clears `TOL_DET`.
pub fn check_fbode_solvability(
    pi: impl Fn(f64) -> Matrix3<f64>,
    grid: &TimeGrid,
    method: Method,
) -> Result<(f64, bool), SynthesisError> {
    let theta = fundamental_matrix(pi, grid, method).map_err(|e| SynthesisError::blow_up("Theta", e))?;
    let entry = theta.last()[(2, 2)];
    Ok((entry, entry.abs() > TOL_DET))
}

/// `Theta(T)_33` for the follower FBODE of a synthesized model.
pub fn fbode_theta_entry(
    coeffs: &ModelCoefficients,
    synthesis: &FollowerSynthesis,
) -> Result<(f64, bool), SynthesisError> {
    check_fbode_solvability(
        |t| pi_matrix(&coeffs.at(t), &synthesis.gains_at(coeffs, t)),
        &synthesis.grid(),
        synthesis.options.method,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct FbodeSolution {
    pub ez: Trajectory<f64>,
    pub ex0bar: Trajectory<f64>,
    pub ephi: Trajectory<f64>,
    pub mu: f64,
    pub theta_t_33: f64,
}

/// Solves `Y' = Pi Y + Delta`, `Y(0) = (xi, xi0, mu)`, with `mu` chosen so
/// that `Ephi(T) = 0`. The terminal value is affine in `mu`, so two trial
/// integrations fix it.
pub fn solve_fbode(
    coeffs: &ModelCoefficients,
    synthesis: &FollowerSynthesis,
    eu0: &Trajectory<f64>,
) -> Result<FbodeSolution, SynthesisError> {
    let grid = synthesis.grid();
    let field = |t: f64, y: &Vector3<f64>| {
        let c = coeffs.at(t);
        let g = synthesis.gains_at(coeffs, t);
        pi_matrix(&c, &g) * y + delta_vector(&c, &g, eu0.interpolate(t))
    };
    let shoot = |mu: f64| {
        integrate_ode(field, Vector3::new(coeffs.xi, coeffs.xi0, mu), &grid, Direction::Forward, synthesis.options.method)
            .map_err(|e| SynthesisError::blow_up("FBODE", e))
    };
    let base = shoot(0.0)?.last()[2];
    let unit = shoot(1.0)?.last()[2];
    let sensitivity = unit - base;
    if !(sensitivity.abs() > TOL_DET) {
        return Err(SynthesisError::SingularShooting { sensitivity });
    }
    let mu = -base / sensitivity;
    let y = shoot(mu)?;
    let residual = y.last()[2];
    if !(residual.abs() <= 1e-8 * (1.0 + mu.abs())) {
        return Err(SynthesisError::ShootingResidual { residual });
    }
    Ok(FbodeSolution {
        ez: y.map(|v| v[0]),
        ex0bar: y.map(|v| v[1]),
        ephi: y.map(|v| v[2]),
        mu,
        theta_t_33: sensitivity,
    })
}

/// Follower control at grid node `k`.
pub fn follower_feedback(
    synthesis: &FollowerSynthesis,
    b1: f64,
    k: usize,
    xhat: f64,
    ez: f64,
    ephi: f64,
) -> f64 {
    -synthesis.k1.values[k] * xhat + synthesis.k2.values[k] * ez + synthesis.k3.values[k]
        - b1 * ephi / synthesis.r1cal.values[k]
}
