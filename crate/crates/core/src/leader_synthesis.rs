//! The leader's dimension-expanded problem: system matrices, the Riccati
//! pair Gamma1/Gamma2, the mean offset EPhi, the mean state EX and the
//! feedback gains theta1..theta4.
//!
//! The expanded state is `X = (x0, z, eta)` where `eta` tracks the
//! followers' mean adjoint.

use nalgebra::{Matrix3, RowVector3, SymmetricEigen, Vector3};

use crate::follower_synthesis::{FollowerGains, FollowerSynthesis, SynthesisOptions};
use crate::model::{CoefficientsAt, ModelCoefficients, TimeGrid, TOL_R0};
use crate::numerics::{integrate_ode, integrate_ode_projected, Direction, Trajectory};
use crate::SynthesisError;

/// The expanded system frozen at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderMatrices {
    pub l11: Matrix3<f64>,
    pub l12: Matrix3<f64>,
    pub l13: Matrix3<f64>,
    pub l14: Matrix3<f64>,
    pub l21: Matrix3<f64>,
    pub l31: Matrix3<f64>,
    pub l32: Matrix3<f64>,
    pub n11: Matrix3<f64>,
    pub n12: Matrix3<f64>,
    pub b: Vector3<f64>,
    pub d: Vector3<f64>,
    pub d_t: Vector3<f64>,
    pub f1: Vector3<f64>,
    pub f2: Vector3<f64>,
    pub f3: Vector3<f64>,
    pub f4: Vector3<f64>,
    pub r0: f64,
}

impl LeaderMatrices {
    /// `faithful_typos` selects `B0 K3` and `Dt0 K3` in `f1`/`f3`, as printed,
    /// instead of the follower coefficients `B1`, `Dt1`.
    pub fn compute(c: &CoefficientsAt, g: &FollowerGains, faithful_typos: bool) -> Self {
        let (l, f) = (&c.leader, &c.follower);
        // Effective mean-field gain of the follower control on Ez.
        let kmean = g.k2 - g.k1;
        let bb = f.b * f.b / g.r1cal;
        let z = Matrix3::zeros();

        let l11 = Matrix3::new(l.a, l.e, 0.0, 0.0, f.a + f.e, 0.0, 0.0, 0.0, -g.m1);
        let mut l12 = z;
        l12[(1, 1)] = f.b * kmean;
        let mut l13 = z;
        l13[(1, 2)] = -bb;
        l13[(2, 1)] = bb;
        let mut l14 = z;
        l14[(2, 1)] = f.b * f.d_t / g.r1cal;
        let mut l21 = z;
        l21[(0, 0)] = l.c;
        l21[(0, 1)] = l.f;
        let mut l31 = z;
        l31[(0, 0)] = l.c_t;
        l31[(0, 1)] = l.f_t;
        l31[(1, 1)] = f.c_t + f.f_t;
        let mut l32 = z;
        l32[(1, 1)] = f.d_t * kmean;
        let n11 = Matrix3::new(c.q0, -c.q0, 0.0, -c.q0, c.q0, 0.0, 0.0, 0.0, 0.0);
        let mut n12 = z;
        n12[(0, 2)] = -c.q1 * c.lambda;
        n12[(2, 0)] = c.q1 * c.lambda;

        let (b_k3, dt_k3) = if faithful_typos { (l.b, l.d_t) } else { (f.b, f.d_t) };
        LeaderMatrices {
            l11,
            l12,
            l13,
            l14,
            l21,
            l31,
            l32,
            n11,
            n12,
            b: Vector3::new(l.b, 0.0, 0.0),
            d: Vector3::new(l.d, 0.0, 0.0),
            d_t: Vector3::new(l.d_t, 0.0, 0.0),
            f1: Vector3::new(l.drift, b_k3 * g.k3 + f.drift, 0.0),
            f2: Vector3::new(l.sigma, 0.0, 0.0),
            f3: Vector3::new(l.sigma_t, dt_k3 * g.k3 + f.sigma_t, 0.0),
            f4: Vector3::new(0.0, 0.0, g.m2),
            r0: c.r0,
        }
    }

    pub fn r0cal(&self, g1: &Matrix3<f64>) -> f64 {
        self.r0 + (self.d.transpose() * g1 * self.d)[0] + (self.d_t.transpose() * g1 * self.d_t)[0]
    }

    /// `Gamma1 B + L21' Gamma1 D + L31' Gamma1 Dt`.
    fn v1(&self, g1: &Matrix3<f64>) -> Vector3<f64> {
        self.l21.transpose() * g1 * self.d + self.l31.transpose() * g1 * self.d_t + g1 * self.b
    }

    /// `B' Gamma1 + D' Gamma1 L21 + Dt' Gamma1 L31`.
    fn h1(&self, g1: &Matrix3<f64>) -> RowVector3<f64> {
        self.b.transpose() * g1 + self.d.transpose() * g1 * self.l21 + self.d_t.transpose() * g1 * self.l31
    }

    pub fn gains(&self, g1: &Matrix3<f64>, g2: &Matrix3<f64>) -> LeaderGains {
        let r0cal = self.r0cal(g1);
        let s = g1 + g2;
        let dtg1 = self.d_t.transpose() * g1;
        let theta1 = -self.h1(g1) / r0cal;
        let theta2 = -(self.b.transpose() * g2 + dtg1 * self.l32 + dtg1 * self.l14.transpose() * s) / r0cal;
        let theta3 = -(self.b.transpose() + dtg1 * self.l14.transpose()) / r0cal;
        let theta4 = -((self.d.transpose() * g1 * self.f2)[0] + (dtg1 * self.f3)[0]) / r0cal;
        LeaderGains { r0cal, theta1, theta2, theta3, theta4 }
    }

    pub fn gamma1_field(&self, g1: &Matrix3<f64>) -> Matrix3<f64> {
        let r0cal = self.r0cal(g1);
        let quad = self.v1(g1) * self.h1(g1) / r0cal;
        -(g1 * self.l11
            + self.l11.transpose() * g1
            + self.n11
            + self.l21.transpose() * g1 * self.l21
            + self.l31.transpose() * g1 * self.l31
            - quad)
    }

    pub fn gamma2_field(&self, g1: &Matrix3<f64>, g2: &Matrix3<f64>) -> Matrix3<f64> {
        let s = g1 + g2;
        let th = self.gains(g1, g2);
        let l14t = self.l14.transpose();
        let l32t = self.l32.transpose();
        let v2 = g2 * self.b - (s * self.l14 - l32t) * g1 * self.d_t;
        let rhs = g1 * self.l12
            + g2 * (self.l11 + self.l12)
            + self.n12
            + self.l11.transpose() * g2
            - s * self.l13 * s
            + self.l12.transpose() * s
            + self.l31.transpose() * g1 * (self.l32 + l14t * s)
            - (s * self.l14 - l32t) * g1 * (self.l31 + self.l32 + l14t * s)
            + self.v1(g1) * th.theta2
            + v2 * (th.theta1 + th.theta2);
        -rhs
    }

    pub fn ephi_field(&self, g1: &Matrix3<f64>, g2: &Matrix3<f64>, phi: &Vector3<f64>, faithful_typos: bool) -> Vector3<f64> {
        let s = g1 + g2;
        let th = self.gains(g1, g2);
        let l14t = self.l14.transpose();
        let l3t = (self.l31 + self.l32).transpose();
        let rhs = if faithful_typos {
            let bracket = self.l21.transpose() * g1 * self.d
                + self.l31.transpose() * g1 * self.d_t
                + g1 * self.b
                + g2 * self.b
                + (s * self.l14 + self.l32.transpose()) * g1 * self.d_t;
            let a = self.l11.transpose() + self.l21.transpose() + l3t * g1 * l14t
                - s * (self.l13 + self.l14 * g1 * l14t)
                + bracket * th.theta3;
            let w = s * (self.l14 * g2 * self.d_t - self.b) - (self.l21 + self.l31 + self.l32).transpose() * g1 * self.d_t;
            a * phi - w * th.theta4
                + self.l21.transpose() * g1 * self.f2
                + self.l31.transpose() * g1 * self.f3
                - (s * self.l14 - self.l32.transpose()) * g1 * self.f3
                + s * self.f1
                + self.f4
        } else {
            let w = self.l21.transpose() * g1 * self.d + l3t * g1 * self.d_t - s * self.l14 * g1 * self.d_t + s * self.b;
            let a = (self.l11 + self.l12).transpose() + l3t * g1 * l14t - s * self.l13 - s * self.l14 * g1 * l14t
                + w * th.theta3;
            a * phi
                + w * th.theta4
                + self.l21.transpose() * g1 * self.f2
                + l3t * g1 * self.f3
                - s * self.l14 * g1 * self.f3
                + s * self.f1
                + self.f4
        };
        -rhs
    }

    /// Conditional mean of the dW-integrand of the expanded adjoint, with the
    /// leader control replaced by its mean.
    fn mean_z_tilde(&self, g1: &Matrix3<f64>, g2: &Matrix3<f64>, ex: &Vector3<f64>, phi: &Vector3<f64>, eu0: f64) -> Vector3<f64> {
        let s = g1 + g2;
        -(g1 * ((self.l31 + self.l32 + self.l14.transpose() * s) * ex + self.l14.transpose() * phi + self.d_t * eu0 + self.f3))
    }

    /// Drift of the filtered expanded state `Xcheck` given its mean `ex`.
    pub fn xcheck_drift(
        &self,
        g1: &Matrix3<f64>,
        g2: &Matrix3<f64>,
        xcheck: &Vector3<f64>,
        ex: &Vector3<f64>,
        phi: &Vector3<f64>,
    ) -> Vector3<f64> {
        let s = g1 + g2;
        let th = self.gains(g1, g2);
        let u0 = th.control(xcheck, ex, phi);
        let eu0 = th.control(ex, ex, phi);
        let ey = -(s * ex) - phi;
        self.l11 * xcheck
            + self.l12 * ex
            + self.l13 * ey
            + self.l14 * self.mean_z_tilde(g1, g2, ex, phi, eu0)
            + self.b * u0
            + self.f1
    }

    /// Coefficient of `dW0` in the filtered expanded state.
    pub fn xcheck_diffusion(
        &self,
        g1: &Matrix3<f64>,
        g2: &Matrix3<f64>,
        xcheck: &Vector3<f64>,
        ex: &Vector3<f64>,
        phi: &Vector3<f64>,
    ) -> Vector3<f64> {
        let u0 = self.gains(g1, g2).control(xcheck, ex, phi);
        self.l21 * xcheck + self.d * u0 + self.f2
    }
}

/// Leader feedback `u0 = theta1 Xcheck + theta2 EX + theta3 EPhi + theta4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderGains {
    pub r0cal: f64,
    pub theta1: RowVector3<f64>,
    pub theta2: RowVector3<f64>,
    pub theta3: RowVector3<f64>,
    pub theta4: f64,
}

impl LeaderGains {
    pub fn control(&self, xcheck: &Vector3<f64>, ex: &Vector3<f64>, phi: &Vector3<f64>) -> f64 {
        (self.theta1 * xcheck)[0] + (self.theta2 * ex)[0] + (self.theta3 * phi)[0] + self.theta4
    }
}

/// Evaluates the expanded system anywhere on `[0, T]`.
#[derive(Debug, Clone, Copy)]
pub struct LeaderContext<'a> {
    pub coeffs: &'a ModelCoefficients,
    pub follower: &'a FollowerSynthesis,
}

impl<'a> LeaderContext<'a> {
    pub fn new(coeffs: &'a ModelCoefficients, follower: &'a FollowerSynthesis) -> Self {
        LeaderContext { coeffs, follower }
    }

    pub fn grid(&self) -> TimeGrid {
        self.follower.grid()
    }

    pub fn options(&self) -> SynthesisOptions {
        self.follower.options
    }

    pub fn matrices_at(&self, t: f64) -> LeaderMatrices {
        LeaderMatrices::compute(
            &self.coeffs.at(t),
            &self.follower.gains_at(self.coeffs, t),
            self.options().faithful_typos,
        )
    }

    pub fn matrices_at_node(&self, k: usize) -> LeaderMatrices {
        let t = self.grid().t(k);
        LeaderMatrices::compute(
            &self.coeffs.at(t),
            &self.follower.gains_at_node(self.coeffs, k),
            self.options().faithful_typos,
        )
    }

    pub fn xi(&self) -> Vector3<f64> {
        Vector3::new(self.coeffs.xi0, self.coeffs.xi, 0.0)
    }

    pub fn g0cal(&self) -> Matrix3<f64> {
        let mut g = Matrix3::zeros();
        g[(0, 0)] = self.coeffs.g0;
        g
    }
}

/// The expanded system sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSystem {
    pub nodes: Vec<LeaderMatrices>,
    pub xi: Vector3<f64>,
    pub g0cal: Matrix3<f64>,
}

pub fn assemble_leader_system(ctx: &LeaderContext<'_>) -> LeaderSystem {
    LeaderSystem {
        nodes: (0..=ctx.grid().steps).map(|k| ctx.matrices_at_node(k)).collect(),
        xi: ctx.xi(),
        g0cal: ctx.g0cal(),
    }
}

pub fn solve_gamma1(ctx: &LeaderContext<'_>) -> Result<Trajectory<Matrix3<f64>>, SynthesisError> {
    integrate_ode_projected(
        |t, g1: &Matrix3<f64>| ctx.matrices_at(t).gamma1_field(g1),
        ctx.g0cal(),
        &ctx.grid(),
        Direction::Backward,
        ctx.options().method,
        |g| (g + g.transpose()) * 0.5,
    )
    .map_err(|e| SynthesisError::blow_up("Gamma1", e))
}

pub fn solve_gamma2(
    ctx: &LeaderContext<'_>,
    gamma1: &Trajectory<Matrix3<f64>>,
) -> Result<Trajectory<Matrix3<f64>>, SynthesisError> {
    integrate_ode(
        |t, g2: &Matrix3<f64>| ctx.matrices_at(t).gamma2_field(&gamma1.interpolate(t), g2),
        Matrix3::zeros(),
        &ctx.grid(),
        Direction::Backward,
        ctx.options().method,
    )
    .map_err(|e| {
        let SynthesisError::BlowUp { t, .. } = SynthesisError::blow_up("Gamma2", e) else { unreachable!() };
        SynthesisError::Gamma2Unsolvable { t }
    })
}

/// Minimum of `R0cal` over the grid.
pub fn check_r0(ctx: &LeaderContext<'_>, gamma1: &Trajectory<Matrix3<f64>>) -> f64 {
    (0..=ctx.grid().steps)
        .map(|k| ctx.matrices_at_node(k).r0cal(&gamma1.values[k]))
        .fold(f64::INFINITY, f64::min)
}

pub fn solve_ephi(
    ctx: &LeaderContext<'_>,
    gamma1: &Trajectory<Matrix3<f64>>,
    gamma2: &Trajectory<Matrix3<f64>>,
) -> Result<Trajectory<Vector3<f64>>, SynthesisError> {
    let faithful = ctx.options().faithful_typos;
    integrate_ode(
        |t, phi: &Vector3<f64>| {
            ctx.matrices_at(t).ephi_field(&gamma1.interpolate(t), &gamma2.interpolate(t), phi, faithful)
        },
        Vector3::zeros(),
        &ctx.grid(),
        Direction::Backward,
        ctx.options().method,
    )
    .map_err(|e| SynthesisError::blow_up("EPhi", e))
}

pub fn leader_gains(
    ctx: &LeaderContext<'_>,
    gamma1: &Trajectory<Matrix3<f64>>,
    gamma2: &Trajectory<Matrix3<f64>>,
) -> Result<Vec<LeaderGains>, SynthesisError> {
    let gains: Vec<LeaderGains> = (0..=ctx.grid().steps)
        .map(|k| ctx.matrices_at_node(k).gains(&gamma1.values[k], &gamma2.values[k]))
        .collect();
    if let Some(k) = gains.iter().position(|g| !(g.r0cal.abs() > TOL_R0)) {
        return Err(SynthesisError::DivisionDegenerate { what: "R0cal", t: ctx.grid().t(k) });
    }
    Ok(gains)
}

pub fn solve_ex(
    ctx: &LeaderContext<'_>,
    gamma1: &Trajectory<Matrix3<f64>>,
    gamma2: &Trajectory<Matrix3<f64>>,
    ephi: &Trajectory<Vector3<f64>>,
) -> Result<Trajectory<Vector3<f64>>, SynthesisError> {
    integrate_ode(
        |t, ex: &Vector3<f64>| {
            ctx.matrices_at(t).xcheck_drift(&gamma1.interpolate(t), &gamma2.interpolate(t), ex, ex, &ephi.interpolate(t))
        },
        ctx.xi(),
        &ctx.grid(),
        Direction::Forward,
        ctx.options().method,
    )
    .map_err(|e| SynthesisError::blow_up("EX", e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderSynthesis {
    pub system: LeaderSystem,
    pub gamma1: Trajectory<Matrix3<f64>>,
    pub gamma2: Trajectory<Matrix3<f64>>,
    pub ephi: Trajectory<Vector3<f64>>,
    pub ex: Trajectory<Vector3<f64>>,
    pub gains: Vec<LeaderGains>,
    /// `EX_2`, the mean of the frozen population term.
    pub ez: Trajectory<f64>,
    /// `-[(Gamma1 + Gamma2) EX + EPhi]_3`, the followers' mean adjoint offset.
    pub ephi_star: Trajectory<f64>,
    pub eu0: Trajectory<f64>,
}

impl LeaderSynthesis {
    pub fn r0cal(&self) -> Trajectory<f64> {
        Trajectory::new(self.ex.grid, self.gains.iter().map(|g| g.r0cal).collect())
    }
}

/// Runs the whole leader pipeline. `R0cal` must stay above `TOL_R0`.
pub fn synthesize_leader(ctx: &LeaderContext<'_>) -> Result<LeaderSynthesis, SynthesisError> {
    let system = assemble_leader_system(ctx);
    let gamma1 = solve_gamma1(ctx)?;
    let grid = ctx.grid();
    if let Some(k) = (0..=grid.steps).find(|&k| !(system.nodes[k].r0cal(&gamma1.values[k]) > TOL_R0)) {
        return Err(SynthesisError::NegativeR0 { t: grid.t(k), value: system.nodes[k].r0cal(&gamma1.values[k]) });
    }
    let gamma2 = solve_gamma2(ctx, &gamma1)?;
    let ephi = solve_ephi(ctx, &gamma1, &gamma2)?;
    let gains = leader_gains(ctx, &gamma1, &gamma2)?;
    let ex = solve_ex(ctx, &gamma1, &gamma2, &ephi)?;
    let ez = ex.map(|v| v[1]);
    let ephi_star = Trajectory::new(
        grid,
        (0..=grid.steps)
            .map(|k| -((gamma1.values[k] + gamma2.values[k]) * ex.values[k] + ephi.values[k])[2])
            .collect(),
    );
    let eu0 = Trajectory::new(
        grid,
        (0..=grid.steps).map(|k| gains[k].control(&ex.values[k], &ex.values[k], &ephi.values[k])).collect(),
    );
    Ok(LeaderSynthesis { system, gamma1, gamma2, ephi, ex, gains, ez, ephi_star, eu0 })
}

/// Leader control at grid node `k`.
pub fn leader_feedback(synthesis: &LeaderSynthesis, k: usize, xcheck: &Vector3<f64>) -> f64 {
    synthesis.gains[k].control(xcheck, &synthesis.ex.values[k], &synthesis.ephi.values[k])
}

/// Largest `|Gamma1 - Gamma1'|` entry and smallest eigenvalue over the grid.
pub fn gamma1_symmetry_and_min_eigenvalue(gamma1: &Trajectory<Matrix3<f64>>) -> (f64, f64) {
    let mut asym = 0.0f64;
    let mut min_eig = f64::INFINITY;
    for g in &gamma1.values {
        asym = asym.max((g - g.transpose()).amax());
        min_eig = min_eig.min(SymmetricEigen::new(*g).eigenvalues.min());
    }
    (asym, min_eig)
}
