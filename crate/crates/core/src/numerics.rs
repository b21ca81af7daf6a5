//! ODE integration on a uniform grid, fundamental matrices, seeded Brownian
//! increments and the Euler-Maruyama kernel.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix3, SMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::model::TimeGrid;

/// Magnitude above which a solution is declared to have escaped.
pub const BLOW_UP: f64 = 1e8;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum NumericsError {
    #[error("solution escaped (|value| > 1e8 or non-finite) at t = {t}")]
    BlowUp { t: f64 },
}

/// Values an integrator can carry.
pub trait OdeState: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn max_abs(&self) -> f64;
}

impl OdeState for f64 {
    fn max_abs(&self) -> f64 {
        self.abs()
    }
}

impl<const R: usize, const C: usize> OdeState for SMatrix<f64, R, C> {
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |m: f64, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) })
    }
}

/// True once a value leaves the finite ball of radius `BLOW_UP`.
pub fn escaped<S: OdeState>(v: &S) -> bool {
    let m = v.max_abs();
    !(m <= BLOW_UP)
}

/// A function of time sampled at every node of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub grid: TimeGrid,
    pub values: Vec<S>,
}

impl<S: OdeState> Trajectory<S> {
    pub fn new(grid: TimeGrid, values: Vec<S>) -> Self {
        assert_eq!(values.len(), grid.len(), "trajectory length must match the grid");
        Trajectory { grid, values }
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> S) -> Self {
        Trajectory { grid, values: grid.nodes().map(f).collect() }
    }

    pub fn constant(grid: TimeGrid, v: S) -> Self {
        Trajectory { grid, values: vec![v; grid.len()] }
    }

    pub fn first(&self) -> S {
        self.values[0]
    }

    pub fn last(&self) -> S {
        self.values[self.values.len() - 1]
    }

    pub fn map<T>(&self, f: impl Fn(&S) -> T) -> Trajectory<T> {
        Trajectory { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    fn slope(&self, k: usize) -> S {
        let y = &self.values;
        let n = y.len() - 1;
        if n < 2 {
            return y[n] - y[0];
        }
        if k == 0 {
            (y[1] * 4.0 - y[0] * 3.0 - y[2]) * 0.5
        } else if k == n {
            (y[n] * 3.0 - y[n - 1] * 4.0 + y[n - 2]) * 0.5
        } else {
            (y[k + 1] - y[k - 1]) * 0.5
        }
    }

    /// Cubic Hermite interpolation with finite-difference node slopes.
    /// Exact at nodes; clamps outside `[0, T]`.
    pub fn interpolate(&self, t: f64) -> S {
        let n = self.grid.steps;
        let x = (t / self.grid.dt()).clamp(0.0, n as f64);
        let k = (x.floor() as usize).min(n - 1);
        let s = x - k as f64;
        if s == 0.0 {
            return self.values[k];
        }
        if s == 1.0 {
            return self.values[k + 1];
        }
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        self.values[k] * h00 + self.slope(k) * h10 + self.values[k + 1] * h01 + self.slope(k + 1) * h11
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.max_abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Rk4,
    Euler,
}

/// Integrates `y' = field(t, y)`. Forward runs start from `boundary` at
/// `t = 0`, backward runs from `boundary` at `t = T`.
pub fn integrate_ode<S: OdeState>(
    field: impl Fn(f64, &S) -> S,
    boundary: S,
    grid: &TimeGrid,
    direction: Direction,
    method: Method,
) -> Result<Trajectory<S>, NumericsError> {
    integrate_ode_projected(field, boundary, grid, direction, method, |y| y)
}

/// As [`integrate_ode`], applying `project` to every computed node value.
pub fn integrate_ode_projected<S: OdeState>(
    field: impl Fn(f64, &S) -> S,
    boundary: S,
    grid: &TimeGrid,
    direction: Direction,
    method: Method,
    project: impl Fn(S) -> S,
) -> Result<Trajectory<S>, NumericsError> {
    let n = grid.steps;
    let mut values = vec![boundary; n + 1];
    let (start, h) = match direction {
        Direction::Forward => (0, grid.dt()),
        Direction::Backward => (n, -grid.dt()),
    };
    if escaped(&boundary) {
        return Err(NumericsError::BlowUp { t: grid.t(start) });
    }
    for j in 0..n {
        let (from, to) = match direction {
            Direction::Forward => (j, j + 1),
            Direction::Backward => (n - j, n - j - 1),
        };
        let t = grid.t(from);
        let y = values[from];
        let next = match method {
            Method::Euler => y + field(t, &y) * h,
            Method::Rk4 => {
                let k1 = field(t, &y);
                let k2 = field(t + 0.5 * h, &(y + k1 * (0.5 * h)));
                let k3 = field(t + 0.5 * h, &(y + k2 * (0.5 * h)));
                let k4 = field(grid.t(to), &(y + k3 * h));
                y + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
            }
        };
        let next = project(next);
        if escaped(&next) {
            return Err(NumericsError::BlowUp { t: grid.t(to) });
        }
        values[to] = next;
    }
    Ok(Trajectory { grid: *grid, values })
}

/// Solves `Theta' = Pi(t) Theta`, `Theta(0) = I`.
pub fn fundamental_matrix(
    pi: impl Fn(f64) -> Matrix3<f64>,
    grid: &TimeGrid,
    method: Method,
) -> Result<Trajectory<Matrix3<f64>>, NumericsError> {
    integrate_ode(|t, theta: &Matrix3<f64>| pi(t) * theta, Matrix3::identity(), grid, Direction::Forward, method)
}

/// Stream id of the leader's own Brownian motion.
pub const STREAM_W0: u64 = 0;
/// Stream id of the common noise.
pub const STREAM_COMMON: u64 = 1;

/// Stream id of follower `i` (1-based).
pub fn follower_stream(i: usize) -> u64 {
    1 + i as u64
}

fn stream_rng(seed: u64, path_id: u64, stream_id: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path_id.to_le_bytes());
    key[16..24].copy_from_slice(b"mfs-bm\0\0");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    rng
}

/// Fills `out` with i.i.d. `N(0, dt)` draws for the stream
/// `(seed, path_id, stream_id)`; entry `k` is the increment over step `k`.
pub fn fill_brownian_increments(seed: u64, path_id: u64, stream_id: u64, dt: f64, out: &mut [f64]) {
    let mut rng = stream_rng(seed, path_id, stream_id);
    let scale = dt.sqrt();
    for v in out.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v = scale * z;
    }
}

pub fn brownian_increments(seed: u64, path_id: u64, stream_id: u64, grid: &TimeGrid) -> Vec<f64> {
    let mut out = vec![0.0; grid.steps];
    fill_brownian_increments(seed, path_id, stream_id, grid.dt(), &mut out);
    out
}

/// All increments of one Monte Carlo path.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub seed: u64,
    pub path_id: u64,
    pub agents: usize,
    pub steps: usize,
    pub w0: Vec<f64>,
    pub common: Vec<f64>,
    /// Follower increments, time-major: entry `k * agents + (i - 1)`.
    pub followers: Vec<f64>,
}

impl NoiseBundle {
    pub fn generate(seed: u64, path_id: u64, agents: usize, grid: &TimeGrid) -> Self {
        let steps = grid.steps;
        let w0 = brownian_increments(seed, path_id, STREAM_W0, grid);
        let common = brownian_increments(seed, path_id, STREAM_COMMON, grid);
        let mut followers = vec![0.0; steps * agents];
        let mut buf = vec![0.0; steps];
        for i in 1..=agents {
            fill_brownian_increments(seed, path_id, follower_stream(i), grid.dt(), &mut buf);
            for (k, v) in buf.iter().enumerate() {
                followers[k * agents + (i - 1)] = *v;
            }
        }
        NoiseBundle { seed, path_id, agents, steps, w0, common, followers }
    }

    /// Increments of follower `i` (1-based).
    pub fn follower(&self, i: usize) -> Vec<f64> {
        (0..self.steps).map(|k| self.followers[k * self.agents + (i - 1)]).collect()
    }
}

/// A diffusion coefficient paired with its increment stream.
pub type Diffusion<'a, S> = (&'a dyn Fn(f64, &S) -> S, &'a [f64]);

/// Explicit Euler-Maruyama: `x_{k+1} = x_k + drift dt + sum_j diffusion_j dW_j(k)`.
pub fn euler_maruyama<S: OdeState>(
    drift: impl Fn(f64, &S) -> S,
    diffusions: &[Diffusion<'_, S>],
    initial: S,
    grid: &TimeGrid,
) -> Result<Trajectory<S>, NumericsError> {
    for (_, dw) in diffusions {
        assert_eq!(dw.len(), grid.steps, "one increment per step");
    }
    let dt = grid.dt();
    let mut values = Vec::with_capacity(grid.len());
    values.push(initial);
    let mut x = initial;
    for k in 0..grid.steps {
        let t = grid.t(k);
        let mut next = x + drift(t, &x) * dt;
        for (g, dw) in diffusions {
            next = next + g(t, &x) * dw[k];
        }
        if escaped(&next) {
            return Err(NumericsError::BlowUp { t: grid.t(k + 1) });
        }
        values.push(next);
        x = next;
    }
    Ok(Trajectory { grid: *grid, values })
}
