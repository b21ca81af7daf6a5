//! Decentralized strategies for linear-quadratic mean-field Stackelberg games
//! with partial information and common noise, and Monte Carlo checks of the
//! resulting epsilon-equilibrium.

// `!(x > tol)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod follower_synthesis;
pub mod game_sim;
pub mod leader_synthesis;
pub mod model;
pub mod numerics;
pub mod pipeline;

use thiserror::Error;

pub use crate::equilibrium::{DecayFit, EpsilonSweep, EquilibriumError, OptimalityGapReport, PerturbationDirection};
pub use crate::game_sim::{ClosedLoop, CostReport, Estimate, Player, SimConfig};
pub use crate::model::{AssumptionReport, Config, ConfigError, ModelCoefficients, SimSettings, TimeGrid};
pub use crate::numerics::{Method, Trajectory};
pub use crate::pipeline::{PipelineError, RunManifest};

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("{what} escaped at t = {t}")]
    BlowUp { what: &'static str, t: f64 },
    #[error("{what} is not bounded away from zero at t = {t}")]
    DivisionDegenerate { what: &'static str, t: f64 },
    #[error("shooting sensitivity {sensitivity:e} is too small to fix Ephi(0)")]
    SingularShooting { sensitivity: f64 },
    #[error("shooting left Ephi(T) = {residual:e}")]
    ShootingResidual { residual: f64 },
    #[error("Gamma2 equation has no solution on the horizon: escape at t = {t}")]
    Gamma2Unsolvable { t: f64 },
    #[error("leader control weight R0cal fell to {value:e} at t = {t}")]
    NegativeR0 { t: f64, value: f64 },
}

impl SynthesisError {
    pub(crate) fn blow_up(what: &'static str, e: NumericsError) -> Self {
        let NumericsError::BlowUp { t } = e;
        SynthesisError::BlowUp { what, t }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("{what} escaped at t = {t}")]
    BlowUp { what: &'static str, t: f64 },
    #[error("the population needs at least one follower")]
    EmptyPopulation,
    #[error("at least one Monte Carlo path is required")]
    NoPaths,
}
