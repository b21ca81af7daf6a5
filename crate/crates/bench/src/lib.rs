//! Shared fixtures for the kernel benchmarks.

use mfs_core::follower_synthesis::{synthesize_follower, FollowerSynthesis, SynthesisOptions};
use mfs_core::leader_synthesis::{synthesize_leader, LeaderContext, LeaderSynthesis};
use mfs_core::{ModelCoefficients, TimeGrid};

/// The worked example solved on a unit horizon with `steps` steps.
pub fn reference(steps: usize) -> (ModelCoefficients, FollowerSynthesis, LeaderSynthesis) {
    let c = ModelCoefficients::reference_example();
    let f = synthesize_follower(&c, &TimeGrid::new(1.0, steps), SynthesisOptions::default())
        .expect("reference follower synthesis");
    let l = synthesize_leader(&LeaderContext::new(&c, &f)).expect("reference leader synthesis");
    (c, f, l)
}
