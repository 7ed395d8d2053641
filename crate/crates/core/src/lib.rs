//! Skill assessment for recorded tool trajectories.
//!
//! The pipeline: parse recordings ([`trajectory`]), cut them into fixed-length
//! windows, train the four-block 1D CNN in [`nn`] with [`training`], and turn
//! its class probabilities into 0-10 scores with [`assessment`]. Classical
//! reference classifiers live in [`baselines`]; [`synthgen`] produces labeled
//! cutting motions for experiments.

pub mod assessment;
pub mod baselines;
pub mod nn;
pub mod synthgen;
pub mod training;
pub mod trajectory;

/// Quality classes a designer can assign; class `i` stands for score `2i`.
pub const NUM_SCORE_CLASSES: usize = 6;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/trajectories.md")]
    mod trajectories {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/baselines.md")]
    mod baselines {}
    #[doc = include_str!("../../../book/src/synthgen.md")]
    mod synthgen {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
