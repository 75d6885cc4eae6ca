pub mod envs;
pub mod error;
pub mod experiment;
pub mod io;
pub mod likelihood;
pub mod margins;
pub mod metrics;
pub mod model;
pub mod recipes;
pub mod sampler;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/rewards.md")]
    struct Rewards;
    #[doc = include_str!("../../../book/src/likelihood.md")]
    struct Likelihood;
    #[doc = include_str!("../../../book/src/sampler.md")]
    struct Sampler;
    #[doc = include_str!("../../../book/src/margins.md")]
    struct Margins;
    #[doc = include_str!("../../../book/src/worlds.md")]
    struct Worlds;
    #[doc = include_str!("../../../book/src/experiments.md")]
    struct Experiments;
}
