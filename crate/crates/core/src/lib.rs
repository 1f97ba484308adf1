//! Finite element discretisation of the stochastic Navier–Stokes equations
//! on the unit square with additive divergence-free noise.

pub mod config;
pub mod driver;
pub mod element;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod noise;
pub mod plot;
pub mod quadrature;
pub mod schemes;
pub mod sparse;
pub mod stopping;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/mesh.md")]
    mod mesh {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/schemes.md")]
    mod schemes {}
    #[doc = include_str!("../../../book/src/stopping.md")]
    mod stopping {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/config.md")]
    mod config {}
}
