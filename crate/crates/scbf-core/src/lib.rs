//! Joint synthesis of piecewise-constant stochastic barrier certificates and
//! safe feedback controllers for discrete-time nonlinear systems with
//! additive Gaussian noise.
//!
//! The pipeline: load a problem ([`config`]), whiten the noise and grid the
//! safe set ([`geometry`]), evaluate the exact Gaussian transition kernel
//! between grid cells ([`kernel`]), bound it by affine functions where sound
//! relaxations are needed ([`relax`]), and solve linear programs
//! ([`synthesis`], backed by [`simplex`]) for a barrier value per cell and a
//! constant control per cell whose certified probability bound is then
//! cross-checked by Monte Carlo simulation ([`validation`]).

pub mod affine;
pub mod config;
pub mod controller;
pub mod drift;
pub mod expr;
pub mod geometry;
pub mod interval;
pub mod kernel;
pub mod lp;
pub mod relax;
pub mod scalar;
pub mod simplex;
pub mod synthesis;
pub mod system;
pub mod validation;

pub use scalar::Scalar;

/// Default scalar type for the concrete pipeline.
pub type Real = f64;
