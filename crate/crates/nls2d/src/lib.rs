//! Numerical laboratory for soliton dynamics of the two-dimensional
//! nonlinear Schrödinger equation with a decaying potential,
//! `i u_t + Delta u = V u + alpha |u|^{p-1} u`.
//!
//! The crate provides, on a periodic square grid standing in for the plane:
//!
//! * spectral analysis of `L = -Delta + V` (ground state, eigenvalue count,
//!   projections, zero-resonance check),
//! * the nonlinear bound-state branch `E -> phi_E` near the bifurcation
//!   point and its derivatives,
//! * split-step time integration of the full equation and of the linear
//!   flows, with conserved-quantity tracking,
//! * the soliton + radiation modulation decomposition, its parameter ODEs
//!   and the running diagnostic norms,
//! * a resolvent laboratory: Bessel/Hankel kernels, free and perturbed
//!   resolvent boundary values, the low-energy expansion and measured
//!   smoothing/Strichartz constants,
//! * an experiment layer driving the end-to-end scenarios from config files.

pub mod bessel;
pub mod bound;
pub mod config;
pub mod error;
pub mod evolution;
pub mod experiments;
pub mod grid;
pub mod hankel;
pub mod io;
pub mod linalg;
pub mod modulation;
pub mod resolvent;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
