//! Model predictive control of a single-rigid-body quadruped whose residual
//! dynamics are learned online with random Fourier features.
//!
//! The building blocks, bottom-up:
//!
//! - [`rigid_body`]: nominal dynamics, Euler-angle kinematics, discretization.
//! - [`features`], [`learner`], [`extractor`]: the residual model, its online
//!   gradient update, and residual targets recovered from transitions.
//! - [`qp`], [`mpc`]: a dense active-set QP solver and the condensed MPC.
//! - [`gait`], [`plant`], [`l1`]: contact schedule and footholds, the
//!   simulated robot with disturbances, and the L1-style baseline.
//! - [`harness`]: closed-loop runs, metrics, sweeps and file export.
//! - [`verify`]: self-checks exposed through the command line.

pub mod error;
pub mod extractor;
pub mod features;
pub mod gait;
pub mod harness;
pub mod l1;
pub mod learner;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod rigid_body;
pub mod verify;

pub use error::{Error, Result};
