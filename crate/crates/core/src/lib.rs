//! Lifted two-player trajectory games.
//!
//! Each player's candidate trajectories come from projecting a reference onto
//! its feasible set with a small quadratic program ([`traj_opt`]). The
//! candidates of both players induce a pair of cost matrices whose mixed
//! equilibrium is found with Lemke-Howson ([`bimatrix`]). The whole chain is
//! differentiable, so references (or the generators producing them,
//! [`generator`]) can be learned by simultaneous gradient play
//! ([`lifted_game`]). [`tag_env`] provides the planar pursuit-evasion game used
//! throughout.
//!
//! The crate is `no_std` and only needs an allocator.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod bimatrix;
pub mod generator;
pub mod lifted_game;
pub mod linalg;
pub mod tag_env;
pub mod traj_opt;

pub use nalgebra::{DMatrix, DVector};

pub use bimatrix::{bmg, BimatrixError, BimatrixSolution, CostMatrixPair};
pub use generator::{generate, generate_vjp, init_params, GeneratorParams, GeneratorShape};
pub use lifted_game::{LiftedGame, LiftedSolution, Player, ReferenceBundle};
pub use tag_env::{PlayerState, TagEnvSpec};
pub use traj_opt::{LinearConstraintSet, QpSolution, TrajError, TrajProblemSpec};
