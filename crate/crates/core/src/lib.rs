//! Gaussian-mixture EM over vertically partitioned data.
//!
//! Three engines share one set of block-local kernels:
//!
//! * [`gmm::fit_centralized`]: classic EM, optionally with a block-diagonal
//!   covariance constraint;
//! * [`fl::fit_fl`]: server/client simulation where each client owns a
//!   feature slice and the server only ever sees per-example scalar sums;
//! * [`decentralized::fit_decentralized`]: peer-to-peer simulation over an
//!   arbitrary connected graph, with hubs from [`hubs::cluster_hubs`] and
//!   sums obtained by averaging consensus.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::single_range_in_vec_init
)]

pub mod batch;
pub mod consensus;
pub mod data;
pub mod decentralized;
pub mod error;
pub mod eval;
pub mod fl;
pub mod gmm;
pub mod hubs;
pub mod linalg;
mod party;
pub mod rng;
pub mod topology;

pub use error::{Error, Result};
