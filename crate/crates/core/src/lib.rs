//! Robust model predictive control with iterative learning of unknown
//! polyhedral state constraints.
//!
//! A disturbed linear plant repeats a fixed-length task. Some of its state
//! constraints are unknown to the controller; after every iteration the
//! closed-loop states are labelled by a feasibility oracle and used to
//! rebuild a polyhedral constraint estimate. Two estimators are provided:
//!
//! * a kernel SVM boundary, certified probabilistically once enough
//!   consecutive iterations succeed with a frozen estimate, and
//! * the convex hull of feasible states, which is an inner approximation of
//!   the true set and therefore robustly safe once the MPC problem becomes
//!   feasible with it.
//!
//! The controller is an affine disturbance feedback MPC whose constraints are
//! robustified exactly over a polytopic disturbance support.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod icl;
pub mod qp;
pub mod rmpc;
pub mod rng;
pub mod serde_util;
pub mod svm;
pub mod system;

pub use error::{Error, Result};

pub use geometry::{PointCloud, Polytope};

pub use estimator::{Certificate, CertificateMode, ConstraintEstimate, EstimateMethod};
pub use system::{IterationRecord, LtiTask};
