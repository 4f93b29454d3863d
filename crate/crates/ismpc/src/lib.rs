//! Gait generation for humanoid robots on the linear inverted pendulum (LIP)
//! model, built around an MPC scheme whose QP carries an explicit stability
//! constraint on the unstable component of the CoM dynamics.
//!
//! The crate is organized bottom-up:
//!
//! * [`lip`] - LIP dynamics with the ZMP velocity as input: exact
//!   discretization, stable/unstable coordinate split, stability sums.
//! * [`qp`] - dense convex QP solver (primal active set with a feasibility
//!   phase), used by every optimization in the crate.
//! * [`footstep`] - high-level reference velocities to candidate footstep
//!   plans: step timing, template path integration, orientation and
//!   placement QPs.
//! * [`timeline`] - support phases and moving ZMP admissible regions derived
//!   from a footstep plan.
//! * [`tails`] - conjectured ZMP velocity tails beyond the control horizon
//!   and the stability constraint rows they induce.
//! * [`controller`] - the MPC loop itself: constraint assembly, the QP per
//!   iteration, exact state propagation, plus a standard MPC baseline
//!   without the stability constraint.
//! * [`feasibility`] - feasibility intervals for the unstable coordinate,
//!   witness trajectories, and the preview-length bound that yields
//!   recursive feasibility.
//! * [`scenario`] - scenario configuration, the simulation runner, CSV run
//!   logs, and run comparison.

pub mod controller;
pub mod feasibility;
pub mod footstep;
pub mod lip;
pub mod qp;
// pub mod scenario;
pub mod tails;
pub mod timeline;
