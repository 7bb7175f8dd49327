//! Distributed large-scale formation planning.
//!
//! Each agent registers its peers' predicted positions against the desired
//! formation with a RANSAC-robust Sim(3) fit, which yields a sequence of
//! optimal formation positions over the planning horizon. Those positions
//! then constrain a minimum-jerk trajectory optimization that also handles
//! obstacles, inter-agent clearance and dynamic limits.

pub mod formation;
pub mod geometry;
pub mod optimizer;
pub mod robust;
pub mod sim;
pub mod trajectory;

pub use geometry::{Point3, Sim3Transform};
