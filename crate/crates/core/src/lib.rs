//! Two-player zero-sum games on hybrid dynamical systems: simulation,
//! cost evaluation, Riccati solvers, HJBI certificates and stability checks.

pub mod cost;
pub mod error;
pub mod hjbi;
pub mod hybrid_domain;
pub mod linalg;
pub mod riccati;
pub mod scenarios;
pub mod simulator;
pub mod stability;
pub mod system;

pub use error::{Error, Result};
pub use hybrid_domain::{HybridArc, HybridTime, HybridTimeDomain, InputDims, SolutionPair, TerminalStatus};
pub use linalg::Mat;
pub use system::{close_loop, ClosedLoopSystem, FeedbackLaw, GameSystem, QuadraticGameSpec, Region};
