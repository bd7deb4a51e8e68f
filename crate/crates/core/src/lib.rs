//! Feasible Neyman allocation for two-wave experiments: pilot-based
//! allocation rules, the asymptotic `C_m` analysis, Monte Carlo MSE
//! simulation and empirical pilot-size diagnostics.

pub mod alloc;
pub mod asymp;
pub mod dgp;
pub mod empirical;
pub mod error;
pub mod rng;
pub mod sim;
pub mod special;
pub mod spline;

pub use alloc::{apply_rule, assign_block, diff_in_means, feasible_neyman, wald_test, AllocationRule, VarEstimates};
pub use asymp::{cm_curve, estimate_bm, gaussian_bm_oracle, CmCurvePoint, CmInterval, PilotRequirement, PilotSource};
pub use dgp::{make_model, make_regret_dgp, Arm, DgpSpec, ModelSpec, PilotSample};
pub use error::{FnaError, Result};
pub use sim::{run_mse, SimConfig, SimResult};
