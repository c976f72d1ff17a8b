//! Executable checks of the stability and consistency mathematics behind the
//! multi-step rule, plus finite-difference gradient checks of the learners.

mod flow;
mod gradcheck;
mod linear;

pub use flow::{
    boundary_brackets, quadratic_flow_run, stability_grid, BoundaryBracket, FlowOutcome, GridPoint,
    QuadraticProblem, BOUNDARY_BAND,
};
pub use gradcheck::{grad_check, jacobian_factor_error, GradCheckCase, GradCheckReport, GradFn};
pub use linear::{
    mul_action_stats, predicted_variance_ratio, prop2_check, sin_actions, LinearPolicyScenario,
    MulStats, Prop2Report,
};
