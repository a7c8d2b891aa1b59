//! Tuberculosis transmission model with constant delays in the infectious
//! state and in two treatment controls.

pub mod dde;
pub mod poly;
pub mod stability;
pub mod error;
pub mod iop;
pub mod model;
pub mod ocp;
pub mod optim;
pub mod schedule;

pub use dde::{
    integrate, ControlSource, DelayConfig, Grid, HistorySpec, NodalControls, Side, SubNode, Trajectory, ZeroControl,
};
pub use error::{Error, Result};
pub use model::{
    basic_reproduction_number, disease_free_equilibrium, endemic_equilibrium, rhs_controlled, sum_derivative_check,
    ControlVec, EquilibriumKind, EquilibriumPoint, ModelParams, R0Breakdown, StateVec,
};
pub use ocp::{
    adjoint_backward, reduced_objective, running_cost, sharpen, solve, switching_trace, trajectory_objective, verify_bang_bang,
    AdjointVec, BangBangReport, ControlBounds, ObjectiveKind, ObjectiveSpec, OcpProblem, OcpSolution, SolveStatus, SolverDiagnostics,
    SolverOptions, SwitchingTrace,
};
pub use iop::{
    beta_sweep, fd_hessian, hessian_fd, optimize_switch_times, simulate_schedule, HessianReport, IopHessian, IopOptions,
    IopOutcome, SweepRecord, SweepResult, SweepTrends,
};
pub use schedule::{ArcSchedule, ControlArcs};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/stability.md")]
    mod stability {}
    #[doc = include_str!("../../../book/src/optimal-control.md")]
    mod optimal_control {}
    #[doc = include_str!("../../../book/src/switching-times.md")]
    mod switching_times {}
    #[doc = include_str!("../../../book/src/sweep.md")]
    mod sweep {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/numerics.md")]
    mod numerics {}
}
