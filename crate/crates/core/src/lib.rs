//! Lattice coarsening dynamics with a vanishing rule, the time-reversed fast
//! diffusion equation, and the back-in-time construction of approximate
//! coarsening solutions from repeated equilibration and particle insertion.

pub mod analysis;
pub mod backward;
pub mod construction;
pub mod error;
pub mod forward;
pub mod insertion;
pub mod integrator;
pub mod lattice;
pub mod trajectory;

pub use analysis::{
    fit_rate, holder_fit, kernel_estimates, living_mean, local_average, step_approximation_distance,
    EstimateFit, FitMode, RateFit,
};
pub use backward::{
    bessel_i, bessel_i_scaled, heat_kernel, harnack_eta1, harnack_floor, integrate_backward, integrate_backward_until,
    membership_pld, positivity_fit, KernelProfile, PositivityClass,
};
pub use construction::{
    build_approximant, equilibrate, instability_datum, vanishing_schedule, ApproximantSolution,
    ConstructionOptions, ConstructionSchedule,
};
pub use error::{Error, Result};
pub use forward::{integrate_forward, mild_residual, stationarity_time};
pub use insertion::{
    average_modifying_insertion, commutator_residual, push_forward, InsertionPlan, JumpSequence,
};
pub use integrator::{IntegratorPolicy, IntegratorStats};
pub use lattice::{
    flux, gflux, living_neighbors, sigma_laplacian_flux, sigma_laplacian_flux_all, Configuration,
    Exponent, LivingNeighbors, ModelParams,
};
pub use trajectory::{Event, EventKind, Trajectory};
