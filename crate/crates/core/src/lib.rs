//! Simulation of the parabolic Anderson model `∂u/∂t = κΔu + γξu` on the
//! discrete torus `(Z/LZ)^d`, driven by independent random walks, the
//! symmetric exclusion process or the voter model.
//!
//! * [`lattice`]: torus geometry, Laplacian, heat kernel, Green function, walks.
//! * [`environment`]: event-driven catalyst trajectories and their codec.
//! * [`solver`]: direct ODE integration and Feynman-Kac Monte Carlo.
//! * [`lyapunov`]: quenched and annealed growth rates, `κ` sweeps.
//! * [`stats`]: estimates, correlations, noisiness functionals, Poisson rate.

mod error;
pub mod environment;
pub mod lattice;
pub mod lyapunov;
pub mod rng;
pub mod solver;
pub mod stats;

pub use environment::{EnvKind, EnvState, EnvTrajectory};
pub use error::{Error, Result};
pub use lattice::{Field, Params, Torus};
pub use rng::RngStream;
pub use solver::{InitialCondition, ScaledField, SolveReport};
pub use stats::Estimate;
