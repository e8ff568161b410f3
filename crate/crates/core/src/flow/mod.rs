//! Time integration of the unrescaled and rescaled flows and oval initial data.

pub mod ansatz;
pub mod physical;
pub mod rescaled;
pub mod run;

pub use ansatz::{oval_ansatz, AnsatzParams, OvalAnsatz};
pub use physical::{equator_radius, rhs_physical, PhysicalIntegrator};
pub use rescaled::{compute_j, restrict, rhs_plain, rhs_rescaled, Boundary, RescaledIntegrator};
pub use run::{run, InitialKind, RunOutcome, RunOutput, SolverConfig};
