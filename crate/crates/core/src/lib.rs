//! Local independence testing and causal structure learning for
//! multivariate event sequences driven by nonlinear Hawkes processes.

pub mod basis;
pub mod design;
pub mod discovery;
pub mod error;
pub mod estimation;
pub mod events;
pub mod experiments;
pub mod features;
pub mod graph;
pub mod hawkes;
pub mod io;
pub mod link;
pub mod litest;
pub mod seeds;
pub mod simulate;
pub mod stats;

pub use basis::{BasisSpec, SplineBasis};
pub use design::{build_design, roughness_penalty, DesignLayout, DesignMatrix, DesignRequest, ExpansionOrder};
pub use discovery::{learn_graph_ca, CAConfig, DiscoveryTrace};
pub use error::{Error, Result};
pub use estimation::{fit_mle, wald_grid_test, FitConfig, FittedIntensityModel, WaldResult};
pub use events::{MarkedEventSequence, Window};
pub use features::{HistoryFeatures, QuadratureGrid};
pub use graph::{shd, DirectedGraph};
pub use hawkes::{spectral_radius, ExponentialKernel, IntensityModelSpec};
pub use link::LinkFunction;
pub use litest::{test_local_independence, LITestConfig, LITestResult, PreparedSequence};
pub use simulate::{simulate_hawkes, SimulationConfig, Structure};
