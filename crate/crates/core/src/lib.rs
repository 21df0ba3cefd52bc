//! Deterministic federated learning simulator.
//!
//! Implements federated averaging, annealed local/global mixing (each device
//! keeps an `ε`-blend of its own model with probability `p = exp(−t/L)` and
//! takes the server model otherwise) and its gap-gated extension in which
//! devices skip uploads whose accuracy departs from the global model.
//! Tasks are convex (least squares, ridge, ℓ2-regularized multinomial
//! logistic regression) so the optimum is computable and convergence bounds
//! can be checked against simulation.
//!
//! Runnable examples live in `examples/`; `safl-sim` runs experiment files.

pub mod aggregate;
pub mod anneal;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gate;
pub mod objectives;
pub mod params;
pub mod partition;
pub mod rng;
pub mod sim;
pub mod trainer;
pub mod verify;

pub use aggregate::WeightScheme;
pub use anneal::{AnnealClock, AnnealConfig, MaskMode};
pub use data::{Dataset, Sample};
pub use error::{Error, Result};
pub use gate::{AccuracyProxy, GateConfig, GateReference};
pub use objectives::{CurvatureBounds, LossKind, Objective};
pub use params::ParamVector;
pub use partition::PartitionSpec;
pub use sim::{Algorithm, Federation, OptimumReference, RoundRecord, SimConfig, Simulation};
pub use trainer::{LrSchedule, SampleOrder};
