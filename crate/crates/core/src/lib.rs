//! Semantic modeling of one-dimensional dynamical systems.
//!
//! A model maps an initial condition `x0` to a *semantic representation*:
//! a composition of shape motifs plus the quantitative properties of the
//! trajectory (transition points, boundary derivatives, tail descriptors).
//! Trajectories are rendered from that representation with shape-conforming
//! cubic splines and closed-form tails.

pub mod basis;
pub mod benchmark;
pub mod comp_map;
pub mod cubic;
pub mod datasets;
pub mod editing;
pub mod error;
pub mod model;
pub mod optim;
pub mod prop_map;
pub mod scalar;
pub mod semantics;
pub mod traj_c0;
pub mod traj_c2;
pub mod unbounded;

pub use error::{Error, Result};
pub use semantics::{Composition, Motif, PropertySet, SemanticRep, TailProps, Transition};
pub use benchmark::{run_benchmark, BenchConfig, BenchReport};
pub use comp_map::CompositionMap;
pub use datasets::{Dataset, GenConfig, Sample, System};
pub use editing::{apply_edits, Edit, EditSpec};
pub use model::{fit_model, ModelConfig, SemanticModel, TrajectoryMode};
pub use prop_map::{Constraint, PropertyName};
pub use semantics::LibraryFilter;
