//! Core library for probabilistic fault-ride-through assessment of
//! inverter-dominated power grids.
//!
//! The pipeline: generate random transmission topologies ([`topogen`]), turn
//! them into validated operating grids ([`synthesis`]), simulate Sobol-sampled
//! post-clearance states through the grid DAE ([`perturb`], [`dynamics`],
//! [`integrate`]), classify the transients against ride-through envelopes and
//! aggregate per-bus probabilities ([`frt`]), and train surrogate models that
//! predict those probabilities from nodal features ([`surrogate`]).

pub mod error;
pub mod model;
pub mod dynamics;
pub mod frt;
pub mod integrate;
pub mod perturb;
pub mod powerflow;
pub mod sobol;
pub mod stability;
pub mod surrogate;
pub mod synthesis;
pub mod topogen;

pub use error::{Error, Result};
pub use model::{
    line_admittance, validate_grid, Bus, BusKind, Grid, Line, LineParams, NfLabel,
    NormalFormParams, PerUnitBase, Violation,
};
