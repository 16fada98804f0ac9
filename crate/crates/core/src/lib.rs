//! Given-data global sensitivity analysis for time-dependent simulators:
//! sparse polynomial chaos surrogates with derived Sobol' indices, the HSIC
//! family of kernel dependence measures, and a lumped clogging simulator
//! that produces trajectory datasets.

pub mod clogsim;
pub mod dataio;
pub mod hsic;
pub mod lars;
pub mod orthopoly;
pub mod pce;
pub mod probmodel;
pub mod quadrature;
pub mod sobol;

/// Version stamped into provenance records and surrogate files.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
