//! Stochastic simulation of chemical reaction networks, hybrid-automaton
//! path measures and likelihood-free calibration of oscillators.

pub mod abc;
pub mod expr;
pub mod lha;
pub mod model;
pub mod period;
pub mod rng;
pub mod ssa;

pub use abc::{
    abc_rejection, abc_smc, posterior_summary, AbcError, DistanceMeter, Generation, ModelMeter,
    Particle, PosteriorSummary, Prior, RejectionConfig, RejectionResult, SmcConfig, SmcResult,
    SmcTermination,
};
pub use lha::{Lha, LhaDocument, RunResult, Synchronizer};
pub use model::{CrnModel, ModelError, Reaction, State};
pub use period::{
    analyze_trace, measure_distance, CrossingAnalysis, DistanceMode, PeriodMeter, PeriodMeterConfig,
};
pub use rng::RngStream;
pub use ssa::{
    sample_path, PathObserver, PathSource, Recorder, SafetyBounds, SimError, SsaSource,
    Termination, Trace,
};
