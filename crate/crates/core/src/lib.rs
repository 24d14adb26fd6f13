//! Lead-vehicle kinematics for rear-end crash scenario generation.
//!
//! The crate covers the whole chain from raw speed-time series to validated
//! synthetic scenarios:
//!
//! * [`ingest`] loads event CSVs, windows them to the pre-crash interval and
//!   applies the validity rules.
//! * [`pwl_fit`] fits weighted continuous piecewise-linear models, selects the
//!   breakpoint count with a complexity-penalized loss, repairs negative speeds
//!   and extracts the six-parameter event description.
//! * [`combine`] trims and rescales survey weights, reweights the crash sources
//!   into one dataset and attaches similar near-crashes.
//! * [`mvdist`] categorizes events into sub-datasets and builds per sub-dataset
//!   Gaussian-copula models with AIC-selected (hurdle) marginals.
//! * [`synth`] samples, filters and assembles synthetic events and turns them
//!   back into speed profiles.
//! * [`validate`] provides weighted ECDFs, the weighted two-sample KS
//!   permutation test, descriptive statistics and the bootstrap study.
//! * [`pipeline`] wires the stages together behind a flat configuration.
//!
//! Data-parallel loops run on rayon when the `parallel` feature (default) is
//! enabled and fall back to plain iterators otherwise.

pub mod combine;
pub mod corpus;
pub mod error;
pub mod ingest;
pub mod io;
pub mod mvdist;
pub mod par;
pub mod pipeline;
pub mod pwl_fit;
pub mod stats;
pub mod synth;
pub mod validate;

pub use error::{Error, Result};
pub use ingest::{RawEvent, Severity, SourceGroup, SpeedProfile};
pub use pwl_fit::{EventParams, FitConfig, PwlFit};

use serde::{Deserialize, Serialize};
use std::fmt;

/// Standard gravity in m/s², the bound on fitted and generated accelerations.
pub const G: f64 = 9.80665;

/// Start of the modeling duration, seconds relative to time zero.
pub const T_START: f64 = -5.0;

/// The six event parameters in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Param {
    #[serde(rename = "v_c")]
    Vc,
    #[serde(rename = "a1")]
    A1,
    #[serde(rename = "a2")]
    A2,
    #[serde(rename = "tau_s")]
    TauS,
    #[serde(rename = "tau_1")]
    Tau1,
    #[serde(rename = "tau_2")]
    Tau2,
}

impl Param {
    pub const ALL: [Param; 6] = [
        Param::Vc,
        Param::A1,
        Param::A2,
        Param::TauS,
        Param::Tau1,
        Param::Tau2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::Vc => "v_c",
            Param::A1 => "a1",
            Param::A2 => "a2",
            Param::TauS => "tau_s",
            Param::Tau1 => "tau_1",
            Param::Tau2 => "tau_2",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn get(self, e: &EventParams) -> f64 {
        match self {
            Param::Vc => e.v_c,
            Param::A1 => e.a1,
            Param::A2 => e.a2,
            Param::TauS => e.tau_s,
            Param::Tau1 => e.tau_1,
            Param::Tau2 => e.tau_2,
        }
    }

    pub fn set(self, e: &mut EventParams, value: f64) {
        match self {
            Param::Vc => e.v_c = value,
            Param::A1 => e.a1 = value,
            Param::A2 => e.a2 = value,
            Param::TauS => e.tau_s = value,
            Param::Tau1 => e.tau_1 = value,
            Param::Tau2 => e.tau_2 = value,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
