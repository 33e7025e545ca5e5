//! Channel estimation and max-min SINR beamforming for IRS-assisted
//! multi-user MISO downlinks.
//!
//! The crate is organised bottom-up: [`sysmodel`] draws channels,
//! [`training`] simulates the pilot phase, [`estimation`] turns pilots into
//! MMSE or LS estimates, [`maxmin_sdp`] and [`beamforming`] solve the joint
//! precoder / reflect-vector design, and [`experiments`] runs Monte Carlo
//! sweeps that emit CSV.

pub mod beamforming;
pub mod error;
pub mod estimation;
pub mod experiments;
pub mod linalg;
pub mod maxmin_sdp;
pub mod sysmodel;
pub mod training;

pub use nalgebra::Complex;

pub type C64 = nalgebra::Complex<f64>;
pub type CMatrix = nalgebra::DMatrix<C64>;
pub type CVector = nalgebra::DVector<C64>;

pub use beamforming::{BeamformingSolution, InitPolicy};
pub use error::{Error, Result};
pub use estimation::{ChannelEstimate, EstimatorKind};
pub use experiments::{ResultTable, Scenario};
pub use maxmin_sdp::{PsdSolution, RatioSystem};
pub use sysmodel::{ChannelSet, ChannelStatistics, LinkGains, PathLossModel, SystemConfig, UserLink};
pub use training::{PilotObservation, Protocol, TrainingDesign};
