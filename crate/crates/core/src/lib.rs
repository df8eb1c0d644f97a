//! Delay-Doppler and time-frequency baseband simulation.
//!
//! The crate covers the OTFS transceiver chain (ISFFT, Heisenberg, channel,
//! Wigner, SFFT), its OSTF, OFDM and SC-FDMA reductions, on-grid
//! doubly-selective channels, equalizers, multiuser multiplexing and a seeded
//! Monte-Carlo runner.
//!
//! Grid orientation: a [`DdGrid`] is `N x M` (rows are Doppler bins, columns
//! delay bins); a [`TfGrid`] is `M x N` (rows are subbands, columns slots).

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod equalizer;
pub mod error;
pub mod frame;
pub mod metrics;
pub mod modem;
pub mod multiuser;
pub mod par;
pub mod sim;
pub mod transforms;

pub use channel::{ChannelMode, DdChannel, EffectiveMatrix, Tap, TfChannel};
pub use equalizer::{Constellation, Modulation};
pub use error::{Error, Result};
pub use frame::{DdGrid, FrameParams, MappingKind, MappingMatrix, TfGrid, TimeSignal, UserMaps, C64};
pub use metrics::LinkResult;
pub use modem::{Scheme, SchemeConfig};
