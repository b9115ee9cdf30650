//! Federated spiking-neural-network benchmarking for EEG motor-imagery
//! classification.
//!
//! The crate covers the whole pipeline: EDF/EDF+ ingestion and trial
//! extraction ([`edf`]), spike encoding ([`encoding`]), tape-based training
//! of spiking, convolutional, and recurrent classifiers ([`numerics`],
//! [`models`]), FedAvg simulation over per-subject clients ([`federated`]),
//! operation-count energy estimation and the weighted system performance
//! score ([`energy`]), and the config-driven experiment runner
//! ([`experiment`]).

pub mod edf;
pub mod energy;
pub mod encoding;
pub mod experiment;
pub mod federated;
pub mod models;
pub mod numerics;
pub mod rng;
