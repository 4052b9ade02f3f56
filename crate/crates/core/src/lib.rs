//! Physics-informed graph attention anomaly detection for water
//! distribution networks.
//!
//! The pipeline runs: [`network`] model and I/O, [`hydrosim`] steady-state
//! simulation and attack injection, [`features`] conservation-law violation
//! features, [`nn`] graph-attention and recurrent encoder, [`multiscale`]
//! score fusion, [`training`] and [`eval`].

pub mod benchmark;
pub mod error;
pub mod eval;
pub mod features;
pub mod hydrosim;
pub mod io;
pub mod model;
pub mod multiscale;
pub mod network;
pub mod nn;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use network::{load_network, save_network, Edge, EdgeKind, NetworkGraph, Node, NodeKind};
