//! Graphon signal processing and graphon pooling for graph neural networks.
//!
//! The crate covers the full path from a graphon model to a trained GNN:
//! graph generation ([`graphgen`]), graph and graphon spectral machinery
//! ([`gsp`], [`wsp`]), a small GNN engine with exact backpropagation
//! ([`gnn`]), training ([`train`]), datasets ([`data`]) and the experiment
//! runner used by the command-line tool ([`experiment`]).

pub mod data;
pub mod experiment;
pub mod error;
pub mod gnn;
pub mod graphgen;
pub mod graphon;
pub mod gsp;
pub mod train;
pub mod wsp;

pub use error::{Error, Result};
