//! Command-line front end and HTTP service for semantic dynamical-system
//! models.

pub mod app;
pub mod server;
