//! Command-line tool and HTTP service around the click-prediction engine.

pub mod commands;
pub mod params;
pub mod service;
