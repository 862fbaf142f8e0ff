//! Cloud-shadow motion estimation from vehicle-mounted irradiance sensors.
//!
//! The pipeline synthesizes a fractal clear-sky-index field
//! ([`fractal_field`]), sweeps it over a fleet of moving sensors
//! ([`fleet`], [`transit`]), interpolates each snapshot onto a regular grid
//! ([`gridding`]) and recovers speed and heading by minimizing the
//! cumulative mean absolute error over grid displacements ([`cmae`]).
//! [`evaluation`] runs paired Monte Carlo sweeps and reports RMSE tables.

pub mod cli;
pub mod cmae;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fleet;
pub mod fractal_field;
pub mod geom;
pub mod gridding;
pub mod raster_io;
pub mod transit;

pub use error::{Error, Result};
pub use geom::Bounds;
