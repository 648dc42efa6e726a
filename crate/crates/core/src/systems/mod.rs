//! Ground-truth dynamical systems and data generation.

mod forcing;
mod integrate;
mod noise;
mod oscillator;
mod shear_building;
mod trajectory;

pub use forcing::{synthetic_seismogram, synthetic_seismogram_with, ForcingSignal, SeismogramShape};
pub use integrate::{integrate, Method};
pub use noise::{add_white_noise, white_noise, SnrConvention};
pub use oscillator::{CoupledOscillatorParams, OscillatorParameter};
pub use shear_building::{BuildingForcing, ShearBuildingParams};
pub use trajectory::Trajectory;
