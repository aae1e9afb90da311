pub mod backup;
pub mod barrier;
pub mod dynamics;
pub mod nn;
pub mod pendulum;
pub mod shield;
pub mod soft;
