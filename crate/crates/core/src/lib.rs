//! Resource slicing for satellite-terrestrial integrated networks.

pub mod constellation;
pub mod coordination;
pub mod demand;
pub mod harness;
pub mod marl;
pub mod qos;
pub mod reservation;
