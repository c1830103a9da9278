//! Numerical laboratory for volume-preserving derived-from-Anosov maps of `T³`.

pub mod cocycle;
pub mod conjugacy;
pub mod damap;
pub mod disintegration;
pub mod foliation;
pub mod grid;
pub mod periodic;
pub mod rng;
pub mod torus;
