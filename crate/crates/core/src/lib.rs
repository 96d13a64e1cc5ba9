//! Numerical laboratory for partially hyperbolic maps of the 3-torus isotopic to a
//! linear Anosov automorphism, and for Kan-type skew products of the cylinder.

pub mod linalg;
pub mod torus;
pub mod models;
pub mod foliation;
pub mod rng;
pub mod semiconj;
pub mod ergodic;
pub mod disintegration;
pub mod kan;
