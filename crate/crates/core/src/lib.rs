//! Morse filtrations from Conley pairs for gradient semi-flows.
pub mod conley;
pub mod critical;
pub mod foliation;
pub mod homology;
pub mod model;
pub mod morse_complex;
pub mod sampling;
pub mod semiflow;
pub mod snf;
