//! Nonhyperbolic ergodic measures of step skew products with circle fibers,
//! built at desk scale by repeat-and-tail cascades of contracting IFS.

pub mod blending;
pub mod cascade;
pub mod cifs;
pub mod codes;
pub mod config;
pub mod fiber;
pub mod measures;
pub mod observable;
pub mod pipeline;
pub mod seed;
pub mod skeleton;
pub mod suspension;
