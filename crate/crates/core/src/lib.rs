//! Privacy-preserving record linkage toolkit.

pub mod attacks;
pub mod bloom;
pub mod envelope;
pub mod evalbench;
pub mod hashcore;
pub mod linker;
pub mod linkkeys;
pub mod lossy;
pub mod model;
pub mod rng;
pub mod synthgen;
