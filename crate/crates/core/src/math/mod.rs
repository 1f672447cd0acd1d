//! Quaternions, triangle interpolation, spherical harmonics and the scalar
//! differentiation tape the gradient code is built on.

pub mod quat;
pub mod sh;
pub mod tape;
pub mod tri;
pub mod vec;

pub use quat::Quat;
pub use sh::ShCoeffs;
pub use tape::{GradTape, Real, Var};
pub use tri::Tri;
pub use vec::{Mat3, Vec3};
