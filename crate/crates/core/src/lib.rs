//! Grey-box cart-pole identification with physics-informed neural ODEs.
//!
//! The equations of motion of a cart-pole are derived by hand from its
//! Lagrangian and evaluated in closed form ([`dynamics`]). The
//! non-conservative force acting on the cart is either a classical
//! Coulomb friction law or a small neural network; both are integrated
//! with fixed-step RK4 ([`integrator`]). The network is trained by
//! differentiating the unrolled integrator with a reverse-mode tape
//! ([`diff`], [`training`]). A synthetic test rig ([`datagen`]) supplies
//! data with effects neither model class contains exactly, and
//! [`evaluation`] compares the models on short rollout windows.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]

extern crate alloc;

pub mod datagen;
pub mod diff;
pub mod dynamics;
mod error;
pub mod evaluation;
pub mod integrator;
pub mod rng;
mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::{angle_distance, sign, wrap_angle, Scalar};
