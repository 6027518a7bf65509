//! Discrete spectrum of leaky quantum wires.
//!
//! The operator `H = −Δ − α δ_Γ` on the plane, with `Γ` an asymptotically
//! straight curve, has essential spectrum `[−α²/4, ∞)`. A number `−κ²` below
//! the threshold is an eigenvalue exactly when `1/α` is an eigenvalue of the
//! integral operator with kernel `K₀(κ|γ(s) − γ(s′)|)/2π` on the curve.
//! This crate discretizes that operator and root-finds in `κ`.

pub mod specfun;
pub mod quadrature;
pub mod geometry;
pub mod operator;
pub mod eigen;
pub mod spectrum;
pub mod asymptotics;
pub mod harness;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/curves.md")]
    mod curves {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/weak-bending.md")]
    mod weak_bending {}
    #[doc = include_str!("../../../book/src/wiggling.md")]
    mod wiggling {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
