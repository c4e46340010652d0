//! Periodic delay orbits of the planar field
//! `X_t(z) = g(|z|) z/|z| + f(arg z/2π − t) · 2πi z`.
//!
//! The rotating orbits of `ż = X_t(z)` continue into families of periodic
//! solutions of `ż(t) = X_t(z(t − τ))`, parametrized by the delay. Each family
//! reduces to two scalar equations, `f(t) = cos 2πτ` and
//! `g(r)/r = −2π sin 2πτ`, which are traced piece by piece, glued through the
//! extrema of `f` and `g/r`, and drawn as the curve `τ ↦ z_τ(0)`.
//!
//! ```
//! use delay_orbit_atlas::field::FieldSpec;
//! use delay_orbit_atlas::glue::{trace_family, Policy};
//!
//! let spec = FieldSpec::parse("3*theta - 1.5", "2*pi*r*(r-1)", 10.0).unwrap();
//! let fam = trace_family(&spec, 5.0 / 6.0, 1.0, (-0.25, 1.75), 1e-3, Policy::SwitchSides, (None, None)).unwrap();
//! assert_eq!(fam.period, Some(1));
//! assert_eq!(fam.cusps.len(), 2); // one per period, two periods in the span
//! ```
//!
//! The guide in `book/` walks through each stage.

pub mod expr;
pub mod field;
pub mod roots;
pub mod atlas;
pub mod branch;
pub mod cusp;
pub mod glue;
pub mod verify;
pub mod report;
pub mod cli;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/intro.md")]
mod book_intro {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/atlas.md")]
mod book_atlas {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/branches.md")]
mod book_branches {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/gluing.md")]
mod book_gluing {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cusps.md")]
mod book_cusps {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/verification.md")]
mod book_verification {}
#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
