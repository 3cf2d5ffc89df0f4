//! Monotone solvers, barrier certificates and boundary regularity
//! measurement for `u_t − x_n^γ F(D²u, x, t) = f` on the half-cylinder.
//!
//! The guide in `book/` walks through each module; its code blocks run as
//! doc-tests.

pub mod barriers;
pub mod geometry;
pub mod harness;
pub mod operators;
pub mod regularity;
pub mod solver;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/solver.md")]
    mod solver {}
    #[doc = include_str!("../../../book/src/barriers.md")]
    mod barriers {}
    #[doc = include_str!("../../../book/src/regularity.md")]
    mod regularity {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
    #[doc = include_str!("../../../book/src/schema.md")]
    mod schema {}
}
