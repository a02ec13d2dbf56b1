//! Extinction-time laboratory for two-type linear-fractional branching
//! processes in a varying environment.
//!
//! The modules build on each other in this order: [`env`] (parameter
//! sequences), [`matprod`] (2×2 products), [`cfrac`] (continued fractions),
//! [`extinct`] (exact extinction law), [`asymcheck`] (limit diagnostics) and
//! [`mcsim`] (Monte Carlo).

pub mod asymcheck;
pub mod cfrac;
pub mod env;
pub mod error;
pub mod extinct;
pub mod matprod;
pub mod mcsim;
pub mod series;

pub use error::{Error, Result};
