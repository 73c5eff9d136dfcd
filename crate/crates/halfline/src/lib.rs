//! Weighted Hardy/Copson inequalities on a truncated half-line (x0, xn).
//!
//! The library estimates best constants C in inequalities of the form
//!
//! ```text
//!     || T(integral of h) ||_{q,w}  <=  C · || h ||_{p,v}
//! ```
//!
//! where T is a monotone quasilinear operator built from the Hardy kernel
//! (int_0^x h) or the Copson kernel (int_x^inf h), possibly iterated with an
//! inner exponent r and weight u. It evaluates the matching characterization
//! functionals (Muckenhoupt/Mazya-Rosin/Bradley-Sinnamon-type sups and
//! integrals and their iterated F/E families), and it verifies the reduction
//! equivalences that trade an L^p right-hand side for an L^1 one against a
//! derived weight.
//!
//! Everything is computed on a logarithmic grid over a truncation (x0, xn) of
//! the half-line; weights are piecewise powers so that all single-level
//! integrals have closed forms.

pub mod weights;
pub mod discrete;
pub mod transforms;
pub mod functionals;
pub mod solver;
pub mod verify;
pub mod cli;
