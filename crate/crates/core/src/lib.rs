//! KL-regularized value iteration with constant and error-aware dynamic
//! coefficients.
//!
//! The crate covers exact tabular MDPs ([`mdp`]), the test problems
//! ([`env`]), the iteration schemes and their traces ([`tabular`]), the
//! error-propagation bounds ([`bounds`]), a small deep agent without target
//! networks ([`deep`]) and the experiment configuration used by the `gvi`
//! command-line tool ([`harness`]).

pub mod bounds;
pub mod deep;
pub mod env;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod tabular;

pub use error::{Error, Result};

// Guide chapters run as doctests so their snippets cannot drift.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/mdps.md")]
    mod mdps {}
    #[doc = include_str!("../../../book/src/schemes.md")]
    mod schemes {}
    #[doc = include_str!("../../../book/src/schedules.md")]
    mod schedules {}
    #[doc = include_str!("../../../book/src/bounds.md")]
    mod bounds {}
    #[doc = include_str!("../../../book/src/deep.md")]
    mod deep {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
