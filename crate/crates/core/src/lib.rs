//! Energy minimization for a full-duplex mobile-edge-computing cell.
//!
//! Users offload task bits to the base station over uplink NOMA while the
//! base station broadcasts power that the other groups harvest. The crate
//! provides the system model ([`model`], [`scenario`]), the SIC power
//! recursion ([`noma`]), energy accounting ([`energy`]), a log-barrier
//! interior point engine ([`convex`]), the block coordinate descent solver
//! ([`bcd`]), comparison schemes ([`baselines`]) and brute-force reference
//! answers for tiny instances ([`oracle`]).

pub mod baselines;
pub mod bcd;
pub mod convex;
pub mod energy;
mod error;
pub mod model;
pub mod noma;
pub mod oracle;
pub mod scenario;

pub use error::{Certificate, ConstraintFamily, Error, Result};

/// Formats a float with 12 significant digits, the fixed format used in all
/// data files so that reruns are byte-identical.
pub fn fmt_sig12(x: f64) -> String {
    if x.is_finite() {
        format!("{:.11e}", x)
    } else {
        format!("{}", x)
    }
}
