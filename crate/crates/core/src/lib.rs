//! Sparse approximation rates, Maurey rounding, exponential-weight mixing and
//! penalized subset selection over ℓq-hulls of a dictionary, together with a
//! Monte Carlo harness for checking risk bounds empirically.

pub mod error;
pub mod harness;
pub mod io;
pub mod maurey;
pub mod mixing;
pub mod numeric;
pub mod rates;
pub mod selection;

pub use error::{Error, Result};

/// Version string embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
