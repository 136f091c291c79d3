pub mod autodiff;
pub mod chartgen;
pub mod degrade;
pub mod detect;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod inn;
pub mod intent;
pub mod metrics;
pub mod toy;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
