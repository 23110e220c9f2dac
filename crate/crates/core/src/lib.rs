//! Permutation tests for the partial correlation between a response and a
//! feature given covariates, valid at level `2α` for every fixed design under
//! exchangeable noise, together with the baselines they are usually compared
//! against, confidence intervals obtained by test inversion, and a small
//! simulation kit.
//!
//! ```
//! use palmrt::{palmrt_test, Dataset, PalmrtConfig};
//!
//! let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
//! let z: Vec<f64> = (0..30).map(|i| (i as f64 * 0.7).cos()).collect();
//! let y: Vec<f64> = (0..30).map(|i| 2.0 * x[i] + z[i] + 0.1 * (i as f64 * 3.1).sin()).collect();
//! let data = Dataset::new(y, x, vec![z], true).unwrap();
//! let report = palmrt_test(&data, 199, 7, &PalmrtConfig::default()).unwrap();
//! assert!(report.p_value <= 0.05);
//! ```

pub mod baselines;
pub mod ci;
pub mod data;
pub mod error;
pub mod linalg;
pub mod palmrt;
pub mod perm;
pub mod report;
pub mod sim;

pub use baselines::{baseline_test, baseline_test_with, f_test, BaselineConfig};
pub use ci::{invert_ci, normal_ci, CiConfig, CiKind, ConfInterval, CriticalLedger, EmptyPolicy};
pub use data::{Dataset, Design};
pub use error::{Error, Result};
pub use palmrt::{palmrt_test, palmrt_test_with, Direction, PalmrtConfig, Variant};
pub use perm::{PermStream, Permutation};
pub use report::{Method, Omega, PairedStat, TestReport};
