use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Test procedures provided by the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Palmrt,
    #[serde(rename = "ftest")]
    FTest,
    Perm,
    #[serde(rename = "fl")]
    FreedmanLane,
    Kennedy,
    #[serde(rename = "braak")]
    TerBraak,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Palmrt,
        Method::FTest,
        Method::Perm,
        Method::FreedmanLane,
        Method::Kennedy,
        Method::TerBraak,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Palmrt => "palmrt",
            Method::FTest => "ftest",
            Method::Perm => "perm",
            Method::FreedmanLane => "fl",
            Method::Kennedy => "kennedy",
            Method::TerBraak => "braak",
        }
    }

    pub fn uses_permutations(self) -> bool {
        self != Method::FTest
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown method '{s}'")))
    }
}

/// Per-permutation contribution to the p-value numerator: 0, 1/2 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Omega {
    Zero,
    Half,
    One,
}

impl Omega {
    /// Twice the value, so sums stay exact integers.
    pub fn doubled(self) -> u64 {
        match self {
            Omega::Zero => 0,
            Omega::Half => 1,
            Omega::One => 2,
        }
    }

    pub fn value(self) -> f64 {
        self.doubled() as f64 / 2.0
    }

    /// `1{permuted > original} + 1/2 1{tie}` with ties defined by `slack`.
    pub fn compare(original: f64, permuted: f64, slack: f64) -> Omega {
        if original == permuted || (original - permuted).abs() <= slack {
            Omega::Half
        } else if permuted > original {
            Omega::One
        } else {
            Omega::Zero
        }
    }
}

/// One permutation's statistic pair. `t_0b` is the original-side statistic
/// and `t_b0` the permuted-side one; `omega` is `1{t_b0 > t_0b} + 1/2 1{tie}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedStat {
    pub t_0b: f64,
    pub t_b0: f64,
    pub omega: Omega,
}

/// `(1 + Σω) / (B + 1)` from the doubled sum.
pub fn conformal_p_value(omega_doubled: u64, permutations: usize) -> f64 {
    (2 + omega_doubled) as f64 / (2 * (permutations + 1)) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub method: Method,
    /// Statistic construction used by PALMRT; `None` for the baselines.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variant: Option<String>,
    pub p_value: f64,
    /// Number of permutations `B`; zero for the F-test.
    pub permutations: usize,
    pub seed: Option<u64>,
    /// Observed statistic where one exists (F for the baselines).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub statistic: Option<f64>,
    /// `Σ ω_b`.
    pub omega_sum: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ledger: Option<Vec<PairedStat>>,
    pub warnings: Vec<String>,
}

impl TestReport {
    pub(crate) fn from_omegas(method: Method, omega_doubled: u64, permutations: usize, seed: Option<u64>) -> Self {
        Self {
            method,
            variant: None,
            p_value: conformal_p_value(omega_doubled, permutations),
            permutations,
            seed,
            statistic: None,
            omega_sum: omega_doubled as f64 / 2.0,
            ledger: None,
            warnings: Vec::new(),
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value <= alpha
    }
}
