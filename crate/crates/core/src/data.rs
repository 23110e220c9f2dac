//! Response, target feature and covariates for a single partial-correlation test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_finite, check_len};

/// The fixed part of the model: target feature `x` and covariates `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    intercept: bool,
}

impl Design {
    /// `z` is given as columns. The intercept, when requested, is implicit and
    /// never stored as a column.
    pub fn new(x: Vec<f64>, z: Vec<Vec<f64>>, intercept: bool) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::invalid("design needs at least one observation"));
        }
        check_finite("target feature", &x)?;
        for col in &z {
            check_len("covariate column", x.len(), col)?;
            check_finite("covariate column", col)?;
        }
        Ok(Self { x, z, intercept })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Number of covariate columns, not counting the intercept.
    pub fn p(&self) -> usize {
        self.z.len()
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &[Vec<f64>] {
        &self.z
    }

    pub fn intercept(&self) -> bool {
        self.intercept
    }

    /// Covariate columns with the constant column appended when enabled.
    pub fn covariates_with_intercept(&self) -> Vec<Vec<f64>> {
        let mut cols = self.z.clone();
        if self.intercept {
            cols.push(vec![1.0; self.n()]);
        }
        cols
    }

    /// Column-major `[Z, 1]` ready for factorization.
    pub(crate) fn covariate_block(&self) -> Vec<f64> {
        let n = self.n();
        let mut data = Vec::with_capacity(n * (self.p() + 1));
        for col in &self.z {
            data.extend_from_slice(col);
        }
        if self.intercept {
            data.extend(std::iter::repeat_n(1.0, n));
        }
        data
    }

    /// `x β + Z θ`.
    pub fn linear_predictor(&self, beta: f64, theta: &[f64]) -> Result<Vec<f64>> {
        if !theta.is_empty() {
            check_len("theta", self.p(), theta)?;
        }
        let mut out: Vec<f64> = self.x.iter().map(|v| v * beta).collect();
        for (col, &t) in self.z.iter().zip(theta) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += t * c;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    design: Design,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, z: Vec<Vec<f64>>, intercept: bool) -> Result<Self> {
        Self::from_design(y, Design::new(x, z, intercept)?)
    }

    pub fn from_design(y: Vec<f64>, design: Design) -> Result<Self> {
        check_len("response", design.n(), &y)?;
        check_finite("response", &y)?;
        Ok(Self { y, design })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn x(&self) -> &[f64] {
        self.design.x()
    }

    pub fn z(&self) -> &[Vec<f64>] {
        self.design.z()
    }

    pub fn n(&self) -> usize {
        self.design.n()
    }

    pub fn p(&self) -> usize {
        self.design.p()
    }

    pub fn intercept(&self) -> bool {
        self.design.intercept()
    }

    /// The same design with response `y - x β`.
    pub fn shifted(&self, beta: f64) -> Dataset {
        let y = self.y.iter().zip(self.design.x()).map(|(y, x)| y - x * beta).collect();
        Dataset {
            y,
            design: self.design.clone(),
        }
    }
}
