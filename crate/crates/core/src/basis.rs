//! Basis dictionaries: Gaussian RBFs, Chebyshev and Legendre polynomials.
//!
//! Polynomials are evaluated with their three-term recurrences and the
//! derivatives with the differentiated recurrences. RBF derivatives use the
//! closed forms `ψ′ = −2l²(x−c)ψ` and `ψ″ = (4l⁴(x−c)² − 2l²)ψ`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::SnapshotData;
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisFamily {
    GaussianRbf,
    Chebyshev,
    Legendre,
}

impl fmt::Display for BasisFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BasisFamily::GaussianRbf => "rbf",
            BasisFamily::Chebyshev => "chebyshev",
            BasisFamily::Legendre => "legendre",
        })
    }
}

impl FromStr for BasisFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" | "gaussian_rbf" | "gaussian-rbf" => Ok(BasisFamily::GaussianRbf),
            "chebyshev" | "cheb" => Ok(BasisFamily::Chebyshev),
            "legendre" => Ok(BasisFamily::Legendre),
            other => Err(invalid(format!("unknown basis family '{other}'"))),
        }
    }
}

/// Which derivative of the basis to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Value,
    First,
    Second,
}

impl TryFrom<u8> for Derivative {
    type Error = Error;

    fn try_from(order: u8) -> Result<Self> {
        match order {
            0 => Ok(Derivative::Value),
            1 => Ok(Derivative::First),
            2 => Ok(Derivative::Second),
            _ => Err(invalid(format!("derivative order {order} not supported"))),
        }
    }
}

/// An immutable set of `n_basis` functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSet {
    pub family: BasisFamily,
    pub n_basis: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_scale: Option<f64>,
}

impl BasisSet {
    pub fn chebyshev(n_basis: usize) -> Result<Self> {
        Self::polynomial(BasisFamily::Chebyshev, n_basis)
    }

    pub fn legendre(n_basis: usize) -> Result<Self> {
        Self::polynomial(BasisFamily::Legendre, n_basis)
    }

    fn polynomial(family: BasisFamily, n_basis: usize) -> Result<Self> {
        if n_basis == 0 {
            return Err(invalid("a basis needs at least one function"));
        }
        Ok(Self {
            family,
            n_basis,
            centers: None,
            length_scale: None,
        })
    }

    /// Gaussian RBFs `exp(−l²(x − c_j)²)` with strictly increasing centres.
    pub fn rbf(centers: Vec<f64>, length_scale: f64) -> Result<Self> {
        let b = Self {
            family: BasisFamily::GaussianRbf,
            n_basis: centers.len(),
            centers: Some(centers),
            length_scale: Some(length_scale),
        };
        b.validate()?;
        Ok(b)
    }

    /// RBFs placed from the range of `x_data`, see [`make_rbf_centers`].
    pub fn rbf_adaptive(x_data: &[f64], n_basis: usize) -> Result<Self> {
        let (c, l) = make_rbf_centers(x_data, n_basis)?;
        Self::rbf(c, l)
    }

    /// RBFs spread evenly over [−1, 1], see [`fixed_interval_rbf_centers`].
    pub fn rbf_fixed_interval(n_basis: usize) -> Result<Self> {
        let (c, l) = fixed_interval_rbf_centers(n_basis)?;
        Self::rbf(c, l)
    }

    /// Checks the invariants of a (possibly deserialised) basis.
    pub fn validate(&self) -> Result<()> {
        if self.n_basis == 0 {
            return Err(invalid("a basis needs at least one function"));
        }
        match self.family {
            BasisFamily::GaussianRbf => {
                let c = self
                    .centers
                    .as_ref()
                    .ok_or_else(|| invalid("RBF basis requires centers"))?;
                if c.len() != self.n_basis {
                    return Err(invalid("number of centers differs from n_basis"));
                }
                if c.iter().any(|v| !v.is_finite()) || c.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("RBF centers must be finite and strictly increasing"));
                }
                match self.length_scale {
                    Some(l) if l > 0.0 && l.is_finite() => Ok(()),
                    _ => Err(invalid("RBF basis requires a positive length scale")),
                }
            }
            _ => Ok(()),
        }
    }

    pub fn is_polynomial(&self) -> bool {
        self.family != BasisFamily::GaussianRbf
    }

    /// Evaluates `(ψ_j(x))`, `(ψ_j′(x))` or `(ψ_j″(x))`.
    pub fn eval(&self, x: f64, order: Derivative) -> Vec<f64> {
        let n = self.n_basis;
        let (mut v, mut d1, mut d2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        self.eval_all(x, &mut v, &mut d1, &mut d2);
        match order {
            Derivative::Value => v,
            Derivative::First => d1,
            Derivative::Second => d2,
        }
    }

    /// Values and both derivatives in one pass. Slices must have length
    /// `n_basis`.
    pub fn eval_all(&self, x: f64, v: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
        match self.family {
            BasisFamily::GaussianRbf => self.eval_rbf(x, v, d1, d2),
            BasisFamily::Chebyshev => chebyshev_all(x, v, d1, d2),
            BasisFamily::Legendre => legendre_all(x, v, d1, d2),
        }
    }

    /// Values only, skipping derivative work.
    pub fn eval_values(&self, x: f64, v: &mut [f64]) {
        match self.family {
            BasisFamily::GaussianRbf => {
                let l2 = self.length_scale.unwrap_or(1.0).powi(2);
                for (out, c) in v.iter_mut().zip(self.centers.as_deref().unwrap_or(&[])) {
                    let r = x - c;
                    *out = (-l2 * r * r).exp();
                }
            }
            BasisFamily::Chebyshev => {
                v[0] = 1.0;
                if v.len() > 1 {
                    v[1] = x;
                }
                for k in 2..v.len() {
                    v[k] = 2.0 * x * v[k - 1] - v[k - 2];
                }
            }
            BasisFamily::Legendre => {
                v[0] = 1.0;
                if v.len() > 1 {
                    v[1] = x;
                }
                for k in 2..v.len() {
                    let n = (k - 1) as f64;
                    v[k] = ((2.0 * n + 1.0) * x * v[k - 1] - n * v[k - 2]) / (n + 1.0);
                }
            }
        }
    }

    fn eval_rbf(&self, x: f64, v: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
        let l2 = self.length_scale.unwrap_or(1.0).powi(2);
        let centers = self.centers.as_deref().unwrap_or(&[]);
        for (j, c) in centers.iter().enumerate() {
            let r = x - c;
            let psi = (-l2 * r * r).exp();
            v[j] = psi;
            d1[j] = -2.0 * l2 * r * psi;
            d2[j] = (4.0 * l2 * l2 * r * r - 2.0 * l2) * psi;
        }
    }

    /// `(ψ(X), ψ(Y))`, each `n_basis × T` with column `j` holding `ψ(x_j)`.
    pub fn snapshot_matrices(&self, data: &SnapshotData) -> (DMatrix<f64>, DMatrix<f64>) {
        if self.is_polynomial() {
            warn_outside_interval(data);
        }
        let n = self.n_basis;
        let t = data.len();
        let mut px = DMatrix::zeros(n, t);
        let mut py = DMatrix::zeros(n, t);
        let mut buf = vec![0.0; n];
        for (j, (&x, &y)) in data.x.iter().zip(&data.y).enumerate() {
            self.eval_values(x, &mut buf);
            px.column_mut(j).copy_from_slice(&buf);
            self.eval_values(y, &mut buf);
            py.column_mut(j).copy_from_slice(&buf);
        }
        (px, py)
    }
}

pub(crate) fn warn_outside_interval(data: &SnapshotData) {
    let outside = data
        .x
        .iter()
        .chain(&data.y)
        .filter(|v| v.abs() > 1.0)
        .count();
    if outside > 0 {
        log::warn!("{outside} samples lie outside [-1, 1]; polynomial basis evaluated as-is");
    }
}

fn chebyshev_all(x: f64, v: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
    let n = v.len();
    v[0] = 1.0;
    d1[0] = 0.0;
    d2[0] = 0.0;
    if n > 1 {
        v[1] = x;
        d1[1] = 1.0;
        d2[1] = 0.0;
    }
    for k in 2..n {
        v[k] = 2.0 * x * v[k - 1] - v[k - 2];
        d1[k] = 2.0 * v[k - 1] + 2.0 * x * d1[k - 1] - d1[k - 2];
        d2[k] = 4.0 * d1[k - 1] + 2.0 * x * d2[k - 1] - d2[k - 2];
    }
}

fn legendre_all(x: f64, v: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
    let len = v.len();
    v[0] = 1.0;
    d1[0] = 0.0;
    d2[0] = 0.0;
    if len > 1 {
        v[1] = x;
        d1[1] = 1.0;
        d2[1] = 0.0;
    }
    for k in 2..len {
        // (n+1) P_{n+1} = (2n+1) x P_n − n P_{n−1} with n = k − 1
        let n = (k - 1) as f64;
        let a = 2.0 * n + 1.0;
        v[k] = (a * x * v[k - 1] - n * v[k - 2]) / (n + 1.0);
        d1[k] = (a * (v[k - 1] + x * d1[k - 1]) - n * d1[k - 2]) / (n + 1.0);
        d2[k] = (a * (2.0 * d1[k - 1] + x * d2[k - 1]) - n * d2[k - 2]) / (n + 1.0);
    }
}

/// Data-adaptive RBF placement: `N` centres spaced `Δx = (max − min)/(N + 1)`
/// apart with `c_1 = min + Δx`, `c_N = max − Δx`, and `l = 1/Δx`.
pub fn make_rbf_centers(x_data: &[f64], n_basis: usize) -> Result<(Vec<f64>, f64)> {
    if n_basis < 2 {
        return Err(invalid("RBF placement needs at least two centers"));
    }
    if x_data.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite data"));
    }
    let (lo, hi) = x_data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(invalid("degenerate data range for RBF placement"));
    }
    let dx = (hi - lo) / (n_basis as f64 + 1.0);
    let centers = (1..=n_basis).map(|j| lo + dx * j as f64).collect();
    Ok((centers, 1.0 / dx))
}

/// Fixed placement on [−1, 1]: `c_j = −1 + 2(j−1)/(N−1)`, `l = 2/(N−1)`.
pub fn fixed_interval_rbf_centers(n_basis: usize) -> Result<(Vec<f64>, f64)> {
    if n_basis < 2 {
        return Err(invalid("RBF placement needs at least two centers"));
    }
    let m = (n_basis - 1) as f64;
    let centers = (0..n_basis).map(|j| -1.0 + 2.0 * j as f64 / m).collect();
    Ok((centers, 2.0 / m))
}

/// How to construct a basis for a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    /// RBFs placed from the range of each dataset's inputs.
    RbfAdaptive { n: usize },
    /// RBFs evenly spread over [−1, 1].
    RbfFixedInterval { n: usize },
    /// A frozen RBF set shared by every dataset.
    Frozen { basis: BasisSet },
    Chebyshev { n: usize },
    Legendre { n: usize },
}

impl BasisSpec {
    pub fn n_basis(&self) -> usize {
        match self {
            BasisSpec::RbfAdaptive { n }
            | BasisSpec::RbfFixedInterval { n }
            | BasisSpec::Chebyshev { n }
            | BasisSpec::Legendre { n } => *n,
            BasisSpec::Frozen { basis } => basis.n_basis,
        }
    }

    pub fn build(&self, data: &SnapshotData) -> Result<BasisSet> {
        match self {
            BasisSpec::RbfAdaptive { n } => BasisSet::rbf_adaptive(&data.x, *n),
            BasisSpec::RbfFixedInterval { n } => BasisSet::rbf_fixed_interval(*n),
            BasisSpec::Frozen { basis } => {
                basis.validate()?;
                Ok(basis.clone())
            }
            BasisSpec::Chebyshev { n } => BasisSet::chebyshev(*n),
            BasisSpec::Legendre { n } => BasisSet::legendre(*n),
        }
    }

    /// Spec for `family` with `n` functions; RBFs use the fixed interval.
    pub fn for_family(family: BasisFamily, n: usize) -> Self {
        match family {
            BasisFamily::GaussianRbf => BasisSpec::RbfFixedInterval { n },
            BasisFamily::Chebyshev => BasisSpec::Chebyshev { n },
            BasisFamily::Legendre => BasisSpec::Legendre { n },
        }
    }
}
