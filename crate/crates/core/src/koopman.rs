//! Empirical Koopman matrices.
//!
//! Under the empirical measure of the inputs, `M = (1/T) ψ(X) ψ(X)ᵀ` is the
//! mass matrix, `K̂ = (1/T) ψ(Y) ψ(X)ᵀ` the cross matrix and `A = K̂ M⁻¹` the
//! EDMD matrix. The generator side is captured by [`GeneratorTemplate`], a
//! set of data integrals that rebuild `L(θ) = ∫ (L(θ)ψ) ψᵀ dμ` as a linear
//! combination for any `θ`.
//!
//! Sums over samples are split into fixed-size chunks that are reduced
//! pairwise in chunk order, so results are bit-identical for any number of
//! worker threads.

use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{warn_outside_interval, BasisSet};
use crate::data::SnapshotData;
use crate::error::{invalid, Error, Result};
use crate::linalg::{expm, symmetric_condition, SpdFactor};
use crate::model::SdeModel;

/// Mass matrices with a larger condition number are rejected.
pub const MAX_MASS_CONDITION: f64 = 1e12;

const CHUNK: usize = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoopmanMatrices {
    pub mass: DMatrix<f64>,
    pub cross: DMatrix<f64>,
    pub edmd: DMatrix<f64>,
    pub t_step: f64,
    pub cond_mass: f64,
    pub n_samples: usize,
}

impl KoopmanMatrices {
    pub fn assemble(basis: &BasisSet, data: &SnapshotData) -> Result<Self> {
        if basis.is_polynomial() {
            warn_outside_interval(data);
        }
        let n = basis.n_basis;
        let sums = chunked_sums(data.len(), 2, |range| {
            let (px, py) = chunk_values(basis, data, range);
            vec![&px * px.transpose(), &py * px.transpose()]
        });
        let mut it = sums.into_iter();
        let (mass, cross) = (it.next().unwrap(), it.next().unwrap());
        Self::from_sums(mirror_upper(mass, n), cross, data.len(), data.t_step)
    }

    /// Builds the matrices from precomputed `ψ(X)`, `ψ(Y)` (`N × T` each).
    pub fn from_snapshot_matrices(psi_x: &DMatrix<f64>, psi_y: &DMatrix<f64>, t_step: f64) -> Result<Self> {
        if psi_x.shape() != psi_y.shape() || psi_x.ncols() == 0 {
            return Err(invalid("snapshot matrices must share a non-empty shape"));
        }
        let n = psi_x.nrows();
        let mass = mirror_upper(psi_x * psi_x.transpose(), n);
        let cross = psi_y * psi_x.transpose();
        Self::from_sums(mass, cross, psi_x.ncols(), t_step)
    }

    fn from_sums(mass_sum: DMatrix<f64>, cross_sum: DMatrix<f64>, t: usize, t_step: f64) -> Result<Self> {
        let inv_t = 1.0 / t as f64;
        let mass = mass_sum * inv_t;
        let cross = cross_sum * inv_t;
        let cond_mass = symmetric_condition(&mass);
        if !(cond_mass <= MAX_MASS_CONDITION) {
            return Err(Error::IllConditionedMass { cond: cond_mass });
        }
        let edmd = SpdFactor::new(&mass)?.solve_right(&cross);
        Ok(Self {
            mass,
            cross,
            edmd,
            t_step,
            cond_mass,
            n_samples: t,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.mass.nrows()
    }

    pub fn mass_factor(&self) -> Result<SpdFactor> {
        SpdFactor::new(&self.mass)
    }

    /// Perron–Frobenius counterpart `K̂ᵀ M⁻¹` of the EDMD matrix.
    pub fn perron_frobenius_matrix(&self) -> Result<DMatrix<f64>> {
        Ok(self.mass_factor()?.solve_right(&self.cross.transpose()))
    }
}

/// Copies the upper triangle onto the lower one so the result is exactly
/// symmetric.
fn mirror_upper(mut m: DMatrix<f64>, n: usize) -> DMatrix<f64> {
    for i in 0..n {
        for j in 0..i {
            m[(i, j)] = m[(j, i)];
        }
    }
    m
}

fn chunk_values(basis: &BasisSet, data: &SnapshotData, range: Range<usize>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = basis.n_basis;
    let mut px = DMatrix::zeros(n, range.len());
    let mut py = DMatrix::zeros(n, range.len());
    let mut buf = vec![0.0; n];
    for (c, k) in range.enumerate() {
        basis.eval_values(data.x[k], &mut buf);
        px.column_mut(c).copy_from_slice(&buf);
        basis.eval_values(data.y[k], &mut buf);
        py.column_mut(c).copy_from_slice(&buf);
    }
    (px, py)
}

/// Sums `count` matrices over fixed chunks of `0..len`, reducing pairwise in
/// chunk order.
fn chunked_sums<F>(len: usize, count: usize, f: F) -> Vec<DMatrix<f64>>
where
    F: Fn(Range<usize>) -> Vec<DMatrix<f64>> + Sync,
{
    let n_chunks = len.div_ceil(CHUNK).max(1);
    let parts: Vec<Vec<DMatrix<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| f(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect();
    let reduced = pairwise_reduce(parts);
    debug_assert_eq!(reduced.len(), count);
    reduced
}

fn pairwise_reduce(mut parts: Vec<Vec<DMatrix<f64>>>) -> Vec<DMatrix<f64>> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap_or_default()
}

/// Precomputed generator integrals for a model and basis.
///
/// * OU: `[D1, D1x, D2]` with `L(θ) = θ1θ2 D1 − θ1 D1x + ½θ3² D2`.
/// * BMR: `[D2q, D1x]` with `L(θ) = θ2 D2q − 2θ1 D1x`.
///
/// where `D1 = (1/T)Σ ψ′ψᵀ`, `D1x = (1/T)Σ x ψ′ψᵀ`, `D2 = (1/T)Σ ψ″ψᵀ`
/// and `D2q = (1/T)Σ (1 − x²) ψ″ψᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorTemplate {
    pub model: SdeModel,
    pub terms: Vec<DMatrix<f64>>,
}

impl GeneratorTemplate {
    pub fn assemble(basis: &BasisSet, data: &SnapshotData, model: SdeModel) -> Result<Self> {
        let n = basis.n_basis;
        let count = match model {
            SdeModel::OrnsteinUhlenbeck => 3,
            SdeModel::BoundedMeanReversion => 2,
        };
        let sums = chunked_sums(data.len(), count, |range| {
            let m = range.len();
            let mut v = DMatrix::zeros(n, m);
            let mut d1 = DMatrix::zeros(n, m);
            let mut d2 = DMatrix::zeros(n, m);
            let (mut bv, mut b1, mut b2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            let xs = &data.x[range];
            for (c, &x) in xs.iter().enumerate() {
                basis.eval_all(x, &mut bv, &mut b1, &mut b2);
                v.column_mut(c).copy_from_slice(&bv);
                d1.column_mut(c).copy_from_slice(&b1);
                d2.column_mut(c).copy_from_slice(&b2);
            }
            let vt = v.transpose();
            let mut d1x = d1.clone();
            for (c, &x) in xs.iter().enumerate() {
                d1x.column_mut(c).scale_mut(x);
            }
            match model {
                SdeModel::OrnsteinUhlenbeck => vec![&d1 * &vt, &d1x * &vt, &d2 * &vt],
                SdeModel::BoundedMeanReversion => {
                    let mut d2q = d2;
                    for (c, &x) in xs.iter().enumerate() {
                        d2q.column_mut(c).scale_mut(1.0 - x * x);
                    }
                    vec![&d2q * &vt, &d1x * &vt]
                }
            }
        });
        let inv_t = 1.0 / data.len() as f64;
        Ok(Self {
            model,
            terms: sums.into_iter().map(|m| m * inv_t).collect(),
        })
    }

    /// Scalar weights of the template matrices for parameters `theta`.
    pub fn coefficients(&self, theta: &[f64]) -> Vec<f64> {
        term_coefficients(self.model, theta)
    }

    /// `L(θ) = ∫ (L(θ)ψ) ψᵀ dμ`.
    pub fn generator_matrix(&self, theta: &[f64]) -> DMatrix<f64> {
        combine(&self.terms, &self.coefficients(theta))
    }

    pub fn n_basis(&self) -> usize {
        self.terms.first().map_or(0, |m| m.nrows())
    }
}

pub(crate) fn term_coefficients(model: SdeModel, theta: &[f64]) -> Vec<f64> {
    match model {
        SdeModel::OrnsteinUhlenbeck => vec![theta[0] * theta[1], -theta[0], 0.5 * theta[2] * theta[2]],
        SdeModel::BoundedMeanReversion => vec![theta[1], -2.0 * theta[0]],
    }
}

fn combine(terms: &[DMatrix<f64>], coeffs: &[f64]) -> DMatrix<f64> {
    let n = terms.first().map_or(0, |m| m.nrows());
    let mut out = DMatrix::zeros(n, n);
    for (m, &c) in terms.iter().zip(coeffs) {
        out += m * c;
    }
    out
}

/// `exp(t L(θ) M⁻¹)` with the template terms already multiplied by `t M⁻¹`,
/// so each evaluation is a linear combination plus one exponential.
#[derive(Debug, Clone)]
pub struct KoopmanPropagator {
    model: SdeModel,
    scaled_terms: Vec<DMatrix<f64>>,
}

impl KoopmanPropagator {
    pub fn new(template: &GeneratorTemplate, mass: &DMatrix<f64>, t_step: f64) -> Result<Self> {
        let factor = SpdFactor::new(mass)?;
        Ok(Self::with_factor(template, &factor, t_step))
    }

    pub fn with_factor(template: &GeneratorTemplate, factor: &SpdFactor, t_step: f64) -> Self {
        let scaled_terms = template
            .terms
            .iter()
            .map(|d| factor.solve_right(d) * t_step)
            .collect();
        Self {
            model: template.model,
            scaled_terms,
        }
    }

    pub fn model(&self) -> SdeModel {
        self.model
    }

    /// `t L(θ) M⁻¹`.
    pub fn scaled_generator(&self, theta: &[f64]) -> DMatrix<f64> {
        combine(&self.scaled_terms, &term_coefficients(self.model, theta))
    }

    pub fn koopman_matrix(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        expm(&self.scaled_generator(theta))
    }
}

/// `exp(t L(θ) M⁻¹)` for a template and mass matrix.
pub fn projected_koopman_matrix(
    template: &GeneratorTemplate,
    mass: &DMatrix<f64>,
    theta: &[f64],
    t_step: f64,
) -> Result<DMatrix<f64>> {
    template.model.check_theta(theta)?;
    KoopmanPropagator::new(template, mass, t_step)?.koopman_matrix(theta)
}
