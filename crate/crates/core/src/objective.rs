//! Scalar objectives over parameter space.
//!
//! Every objective compares the projected Koopman matrix
//! `K(θ) = exp(t L(θ) M⁻¹)` with the data. Evaluation never fails: values
//! outside the parameter set or non-finite exponentials return `+∞` so line
//! searches can back off.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::data::SnapshotData;
use crate::error::{invalid, Error, Result};
use crate::koopman::{GeneratorTemplate, KoopmanMatrices, KoopmanPropagator};
use crate::linalg::{frobenius_sq, spectral_norm, sym_sqrt_pair, SpdFactor};
use crate::model::SdeModel;
use crate::spectral::EigenTruncation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Frobenius,
    OperatorNorm,
    ConstrainedEdmd,
    Gmm,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [Self::Frobenius, Self::OperatorNorm, Self::ConstrainedEdmd, Self::Gmm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Frobenius => "frobenius",
            Self::OperatorNorm => "operator",
            Self::ConstrainedEdmd => "constrained",
            Self::Gmm => "gmm",
        }
    }

    /// Whether evaluation needs the snapshot matrices `ψ(X)`, `ψ(Y)`.
    pub fn needs_snapshots(self) -> bool {
        matches!(self, Self::ConstrainedEdmd | Self::Gmm)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown objective '{s}' (expected frobenius, operator, constrained or gmm)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Eigen-truncation order applied to the EDMD matrix (Frobenius only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_trunc: Option<usize>,
    /// Moment covariance `Σ`; the GMM norm is then `sqrt(r̄ᵀ Σ⁻¹ r̄)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gmm_weight: Option<DMatrix<f64>>,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            j_trunc: None,
            gmm_weight: None,
        }
    }

    pub fn frobenius() -> Self {
        Self::new(ObjectiveKind::Frobenius)
    }

    pub fn truncated(j: usize) -> Self {
        Self {
            j_trunc: Some(j),
            ..Self::frobenius()
        }
    }
}

/// Everything captured from one dataset: Koopman matrices, the generator
/// template and, when available, the snapshot matrices.
#[derive(Debug, Clone)]
pub struct EdmdProblem {
    pub model: SdeModel,
    pub koopman: KoopmanMatrices,
    pub template: GeneratorTemplate,
    pub snapshots: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl EdmdProblem {
    pub fn new(model: SdeModel, basis: &BasisSet, data: &SnapshotData) -> Result<Self> {
        basis.validate()?;
        let koopman = KoopmanMatrices::assemble(basis, data)?;
        let template = GeneratorTemplate::assemble(basis, data, model)?;
        Ok(Self {
            model,
            koopman,
            template,
            snapshots: Some(basis.snapshot_matrices(data)),
        })
    }

    /// Builds a problem from precomputed parts, e.g. a planted solution
    /// where `edmd` is replaced by a model matrix.
    pub fn from_parts(
        model: SdeModel,
        koopman: KoopmanMatrices,
        template: GeneratorTemplate,
        snapshots: Option<(DMatrix<f64>, DMatrix<f64>)>,
    ) -> Result<Self> {
        let n = koopman.n_basis();
        if template.model != model || template.n_basis() != n {
            return Err(invalid("template does not match model or basis size"));
        }
        if let Some((px, py)) = &snapshots {
            if px.nrows() != n || px.shape() != py.shape() {
                return Err(invalid("snapshot matrices do not match basis size"));
            }
        }
        Ok(Self {
            model,
            koopman,
            template,
            snapshots,
        })
    }

    pub fn n_basis(&self) -> usize {
        self.koopman.n_basis()
    }

    pub fn t_step(&self) -> f64 {
        self.koopman.t_step
    }

    pub fn propagator(&self) -> Result<KoopmanPropagator> {
        KoopmanPropagator::new(&self.template, &self.koopman.mass, self.koopman.t_step)
    }

    /// Replaces the EDMD matrix by `K(θ₀)` so `θ₀` is an exact zero of the
    /// Frobenius and operator-norm objectives.
    pub fn planted(&self, theta0: &[f64]) -> Result<Self> {
        self.model.check_theta(theta0)?;
        let k = self.propagator()?.koopman_matrix(theta0)?;
        let mut out = self.clone();
        out.koopman.cross = &k * &out.koopman.mass;
        out.koopman.edmd = k.clone();
        if let Some((px, py)) = &mut out.snapshots {
            *py = &k * &*px;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
enum Target {
    Matrix(DMatrix<f64>),
    OperatorNorm {
        edmd: DMatrix<f64>,
        sqrt: DMatrix<f64>,
        inv_sqrt: DMatrix<f64>,
    },
    Snapshots {
        psi_x: DMatrix<f64>,
        psi_y: DMatrix<f64>,
        weight: Option<SpdFactor>,
    },
}

/// A ready-to-evaluate objective. Evaluation is pure and may run
/// concurrently.
#[derive(Debug, Clone)]
pub struct Objective {
    kind: ObjectiveKind,
    model: SdeModel,
    propagator: KoopmanPropagator,
    target: Target,
    j_effective: Option<usize>,
}

impl Objective {
    pub fn new(problem: &EdmdProblem, spec: &ObjectiveSpec) -> Result<Self> {
        let n = problem.n_basis();
        if spec.j_trunc.is_some() && spec.kind != ObjectiveKind::Frobenius {
            return Err(invalid("truncation order only applies to the Frobenius objective"));
        }
        if spec.gmm_weight.is_some() && spec.kind != ObjectiveKind::Gmm {
            return Err(invalid("a moment weight only applies to the GMM objective"));
        }
        let factor = problem.koopman.mass_factor()?;
        let propagator = KoopmanPropagator::with_factor(&problem.template, &factor, problem.t_step());
        let mut j_effective = None;
        let target = match spec.kind {
            ObjectiveKind::Frobenius => match spec.j_trunc {
                Some(0) => return Err(invalid("truncation order must be positive")),
                Some(j) if j > n => return Err(invalid(format!("truncation order {j} exceeds basis size {n}"))),
                Some(j) if j < n => {
                    let (m, je) = EigenTruncation::decompose(&problem.koopman.edmd)?.reconstruct(j)?;
                    j_effective = Some(je);
                    Target::Matrix(m)
                }
                _ => Target::Matrix(problem.koopman.edmd.clone()),
            },
            ObjectiveKind::OperatorNorm => {
                let (sqrt, inv_sqrt) = sym_sqrt_pair(&problem.koopman.mass)?;
                Target::OperatorNorm {
                    edmd: problem.koopman.edmd.clone(),
                    sqrt,
                    inv_sqrt,
                }
            }
            ObjectiveKind::ConstrainedEdmd | ObjectiveKind::Gmm => {
                let (psi_x, psi_y) = problem
                    .snapshots
                    .clone()
                    .ok_or_else(|| invalid(format!("the {} objective needs snapshot matrices", spec.kind)))?;
                let weight = match &spec.gmm_weight {
                    Some(w) => {
                        if w.shape() != (n, n) {
                            return Err(invalid(format!("moment weight must be {n}×{n}")));
                        }
                        Some(SpdFactor::new(w)?)
                    }
                    None => None,
                };
                Target::Snapshots { psi_x, psi_y, weight }
            }
        };
        Ok(Self {
            kind: spec.kind,
            model: problem.model,
            propagator,
            target,
            j_effective,
        })
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    pub fn model(&self) -> SdeModel {
        self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim_theta()
    }

    /// Truncation order actually used after keeping conjugate pairs intact.
    pub fn j_effective(&self) -> Option<usize> {
        self.j_effective
    }

    /// `K(θ) = exp(t L(θ) M⁻¹)`.
    pub fn koopman_matrix(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.model.check_theta(theta)?;
        self.propagator.koopman_matrix(theta)
    }

    /// Objective value, `+∞` outside the parameter set or on overflow.
    pub fn value(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim() || !self.model.in_parameter_set(theta) {
            return f64::INFINITY;
        }
        match self.propagator.koopman_matrix(theta) {
            Ok(k) => self.value_at_matrix(&k),
            Err(_) => f64::INFINITY,
        }
    }

    /// Objective value for a given model matrix `K` in place of `K(θ)`.
    pub fn value_at_matrix(&self, k: &DMatrix<f64>) -> f64 {
        let v = match &self.target {
            Target::Matrix(a) => frobenius_sq(&(k - a)),
            Target::OperatorNorm { edmd, sqrt, inv_sqrt } => spectral_norm(&(sqrt * (k - edmd) * inv_sqrt)),
            Target::Snapshots { psi_x, psi_y, weight } => {
                let r = k * psi_x - psi_y;
                match self.kind {
                    ObjectiveKind::ConstrainedEdmd => frobenius_sq(&r),
                    _ => {
                        let mean = r.column_sum() / r.ncols() as f64;
                        moment_norm(&mean, weight.as_ref())
                    }
                }
            }
        };
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    /// Moment residual covariance `Σ = (1/T) Σ_k r_k r_kᵀ` at `theta`, with
    /// a ridge of `10⁻¹⁰·trace/N` on the diagonal.
    pub fn gmm_weight_update(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let Target::Snapshots { psi_x, psi_y, .. } = &self.target else {
            return Err(invalid("moment weights need snapshot matrices"));
        };
        let k = self.koopman_matrix(theta)?;
        Ok(moment_covariance(&(&k * psi_x - psi_y)))
    }
}

fn moment_norm(mean: &DVector<f64>, weight: Option<&SpdFactor>) -> f64 {
    match weight {
        Some(w) => w.inverse_quadratic_form(mean).max(0.0).sqrt(),
        None => mean.dot(mean).sqrt(),
    }
}

/// `(1/T) R Rᵀ` plus ridge, symmetric by construction.
pub fn moment_covariance(residuals: &DMatrix<f64>) -> DMatrix<f64> {
    let n = residuals.nrows();
    let t = residuals.ncols().max(1) as f64;
    let mut s = residuals * residuals.transpose() / t;
    for i in 0..n {
        for j in 0..i {
            s[(i, j)] = s[(j, i)];
        }
    }
    let trace = s.trace();
    let ridge = if trace > 0.0 { 1e-10 * trace / n as f64 } else { 1e-10 };
    for i in 0..n {
        s[(i, i)] += ridge;
    }
    s
}
