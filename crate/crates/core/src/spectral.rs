//! Rank-limited reconstruction `A_J = Σ_{j≤J} λ_j v_j w_jᵀ` from the `J`
//! dominant eigentriplets of a real matrix.
//!
//! Eigenvalues come from a real Schur form. Right eigenvectors are null
//! vectors of `A − λI` (a cluster of numerically equal eigenvalues shares a
//! null space), left vectors come from `V⁻¹`. Complex conjugate pairs are
//! kept together so the reconstruction stays real.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

type C64 = Complex<f64>;

/// Eigenvector matrices with a larger condition number are treated as
/// defective.
pub const MAX_VECTOR_CONDITION: f64 = 1e10;

const CLUSTER_TOL: f64 = 1e-6;
const REAL_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EigenTruncation {
    /// Eigenvalues sorted by descending modulus, conjugates adjacent with the
    /// positive imaginary part first.
    pub eigenvalues: Vec<C64>,
    /// Right eigenvectors as columns.
    pub right: DMatrix<C64>,
    /// Left eigenvectors as columns, normalised so `wᵢᵀ vⱼ = δᵢⱼ`.
    pub left: DMatrix<C64>,
    pub cond_vectors: f64,
    original: DMatrix<f64>,
}

impl EigenTruncation {
    pub fn decompose(a: &DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.is_empty() {
            return Err(invalid("eigen-truncation needs a non-empty square matrix"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::TruncationUnavailable("matrix has non-finite entries".into()));
        }
        let n = a.nrows();
        let scale = a.norm().max(f64::MIN_POSITIVE);
        let schur = a
            .clone()
            .try_schur(f64::EPSILON, 10_000)
            .ok_or_else(|| Error::TruncationUnavailable("Schur iteration did not converge".into()))?;
        let eigenvalues = order_eigenvalues(schur.complex_eigenvalues().iter().copied(), scale);

        let ac: DMatrix<C64> = a.map(|v| C64::new(v, 0.0));
        let mut right = DMatrix::<C64>::zeros(n, n);
        let mut done = vec![false; n];
        for i in 0..n {
            if done[i] {
                continue;
            }
            let lam = eigenvalues[i];
            if lam.im < 0.0 {
                continue;
            }
            // Indices of the cluster around `lam` among the non-negative
            // imaginary half of the spectrum.
            let members: Vec<usize> = (i..n)
                .filter(|&k| !done[k] && eigenvalues[k].im >= 0.0)
                .filter(|&k| (eigenvalues[k] - lam).norm() <= CLUSTER_TOL * scale)
                .collect();
            let centre = members.iter().map(|&k| eigenvalues[k]).sum::<C64>() / members.len() as f64;
            let mut shifted = ac.clone();
            for d in 0..n {
                shifted[(d, d)] -= centre;
            }
            let svd = shifted
                .try_svd(false, true, f64::EPSILON, 10_000)
                .ok_or_else(|| Error::TruncationUnavailable("SVD did not converge".into()))?;
            let v_t = svd.v_t.expect("requested");
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&p, &q| svd.singular_values[p].total_cmp(&svd.singular_values[q]));
            for (slot, &k) in members.iter().enumerate() {
                let vec: DVector<C64> = v_t.row(order[slot]).transpose().map(|z| z.conj());
                right.set_column(k, &vec);
                done[k] = true;
                if eigenvalues[k].im > 0.0 {
                    let partner = conjugate_partner(&eigenvalues, &done, k)?;
                    right.set_column(partner, &vec.map(|z| z.conj()));
                    done[partner] = true;
                }
            }
        }

        let sv = right.clone().singular_values();
        let (lo, hi) = sv
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| (lo.min(s), hi.max(s)));
        let cond_vectors = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(cond_vectors < MAX_VECTOR_CONDITION) {
            return Err(Error::TruncationUnavailable(format!(
                "eigenvector matrix condition {cond_vectors:.3e} exceeds {MAX_VECTOR_CONDITION:e}"
            )));
        }
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
        let residual = (&ac * &right - &right * &lambda).norm();
        if !(residual <= RESIDUAL_TOL * scale) {
            return Err(Error::TruncationUnavailable(format!(
                "eigenvector residual {residual:.3e} too large; matrix looks defective"
            )));
        }
        let inv = right
            .clone()
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::TruncationUnavailable("eigenvector matrix is singular".into()))?;
        Ok(Self {
            eigenvalues,
            right,
            left: inv.transpose(),
            cond_vectors,
            original: a.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Smallest `J' ≥ j` that does not split a conjugate pair.
    pub fn effective_j(&self, j: usize) -> usize {
        let j = j.min(self.n());
        if j > 0 && j < self.n() && self.eigenvalues[j - 1].im > 0.0 {
            j + 1
        } else {
            j
        }
    }

    /// `A_J` together with the effective `J` used. `J = N` returns the
    /// original matrix unchanged.
    pub fn reconstruct(&self, j: usize) -> Result<(DMatrix<f64>, usize)> {
        let n = self.n();
        if j == 0 || j > n {
            return Err(invalid(format!("truncation order {j} outside 1..={n}")));
        }
        let j_eff = self.effective_j(j);
        if j_eff == n {
            return Ok((self.original.clone(), n));
        }
        let v = self.right.columns(0, j_eff);
        let w = self.left.columns(0, j_eff);
        let lam = DMatrix::from_diagonal(&DVector::from_iterator(j_eff, self.eigenvalues[..j_eff].iter().copied()));
        let full = v * lam * w.transpose();
        Ok((full.map(|z| z.re), j_eff))
    }
}

/// `A_J` for a single truncation order; see [`EigenTruncation`].
pub fn eigen_truncate(a: &DMatrix<f64>, j_trunc: usize) -> Result<DMatrix<f64>> {
    if j_trunc == a.nrows() && a.is_square() {
        return Ok(a.clone());
    }
    let (m, j_eff) = EigenTruncation::decompose(a)?.reconstruct(j_trunc)?;
    if j_eff != j_trunc {
        log::debug!("truncation order raised from {j_trunc} to {j_eff} to keep a conjugate pair");
    }
    Ok(m)
}

/// Groups eigenvalues into real singletons and conjugate pairs, then sorts
/// the groups by descending modulus.
fn order_eigenvalues(raw: impl Iterator<Item = C64>, scale: f64) -> Vec<C64> {
    let mut reals = Vec::new();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for z in raw {
        if z.im.abs() <= REAL_TOL * scale {
            reals.push(C64::new(z.re, 0.0));
        } else if z.im > 0.0 {
            upper.push(z);
        } else {
            lower.push(z);
        }
    }
    let mut groups: Vec<Vec<C64>> = reals.into_iter().map(|z| vec![z]).collect();
    for z in upper {
        // Pair with the closest conjugate among the remaining lower half.
        let k = (0..lower.len())
            .min_by(|&p, &q| (lower[p] - z.conj()).norm().total_cmp(&(lower[q] - z.conj()).norm()));
        match k {
            Some(k) => {
                lower.swap_remove(k);
                groups.push(vec![z, z.conj()]);
            }
            None => groups.push(vec![z]),
        }
    }
    groups.extend(lower.into_iter().map(|z| vec![z]));
    groups.sort_by(|a, b| {
        b[0].norm()
            .total_cmp(&a[0].norm())
            .then(b[0].re.total_cmp(&a[0].re))
    });
    groups.into_iter().flatten().collect()
}

fn conjugate_partner(eigenvalues: &[C64], done: &[bool], k: usize) -> Result<usize> {
    let target = eigenvalues[k].conj();
    (0..eigenvalues.len()).find(|&p| !done[p] && eigenvalues[p] == target)
        .ok_or_else(|| Error::TruncationUnavailable("unpaired complex eigenvalue".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn diagonal_truncation() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 0.1]));
        let t = eigen_truncate(&a, 2).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 0.0]));
        assert!((t - want).amax() < 1e-14);
    }

    #[test]
    fn complex_pair_is_not_split() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.5, 1.0]);
        let d = EigenTruncation::decompose(&a).unwrap();
        assert_eq!(d.effective_j(1), 2);
        let (m, j) = d.reconstruct(1).unwrap();
        assert_eq!(j, 2);
        assert!((m - &a).amax() < 1e-14);
        assert!(d.eigenvalues[0].im > 0.0);
        assert_eq!(d.eigenvalues[1], d.eigenvalues[0].conj());
    }

    #[test]
    fn complex_pair_reconstruction_is_real() {
        // rotation block plus a small real mode
        let a = DMatrix::from_row_slice(3, 3, &[0.8, -0.3, 0.1, 0.3, 0.8, 0.0, 0.0, 0.05, 0.2]);
        let d = EigenTruncation::decompose(&a).unwrap();
        let (m, j) = d.reconstruct(2).unwrap();
        assert_eq!(j, 2);
        // The dropped mode is the real eigenvalue near 0.2.
        let l = d.eigenvalues[2];
        assert!(l.im == 0.0 && (l.re - 0.2).abs() < 0.05);
        let full = d.right.map(|z| z) * DMatrix::from_diagonal(&DVector::from_vec(d.eigenvalues.clone())) * d.left.transpose();
        assert!((full.map(|z| z.re) - &a).norm() < 1e-12);
        assert!((&a - &m).norm() > 1e-3);
    }

    #[test]
    fn repeated_eigenvalue_with_full_eigenspace() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.5]));
        let d = EigenTruncation::decompose(&a).unwrap();
        let (m, _) = d.reconstruct(2).unwrap();
        let want = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((m - want).amax() < 1e-12);
    }

    #[test]
    fn defective_matrix_is_rejected() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.3]);
        let err = EigenTruncation::decompose(&a).unwrap_err();
        assert!(matches!(err, Error::TruncationUnavailable(_)), "{err}");
    }

    #[test]
    fn full_order_returns_input() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert_eq!(eigen_truncate(&a, 2).unwrap(), a);
        assert!(eigen_truncate(&a, 0).is_err());
        assert!(eigen_truncate(&a, 3).is_err());
    }

    #[test]
    fn biorthogonality() {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.2, -0.1, 0.05, 0.6, 0.3, 0.1, -0.2, 0.4]);
        let d = EigenTruncation::decompose(&a).unwrap();
        let g = d.left.transpose() * &d.right;
        assert!((g - DMatrix::<C64>::identity(3, 3)).norm() < 1e-12);
        for w in d.eigenvalues.windows(2) {
            assert!(w[0].norm() >= w[1].norm() - 1e-15);
        }
    }

    proptest! {
        #[test]
        fn random_full_reconstruction(vals in proptest::collection::vec(-1.0f64..1.0, 25)) {
            let a = DMatrix::from_row_slice(5, 5, &vals) + DMatrix::identity(5, 5) * 0.3;
            if let Ok(d) = EigenTruncation::decompose(&a) {
                let lam = DMatrix::from_diagonal(&DVector::from_vec(d.eigenvalues.clone()));
                let full = (&d.right * lam * d.left.transpose()).map(|z| z.re);
                prop_assert!((full - &a).norm() <= 1e-8 * a.norm());
                for j in 1..=5 {
                    let (m, je) = d.reconstruct(j).unwrap();
                    prop_assert!(je >= j && je <= j + 1);
                    prop_assert!(m.iter().all(|v| v.is_finite()));
                }
            }
        }
    }
}
