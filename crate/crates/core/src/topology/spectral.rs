//! Laplacian spectrum via the cyclic Jacobi eigenvalue method.

use super::graph::Graph;
use crate::error::Result;

const MAX_SWEEPS: usize = 100;

/// All eigenvalues of a symmetric matrix, ascending.
///
/// Runs Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `1e-13` times the matrix norm.
pub fn symmetric_eigenvalues(matrix: &[Vec<f64>]) -> Vec<f64> {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let total: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-13 * total.max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    eig
}

/// Ascending eigenvalues of `L = D - A`.
pub fn laplacian_spectrum(g: &Graph) -> Result<Vec<f64>> {
    Ok(symmetric_eigenvalues(&g.laplacian()?))
}

/// Second-smallest Laplacian eigenvalue, clamped at zero.
///
/// Reported as a nonnegative number; the consensus dynamics matrix `-L` has
/// the same value with a negative sign. Zero (up to round-off) exactly when
/// the graph is disconnected.
pub fn algebraic_connectivity(g: &Graph) -> Result<f64> {
    let spec = laplacian_spectrum(g)?;
    Ok(spec.get(1).copied().unwrap_or(0.0).max(0.0))
}
