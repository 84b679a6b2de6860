//! Slow, independent reference implementations used to cross-check the
//! Jacobi eigensolver and the EER estimator. Nothing here calls into
//! [`crate::linalg::eig_sym`] or [`crate::eval::compute_eer`].

use crate::error::{Error, Result};
use crate::eval::{Label, ScoredTrials};
use crate::linalg::Matrix;

pub const BRUTE_EIG_MAX_DIM: usize = 8;
const RESIDUAL_TARGET: f64 = 1e-12;
const MAX_SQUARINGS: usize = 80;
const MAX_POLISH: usize = 200;

fn mat_vec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = inner(&v, &v).sqrt();
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|a| *a /= n);
    Some(v)
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for _ in 0..2 {
        for u in against {
            let p = inner(v, u);
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
        }
    }
}

/// Dominant eigenvector of a positive definite matrix restricted to the
/// orthogonal complement of `found`.
///
/// The matrix is squared repeatedly (power iteration on `B^(2^m)`); the
/// heaviest column of the result seeds a few plain power steps on `B`.
fn dominant(b: &[Vec<f64>], found: &[Vec<f64>], scale: f64) -> Result<Vec<f64>> {
    let n = b.len();
    let mut p: Vec<Vec<f64>> = b.to_vec();
    let mut prev: Option<Vec<f64>> = None;
    let mut v = None;
    for _ in 0..MAX_SQUARINGS {
        let mut sq = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                sq[i][j] = (0..n).map(|k| p[i][k] * p[k][j]).sum();
            }
        }
        let peak = sq.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak == 0.0 || !peak.is_finite() {
            break;
        }
        sq.iter_mut().flatten().for_each(|x| *x /= peak);
        p = sq;

        let best = (0..n)
            .max_by(|&a, &c| {
                let na: f64 = (0..n).map(|i| p[i][a] * p[i][a]).sum();
                let nc: f64 = (0..n).map(|i| p[i][c] * p[i][c]).sum();
                na.total_cmp(&nc)
            })
            .unwrap();
        let mut col: Vec<f64> = (0..n).map(|i| p[i][best]).collect();
        orthogonalize(&mut col, found);
        let Some(col) = unit(col) else { break };
        let settled = prev.as_ref().is_some_and(|q: &Vec<f64>| {
            let d = inner(q, &col).abs();
            1.0 - d < 1e-15
        });
        prev = Some(col.clone());
        v = Some(col);
        if settled {
            break;
        }
    }
    let mut v = v.ok_or_else(|| Error::NoConvergence {
        sweeps: MAX_SQUARINGS,
        residual: f64::NAN,
    })?;

    let mut residual = f64::INFINITY;
    for _ in 0..MAX_POLISH {
        let bv = mat_vec(b, &v);
        let mu = inner(&v, &bv);
        residual = bv
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - mu * y).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= RESIDUAL_TARGET * scale {
            return Ok(v);
        }
        let mut next = bv;
        orthogonalize(&mut next, found);
        v = unit(next).ok_or_else(|| Error::NoConvergence {
            sweeps: MAX_POLISH,
            residual,
        })?;
    }
    Err(Error::NoConvergence {
        sweeps: MAX_POLISH,
        residual,
    })
}

/// Eigenpairs of a small symmetric matrix by power iteration with
/// deflation.
///
/// The matrix is shifted by its row-sum bound plus one so every eigenvalue
/// of the shifted matrix is positive, which lets the most negative
/// eigenvalue be found last. Eigenvalues are Rayleigh quotients on the
/// unshifted matrix, sorted descending; each eigenvector has its
/// largest-magnitude entry (lowest index on ties) positive.
pub fn brute_eig(s: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let n = s.rows();
    if !s.is_square() || n > BRUTE_EIG_MAX_DIM {
        return Err(Error::Shape(format!(
            "brute_eig handles square matrices up to {BRUTE_EIG_MAX_DIM}x{BRUTE_EIG_MAX_DIM}, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (s[(i, j)] + s[(j, i)])).collect())
        .collect();
    let bound = a
        .iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let shift = bound + 1.0;
    let scale = 2.0 * bound + 1.0;

    let mut b = a.clone();
    for (i, row) in b.iter_mut().enumerate() {
        row[i] += shift;
    }
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n);
    for _ in 0..n {
        let v = dominant(&b, &found, scale)?;
        let bv = mat_vec(&b, &v);
        let mu = inner(&v, &bv);
        for i in 0..n {
            for j in 0..n {
                b[i][j] -= mu * v[i] * v[j];
            }
        }
        let lambda = inner(&v, &mat_vec(&a, &v));
        found.push(v.clone());
        pairs.push((lambda, v));
    }

    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut vectors = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (j, (lambda, mut v)) in pairs.into_iter().enumerate() {
        let mut lead = 0;
        for i in 1..n {
            if v[i].abs() > v[lead].abs() {
                lead = i;
            }
        }
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (i, x) in v.into_iter().enumerate() {
            vectors[(i, j)] = x;
        }
        values.push(lambda);
    }
    Ok((vectors, values))
}

/// EER by direct evaluation of FAR and FRR at thresholds placed below all
/// scores, between every pair of consecutive distinct scores, and above all
/// scores, interpolated linearly at the sign change of `FAR - FRR`.
pub fn brute_eer(scored: &ScoredTrials) -> Result<f64> {
    let targets: Vec<f64> = scored
        .scores
        .iter()
        .filter(|s| s.label == Label::Target)
        .map(|s| s.score)
        .collect();
    let nontargets: Vec<f64> = scored
        .scores
        .iter()
        .filter(|s| s.label == Label::Nontarget)
        .map(|s| s.score)
        .collect();
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::Degenerate("brute_eer needs both classes".into()));
    }

    let mut distinct: Vec<f64> = scored.scores.iter().map(|s| s.score).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let lo = distinct[0];
    let hi = distinct[distinct.len() - 1];
    let mut thresholds = vec![lo - 1.0];
    thresholds.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(hi + 1.0);

    let rates = |theta: f64| {
        let far = nontargets.iter().filter(|&&s| s >= theta).count() as f64 / nontargets.len() as f64;
        let frr = targets.iter().filter(|&&s| s < theta).count() as f64 / targets.len() as f64;
        (far, frr)
    };

    let mut previous = rates(thresholds[0]);
    for &theta in &thresholds[1..] {
        let (far, frr) = rates(theta);
        let d = far - frr;
        if d == 0.0 {
            return Ok(100.0 * frr);
        }
        if d < 0.0 {
            let (pfar, pfrr) = previous;
            let pd = pfar - pfrr;
            let t = pd / (pd - d);
            return Ok(100.0 * (pfrr + t * (frr - pfrr)));
        }
        previous = (far, frr);
    }
    unreachable!("FAR - FRR is -1 above every score")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix() {
        let (v, l) = brute_eig(&Matrix::from_diagonal(&[5.0, 3.0, 1.0])).unwrap();
        for (a, b) in l.iter().zip([5.0, 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        for j in 0..3 {
            assert!((v[(j, j)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two() {
        let s = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let (v, l) = brute_eig(&s).unwrap();
        assert!((l[0] - 3.0).abs() < 1e-12 && (l[1] - 1.0).abs() < 1e-12);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((v[(0, 0)] - r).abs() < 1e-12 && (v[(1, 0)] - r).abs() < 1e-12);
        assert!((v[(0, 1)] - r).abs() < 1e-12 && (v[(1, 1)] + r).abs() < 1e-12);
    }

    #[test]
    fn negative_and_repeated_eigenvalues() {
        let (_, l) = brute_eig(&Matrix::from_diagonal(&[-4.0, 2.0, 2.0, 0.0])).unwrap();
        for (a, b) in l.iter().zip([2.0, 2.0, 0.0, -4.0]) {
            assert!((a - b).abs() < 1e-12, "{l:?}");
        }
    }

    #[test]
    fn eer_fixtures() {
        let sep = ScoredTrials::from_classes(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(brute_eer(&sep).unwrap(), 0.0);
        let plateau = ScoredTrials::from_classes(&[0.8, 0.2], &[0.7, 0.1]);
        assert_eq!(brute_eer(&plateau).unwrap(), 50.0);
        assert!(brute_eer(&ScoredTrials::from_classes(&[], &[0.3])).is_err());
    }
}
