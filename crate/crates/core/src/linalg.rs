//! Small complex linear-algebra helpers on top of `nalgebra`.
//!
//! Channel matrices are stored AP-major (`M × K`, column `k` is user `k`'s
//! channel), matching the `G = [g_1, …, g_K]` layout used throughout the crate.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Inversions whose condition estimate exceeds this are treated as singular.
pub const CONDITION_GUARD: f64 = 1e12;

/// Circularly symmetric complex Gaussian sample with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    // column-major fill keeps the draw order independent of nalgebra internals
    let mut m = CMat::zeros(rows, cols);
    for c in 0..cols {
        for r in 0..rows {
            m[(r, c)] = complex_normal(rng);
        }
    }
    m
}

/// `Aᵀ A*`, the `K × K` Gram matrix of the columns of an `M × K` channel.
pub fn gram_transpose_conj(a: &CMat) -> CMat {
    let k = a.ncols();
    let mut g = CMat::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let v = bilinear(a.column(i).iter(), a.column(j).iter());
            g[(i, j)] = v;
            g[(j, i)] = v.conj();
        }
    }
    g
}

/// `Σ_m x_m · conj(y_m)`.
fn bilinear<'a>(
    x: impl Iterator<Item = &'a Complex64>,
    y: impl Iterator<Item = &'a Complex64>,
) -> Complex64 {
    x.zip(y).map(|(a, b)| a * b.conj()).sum()
}

/// `xᵀ y` without conjugation, the receive-side product `g_kᵀ p`.
pub fn tdot<'a>(
    x: impl IntoIterator<Item = &'a Complex64>,
    y: impl IntoIterator<Item = &'a Complex64>,
) -> Complex64 {
    x.into_iter().zip(y).map(|(a, b)| a * b).sum()
}

pub fn frobenius_sq(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum()
}

pub fn conj(a: &CMat) -> CMat {
    a.map(|z| z.conj())
}

/// Ratio of extreme singular values; `inf` for an exactly singular matrix.
pub fn condition_number(a: &CMat) -> f64 {
    let sv = a.clone().singular_values();
    let max = sv.iter().cloned().fold(0.0_f64, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse of a Hermitian positive (semi)definite matrix, or the condition
/// estimate when it exceeds [`CONDITION_GUARD`].
pub fn hermitian_inverse(a: &CMat) -> Result<CMat, f64> {
    let cond = condition_number(a);
    if !(cond <= CONDITION_GUARD) {
        return Err(cond);
    }
    match Cholesky::new(a.clone()) {
        Some(ch) => Ok(ch.inverse()),
        None => a.clone().lu().try_inverse().ok_or(cond),
    }
}

/// Inverse without the condition guard, for regularized Gram matrices.
pub fn regularized_inverse(a: &CMat) -> Option<CMat> {
    match Cholesky::new(a.clone()) {
        Some(ch) => Some(ch.inverse()),
        None => a.clone().lu().try_inverse(),
    }
}

/// Leading singular triplet `(ψ, u, v)` of `h` with `h v = ψ u`.
///
/// The phase of `v` is fixed so that its largest-magnitude entry is real and
/// positive; `u` follows from `h v / ψ`.
pub fn leading_singular_triplet(h: &CMat) -> Option<(f64, CVec, CVec)> {
    let svd = h.clone().svd(false, true);
    let v_t = svd.v_t?;
    let (idx, &psi) = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(psi > 0.0) {
        return None;
    }
    let mut v: CVec = v_t.row(idx).transpose().map(|z| z.conj());
    let (_, pivot) =
        v.iter()
            .enumerate()
            .fold((0usize, Complex64::new(0.0, 0.0)), |best, (i, z)| {
                if z.norm() > best.1.norm() {
                    (i, *z)
                } else {
                    best
                }
            });
    if pivot.norm() > 0.0 {
        let phase = pivot.conj() / pivot.norm();
        v *= phase;
    }
    let norm = v.norm();
    v /= Complex64::new(norm, 0.0);
    let u = (h * &v) / Complex64::new(psi, 0.0);
    Some((psi, u, v))
}

/// Neumaier-compensated sum, evaluated in slice order.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn real_matrix_to_complex(a: &DMatrix<f64>) -> CMat {
    a.map(|x| Complex64::new(x, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gram_is_hermitian_and_matches_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = complex_normal_matrix(6, 3, &mut rng);
        let g = gram_transpose_conj(&a);
        let direct = a.transpose() * conj(&a);
        assert!((g.clone() - direct).norm() < 1e-12);
        assert!((g.clone() - g.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn leading_triplet_satisfies_svd_relation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = complex_normal_matrix(3, 7, &mut rng);
        let (psi, u, v) = leading_singular_triplet(&h).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-12);
        assert!((u.norm() - 1.0).abs() < 1e-10);
        assert!(((&h * &v) - u * Complex64::new(psi, 0.0)).norm() < 1e-10);
        let pivot = v
            .iter()
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap();
        assert!(pivot.im.abs() < 1e-12 && pivot.re > 0.0);
    }

    #[test]
    fn singular_gram_is_rejected() {
        let mut a = CMat::zeros(4, 2);
        a[(0, 0)] = Complex64::new(1.0, 0.5);
        a[(0, 1)] = Complex64::new(2.0, 1.0);
        assert!(hermitian_inverse(&gram_transpose_conj(&a)).is_err());
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(xs), 2.0);
    }

    #[test]
    fn complex_normal_has_unit_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200_000;
        let var: f64 = (0..n)
            .map(|_| complex_normal(&mut rng).norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }
}
