//! Dense slice kernels. Matrix products go through `matrixmultiply`, which
//! is single-threaded here, so results repeat bit for bit on one machine.

use super::Scalar;

fn extent(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Strided `c ← α·a·b + β·c` with `a` of shape `m×k`, `b` of shape `k×n`.
/// Strides are in elements as `(row, column)` pairs.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    beta: T,
    c: &mut [T],
    (rsc, csc): (usize, usize),
) {
    assert!(extent(m, k, rsa, csa) <= a.len(), "lhs view out of bounds");
    assert!(extent(k, n, rsb, csb) <= b.len(), "rhs view out of bounds");
    assert!(extent(m, n, rsc, csc) <= c.len(), "output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the three views were checked to lie inside their slices, and
    // `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        T::gemm_raw(
            m, k, n, alpha,
            a.as_ptr(), rsa as isize, csa as isize,
            b.as_ptr(), rsb as isize, csb as isize,
            beta,
            c.as_mut_ptr(), rsc as isize, csc as isize,
        );
    }
}

/// `out[m×n] += a[m×k] · b[k×n]`
pub fn gemm_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    gemm(m, k, n, T::one(), a, (k, 1), b, (n, 1), T::one(), out, (n, 1));
}

/// `out[k×n] += aᵀ · b` with `a[m×k]`, `b[m×n]`.
pub fn gemm_tn_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    gemm(k, m, n, T::one(), a, (1, k), b, (n, 1), T::one(), out, (n, 1));
}

/// `out[m×n] += a · bᵀ` with `a[m×k]`, `b[n×k]`.
pub fn gemm_nt_acc<T: Scalar>(out: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    gemm(m, k, n, T::one(), a, (k, 1), b, (1, k), T::one(), out, (n, 1));
}


pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn axpy<T: Scalar>(out: &mut [T], alpha: T, x: &[T]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_definitions() {
        let (m, k, n) = (3, 4, 2);
        let a: Vec<f64> = (0..m * k).map(|x| x as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|x| (x as f64).sin()).collect();
        let mut out = vec![0.0; m * n];
        gemm_acc(&mut out, &a, &b, m, k, n);
        for i in 0..m {
            for j in 0..n {
                let e: f64 = (0..k).map(|kk| a[i * k + kk] * b[kk * n + j]).sum();
                assert!((out[i * n + j] - e).abs() < 1e-12);
            }
        }
        // aᵀ·c with c[m×n]
        let c: Vec<f64> = (0..m * n).map(|x| (x as f64).cos()).collect();
        let mut tn = vec![0.0; k * n];
        gemm_tn_acc(&mut tn, &a, &c, m, k, n);
        for kk in 0..k {
            for j in 0..n {
                let e: f64 = (0..m).map(|i| a[i * k + kk] * c[i * n + j]).sum();
                assert!((tn[kk * n + j] - e).abs() < 1e-12);
            }
        }
        // a·dᵀ with d[n×k]
        let d: Vec<f64> = (0..n * k).map(|x| b[(x % k) * n + x / k]).collect();
        let mut nt = vec![0.0; m * n];
        gemm_nt_acc(&mut nt, &a, &d, m, k, n);
        for (x, y) in nt.iter().zip(&out) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
