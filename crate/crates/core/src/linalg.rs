//! Minimal dense solves for the small systems this crate needs
//! (kernel ridge fits with N in the tens, SQP subproblem KKT systems).

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Solves `A x = b` in place by LU with partial pivoting.
///
/// `a` is `n x n` row-major and is destroyed; `b` becomes the solution.
/// Near-singular pivots (relative to the matrix scale) are an error: these
/// systems are square and either well-posed or a caller bug.
pub(crate) fn solve_in_place<F: Real>(a: &mut [F], b: &mut [F], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a
        .iter()
        .fold(F::zero(), |acc, &v| acc.max(v.abs()))
        .max(F::one());
    let tiny = scale * F::epsilon() * real::<F>((16 * n.max(1)) as f64);

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= tiny {
            return Err(Error::numerical(format!(
                "singular system: pivot {pivot_val} at column {col} (scale {scale})"
            )));
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == F::zero() {
                continue;
            }
            a[row * n + col] = F::zero();
            for k in col + 1..n {
                let v = a[col * n + k];
                a[row * n + k] = a[row * n + k] - factor * v;
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc = acc - a[col * n + k] * b[k];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_known_system() {
        // [[2, 1], [1, 3]] x = [3, 5] -> x = [4/5, 7/5]
        let mut a: Vec<f64> = vec![2.0, 1.0, 1.0, 3.0];
        let mut b: Vec<f64> = vec![3.0, 5.0];
        solve_in_place(&mut a, &mut b, 2).unwrap();
        assert!((b[0] - 0.8).abs() < 1e-14);
        assert!((b[1] - 1.4).abs() < 1e-14);
    }

    #[test]
    fn pivots_through_zero_diagonal() {
        // Leading zero forces a row swap.
        let mut a = vec![0.0, 1.0, 1.0, 0.0];
        let mut b = vec![2.0, 3.0];
        solve_in_place(&mut a, &mut b, 2).unwrap();
        assert_eq!(b, vec![3.0, 2.0]);
    }

    #[test]
    fn rejects_singular() {
        let mut a = vec![1.0, 2.0, 2.0, 4.0];
        let mut b = vec![1.0, 2.0];
        assert!(solve_in_place(&mut a, &mut b, 2).is_err());
    }

    #[test]
    fn random_systems_match_residual() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for n in [1usize, 2, 5, 12] {
            let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x_true: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut b = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    b[i] += a[i * n + j] * x_true[j];
                }
            }
            let mut a_work = a.clone();
            if solve_in_place(&mut a_work, &mut b, n).is_err() {
                continue; // randomly singular; skip
            }
            for i in 0..n {
                assert!((b[i] - x_true[i]).abs() < 1e-9, "n={n} i={i}");
            }
        }
    }
}
