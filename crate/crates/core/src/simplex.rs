//! Allocation weights on the probability simplex.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{real, scaled_tol, Real};

/// Absolute tolerance on `sum(theta) - 1`, stated at `f64` width.
const SUM_ATOL: f64 = 1e-9;

/// A point of the admissible set: nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct WeightVector<F = f64> {
    theta: Vec<F>,
}

impl<F: Real> WeightVector<F> {
    /// Validates componentwise nonnegativity and the unit sum (within `1e-9`).
    pub fn new(theta: Vec<F>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::domain("weight vector must not be empty"));
        }
        let mut sum = F::zero();
        for (j, &t) in theta.iter().enumerate() {
            if !t.is_finite() || t < F::zero() {
                return Err(Error::domain(format!(
                    "weight {j} must be finite and >= 0, got {t}"
                )));
            }
            sum += t;
        }
        let atol = scaled_tol::<F>(SUM_ATOL, 64.0) * real::<F>(theta.len() as f64);
        if (sum - F::one()).abs() > atol {
            return Err(Error::domain(format!(
                "weights must sum to 1 within {atol}, got {sum}"
            )));
        }
        Ok(WeightVector { theta })
    }

    /// Builds from a near-feasible vector: clamps components in
    /// `(-1e-9, 0)` to zero before validating. Anything more negative is
    /// still rejected.
    pub fn new_clamped(mut theta: Vec<F>) -> Result<Self> {
        let atol = scaled_tol::<F>(SUM_ATOL, 64.0);
        for t in &mut theta {
            if *t < F::zero() && *t > -atol {
                *t = F::zero();
            }
        }
        Self::new(theta)
    }

    /// The equal-weighted portfolio `1/n`.
    pub fn equal(n: usize) -> Self {
        let w = F::one() / real::<F>(n as f64);
        WeightVector {
            theta: vec![w; n.max(1)],
        }
    }

    /// The `j`-th vertex `e_j` of the simplex.
    pub fn vertex(n: usize, j: usize) -> Self {
        let mut theta = vec![F::zero(); n];
        theta[j] = F::one();
        WeightVector { theta }
    }

    /// Uniform (flat Dirichlet) sample on the simplex.
    ///
    /// Draws one `f64` uniform per coordinate (exponential spacings,
    /// normalized), so the consumption of the random stream is fixed.
    pub fn sample_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut exp = vec![F::zero(); n];
        let mut sum = F::zero();
        for e in &mut exp {
            let u: f64 = rng.random();
            let g = real::<F>(-(1.0 - u).ln());
            *e = g;
            sum += g;
        }
        for e in &mut exp {
            *e = *e / sum;
        }
        WeightVector { theta: exp }
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.theta
    }

    pub fn into_vec(self) -> Vec<F> {
        self.theta
    }

    /// Largest absolute deviation from `other`, componentwise.
    pub fn max_abs_diff(&self, other: &Self) -> F {
        self.theta
            .iter()
            .zip(&other.theta)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }
}

impl<F> std::ops::Index<usize> for WeightVector<F> {
    type Output = F;

    fn index(&self, j: usize) -> &F {
        &self.theta[j]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validates_sum_and_sign() {
        assert!(WeightVector::new(vec![0.5, 0.5]).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.6]).is_err());
        assert!(WeightVector::new(vec![1.5, -0.5]).is_err());
        assert!(WeightVector::new(vec![f64::NAN, 1.0]).is_err());
        assert!(WeightVector::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn clamped_accepts_fd_noise() {
        let w = WeightVector::new_clamped(vec![1.0 + 1e-12, -1e-12]).unwrap();
        assert_eq!(w[1], 0.0);
        assert!(WeightVector::new_clamped(vec![1.001, -1e-3]).is_err());
    }

    #[test]
    fn equal_and_vertex() {
        let e = WeightVector::<f64>::equal(4);
        assert_eq!(e.as_slice(), &[0.25; 4]);
        let v = WeightVector::<f64>::vertex(3, 1);
        assert_eq!(v.as_slice(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn uniform_samples_are_feasible_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let w = WeightVector::<f64>::sample_uniform(6, &mut rng);
            assert!(WeightVector::new(w.as_slice().to_vec()).is_ok());
        }
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let wa = WeightVector::<f64>::sample_uniform(5, &mut a);
        let wb = WeightVector::<f64>::sample_uniform(5, &mut b);
        assert_eq!(wa, wb);
    }
}
