//! Kernel ridge regression surrogate of the CVaR objective.
//!
//! The additive chi-squared kernel
//! `K(a, b) = -sum_j (a_j - b_j)^2 / (a_j + b_j)` (0/0 terms contribute 0)
//! is zero on the diagonal and negative elsewhere, so the Gram matrix is not
//! positive definite: fitting goes through a general pivoted solve of
//! `(K + lambda I) gamma = y`, never a Cholesky factorization. The model does
//! not interpolate its anchors; it is a cheap global shape approximation
//! whose argmin seeds the expensive direct optimization.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::linalg::solve_in_place;
use crate::scalar::{real, Real};
use crate::simplex::WeightVector;

/// Additive chi-squared kernel between two simplex points; always `<= 0`.
pub fn chi2_kernel<F: Real>(a: &WeightVector<F>, b: &WeightVector<F>) -> F {
    let mut acc = F::zero();
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let denom = x + y;
        if denom > F::zero() {
            let d = x - y;
            acc += d * d / denom;
        }
    }
    -acc
}

/// Fitted surrogate: anchors, ridge coefficients and the fit residual.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SurrogateModel<F = f64> {
    anchors: Vec<WeightVector<F>>,
    gamma: Vec<F>,
    ridge_lambda: F,
    residual_norm: F,
}

impl<F: Real> SurrogateModel<F> {
    pub fn anchors(&self) -> &[WeightVector<F>] {
        &self.anchors
    }

    pub fn gamma(&self) -> &[F] {
        &self.gamma
    }

    pub fn ridge_lambda(&self) -> F {
        self.ridge_lambda
    }

    /// Norm of `(K + lambda I) gamma - y` from the fit.
    pub fn residual_norm(&self) -> F {
        self.residual_norm
    }

    /// Surrogate value `sum_i gamma_i K(theta, anchor_i)`; `O(N n)`.
    pub fn predict(&self, theta: &WeightVector<F>) -> F {
        self.anchors
            .iter()
            .zip(&self.gamma)
            .map(|(anchor, &g)| g * chi2_kernel(theta, anchor))
            .sum()
    }

    /// Audit dump: one `anchor <components...> | gamma` line per anchor plus
    /// the ridge parameter.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "ridge_lambda = {}", crate::fmt_g17(self.ridge_lambda))?;
        writeln!(w, "residual_norm = {}", crate::fmt_g17(self.residual_norm))?;
        for (anchor, &g) in self.anchors.iter().zip(&self.gamma) {
            let comps: Vec<String> = anchor.as_slice().iter().map(|&t| crate::fmt_g17(t)).collect();
            writeln!(w, "anchor {} | {}", comps.join(" "), crate::fmt_g17(g))?;
        }
        Ok(())
    }
}

impl SurrogateModel<f64> {
    /// Reads a model written by [`SurrogateModel::write_text`].
    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut ridge_lambda = None;
        let mut residual_norm = 0.0;
        let mut anchors = Vec::new();
        let mut gamma = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(v) = line.strip_prefix("ridge_lambda =") {
                ridge_lambda = Some(parse_f64(v)?);
            } else if let Some(v) = line.strip_prefix("residual_norm =") {
                residual_norm = parse_f64(v)?;
            } else if let Some(rest) = line.strip_prefix("anchor ") {
                let (comps, g) = rest
                    .split_once('|')
                    .ok_or_else(|| Error::StreamFormat("anchor line missing '|'".into()))?;
                let theta: Vec<f64> = comps
                    .split_whitespace()
                    .map(parse_f64)
                    .collect::<Result<_>>()?;
                anchors.push(WeightVector::new_clamped(theta)?);
                gamma.push(parse_f64(g)?);
            } else {
                return Err(Error::StreamFormat(format!("unrecognized model line: {line}")));
            }
        }
        let ridge_lambda =
            ridge_lambda.ok_or_else(|| Error::StreamFormat("model file missing ridge_lambda".into()))?;
        if anchors.is_empty() {
            return Err(Error::StreamFormat("model file has no anchors".into()));
        }
        Ok(SurrogateModel {
            anchors,
            gamma,
            ridge_lambda,
            residual_norm,
        })
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::StreamFormat(format!("bad float {s:?}: {e}")))
}

/// Fits `(K + lambda I) gamma = y` over the dataset.
pub fn fit<F: Real>(
    dataset: &[(WeightVector<F>, F)],
    ridge_lambda: F,
) -> Result<SurrogateModel<F>> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::domain("surrogate fit needs at least one sample"));
    }
    if !ridge_lambda.is_finite() || ridge_lambda < F::zero() {
        return Err(Error::domain(format!(
            "ridge_lambda must be finite and >= 0, got {ridge_lambda}"
        )));
    }
    for i in 0..n {
        if !dataset[i].1.is_finite() {
            return Err(Error::domain(format!("target {i} is not finite")));
        }
        for j in i + 1..n {
            if dataset[i].0 == dataset[j].0 {
                return Err(Error::domain(format!("duplicate anchors at {i} and {j}")));
            }
        }
    }

    let mut system = vec![F::zero(); n * n];
    for i in 0..n {
        for j in i..n {
            let k = chi2_kernel(&dataset[i].0, &dataset[j].0);
            system[i * n + j] = k;
            system[j * n + i] = k;
        }
        system[i * n + i] += ridge_lambda;
    }
    let matrix = system.clone();
    let mut gamma: Vec<F> = dataset.iter().map(|(_, y)| *y).collect();
    solve_in_place(&mut system, &mut gamma, n).map_err(|e| {
        Error::numerical(format!(
            "surrogate fit failed (Gram matrix rank-deficient at lambda = {ridge_lambda}): {e}"
        ))
    })?;

    let mut residual_sq = F::zero();
    for i in 0..n {
        let mut row = F::zero();
        for j in 0..n {
            row += matrix[i * n + j] * gamma[j];
        }
        let d = row - dataset[i].1;
        residual_sq += d * d;
    }

    Ok(SurrogateModel {
        anchors: dataset.iter().map(|(t, _)| t.clone()).collect(),
        gamma,
        ridge_lambda,
        residual_norm: residual_sq.sqrt(),
    })
}

/// Coefficient of determination of `model` on a holdout set.
pub fn r_squared<F: Real>(
    model: &SurrogateModel<F>,
    holdout: &[(WeightVector<F>, F)],
) -> Result<F> {
    if holdout.is_empty() {
        return Err(Error::domain("r_squared needs a non-empty holdout"));
    }
    let n = real::<F>(holdout.len() as f64);
    let mean = holdout.iter().map(|(_, y)| *y).sum::<F>() / n;
    let mut ss_tot = F::zero();
    let mut ss_res = F::zero();
    for (theta, y) in holdout {
        let d_tot = *y - mean;
        ss_tot += d_tot * d_tot;
        let d_res = *y - model.predict(theta);
        ss_res += d_res * d_res;
    }
    if ss_tot == F::zero() {
        return Err(Error::domain("r_squared undefined for constant targets"));
    }
    Ok(F::one() - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(theta: &[f64]) -> WeightVector {
        WeightVector::new(theta.to_vec()).unwrap()
    }

    #[test]
    fn kernel_examples() {
        let a = w(&[0.5, 0.5]);
        let b = w(&[1.0, 0.0]);
        assert!((chi2_kernel(&a, &b) + 2.0 / 3.0).abs() < 1e-15);

        let e1 = w(&[1.0, 0.0, 0.0]);
        let e2 = w(&[0.0, 1.0, 0.0]);
        assert_eq!(chi2_kernel(&e1, &e2), -2.0);
        assert_eq!(chi2_kernel(&a, &a), 0.0);
    }

    #[test]
    fn kernel_symmetry_and_sign() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = WeightVector::<f64>::sample_uniform(5, &mut rng);
            let b = WeightVector::<f64>::sample_uniform(5, &mut rng);
            let kab = chi2_kernel(&a, &b);
            let kba = chi2_kernel(&b, &a);
            assert_eq!(kab, kba);
            assert!(kab <= 0.0);
            assert_eq!(chi2_kernel(&a, &a), 0.0);
        }
    }

    #[test]
    fn fit_single_sample_is_scalar_solve() {
        let model = fit(&[(w(&[0.3, 0.7]), 2.5)], 1.0).unwrap();
        // K(theta, theta) = 0, so lambda * gamma = y.
        assert!((model.gamma()[0] - 2.5).abs() < 1e-14);
        // Prediction at the anchor is 0: the kernel does not interpolate.
        assert_eq!(model.predict(&w(&[0.3, 0.7])), 0.0);
    }

    #[test]
    fn fit_zero_targets_gives_zero_model() {
        let data = vec![(w(&[1.0, 0.0]), 0.0), (w(&[0.0, 1.0]), 0.0)];
        let model = fit(&data, 1.0).unwrap();
        assert!(model.gamma().iter().all(|&g| g == 0.0));
        assert_eq!(model.predict(&w(&[0.5, 0.5])), 0.0);
    }

    #[test]
    fn fit_two_anchor_system_matches_cramer_oracle() {
        // Anchors e1, e2: K = [[0, -2], [-2, 0]], lambda = 1.
        // Solve [[1, -2], [-2, 1]] gamma = (1, -1) by Cramer's rule.
        let det: f64 = 1.0 * 1.0 - (-2.0) * (-2.0);
        let g0: f64 = (1.0 * 1.0 - (-2.0) * (-1.0)) / det;
        let g1: f64 = (1.0 * (-1.0) - (-2.0) * 1.0) / det;
        assert!((g0 - 1.0 / 3.0).abs() < 1e-15);
        assert!((g1 + 1.0 / 3.0).abs() < 1e-15);

        let data = vec![(w(&[1.0, 0.0]), 1.0), (w(&[0.0, 1.0]), -1.0)];
        let model = fit(&data, 1.0).unwrap();
        assert!((model.gamma()[0] - g0).abs() < 1e-14);
        assert!((model.gamma()[1] - g1).abs() < 1e-14);
        assert!(model.residual_norm() < 1e-12);
    }

    #[test]
    fn prediction_is_linear_in_gamma() {
        let data = vec![(w(&[0.8, 0.2]), 1.0), (w(&[0.1, 0.9]), -0.5)];
        let model = fit(&data, 0.5).unwrap();
        let doubled = SurrogateModel {
            anchors: model.anchors().to_vec(),
            gamma: model.gamma().iter().map(|&g| 2.0 * g).collect(),
            ridge_lambda: model.ridge_lambda(),
            residual_norm: model.residual_norm(),
        };
        let p = w(&[0.4, 0.6]);
        assert!((doubled.predict(&p) - 2.0 * model.predict(&p)).abs() < 1e-14);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit::<f64>(&[], 1.0).is_err());
        let dup = vec![(w(&[0.5, 0.5]), 1.0), (w(&[0.5, 0.5]), 2.0)];
        assert!(fit(&dup, 1.0).is_err());
        assert!(fit(&[(w(&[1.0, 0.0]), f64::NAN)], 1.0).is_err());
        assert!(fit(&[(w(&[1.0, 0.0]), 1.0)], -1.0).is_err());
    }

    #[test]
    fn rank_deficient_at_zero_lambda_errors() {
        // A single anchor with lambda = 0 gives the scalar system 0 * g = y.
        let data = vec![(w(&[0.5, 0.5]), 1.0)];
        assert!(matches!(fit(&data, 0.0), Err(Error::Numerical(_))));
    }

    #[test]
    fn residual_is_small_on_solvable_systems() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut data = Vec::new();
        for i in 0..10 {
            let theta = WeightVector::<f64>::sample_uniform(6, &mut rng);
            data.push((theta, (i as f64).sin()));
        }
        let model = fit(&data, 1.0).unwrap();
        let y_norm: f64 = data.iter().map(|(_, y)| y * y).sum::<f64>().sqrt();
        assert!(model.residual_norm() <= 1e-8 * (y_norm + 1.0));
    }

    #[test]
    fn r_squared_definition_cases() {
        let data = vec![(w(&[1.0, 0.0]), 1.0), (w(&[0.0, 1.0]), -1.0)];
        let model = fit(&data, 1.0).unwrap();

        // Perfect predictions: evaluate the model on its own outputs.
        let holdout: Vec<_> = data
            .iter()
            .map(|(t, _)| (t.clone(), model.predict(t)))
            .collect();
        assert!((r_squared(&model, &holdout).unwrap() - 1.0).abs() < 1e-12);

        // A zero model predicts the mean of zero-mean targets: R^2 = 0.
        let zero_model = fit(&[(w(&[1.0, 0.0]), 0.0), (w(&[0.0, 1.0]), 0.0)], 1.0).unwrap();
        let sym = vec![(w(&[1.0, 0.0]), 1.0), (w(&[0.0, 1.0]), -1.0)];
        assert!(r_squared(&zero_model, &sym).unwrap().abs() < 1e-12);

        // Targets {c, 0} against the zero model: SS_res = c^2 while
        // SS_tot = c^2 / 2, so R^2 = 1 - 2 = -1.
        let skewed = vec![(w(&[1.0, 0.0]), 4.0), (w(&[0.0, 1.0]), 0.0)];
        assert!((r_squared(&zero_model, &skewed).unwrap() + 1.0).abs() < 1e-12);

        // Constant targets are undefined.
        let constant = vec![(w(&[1.0, 0.0]), 2.0), (w(&[0.0, 1.0]), 2.0)];
        assert!(r_squared(&model, &constant).is_err());
    }

    #[test]
    fn text_round_trip() {
        let data = vec![
            (w(&[0.25, 0.75]), 0.125),
            (w(&[0.5, 0.5]), -0.25),
            (w(&[0.9, 0.1]), 0.0625),
        ];
        let model = fit(&data, 1.5).unwrap();
        let mut buf = Vec::new();
        model.write_text(&mut buf).unwrap();
        let loaded = SurrogateModel::read_text(buf.as_slice()).unwrap();
        assert_eq!(model, loaded);
        assert!(SurrogateModel::read_text("garbage".as_bytes()).is_err());
    }
}
