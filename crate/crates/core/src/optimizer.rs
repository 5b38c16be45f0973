//! Constrained minimization over the simplex.
//!
//! [`sqp_minimize`] is a feasible-point sequential quadratic programming
//! loop: at each iterate a quadratic model (damped-BFGS Hessian, central
//! finite-difference gradient) is minimized subject to the linearized
//! constraints `sum(d) = 1 - sum(theta)` and `theta + d >= 0` by a primal
//! active-set method, then a halving line search accepts only
//! non-increasing objective values. The empirical CVaR objective is only
//! piecewise smooth, so a failed line search is treated as convergence at
//! the current point rather than an error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::solve_in_place;
use crate::scalar::{real, Real};
use crate::simplex::WeightVector;

/// One accepted iterate of an optimization run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TracePoint<F = f64> {
    pub iteration: usize,
    pub theta: WeightVector<F>,
    pub value: F,
}

/// Outcome of a simplex-constrained minimization.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct OptimizeResult<F = f64> {
    pub theta_hat: WeightVector<F>,
    pub objective_value: F,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TracePoint<F>>,
}

impl<F: Real> OptimizeResult<F> {
    /// Trace as CSV: `iteration, theta_0..theta_{n-1}, value`.
    pub fn trace_csv_string(&self) -> String {
        let n = self.theta_hat.n();
        let mut out = String::from("iteration");
        for j in 0..n {
            out.push_str(&format!(",theta_{j}"));
        }
        out.push_str(",value\n");
        for point in &self.trace {
            out.push_str(&point.iteration.to_string());
            for &t in point.theta.as_slice() {
                out.push(',');
                out.push_str(&crate::fmt_g17(t));
            }
            out.push(',');
            out.push_str(&crate::fmt_g17(point.value));
            out.push('\n');
        }
        out
    }
}

/// Tuning of [`sqp_minimize`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SqpConfig<F = f64> {
    pub max_iterations: usize,
    pub gradient_fd_step: F,
    pub convergence_tol: F,
}

impl<F: Real> Default for SqpConfig<F> {
    fn default() -> Self {
        SqpConfig {
            max_iterations: 100,
            gradient_fd_step: real::<F>(1e-6),
            convergence_tol: real::<F>(1e-8),
        }
    }
}

impl<F: Real> SqpConfig<F> {
    fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be >= 1"));
        }
        for (name, v) in [
            ("gradient_fd_step", self.gradient_fd_step),
            ("convergence_tol", self.convergence_tol),
        ] {
            if !v.is_finite() || v <= F::zero() {
                return Err(Error::domain(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Euclidean projection onto the simplex by the sorted-threshold method.
pub fn project_simplex<F: Real>(v: &[F]) -> Result<WeightVector<F>> {
    if v.is_empty() {
        return Err(Error::domain("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("cannot project a non-finite vector"));
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumsum = F::zero();
    let mut tau = F::zero();
    for (i, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - F::one()) / real::<F>((i + 1) as f64);
        if u - t > F::zero() {
            tau = t;
        }
    }
    let theta: Vec<F> = v.iter().map(|&x| (x - tau).max(F::zero())).collect();
    WeightVector::new_clamped(theta)
}

/// Minimizes `f` over the simplex starting from `theta0`.
pub fn sqp_minimize<F, O>(
    mut f: O,
    theta0: &WeightVector<F>,
    config: &SqpConfig<F>,
) -> Result<OptimizeResult<F>>
where
    F: Real,
    O: FnMut(&WeightVector<F>) -> Result<F>,
{
    config.validate()?;
    let n = theta0.n();
    let mut theta = theta0.clone();
    let mut value = eval(&mut f, &theta)?;
    let mut grad = fd_gradient(&mut f, &theta, config.gradient_fd_step)?;
    // Lagrangian Hessian approximation; the constraints are linear, so this
    // is just the objective curvature. Start from the identity.
    let mut hessian = identity::<F>(n);

    let mut trace = vec![TracePoint {
        iteration: 0,
        theta: theta.clone(),
        value,
    }];
    let mut converged = false;
    let mut iterations = 0;

    for k in 1..=config.max_iterations {
        iterations = k;
        let direction = solve_qp_subproblem(&hessian, &grad, theta.as_slice())?;
        let dir_norm = norm(&direction);
        if dir_norm < config.convergence_tol {
            converged = true;
            break;
        }

        // Halving line search; only non-increasing merit is accepted.
        let mut alpha = F::one();
        let mut accepted = None;
        for _ in 0..=30 {
            let candidate = step_onto_simplex(theta.as_slice(), &direction, alpha)?;
            let cand_value = eval(&mut f, &candidate)?;
            if cand_value <= value {
                accepted = Some((candidate, cand_value));
                break;
            }
            alpha = alpha * real::<F>(0.5);
        }
        let Some((new_theta, new_value)) = accepted else {
            // No non-increasing step along the model direction: a kink or a
            // minimizer. Declare convergence at the current point.
            converged = true;
            break;
        };

        let new_grad = fd_gradient(&mut f, &new_theta, config.gradient_fd_step)?;
        let step: Vec<F> = new_theta
            .as_slice()
            .iter()
            .zip(theta.as_slice())
            .map(|(&a, &b)| a - b)
            .collect();
        let gdiff: Vec<F> = new_grad
            .iter()
            .zip(&grad)
            .map(|(&a, &b)| a - b)
            .collect();
        bfgs_update_damped(&mut hessian, &step, &gdiff);

        let step_norm = norm(&step);
        theta = new_theta;
        value = new_value;
        grad = new_grad;
        trace.push(TracePoint {
            iteration: k,
            theta: theta.clone(),
            value,
        });
        if step_norm < config.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(OptimizeResult {
        theta_hat: theta,
        objective_value: value,
        iterations,
        converged,
        trace,
    })
}

/// Evaluates `f` at `n_points` uniform simplex samples and keeps the best.
///
/// Point `i` is drawn from ChaCha stream `i` of `seed`, so the sample
/// sequence is nested: the first `k` points of a larger run are exactly the
/// points of a `k`-point run with the same seed.
pub fn random_grid_search<F, O>(
    f: O,
    n: usize,
    n_points: usize,
    seed: u64,
) -> Result<OptimizeResult<F>>
where
    F: Real,
    O: Fn(&WeightVector<F>) -> Result<F> + Sync,
{
    if n_points == 0 {
        return Err(Error::domain("grid search needs at least one point"));
    }
    if n == 0 {
        return Err(Error::domain("grid search needs at least one dimension"));
    }
    let evals: Vec<Result<(WeightVector<F>, F)>> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let theta = WeightVector::sample_uniform(n, &mut rng);
            let value = f(&theta)?;
            if !value.is_finite() {
                return Err(Error::numerical(format!(
                    "objective returned non-finite value {value} at grid point {i}"
                )));
            }
            Ok((theta, value))
        })
        .collect();

    let mut best: Option<(WeightVector<F>, F)> = None;
    let mut trace = Vec::new();
    for (i, e) in evals.into_iter().enumerate() {
        let (theta, value) = e?;
        let improved = match &best {
            None => true,
            Some((_, b)) => value < *b,
        };
        if improved {
            trace.push(TracePoint {
                iteration: i,
                theta: theta.clone(),
                value,
            });
            best = Some((theta, value));
        }
    }
    let (theta_hat, objective_value) = best.expect("n_points >= 1");
    Ok(OptimizeResult {
        theta_hat,
        objective_value,
        iterations: n_points,
        converged: true,
        trace,
    })
}

fn eval<F: Real, O: FnMut(&WeightVector<F>) -> Result<F>>(
    f: &mut O,
    theta: &WeightVector<F>,
) -> Result<F> {
    let v = f(theta)?;
    if !v.is_finite() {
        return Err(Error::numerical(format!(
            "objective returned non-finite value {v} at {:?}",
            theta.as_slice()
        )));
    }
    Ok(v)
}

/// Central finite differences along simplex-tangent directions
/// `e_j - (1/n) 1`, so probes keep the unit sum; probes that leave the
/// nonnegative orthant are projected back before evaluation.
fn fd_gradient<F: Real, O: FnMut(&WeightVector<F>) -> Result<F>>(
    f: &mut O,
    theta: &WeightVector<F>,
    h: F,
) -> Result<Vec<F>> {
    let n = theta.n();
    let inv_n = F::one() / real::<F>(n as f64);
    let mut grad = vec![F::zero(); n];
    let mut probe = vec![F::zero(); n];
    for j in 0..n {
        let mut values = [F::zero(); 2];
        for (slot, sign) in [(0usize, F::one()), (1usize, -F::one())] {
            for (i, p) in probe.iter_mut().enumerate() {
                let tangent = if i == j { F::one() - inv_n } else { -inv_n };
                *p = theta[i] + sign * h * tangent;
            }
            let point = if probe.iter().any(|&x| x < F::zero()) {
                project_simplex(&probe)?
            } else {
                WeightVector::new_clamped(probe.clone())?
            };
            values[slot] = eval(f, &point)?;
        }
        grad[j] = (values[0] - values[1]) / (real::<F>(2.0) * h);
    }
    Ok(grad)
}

/// Takes `theta + alpha * direction` and snaps roundoff-negative components.
fn step_onto_simplex<F: Real>(
    theta: &[F],
    direction: &[F],
    alpha: F,
) -> Result<WeightVector<F>> {
    let raw: Vec<F> = theta
        .iter()
        .zip(direction)
        .map(|(&t, &d)| t + alpha * d)
        .collect();
    WeightVector::new_clamped(raw)
}

/// Solves the QP `min 1/2 d'Bd + g'd` s.t. `sum(d) = 1 - sum(theta)`,
/// `theta + d >= 0` by a primal active-set method. `B` must be positive
/// definite (the damped BFGS update preserves this).
fn solve_qp_subproblem<F: Real>(b: &[F], g: &[F], theta: &[F]) -> Result<Vec<F>> {
    let n = theta.len();
    let r = F::one() - theta.iter().copied().sum::<F>();
    let bound_tol = F::epsilon() * real::<F>(64.0);

    // Feasible start: spread the (tiny) sum defect evenly.
    let mut d: Vec<F> = vec![r / real::<F>(n as f64); n];
    let mut working: Vec<bool> = (0..n).map(|j| theta[j] + d[j] <= bound_tol).collect();

    for _ in 0..20 * (n + 2) {
        let (d_eq, multipliers) = solve_equality_qp(b, g, theta, &working, r)?;

        let delta: Vec<F> = d_eq.iter().zip(&d).map(|(&a, &b)| a - b).collect();
        if norm(&delta) <= real::<F>(1e-14) {
            // Optimal on the working set; check bound multipliers.
            let mut worst = F::zero();
            let mut worst_j = None;
            for (j, &lambda) in multipliers.iter().enumerate() {
                if working[j] && lambda < worst {
                    worst = lambda;
                    worst_j = Some(j);
                }
            }
            match worst_j {
                None => return Ok(d),
                Some(j) => working[j] = false,
            }
            continue;
        }

        // Step toward d_eq, blocking on the first inactive bound hit.
        let mut alpha = F::one();
        let mut blocker = None;
        for j in 0..n {
            if working[j] || delta[j] >= F::zero() {
                continue;
            }
            let room = theta[j] + d[j]; // >= 0
            let candidate = room / -delta[j];
            if candidate < alpha {
                alpha = candidate;
                blocker = Some(j);
            }
        }
        for j in 0..n {
            d[j] += alpha * delta[j];
        }
        if let Some(j) = blocker {
            d[j] = -theta[j];
            working[j] = true;
        }
    }
    // Active-set cycling on a degenerate subproblem; return the current
    // feasible point and let the line search sort it out.
    Ok(d)
}

/// Equality-constrained QP via its KKT system:
/// stationarity `B d - nu 1 - sum_{j in W} lambda_j e_j = -g`,
/// `sum d = r`, `d_j = -theta_j` on the working set.
fn solve_equality_qp<F: Real>(
    b: &[F],
    g: &[F],
    theta: &[F],
    working: &[bool],
    r: F,
) -> Result<(Vec<F>, Vec<F>)> {
    let n = theta.len();
    let active: Vec<usize> = (0..n).filter(|&j| working[j]).collect();
    let m = n + 1 + active.len();
    let mut kkt = vec![F::zero(); m * m];
    let mut rhs = vec![F::zero(); m];

    for i in 0..n {
        for j in 0..n {
            kkt[i * m + j] = b[i * n + j];
        }
        kkt[i * m + n] = -F::one();
        rhs[i] = -g[i];
    }
    for (idx, &j) in active.iter().enumerate() {
        kkt[j * m + n + 1 + idx] = -F::one();
    }
    for j in 0..n {
        kkt[n * m + j] = F::one();
    }
    rhs[n] = r;
    for (idx, &j) in active.iter().enumerate() {
        kkt[(n + 1 + idx) * m + j] = F::one();
        rhs[n + 1 + idx] = -theta[j];
    }

    solve_in_place(&mut kkt, &mut rhs, m)?;

    let d = rhs[..n].to_vec();
    let mut multipliers = vec![F::zero(); n];
    for (idx, &j) in active.iter().enumerate() {
        multipliers[j] = rhs[n + 1 + idx];
    }
    Ok((d, multipliers))
}

/// Powell-damped BFGS update keeping the approximation positive definite.
fn bfgs_update_damped<F: Real>(b: &mut [F], s: &[F], y: &[F]) {
    let n = s.len();
    let mut bs = vec![F::zero(); n];
    for i in 0..n {
        for j in 0..n {
            bs[i] += b[i * n + j] * s[j];
        }
    }
    let s_bs: F = s.iter().zip(&bs).map(|(&a, &c)| a * c).sum();
    if s_bs <= F::epsilon() {
        return;
    }
    let s_y: F = s.iter().zip(y).map(|(&a, &c)| a * c).sum();
    let threshold = real::<F>(0.2) * s_bs;
    let y_eff: Vec<F> = if s_y < threshold {
        let phi = real::<F>(0.8) * s_bs / (s_bs - s_y);
        y.iter()
            .zip(&bs)
            .map(|(&yi, &bsi)| phi * yi + (F::one() - phi) * bsi)
            .collect()
    } else {
        y.to_vec()
    };
    let s_y_eff: F = s.iter().zip(&y_eff).map(|(&a, &c)| a * c).sum();
    if s_y_eff <= F::epsilon() {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] =
                b[i * n + j] - bs[i] * bs[j] / s_bs + y_eff[i] * y_eff[j] / s_y_eff;
        }
    }
}

fn identity<F: Real>(n: usize) -> Vec<F> {
    let mut m = vec![F::zero(); n * n];
    for i in 0..n {
        m[i * n + i] = F::one();
    }
    m
}

fn norm<F: Real>(v: &[F]) -> F {
    v.iter().map(|&x| x * x).sum::<F>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic(c: Vec<f64>) -> impl FnMut(&WeightVector) -> Result<f64> {
        move |theta: &WeightVector| {
            Ok(theta
                .as_slice()
                .iter()
                .zip(&c)
                .map(|(&t, &ci)| (t - ci) * (t - ci))
                .sum())
        }
    }

    #[test]
    fn projection_examples() {
        let w = project_simplex(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(w.as_slice(), &[0.2, 0.3, 0.5]);

        let w = project_simplex(&[0.8f64, 0.8]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15);
        assert!((w[1] - 0.5).abs() < 1e-15);

        let w = project_simplex(&[1.5, -0.5]).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 0.0]);

        assert!(project_simplex(&[f64::NAN, 0.0]).is_err());
        assert!(project_simplex::<f64>(&[]).is_err());
    }

    #[test]
    fn projection_satisfies_variational_inequality() {
        // proj(v) is the closest feasible point: check against random
        // feasible competitors.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let n = rng.random_range(2..=8);
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = project_simplex(&v).unwrap();
            let dp: f64 = p
                .as_slice()
                .iter()
                .zip(&v)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            for _ in 0..50 {
                let q = WeightVector::<f64>::sample_uniform(n, &mut rng);
                let dq: f64 = q
                    .as_slice()
                    .iter()
                    .zip(&v)
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                assert!(dp <= dq + 1e-12);
            }
        }
    }

    #[test]
    fn sqp_finds_interior_optimum() {
        let c = vec![0.7, 0.2, 0.1];
        let res = sqp_minimize(
            quadratic(c.clone()),
            &WeightVector::equal(3),
            &SqpConfig::default(),
        )
        .unwrap();
        assert!(res.converged);
        for j in 0..3 {
            assert!((res.theta_hat[j] - c[j]).abs() < 1e-6, "{:?}", res.theta_hat);
        }
    }

    #[test]
    fn sqp_finds_boundary_optimum() {
        let res = sqp_minimize(
            quadratic(vec![1.5, -0.5, 0.0]),
            &WeightVector::equal(3),
            &SqpConfig::default(),
        )
        .unwrap();
        assert!((res.theta_hat[0] - 1.0).abs() < 1e-6, "{:?}", res.theta_hat);
        assert!(res.theta_hat[1].abs() < 1e-6);
        assert!(res.theta_hat[2].abs() < 1e-6);
    }

    #[test]
    fn sqp_linear_objective_reaches_vertex() {
        let a = vec![0.3, -0.2, 0.5, 0.1];
        let mut f = move |theta: &WeightVector| {
            Ok(theta
                .as_slice()
                .iter()
                .zip(&a)
                .map(|(&t, &ai)| t * ai)
                .sum::<f64>())
        };
        let res = sqp_minimize(&mut f, &WeightVector::equal(4), &SqpConfig::default()).unwrap();
        assert!((res.theta_hat[1] - 1.0).abs() < 1e-6, "{:?}", res.theta_hat);
    }

    #[test]
    fn sqp_started_at_solution_stays_there() {
        let c = vec![0.6, 0.3, 0.1];
        let start = WeightVector::new(c.clone()).unwrap();
        let res = sqp_minimize(quadratic(c), &start, &SqpConfig::default()).unwrap();
        assert!(res.converged);
        assert!(res.theta_hat.max_abs_diff(&start) < 1e-8);
    }

    #[test]
    fn sqp_trace_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 5;
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.5)).collect();
            let start = WeightVector::<f64>::sample_uniform(n, &mut rng);
            let res = sqp_minimize(quadratic(c), &start, &SqpConfig::default()).unwrap();
            for pair in res.trace.windows(2) {
                assert!(pair[1].value <= pair[0].value + 1e-12);
            }
            // Feasibility of the answer.
            let sum: f64 = res.theta_hat.as_slice().iter().sum();
            assert!((sum - 1.0).abs() <= 1e-8);
            assert!(res.theta_hat.as_slice().iter().all(|&t| t >= -1e-10));
        }
    }

    #[test]
    fn sqp_rejects_non_finite_objective() {
        let mut f = |_: &WeightVector| Ok(f64::NAN);
        let res = sqp_minimize(&mut f, &WeightVector::equal(3), &SqpConfig::default());
        assert!(matches!(res, Err(Error::Numerical(_))));
    }

    #[test]
    fn fd_gradient_matches_analytic_on_smooth_function() {
        // f(theta) = sum_j a_j theta_j^2; projected gradient along the
        // tangent directions is (I - 11'/n)(2 a .* theta).
        let a = [0.7, -0.3, 1.1, 0.4];
        let mut f = move |theta: &WeightVector| {
            Ok(theta
                .as_slice()
                .iter()
                .zip(a)
                .map(|(&t, ai)| ai * t * t)
                .sum::<f64>())
        };
        let theta = WeightVector::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let grad = fd_gradient(&mut f, &theta, 1e-6).unwrap();
        let raw: Vec<f64> = theta
            .as_slice()
            .iter()
            .zip(a)
            .map(|(&t, ai)| 2.0 * ai * t)
            .collect();
        let mean = raw.iter().sum::<f64>() / 4.0;
        for j in 0..4 {
            let expected = raw[j] - mean;
            assert!(
                (grad[j] - expected).abs() <= 1e-4 * expected.abs().max(1.0),
                "j={j}: {} vs {expected}",
                grad[j]
            );
        }
    }

    #[test]
    fn grid_search_is_deterministic_and_nested() {
        let f = |theta: &WeightVector| {
            Ok(theta
                .as_slice()
                .iter()
                .map(|&t| (t - 1.0 / 3.0) * (t - 1.0 / 3.0))
                .sum::<f64>())
        };
        let a = random_grid_search(f, 3, 100, 7).unwrap();
        let b = random_grid_search(f, 3, 100, 7).unwrap();
        assert_eq!(a, b);

        let wide = random_grid_search(f, 3, 200, 7).unwrap();
        assert!(wide.objective_value <= a.objective_value);

        let single = random_grid_search(f, 3, 1, 7).unwrap();
        assert_eq!(single.iterations, 1);
        assert!(random_grid_search(f, 3, 0, 7).is_err());
    }

    #[test]
    fn grid_search_covers_interior_minimum() {
        let f = |theta: &WeightVector| {
            Ok(theta
                .as_slice()
                .iter()
                .map(|&t| (t - 1.0 / 3.0) * (t - 1.0 / 3.0))
                .sum::<f64>())
        };
        let res = random_grid_search(f, 3, 100_000, 42).unwrap();
        assert!(res.objective_value < 1e-2, "{}", res.objective_value);
    }

    #[test]
    fn trace_csv_has_header_and_rows() {
        let res = sqp_minimize(
            quadratic(vec![0.5, 0.5]),
            &WeightVector::equal(2),
            &SqpConfig::default(),
        )
        .unwrap();
        let csv = res.trace_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iteration,theta_0,theta_1,value"));
        assert!(lines.next().unwrap().starts_with("0,"));
    }
}
