//! Tail-risk statistics of a simulated return sample.
//!
//! Losses are negated log returns. `VaR` is the tail-threshold loss and
//! `CVaR` the mean loss over the tail, with tail size `ceil((1 - alpha) B)`.
//! Both are reported in loss convention: positive values are losses, so a
//! profitable tail yields a negative `CVaR`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Sample of `B` per-path log returns for an initial wealth `x0`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReturnDistribution<F = f64> {
    returns: Vec<F>,
    x0: F,
}

impl<F: Real> ReturnDistribution<F> {
    pub fn new(returns: Vec<F>, x0: F) -> Result<Self> {
        if returns.is_empty() {
            return Err(Error::domain("return sample must not be empty"));
        }
        if returns.iter().any(|r| !r.is_finite()) {
            return Err(Error::domain("return sample contains non-finite entries"));
        }
        if !x0.is_finite() || x0 <= F::zero() {
            return Err(Error::domain(format!("x0 must be finite and > 0, got {x0}")));
        }
        Ok(ReturnDistribution { returns, x0 })
    }

    pub fn returns(&self) -> &[F] {
        &self.returns
    }

    pub fn x0(&self) -> F {
        self.x0
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn mean(&self) -> F {
        self.returns.iter().copied().sum::<F>() / real::<F>(self.returns.len() as f64)
    }

    /// Writes the sample as a single-column CSV with a `return` header.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "return")?;
        for r in &self.returns {
            writeln!(w, "{}", crate::fmt_g17(*r))?;
        }
        Ok(())
    }
}

/// Tail statistics of one return distribution.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct RiskReport<F = f64> {
    /// Tail-threshold loss: the `m`-th largest loss, `m = ceil((1-alpha) B)`.
    pub var_alpha: F,
    /// Mean of the `m` largest losses.
    pub cvar_alpha: F,
    /// Empirical `P[r_T > xi]`.
    pub prob_above_xi: F,
    /// Sample mean of the returns.
    pub mean_return: F,
}

impl<F: Real> RiskReport<F> {
    /// Flat `key = value` record, one line per statistic.
    pub fn to_kv_string(&self) -> String {
        format!(
            "var_alpha = {}\ncvar_alpha = {}\nprob_above_xi = {}\nmean_return = {}\n",
            crate::fmt_g17(self.var_alpha),
            crate::fmt_g17(self.cvar_alpha),
            crate::fmt_g17(self.prob_above_xi),
            crate::fmt_g17(self.mean_return),
        )
    }
}

/// Number of tail observations, `ceil((1 - alpha) B)`.
///
/// A `1e-9` guard absorbs binary representation noise so that e.g.
/// `alpha = 0.85, B = 1000` yields 150 rather than 151. Errors when the
/// tail would be empty, i.e. `(1 - alpha) B < 1`.
pub fn tail_size<F: Real>(alpha: F, b: usize) -> Result<usize> {
    if !(alpha > F::zero() && alpha < F::one()) {
        return Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let guard = 1e-9;
    let t = (F::one() - alpha).to_f64().unwrap() * b as f64;
    if t < 1.0 - guard {
        return Err(Error::domain(format!(
            "tail is empty: need B >= 1/(1-alpha), got B = {b} at alpha = {alpha}"
        )));
    }
    Ok(((t - guard).ceil() as usize).max(1))
}

/// VaR, CVaR, the probabilistic constraint and the sample mean.
pub fn var_cvar<F: Real>(dist: &ReturnDistribution<F>, alpha: F, xi: F) -> Result<RiskReport<F>> {
    let b = dist.len();
    let m = tail_size(alpha, b)?;

    let mut losses: Vec<F> = dist.returns().iter().map(|&r| -r).collect();
    // Descending; entries are finite by construction.
    losses.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let var_alpha = losses[m - 1];
    let cvar_alpha = losses[..m].iter().copied().sum::<F>() / real::<F>(m as f64);
    let above = dist.returns().iter().filter(|&&r| r > xi).count();
    Ok(RiskReport {
        var_alpha,
        cvar_alpha,
        prob_above_xi: real::<F>(above as f64) / real::<F>(b as f64),
        mean_return: dist.mean(),
    })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile<F: Real>(sample: &[F], level: F) -> Result<F> {
    if sample.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    if !(level >= F::zero() && level <= F::one()) {
        return Err(Error::domain(format!("quantile level must lie in [0, 1], got {level}")));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = level * real::<F>((sorted.len() - 1) as f64);
    let lo = h.floor().to_f64().unwrap() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - h.floor();
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(returns: Vec<f64>) -> ReturnDistribution {
        ReturnDistribution::new(returns, 10.0).unwrap()
    }

    #[test]
    fn constant_sample() {
        let d = dist(vec![0.03; 10]);
        let r = var_cvar(&d, 0.9, 0.05).unwrap();
        assert_eq!(r.var_alpha, -0.03);
        assert_eq!(r.cvar_alpha, -0.03);
        assert_eq!(r.prob_above_xi, 0.0);
        assert!((r.mean_return - 0.03).abs() < 1e-15);
    }

    #[test]
    fn ladder_sample() {
        let d = dist((1..=10).map(|i| i as f64 / 100.0).collect());
        let r = var_cvar(&d, 0.9, 0.05).unwrap();
        assert_eq!(r.var_alpha, -0.01);
        assert_eq!(r.cvar_alpha, -0.01);
        // returns strictly above 0.05: 0.06..=0.10
        assert_eq!(r.prob_above_xi, 0.5);
    }

    #[test]
    fn single_loss_dominates_tail() {
        let mut returns = vec![0.01; 9];
        returns.push(-0.05);
        let r = var_cvar(&dist(returns), 0.9, 0.05).unwrap();
        assert_eq!(r.cvar_alpha, 0.05);
        assert_eq!(r.var_alpha, 0.05);
    }

    #[test]
    fn tail_size_guard() {
        assert_eq!(tail_size(0.9, 1000).unwrap(), 100);
        assert_eq!(tail_size(0.85, 1000).unwrap(), 150);
        assert_eq!(tail_size(0.95, 1000).unwrap(), 50);
        assert_eq!(tail_size(0.9, 10).unwrap(), 1);
        assert_eq!(tail_size(0.9, 15).unwrap(), 2);
        assert!(tail_size(0.9, 9).is_err());
        assert!(tail_size(1.0, 100).is_err());
    }

    #[test]
    fn cvar_monotone_in_alpha() {
        let returns: Vec<f64> = (0..200).map(|i| (i as f64 - 100.0) / 100.0).collect();
        let d = dist(returns);
        let mut prev = f64::NEG_INFINITY;
        for alpha in [0.85, 0.9, 0.95] {
            let r = var_cvar(&d, alpha, 0.0).unwrap();
            assert!(r.cvar_alpha >= prev);
            assert!(r.cvar_alpha >= r.var_alpha);
            prev = r.cvar_alpha;
        }
    }

    #[test]
    fn quantile_interpolates() {
        let s: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&s, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&s, 1.0).unwrap(), 5.0);
        assert_eq!(quantile(&s, 0.5).unwrap(), 3.0);
        assert!((quantile(&s, 0.25).unwrap() - 2.0).abs() < 1e-15);
        assert!((quantile(&s, 0.1).unwrap() - 1.4).abs() < 1e-12);
        assert!(quantile::<f64>(&[], 0.5).is_err());
    }

    #[test]
    fn csv_export_single_column() {
        let d = dist(vec![0.25, -0.5]);
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("return"));
        assert!(lines.next().unwrap().starts_with("2.5"));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ReturnDistribution::new(vec![], 1.0).is_err());
        assert!(ReturnDistribution::new(vec![f64::NAN], 1.0).is_err());
        assert!(ReturnDistribution::new(vec![0.0], 0.0).is_err());
    }
}
