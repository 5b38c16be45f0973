//! End-to-end liquidity-provision accounting.
//!
//! The provider starts with `x0` units of token X, splits it across pools by
//! a weight vector, enters each pool with the psi swap-and-mint split, lets
//! the market run, then burns everything and swaps the accumulated Y back to
//! X in the single most advantageous pool. The per-path log return of that
//! round trip, evaluated against a cached event stream, is the deterministic
//! objective the optimizers minimize.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::{apply_path_events, EventStream, MarketParams};
use crate::pool::MultiPool;
use crate::risk::{var_cvar, ReturnDistribution, RiskReport};
use crate::scalar::{real, Real};
use crate::simplex::WeightVector;

/// Allocations below `x0 * DUST_FRACTION` are treated as exactly zero.
const DUST_FRACTION: f64 = 1e-12;

/// Splits `x0` across the pools and mints LP coins in each funded pool.
///
/// For pool `j` with allocation `a = theta_j * x0`: swap `(1 - psi) a`,
/// mint the retained `psi a` together with the Y received. Returns the
/// minted LP coins per pool and the market as the provider leaves it.
pub fn deploy<F: Real>(
    initial: &MultiPool<F>,
    theta: &WeightVector<F>,
    x0: F,
) -> Result<(Vec<F>, MultiPool<F>)> {
    if theta.n() != initial.n_pools() {
        return Err(Error::domain(format!(
            "weight vector has {} components for {} pools",
            theta.n(),
            initial.n_pools()
        )));
    }
    if !x0.is_finite() || x0 <= F::zero() {
        return Err(Error::domain(format!("x0 must be finite and > 0, got {x0}")));
    }
    let dust = x0 * real::<F>(DUST_FRACTION);
    let mut lp_coins = vec![F::zero(); theta.n()];
    let mut market = initial.clone();
    for j in 0..theta.n() {
        let allocation = theta[j] * x0;
        if allocation <= dust {
            continue;
        }
        let pool = &market[j];
        let psi = pool.swap_fraction_psi(allocation)?;
        let (y, after_swap) = pool.swap_x_to_y((F::one() - psi) * allocation)?;
        let (minted, after_mint) = after_swap.mint(psi * allocation, y)?;
        lp_coins[j] = minted;
        market.pools_mut()[j] = after_mint;
    }
    Ok((lp_coins, market))
}

/// Burns the held LP coins everywhere, then swaps the pooled Y proceeds back
/// to X in the pool quoting the best output (ties break to the lowest index).
pub fn unwind<F: Real>(final_pools: &MultiPool<F>, lp_coins: &[F]) -> Result<F> {
    Ok(unwind_with_choice(final_pools, lp_coins)?.0)
}

/// [`unwind`] plus the index of the pool the Y swap executed in
/// (`None` when there was no Y to swap).
pub fn unwind_with_choice<F: Real>(
    final_pools: &MultiPool<F>,
    lp_coins: &[F],
) -> Result<(F, Option<usize>)> {
    if lp_coins.len() != final_pools.n_pools() {
        return Err(Error::domain(format!(
            "{} LP-coin entries for {} pools",
            lp_coins.len(),
            final_pools.n_pools()
        )));
    }
    let mut x_total = F::zero();
    let mut y_total = F::zero();
    let mut pools = final_pools.clone();
    for (j, &l) in lp_coins.iter().enumerate() {
        if l == F::zero() {
            continue;
        }
        let (x, y, after) = pools[j].burn(l)?;
        x_total += x;
        y_total += y;
        pools.pools_mut()[j] = after;
    }
    let mut choice = None;
    if y_total > F::zero() {
        let mut best_out = F::neg_infinity();
        for (j, pool) in pools.pools().iter().enumerate() {
            let (out, _) = pool.swap_y_to_x(y_total)?;
            if out > best_out {
                best_out = out;
                choice = Some(j);
            }
        }
        x_total += best_out;
    }
    Ok((x_total, choice))
}

/// Per-path log returns of the full deploy / replay / unwind round trip.
pub fn return_distribution<F: Real>(
    initial: &MultiPool<F>,
    theta: &WeightVector<F>,
    x0: F,
    stream: &EventStream,
    params: &MarketParams,
) -> Result<ReturnDistribution<F>> {
    let (lp_coins, deployed) = deploy(initial, theta, x0)?;
    let results: Vec<Result<F>> = stream
        .paths()
        .par_iter()
        .map(|events| {
            let mut pools = deployed.clone();
            apply_path_events(pools.pools_mut(), events, params, |_, _| {})?;
            let x_total = unwind(&pools, &lp_coins)?;
            if !(x_total > F::zero()) {
                return Err(Error::numerical(
                    "internal invariant violated: unwind produced non-positive proceeds",
                ));
            }
            Ok((x_total / x0).ln())
        })
        .collect();
    let mut returns = Vec::with_capacity(results.len());
    for r in results {
        returns.push(r?);
    }
    ReturnDistribution::new(returns, x0)
}

/// Everything a CVaR evaluation needs besides the weights: the initial
/// market, the wealth, one cached event stream and the risk levels.
///
/// Holding the stream fixed makes every method here a deterministic function
/// of `theta` (common random numbers), which is what allows finite-difference
/// optimization on top.
#[derive(Clone, Copy)]
pub struct ObjectiveContext<'a, F = f64> {
    pub initial: &'a MultiPool<F>,
    pub x0: F,
    pub stream: &'a EventStream,
    pub params: &'a MarketParams,
    pub alpha: F,
    pub xi: F,
}

impl<'a, F: Real> ObjectiveContext<'a, F> {
    pub fn returns(&self, theta: &WeightVector<F>) -> Result<ReturnDistribution<F>> {
        return_distribution(self.initial, theta, self.x0, self.stream, self.params)
    }

    pub fn risk_report(&self, theta: &WeightVector<F>) -> Result<RiskReport<F>> {
        var_cvar(&self.returns(theta)?, self.alpha, self.xi)
    }

    /// The optimization objective: `CVaR_alpha` of the return distribution.
    pub fn cvar(&self, theta: &WeightVector<F>) -> Result<F> {
        Ok(self.risk_report(theta)?.cvar_alpha)
    }
}
