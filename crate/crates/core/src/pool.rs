//! Constant-product pool state transitions.
//!
//! A pool holds reserves `(rx, ry)` of tokens X and Y, an outstanding LP-coin
//! supply and a taker fee `phi`. Swaps keep `rx * ry` constant (fee-free) or
//! grow it (the fee is absorbed into the reserve of the incoming token);
//! mint and burn scale both reserves without moving the marginal price.
//! Every operation is a pure function returning the successor state.

use crate::error::{Error, Result};
use crate::scalar::{real, scaled_tol, Real};

/// Relative tolerance for the mint ratio check, stated at `f64` width.
const MINT_RATIO_RTOL: f64 = 1e-9;

/// State of one constant-product pool.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PoolState<F = f64> {
    rx: F,
    ry: F,
    l_total: F,
    phi: F,
}

impl<F: Real> PoolState<F> {
    /// Validates and builds a pool: positive reserves and LP supply, fee in `[0, 1)`.
    pub fn new(rx: F, ry: F, l_total: F, phi: F) -> Result<Self> {
        for (name, v) in [("rx", rx), ("ry", ry), ("l_total", l_total)] {
            if !v.is_finite() || v <= F::zero() {
                return Err(Error::domain(format!("pool {name} must be finite and > 0, got {v}")));
            }
        }
        if !phi.is_finite() || phi < F::zero() || phi >= F::one() {
            return Err(Error::domain(format!("fee phi must lie in [0, 1), got {phi}")));
        }
        Ok(PoolState { rx, ry, l_total, phi })
    }

    pub fn rx(&self) -> F {
        self.rx
    }

    pub fn ry(&self) -> F {
        self.ry
    }

    pub fn l_total(&self) -> F {
        self.l_total
    }

    pub fn phi(&self) -> F {
        self.phi
    }

    /// Instantaneous price of Y in X units: `rx / ry`.
    pub fn marginal_price(&self) -> F {
        self.rx / self.ry
    }

    /// Swaps `x` units of token X into token Y.
    ///
    /// Returns the Y amount paid out and the updated pool, with
    /// `y = x (1-phi) ry / (rx + (1-phi) x)` and reserves `(rx + x, ry - y)`.
    pub fn swap_x_to_y(&self, x: F) -> Result<(F, Self)> {
        self.check_swap_amount("x", x)?;
        if x == F::zero() {
            return Ok((F::zero(), *self));
        }
        let fx = (F::one() - self.phi) * x;
        let denom = self.rx + fx;
        let y = fx * self.ry / denom;
        let mut new_ry = self.ry - y;
        let mut y_out = y;
        if new_ry <= F::zero() {
            // Cancellation-free form of ry - y for extreme trade sizes.
            new_ry = self.rx * self.ry / denom;
            y_out = self.ry - new_ry;
        }
        Ok((
            y_out,
            PoolState {
                rx: self.rx + x,
                ry: new_ry,
                l_total: self.l_total,
                phi: self.phi,
            },
        ))
    }

    /// Swaps `y` units of token Y into token X; mirror of [`Self::swap_x_to_y`].
    pub fn swap_y_to_x(&self, y: F) -> Result<(F, Self)> {
        self.check_swap_amount("y", y)?;
        if y == F::zero() {
            return Ok((F::zero(), *self));
        }
        let fy = (F::one() - self.phi) * y;
        let denom = self.ry + fy;
        let x = fy * self.rx / denom;
        let mut new_rx = self.rx - x;
        let mut x_out = x;
        if new_rx <= F::zero() {
            new_rx = self.ry * self.rx / denom;
            x_out = self.rx - new_rx;
        }
        Ok((
            x_out,
            PoolState {
                rx: new_rx,
                ry: self.ry + y,
                l_total: self.l_total,
                phi: self.phi,
            },
        ))
    }

    /// Deposits `(x, y)` at the current reserve ratio and mints LP coins.
    ///
    /// `x / y` must match `rx / ry` to relative `1e-9`; the minted amount is
    /// `l = l_total * x / rx`.
    pub fn mint(&self, x: F, y: F) -> Result<(F, Self)> {
        for (name, v) in [("x", x), ("y", y)] {
            if !v.is_finite() || v <= F::zero() {
                return Err(Error::domain(format!("mint {name} must be finite and > 0, got {v}")));
            }
        }
        let rtol = scaled_tol::<F>(MINT_RATIO_RTOL, 64.0);
        // |x/y - rx/ry| <= rtol * rx/ry, written without divisions.
        if (x * self.ry - y * self.rx).abs() > rtol * y * self.rx {
            return Err(Error::precondition(format!(
                "mint ratio mismatch: x/y = {} vs rx/ry = {}",
                x / y,
                self.rx / self.ry
            )));
        }
        let l = self.l_total * x / self.rx;
        Ok((
            l,
            PoolState {
                rx: self.rx + x,
                ry: self.ry + y,
                l_total: self.l_total + l,
                phi: self.phi,
            },
        ))
    }

    /// Redeems `l` LP coins for the pro-rata share `(l/L) * (rx, ry)`.
    ///
    /// `l = l_total` is allowed and empties the pool; the returned state is
    /// then no longer usable for swaps or mints.
    pub fn burn(&self, l: F) -> Result<(F, F, Self)> {
        if !l.is_finite() || l < F::zero() || l > self.l_total {
            return Err(Error::domain(format!(
                "burn amount must lie in [0, {}], got {l}",
                self.l_total
            )));
        }
        if l == F::zero() {
            return Ok((F::zero(), F::zero(), *self));
        }
        let share = l / self.l_total;
        let x = share * self.rx;
        let y = share * self.ry;
        Ok((
            x,
            y,
            PoolState {
                rx: self.rx - x,
                ry: self.ry - y,
                l_total: self.l_total - l,
                phi: self.phi,
            },
        ))
    }

    /// Fraction `psi` of an X-only endowment `x` to retain for minting.
    ///
    /// Swapping the other `(1 - psi) x` yields exactly the Y needed to mint
    /// the retained part at the post-swap reserve ratio. Evaluated as
    /// `psi = 1 - (2 / (2 - phi)) / (1 + sqrt(1 + u))` with
    /// `u = 4 x (1 - phi) / (rx (2 - phi)^2)`, which is the closed form
    /// rewritten without the cancelling `1 - sqrt(1 + u)` difference, so it
    /// stays accurate down to x/rx near machine epsilon.
    pub fn swap_fraction_psi(&self, x: F) -> Result<F> {
        if !x.is_finite() || x <= F::zero() {
            return Err(Error::domain(format!("psi split requires x > 0, got {x}")));
        }
        let one = F::one();
        let two = real::<F>(2.0);
        let two_m_phi = two - self.phi;
        let u = real::<F>(4.0) * x * (one - self.phi) / (self.rx * two_m_phi * two_m_phi);
        Ok(one - (two / two_m_phi) / (one + (one + u).sqrt()))
    }

    fn check_swap_amount(&self, name: &str, v: F) -> Result<()> {
        if !v.is_finite() || v < F::zero() {
            return Err(Error::domain(format!("swap amount {name} must be finite and >= 0, got {v}")));
        }
        Ok(())
    }
}

/// An ordered collection of independent pools over the same token pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MultiPool<F = f64> {
    pools: Vec<PoolState<F>>,
}

impl<F: Real> MultiPool<F> {
    pub fn new(pools: Vec<PoolState<F>>) -> Result<Self> {
        if pools.is_empty() {
            return Err(Error::domain("a market needs at least one pool"));
        }
        Ok(MultiPool { pools })
    }

    /// `n` identical pools, the artifact's default market configuration.
    pub fn uniform(n: usize, rx: F, ry: F, l_total: F, phi: F) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("a market needs at least one pool"));
        }
        let pool = PoolState::new(rx, ry, l_total, phi)?;
        Ok(MultiPool {
            pools: vec![pool; n],
        })
    }

    pub fn n_pools(&self) -> usize {
        self.pools.len()
    }

    pub fn pools(&self) -> &[PoolState<F>] {
        &self.pools
    }

    pub(crate) fn pools_mut(&mut self) -> &mut [PoolState<F>] {
        &mut self.pools
    }
}

impl<F> std::ops::Index<usize> for MultiPool<F> {
    type Output = PoolState<F>;

    fn index(&self, j: usize) -> &PoolState<F> {
        &self.pools[j]
    }
}
