//! Event-driven multi-pool market simulator.
//!
//! Order flow is a marked Poisson process: each path draws an event count
//! `N ~ Poisson(T * sum(kappa))`, then per event a type (pool index, with 0
//! meaning "all pools at once"), a direction, and standard-normal deviates
//! feeding log-normal volumes. Everything that does not depend on the pool
//! state lives in [`EventStream`], drawn once and replayable against any
//! initial [`MultiPool`]; the state-dependent drift (the log reserve ratio
//! for Y-to-X events) is applied only during replay. This split is what
//! makes objective evaluations under common random numbers cheap and
//! deterministic.
//!
//! Randomness: ChaCha8, keyed by `master_seed`, one ChaCha stream per path
//! (`set_stream(path_index)`), so paths can be drawn in parallel with
//! results independent of thread count. Within a path the draw order is
//! fixed: `N` first, then per event type, direction, normals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pool::{MultiPool, PoolState};
use crate::scalar::{real, Real};

/// Volume scale used for the simultaneous all-pools event type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum AllPoolSigma {
    /// Every pool uses `sigma[0]` (the default).
    Common,
    /// Pool `j` uses its own `sigma[j]`.
    PerPool,
}

/// Order-flow model parameters for `n` pools.
///
/// The index convention for `kappa`, `p` and `sigma` is: component 0 is the
/// all-pools event, component `j >= 1` belongs to pool `j`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MarketParams {
    /// Arrival rates, length `n + 1`, each `>= 0` with a positive sum.
    pub kappa: Vec<f64>,
    /// Probability that an event swaps X to Y, length `n + 1`.
    pub p: Vec<f64>,
    /// Log-volume standard deviations, length `n + 1`, each `> 0`.
    pub sigma: Vec<f64>,
    /// Simulation horizon `T > 0`.
    pub t_horizon: f64,
    /// Number of Monte Carlo paths `B`.
    pub b_paths: usize,
    /// Seed of the whole randomness tree.
    pub master_seed: u64,
    /// All-pools volume scale convention.
    pub allpool_sigma: AllPoolSigma,
}

impl MarketParams {
    /// The library's reference parameter set (six pools, `T = 60`, `B = 1000`).
    pub fn reference(master_seed: u64) -> Self {
        MarketParams {
            kappa: vec![0.25, 0.5, 0.5, 0.45, 0.45, 0.4, 0.3],
            p: vec![0.45, 0.45, 0.4, 0.38, 0.36, 0.34, 0.3],
            sigma: vec![1.0, 0.3, 0.5, 1.0, 1.25, 2.0, 4.0],
            t_horizon: 60.0,
            b_paths: 1000,
            master_seed,
            allpool_sigma: AllPoolSigma::Common,
        }
    }

    pub fn n_pools(&self) -> usize {
        self.kappa.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.kappa.len();
        if len < 2 {
            return Err(Error::domain("kappa needs at least 2 components (all-pools + one pool)"));
        }
        if self.p.len() != len || self.sigma.len() != len {
            return Err(Error::domain(format!(
                "kappa/p/sigma lengths disagree: {len}/{}/{}",
                self.p.len(),
                self.sigma.len()
            )));
        }
        if self.kappa.iter().any(|&k| !k.is_finite() || k < 0.0) {
            return Err(Error::domain("kappa components must be finite and >= 0"));
        }
        if self.kappa.iter().sum::<f64>() <= 0.0 {
            return Err(Error::domain("kappa must have a positive sum"));
        }
        if self.p.iter().any(|&p| !p.is_finite() || !(0.0..=1.0).contains(&p)) {
            return Err(Error::domain("p components must lie in [0, 1]"));
        }
        if self.sigma.iter().any(|&s| !s.is_finite() || s <= 0.0) {
            return Err(Error::domain("sigma components must be finite and > 0"));
        }
        if !self.t_horizon.is_finite() || self.t_horizon <= 0.0 {
            return Err(Error::domain("t_horizon must be finite and > 0"));
        }
        if self.b_paths == 0 {
            return Err(Error::domain("b_paths must be >= 1"));
        }
        Ok(())
    }

    /// Hash of the distributional parameters (everything except the seed),
    /// stored in stream files to detect mismatched replays.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.push_u64(self.kappa.len() as u64);
        for v in self.kappa.iter().chain(&self.p).chain(&self.sigma) {
            h.push_u64(v.to_bits());
        }
        h.push_u64(self.t_horizon.to_bits());
        h.push_u64(self.b_paths as u64);
        h.push_u64(match self.allpool_sigma {
            AllPoolSigma::Common => 0,
            AllPoolSigma::PerPool => 1,
        });
        h.finish()
    }
}

/// FNV-1a, enough for a format-compatibility fingerprint.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    fn push_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// State-independent randomness of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEvents {
    /// Event types `j_m` in `0..=n`.
    pub types: Vec<u16>,
    /// `true` when the event swaps X to Y.
    pub x_to_y: Vec<bool>,
    /// Standard-normal deviates, flat: `n` per all-pools event, 1 otherwise.
    pub normals: Vec<f64>,
}

impl PathEvents {
    pub fn n_events(&self) -> usize {
        self.types.len()
    }
}

/// The state-independent half of a simulation: all drawn randomness.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    n_pools: usize,
    master_seed: u64,
    params_fingerprint: u64,
    paths: Vec<PathEvents>,
}

impl EventStream {
    pub(crate) fn from_parts(
        n_pools: usize,
        master_seed: u64,
        params_fingerprint: u64,
        paths: Vec<PathEvents>,
    ) -> Self {
        EventStream {
            n_pools,
            master_seed,
            params_fingerprint,
            paths,
        }
    }

    pub fn n_pools(&self) -> usize {
        self.n_pools
    }

    pub fn b_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn params_fingerprint(&self) -> u64 {
        self.params_fingerprint
    }

    pub fn paths(&self) -> &[PathEvents] {
        &self.paths
    }

    pub fn total_events(&self) -> usize {
        self.paths.iter().map(PathEvents::n_events).sum()
    }

    fn check_compatible(&self, params: &MarketParams) -> Result<()> {
        if self.n_pools != params.n_pools() {
            return Err(Error::contract(format!(
                "stream built for {} pools, params describe {}",
                self.n_pools,
                params.n_pools()
            )));
        }
        if self.b_paths() != params.b_paths {
            return Err(Error::contract(format!(
                "stream holds {} paths, params ask for {}",
                self.b_paths(),
                params.b_paths
            )));
        }
        if self.params_fingerprint != params.fingerprint() || self.master_seed != params.master_seed
        {
            return Err(Error::contract(
                "stream was drawn under different market parameters or seed",
            ));
        }
        Ok(())
    }
}

/// Recorded trajectory of one replayed path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrajectory<F = f64> {
    /// Post-event X reserves, row-major `N x n`.
    pub rx_t: Vec<F>,
    /// Post-event Y reserves, row-major `N x n`.
    pub ry_t: Vec<F>,
    /// Event volumes, row-major `N x n` (zero off the hit pool).
    pub v_t: Vec<F>,
    /// Pool states after the last event.
    pub final_pools: MultiPool<F>,
}

/// Replay output across all paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord<F = f64> {
    pub n_pools: usize,
    pub paths: Vec<PathTrajectory<F>>,
}

/// Draws the state-independent randomness for every path.
pub fn draw_event_stream(params: &MarketParams) -> Result<EventStream> {
    params.validate()?;
    let n = params.n_pools();
    let total_rate: f64 = params.kappa.iter().sum();
    let lambda = total_rate * params.t_horizon;
    let poisson = Poisson::new(lambda)
        .map_err(|e| Error::domain(format!("invalid Poisson rate {lambda}: {e}")))?;

    let paths: Vec<PathEvents> = (0..params.b_paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.master_seed);
            rng.set_stream(k as u64);
            draw_path(&mut rng, &poisson, params, n, total_rate)
        })
        .collect();

    Ok(EventStream {
        n_pools: n,
        master_seed: params.master_seed,
        params_fingerprint: params.fingerprint(),
        paths,
    })
}

fn draw_path(
    rng: &mut ChaCha8Rng,
    poisson: &Poisson<f64>,
    params: &MarketParams,
    n: usize,
    total_rate: f64,
) -> PathEvents {
    let n_events = poisson.sample(rng) as usize;
    let mut types = Vec::with_capacity(n_events);
    let mut x_to_y = Vec::with_capacity(n_events);
    let mut normals = Vec::with_capacity(n_events + n);
    for _ in 0..n_events {
        let j = draw_type(rng, &params.kappa, total_rate);
        types.push(j as u16);
        let u: f64 = rng.random();
        x_to_y.push(u < params.p[j]);
        let deviates = if j == 0 { n } else { 1 };
        for _ in 0..deviates {
            normals.push(StandardNormal.sample(rng));
        }
    }
    PathEvents {
        types,
        x_to_y,
        normals,
    }
}

/// Inverse-CDF categorical draw over unnormalized rates; one uniform.
fn draw_type(rng: &mut ChaCha8Rng, kappa: &[f64], total_rate: f64) -> usize {
    let u: f64 = rng.random();
    let target = u * total_rate;
    let mut cum = 0.0;
    for (j, &k) in kappa.iter().enumerate() {
        cum += k;
        if target < cum {
            return j;
        }
    }
    kappa.len() - 1
}

/// Applies one path's events to `pools` in place.
///
/// `record` is called after each event with the post-event pool states and
/// the event's volume vector.
pub(crate) fn apply_path_events<F: Real>(
    pools: &mut [PoolState<F>],
    events: &PathEvents,
    params: &MarketParams,
    mut record: impl FnMut(&[PoolState<F>], &[F]),
) -> Result<()> {
    let n = pools.len();
    let mut volumes = vec![F::zero(); n];
    let mut normal_idx = 0usize;
    for m in 0..events.types.len() {
        let j = events.types[m] as usize;
        let to_y = events.x_to_y[m];
        if j == 0 {
            for (jj, vol) in volumes.iter_mut().enumerate() {
                let z = events.normals[normal_idx + jj];
                let sigma = match params.allpool_sigma {
                    AllPoolSigma::Common => params.sigma[0],
                    AllPoolSigma::PerPool => params.sigma[jj + 1],
                };
                *vol = event_volume(&pools[jj], to_y, sigma, z);
            }
            normal_idx += n;
            for (pool, &vol) in pools.iter_mut().zip(volumes.iter()) {
                *pool = apply_swap(pool, to_y, vol)?;
            }
        } else {
            let jj = j - 1;
            if jj >= n {
                return Err(Error::contract(format!(
                    "event type {j} out of range for {n} pools"
                )));
            }
            let z = events.normals[normal_idx];
            normal_idx += 1;
            for v in volumes.iter_mut() {
                *v = F::zero();
            }
            let vol = event_volume(&pools[jj], to_y, params.sigma[j], z);
            volumes[jj] = vol;
            pools[jj] = apply_swap(&pools[jj], to_y, vol)?;
        }
        record(pools, &volumes);
    }
    Ok(())
}

/// Log-normal event volume. X-to-Y events are driftless; Y-to-X events are
/// centered on the current log reserve ratio so the Y notional tracks the
/// prevailing price level.
#[inline]
fn event_volume<F: Real>(pool: &PoolState<F>, x_to_y: bool, sigma: f64, z: f64) -> F {
    let mu = if x_to_y {
        F::zero()
    } else {
        (pool.rx() / pool.ry()).ln()
    };
    (mu + real::<F>(sigma * z)).exp()
}

#[inline]
fn apply_swap<F: Real>(pool: &PoolState<F>, x_to_y: bool, volume: F) -> Result<PoolState<F>> {
    let (_, next) = if x_to_y {
        pool.swap_x_to_y(volume)?
    } else {
        pool.swap_y_to_x(volume)?
    };
    Ok(next)
}

/// Replays a cached stream against an initial market, recording trajectories.
pub fn replay<F: Real>(
    initial: &MultiPool<F>,
    stream: &EventStream,
    params: &MarketParams,
) -> Result<PathRecord<F>> {
    params.validate()?;
    stream.check_compatible(params)?;
    if initial.n_pools() != stream.n_pools() {
        return Err(Error::contract(format!(
            "initial market has {} pools, stream expects {}",
            initial.n_pools(),
            stream.n_pools()
        )));
    }
    let n = initial.n_pools();
    let paths: Vec<Result<PathTrajectory<F>>> = stream
        .paths()
        .par_iter()
        .map(|events| {
            let n_events = events.n_events();
            let mut pools = initial.clone();
            let mut rx_t = Vec::with_capacity(n_events * n);
            let mut ry_t = Vec::with_capacity(n_events * n);
            let mut v_t = Vec::with_capacity(n_events * n);
            apply_path_events(pools.pools_mut(), events, params, |states, volumes| {
                for (state, &v) in states.iter().zip(volumes) {
                    rx_t.push(state.rx());
                    ry_t.push(state.ry());
                    v_t.push(v);
                }
            })?;
            Ok(PathTrajectory {
                rx_t,
                ry_t,
                v_t,
                final_pools: pools,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        out.push(p?);
    }
    Ok(PathRecord { n_pools: n, paths: out })
}

/// Draws a stream and replays it: the one-call simulation entry point.
///
/// Returns the stream too so callers can cache and re-replay it.
pub fn simulate<F: Real>(
    initial: &MultiPool<F>,
    params: &MarketParams,
) -> Result<(PathRecord<F>, EventStream)> {
    let stream = draw_event_stream(params)?;
    let record = replay(initial, &stream, params)?;
    Ok((record, stream))
}
