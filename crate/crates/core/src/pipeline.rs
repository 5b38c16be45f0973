//! The three-stage surrogate-then-refine CVaR minimization.
//!
//! One event stream is drawn per run and reused for every objective
//! evaluation (common random numbers), making the objective a deterministic
//! function of the weights. Stage 1 samples a small CVaR dataset and fits
//! the chi-squared kernel ridge surrogate; stage 2 minimizes the surrogate
//! from the equal-weight start; stage 3 refines by direct SQP on the true
//! objective starting from the surrogate argmin.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lifecycle::ObjectiveContext;
use crate::market::{draw_event_stream, EventStream, MarketParams};
use crate::optimizer::{random_grid_search, sqp_minimize, OptimizeResult, SqpConfig};
use crate::pool::MultiPool;
use crate::risk::RiskReport;
use crate::simplex::WeightVector;
use crate::surrogate::{fit, r_squared, SurrogateModel};

/// Salts for deriving purpose-specific seeds from the master seed, keeping
/// anchor sampling, grid search and path generation on disjoint streams.
const SALT_ANCHORS: u64 = 0x414e_4348;
const SALT_GRID: u64 = 0x4752_4944;

/// splitmix64 finalizer; decorrelates derived seeds.
pub(crate) fn derive_seed(master: u64, salt: u64) -> u64 {
    let mut z = master ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Full configuration of one optimization run.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PipelineConfig {
    /// Surrogate dataset size.
    pub n_train: usize,
    /// CVaR confidence level.
    pub alpha: f64,
    /// Return threshold of the probabilistic constraint.
    pub xi: f64,
    /// Required probability `P[r_T > xi] > q`.
    pub q: f64,
    pub market: MarketParams,
    pub initial_pools: MultiPool,
    /// Initial wealth in token X.
    pub x0: f64,
    pub ridge_lambda: f64,
    pub sqp: SqpConfig,
    /// Points used by the grid-search arm of the ablation.
    pub grid_points: usize,
}

impl PipelineConfig {
    /// Reference setup: six uniform `(100, 100, L=100, phi=0.003)` pools,
    /// the reference market parameters, `x0 = 10`.
    pub fn reference(master_seed: u64) -> Self {
        let market = MarketParams::reference(master_seed);
        let initial_pools =
            MultiPool::uniform(market.n_pools(), 100.0, 100.0, 100.0, 0.003).unwrap();
        PipelineConfig {
            n_train: 10,
            alpha: 0.9,
            xi: 0.05,
            q: 0.8,
            market,
            initial_pools,
            x0: 10.0,
            ridge_lambda: 1.0,
            sqp: SqpConfig::default(),
            grid_points: 10_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.initial_pools.n_pools() != self.market.n_pools() {
            return Err(Error::domain(format!(
                "{} pools configured, market parameters describe {}",
                self.initial_pools.n_pools(),
                self.market.n_pools()
            )));
        }
        if self.n_train == 0 {
            return Err(Error::domain("n_train must be >= 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::domain(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::domain(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if !self.xi.is_finite() {
            return Err(Error::domain("xi must be finite"));
        }
        if !self.x0.is_finite() || self.x0 <= 0.0 {
            return Err(Error::domain(format!("x0 must be finite and > 0, got {}", self.x0)));
        }
        if !self.ridge_lambda.is_finite() || self.ridge_lambda < 0.0 {
            return Err(Error::domain("ridge_lambda must be finite and >= 0"));
        }
        if self.grid_points == 0 {
            return Err(Error::domain("grid_points must be >= 1"));
        }
        Ok(())
    }

    pub(crate) fn context<'a>(&'a self, stream: &'a EventStream) -> ObjectiveContext<'a, f64> {
        ObjectiveContext {
            initial: &self.initial_pools,
            x0: self.x0,
            stream,
            params: &self.market,
            alpha: self.alpha,
            xi: self.xi,
        }
    }
}

/// Wall-clock seconds per stage; excluded from equality comparisons.
#[derive(Debug, Clone, Copy, Default, serde::Serialize)]
pub struct StageTimings {
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub stage3_secs: f64,
}

/// Everything a pipeline run produced.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PipelineReport {
    /// Stage 1: the surrogate training set.
    pub dataset: Vec<(WeightVector, f64)>,
    /// Training-set coefficient of determination (None when degenerate).
    pub train_r_squared: Option<f64>,
    pub min_training_cvar: f64,
    pub surrogate: SurrogateModel,
    /// Stage 2: surrogate minimization from equal weights.
    pub stage2: Option<OptimizeResult>,
    /// Stage 2 failed and the best dataset anchor was used instead.
    pub stage2_fell_back: bool,
    pub theta_app: WeightVector,
    /// True objective value at the stage-2 point.
    pub theta_app_cvar: f64,
    /// True objective value at equal weights.
    pub equal_weight_cvar: f64,
    /// Stage 3 on the true objective.
    pub stage3: OptimizeResult,
    /// Stage 3 was restarted from equal weights because that start ended
    /// lower; the better of the two runs is reported.
    pub stage3_used_equal_start: bool,
    /// Risk statistics at the final weights.
    pub risk: RiskReport,
    /// Whether `P[r_T > xi] > q` held at the final weights.
    pub constraint_satisfied: bool,
    pub timings: StageTimings,
}

impl PipelineReport {
    pub fn theta_hat(&self) -> &WeightVector {
        &self.stage3.theta_hat
    }

    pub fn final_cvar(&self) -> f64 {
        self.stage3.objective_value
    }
}

/// Draws the run's event stream and executes the three stages.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineReport> {
    config.validate()?;
    let stream = draw_event_stream(&config.market)?;
    run_pipeline_with_stream(config, &stream)
}

/// Pipeline stages against a caller-provided (cached) stream.
pub fn run_pipeline_with_stream(
    config: &PipelineConfig,
    stream: &EventStream,
) -> Result<PipelineReport> {
    config.validate()?;
    let ctx = config.context(stream);
    let n = config.market.n_pools();

    // Stage 1: dataset and surrogate fit.
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.market.master_seed, SALT_ANCHORS));
    let anchors: Vec<WeightVector> = (0..config.n_train)
        .map(|_| WeightVector::sample_uniform(n, &mut rng))
        .collect();
    let values: Vec<Result<f64>> = anchors.par_iter().map(|theta| ctx.cvar(theta)).collect();
    let mut dataset = Vec::with_capacity(config.n_train);
    for (theta, value) in anchors.into_iter().zip(values) {
        dataset.push((theta, value?));
    }
    let surrogate = fit(&dataset, config.ridge_lambda)?;
    let train_r_squared = r_squared(&surrogate, &dataset).ok();
    let min_training_cvar = dataset
        .iter()
        .map(|&(_, y)| y)
        .fold(f64::INFINITY, f64::min);
    let stage1_secs = t0.elapsed().as_secs_f64();

    // Stage 2: minimize the surrogate from equal weights.
    let t1 = Instant::now();
    let equal = WeightVector::equal(n);
    let stage2 = sqp_minimize(|theta| Ok(surrogate.predict(theta)), &equal, &config.sqp);
    let (stage2, theta_app, stage2_fell_back) = match stage2 {
        Ok(res) => {
            let theta = res.theta_hat.clone();
            (Some(res), theta, false)
        }
        Err(_) => {
            // Fall back to the best training anchor.
            let best = dataset
                .iter()
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .expect("dataset non-empty");
            (None, best.0.clone(), true)
        }
    };
    let theta_app_cvar = ctx.cvar(&theta_app)?;
    let stage2_secs = t1.elapsed().as_secs_f64();

    // Stage 3: direct refinement on the true objective.
    let t2 = Instant::now();
    let mut stage3 = sqp_minimize(|theta| ctx.cvar(theta), &theta_app, &config.sqp)?;
    let equal_weight_cvar = ctx.cvar(&equal)?;
    let mut stage3_used_equal_start = false;
    if stage3.objective_value > equal_weight_cvar {
        // The surrogate start ended above the plain equal-weight value;
        // rerun from equal weights and keep the better result.
        let from_equal = sqp_minimize(|theta| ctx.cvar(theta), &equal, &config.sqp)?;
        if from_equal.objective_value < stage3.objective_value {
            stage3 = from_equal;
            stage3_used_equal_start = true;
        }
    }
    let stage3_secs = t2.elapsed().as_secs_f64();

    let risk = ctx.risk_report(&stage3.theta_hat)?;
    let constraint_satisfied = risk.prob_above_xi > config.q;

    Ok(PipelineReport {
        dataset,
        train_r_squared,
        min_training_cvar,
        surrogate,
        stage2,
        stage2_fell_back,
        theta_app,
        theta_app_cvar,
        equal_weight_cvar,
        stage3,
        stage3_used_equal_start,
        risk,
        constraint_satisfied,
        timings: StageTimings {
            stage1_secs,
            stage2_secs,
            stage3_secs,
        },
    })
}

/// One row of the method-comparison table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub method: String,
    pub prob_above_xi: f64,
    pub mean_return: f64,
    pub var_alpha: f64,
    pub cvar_alpha: f64,
    pub theta_hat: WeightVector,
    pub wall_secs: f64,
}

/// Method comparison on one shared stream.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, method: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// CSV with one row per method.
    pub fn to_csv_string(&self) -> String {
        let n = self
            .rows
            .first()
            .map(|r| r.theta_hat.n())
            .unwrap_or_default();
        let mut out = String::from("method,prob_above_xi,mean_return,var_alpha,cvar_alpha");
        for j in 0..n {
            out.push_str(&format!(",theta_{j}"));
        }
        out.push_str(",wall_secs\n");
        for r in &self.rows {
            out.push_str(&r.method);
            for v in [r.prob_above_xi, r.mean_return, r.var_alpha, r.cvar_alpha] {
                out.push(',');
                out.push_str(&crate::fmt_g17(v));
            }
            for &t in r.theta_hat.as_slice() {
                out.push(',');
                out.push_str(&crate::fmt_g17(t));
            }
            out.push(',');
            out.push_str(&format!("{:.6}", r.wall_secs));
            out.push('\n');
        }
        out
    }
}

/// Runs grid search, surrogate-only, direct SQP and the full pipeline on
/// one shared stream and tabulates their risk statistics.
pub fn ablation(config: &PipelineConfig) -> Result<AblationReport> {
    config.validate()?;
    let stream = draw_event_stream(&config.market)?;
    let ctx = config.context(&stream);
    let n = config.market.n_pools();
    let mut rows = Vec::with_capacity(4);

    let started = Instant::now();
    let grid = random_grid_search(
        |theta: &WeightVector| ctx.cvar(theta),
        n,
        config.grid_points,
        derive_seed(config.market.master_seed, SALT_GRID),
    )?;
    rows.push(make_row(&ctx, "grid", &grid.theta_hat, started.elapsed().as_secs_f64())?);

    let started = Instant::now();
    let report = run_pipeline_with_stream(config, &stream)?;
    let pipeline_secs = started.elapsed().as_secs_f64();

    // Surrogate-only arm: the pipeline's stage-2 point.
    let krr_secs = report.timings.stage1_secs + report.timings.stage2_secs;
    rows.push(make_row(&ctx, "krr", &report.theta_app, krr_secs)?);

    let started = Instant::now();
    let sqp_only = sqp_minimize(|theta| ctx.cvar(theta), &WeightVector::equal(n), &config.sqp)?;
    rows.push(make_row(
        &ctx,
        "sqp",
        &sqp_only.theta_hat,
        started.elapsed().as_secs_f64(),
    )?);

    rows.push(make_row(&ctx, "pipeline", report.theta_hat(), pipeline_secs)?);

    Ok(AblationReport { rows })
}

fn make_row(
    ctx: &ObjectiveContext<'_, f64>,
    method: &str,
    theta: &WeightVector,
    wall_secs: f64,
) -> Result<AblationRow> {
    let risk = ctx.risk_report(theta)?;
    Ok(AblationRow {
        method: method.to_string(),
        prob_above_xi: risk.prob_above_xi,
        mean_return: risk.mean_return,
        var_alpha: risk.var_alpha,
        cvar_alpha: risk.cvar_alpha,
        theta_hat: theta.clone(),
        wall_secs,
    })
}
