//! Locally weighted multiplier bootstrap.
//!
//! Each replicate draws one `n × m` field `E` of i.i.d. standard normals from
//! the stream `(seed, rep)`, forms the correlated multipliers
//! `f = Q⁽ⁿ⁾·E·Q⁽ᵐ⁾` once, and reads off every position's increment
//! `Σ_window c·ε̂·f`. This equals the panel contraction `⟨Q⁽ⁿ⁾ A_v Q⁽ᵐ⁾, E⟩`
//! for each `v`, without materializing the panels.

use ndarray::{s, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Position, PositionGrid};
use crate::hac::{sigma_hats, tau_hat, HacConfig, SigmaHat};
use crate::rng::{stream, Domain};
use crate::smoother::{estimate_set, residual_field, window_weights, EstimateSet, ResidualField, SmootherConfig};
use crate::toeplitz::{apply_sqrt_columns, sqrt_operator, Side, SqrtChoice, SqrtMode, SqrtOperator};

pub const RESULT_SCHEMA: &str = "lwmb-result/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMode {
    Homogeneous,
    Heterogeneous,
}

impl std::str::FromStr for BootstrapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homogeneous" => Ok(Self::Homogeneous),
            "heterogeneous" => Ok(Self::Heterogeneous),
            _ => Err(Error::InvalidArgument(format!("unknown bootstrap mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub alpha: f64,
    pub mode: BootstrapMode,
    pub seed: u64,
    pub hac: HacConfig,
    pub smoother: SmootherConfig,
    pub sqrt: SqrtChoice,
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha out of range (0, 1): {}", self.alpha)));
        }
        if self.reps == 0 {
            return Err(Error::Config("at least one bootstrap replicate is required".into()));
        }
        Ok(())
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        let needed = (1.0 / self.alpha).ceil() as usize;
        if self.reps < needed {
            vec![format!(
                "{} replicates cannot resolve the {} quantile; use at least {needed}",
                self.reps,
                1.0 - self.alpha
            )]
        } else {
            Vec::new()
        }
    }
}

/// Weighted residual blocks `c_v ⊙ ε̂` for every position, with the square
/// roots they are contracted against.
#[derive(Debug)]
pub struct LocalSumPanel<'a> {
    qn: &'a SqrtOperator,
    qm: &'a SqrtOperator,
    /// 0-based top-left corner of each window.
    origins: Vec<(usize, usize)>,
    blocks: Vec<Array2<f64>>,
}

impl LocalSumPanel<'_> {
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.qn.size(), self.qm.size())
    }

    /// `W_v = Q⁽ⁿ⁾·A_v·Q⁽ᵐ⁾` as an explicit `n × m` matrix, with `A_v` the
    /// window block `c_v ⊙ ε̂` so that `⟨W_v, E⟩` is the increment directly.
    pub fn materialize(&self, v: usize) -> Array2<f64> {
        let mut a = Array2::zeros(self.dims());
        let (r0, c0) = self.origins[v];
        let b = &self.blocks[v];
        a.slice_mut(s![r0..r0 + b.nrows(), c0..c0 + b.ncols()]).assign(b);
        let left = apply_sqrt_columns(self.qn, &a, Side::Left).expect("panel shape");
        apply_sqrt_columns(self.qm, &left, Side::Right).expect("panel shape")
    }

    /// Increments for a given multiplier field `E`.
    pub fn contract(&self, e: &Array2<f64>) -> Result<Vec<f64>> {
        let left = apply_sqrt_columns(self.qn, e, Side::Left)?;
        let f = apply_sqrt_columns(self.qm, &left, Side::Right)?;
        Ok(self
            .origins
            .iter()
            .zip(&self.blocks)
            .map(|(&(r0, c0), b)| {
                let window = f.slice(s![r0..r0 + b.nrows(), c0..c0 + b.ncols()]);
                b.iter().zip(window.iter()).map(|(x, y)| x * y).sum()
            })
            .collect())
    }
}

pub fn build_panels<'a>(
    res: &ResidualField,
    grid: &PositionGrid,
    cfg: &BootstrapConfig,
    qn: &'a SqrtOperator,
    qm: &'a SqrtOperator,
) -> Result<LocalSumPanel<'a>> {
    for (op, len, axis) in [(qn, res.n(), "row"), (qm, res.m(), "column")] {
        if !op.matches(cfg.hac.bandwidth, &cfg.hac.kernel) {
            return Err(Error::Config(format!(
                "{axis} square root built for bandwidth {} with {} kernel, configuration asks for {} with {}",
                op.bandwidth(),
                op.kernel_name(),
                cfg.hac.bandwidth,
                cfg.hac.kernel.name()
            )));
        }
        if op.size() != len {
            return Err(Error::Shape {
                expected: format!("{axis} square root of size {len}"),
                found: format!("size {}", op.size()),
            });
        }
    }
    let (n, m) = (res.n(), res.m());
    let mut origins = Vec::with_capacity(grid.len());
    let mut blocks = Vec::with_capacity(grid.len());
    for (index, pos) in grid.iter().enumerate() {
        let w = window_weights(pos, &cfg.smoother, n, m)?;
        if !(res.is_interior(*w.row_range().start(), *w.col_range().start())
            && res.is_interior(*w.row_range().end(), *w.col_range().end()))
        {
            return Err(Error::Boundary(vec![crate::error::BoundaryViolation {
                index,
                p: pos.p,
                q: pos.q,
            }]));
        }
        let (r0, c0) = (w.p - w.k - 1, w.q - w.k - 1);
        let size = w.weights.nrows();
        let block = &w.weights * &res.values().slice(s![r0..r0 + size, c0..c0 + size]);
        origins.push((r0, c0));
        blocks.push(block);
    }
    Ok(LocalSumPanel { qn, qm, origins, blocks })
}

/// The `n × m` standard normal field of one replicate, filled row-major.
pub fn draw_multipliers(seed: u64, domain: Domain, rep: u64, n: usize, m: usize) -> Array2<f64> {
    let mut rng = stream(seed, domain, rep);
    Array2::from_shape_simple_fn((n, m), || rng.sample(StandardNormal))
}

/// `(T_nm/B_nm)(μ̂*_v − μ̂_v)` for every position in replicate `rep_index`.
pub fn replicate(panel: &LocalSumPanel<'_>, rep_index: u64, cfg: &BootstrapConfig) -> Vec<f64> {
    let (n, m) = panel.dims();
    let e = draw_multipliers(cfg.seed, Domain::Bootstrap, rep_index, n, m);
    panel.contract(&e).expect("multiplier field matches panel")
}

/// All replicates, indexed by replicate; computed in parallel.
pub fn replicate_all(panel: &LocalSumPanel<'_>, cfg: &BootstrapConfig) -> Vec<Vec<f64>> {
    (0..cfg.reps as u64)
        .into_par_iter()
        .map(|r| replicate(panel, r, cfg))
        .collect()
}

pub fn weighted_max(increments: &[f64], tau: &[f64]) -> f64 {
    increments
        .iter()
        .zip(tau)
        .map(|(x, t)| x.abs() / t)
        .fold(0.0, f64::max)
}

/// Ascending `T*` values for the given `τ̂`.
pub fn t_samples(increments: &[Vec<f64>], tau: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = increments.iter().map(|inc| weighted_max(inc, tau)).collect();
    t.sort_by(f64::total_cmp);
    t
}

/// 1-based rank `min{t : t/B ≥ 1 − α}`.
pub fn quantile_rank(b: usize, alpha: f64) -> usize {
    let target = (1.0 - alpha) * b as f64;
    ((target - 1e-9).ceil().max(1.0) as usize).min(b)
}

/// `T*₍t₎` with `t = min{t : t/B ≥ 1 − α}`.
pub fn quantile_c(t_samples: &[f64], alpha: f64) -> f64 {
    t_samples[quantile_rank(t_samples.len(), alpha) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
    /// Positions whose standardized deviation exceeds the critical value.
    pub flags: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub alpha: f64,
    pub mode: BootstrapMode,
    pub sqrt_mode: SqrtMode,
    pub estimates: EstimateSet,
    /// `σ̂_v` (heterogeneous mode only).
    pub sigma: Option<Vec<SigmaHat>>,
    pub tau: Vec<f64>,
    pub t_samples: Vec<f64>,
    pub c_quantile: f64,
    pub half_widths: Vec<f64>,
    pub verdict: Option<Verdict>,
}

impl BootstrapResult {
    /// `(lower, upper)` for each position.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.estimates
            .estimates
            .iter()
            .zip(&self.half_widths)
            .map(|(mu, h)| (mu - h, mu + h))
            .collect()
    }

    pub fn record(&self) -> ResultRecord<'_> {
        ResultRecord {
            schema: RESULT_SCHEMA,
            alpha: self.alpha,
            mode: self.mode,
            sqrt_mode: self.sqrt_mode,
            replicates: self.t_samples.len(),
            t_nm: self.estimates.t_nm,
            b_nm: self.estimates.b_nm,
            c_quantile: self.c_quantile,
            positions: self.estimates.positions.positions(),
            estimates: &self.estimates.estimates,
            half_widths: &self.half_widths,
            sigma: self
                .sigma
                .as_ref()
                .map(|s| s.iter().map(|x| x.value).collect())
                .unwrap_or_default(),
            sigma_clipped: self
                .sigma
                .as_ref()
                .map(|s| s.iter().filter(|x| x.clipped).count())
                .unwrap_or(0),
            verdict: self.verdict.as_ref(),
        }
    }
}

/// Serialized form of a [`BootstrapResult`].
#[derive(Debug, Serialize)]
pub struct ResultRecord<'a> {
    pub schema: &'static str,
    pub alpha: f64,
    pub mode: BootstrapMode,
    pub sqrt_mode: SqrtMode,
    pub replicates: usize,
    pub t_nm: f64,
    pub b_nm: f64,
    pub c_quantile: f64,
    pub positions: &'a [Position],
    pub estimates: &'a [f64],
    pub half_widths: &'a [f64],
    pub sigma: Vec<f64>,
    pub sigma_clipped: usize,
    pub verdict: Option<&'a Verdict>,
}

/// The parts of a bootstrap run that do not depend on `τ̂`: estimates,
/// residuals, `σ̂_v` and the replicate increments.
#[derive(Debug, Clone)]
pub struct Replicates {
    pub estimates: EstimateSet,
    pub residuals: ResidualField,
    pub sigma: Vec<SigmaHat>,
    pub increments: Vec<Vec<f64>>,
    pub sqrt_mode: SqrtMode,
}

impl Replicates {
    pub fn tau(&self, mode: BootstrapMode) -> Vec<f64> {
        self.sigma.iter().map(|s| tau_hat(s.value, mode)).collect()
    }

    /// Steps 4 to 6.a for one mode.
    pub fn finish(&self, alpha: f64, mode: BootstrapMode) -> BootstrapResult {
        let tau = self.tau(mode);
        let t_samples = t_samples(&self.increments, &tau);
        let c_quantile = quantile_c(&t_samples, alpha);
        let scale = self.estimates.b_nm / self.estimates.t_nm;
        let half_widths = tau.iter().map(|t| scale * t * c_quantile).collect();
        BootstrapResult {
            alpha,
            mode,
            sqrt_mode: self.sqrt_mode,
            estimates: self.estimates.clone(),
            sigma: (mode == BootstrapMode::Heterogeneous).then(|| self.sigma.clone()),
            tau,
            t_samples,
            c_quantile,
            half_widths,
            verdict: None,
        }
    }
}

/// Row and column square roots for an `n × m` field.
pub fn sqrt_pair(n: usize, m: usize, hac: &HacConfig, choice: SqrtChoice) -> Result<(SqrtOperator, SqrtOperator)> {
    let qn = sqrt_operator(n, hac.bandwidth, &hac.kernel, choice)?;
    let qm = sqrt_operator(m, hac.bandwidth, &hac.kernel, choice)?;
    Ok((qn, qm))
}

/// Steps 1 to 3 with prebuilt square roots; `σ̂_v` is always computed.
pub fn run_replicates(
    field: &Field,
    grid: &PositionGrid,
    cfg: &BootstrapConfig,
    qn: &SqrtOperator,
    qm: &SqrtOperator,
) -> Result<Replicates> {
    cfg.validate()?;
    let estimates = estimate_set(field, grid, &cfg.smoother)?;
    let residuals = residual_field(field, &cfg.smoother)?;
    let windows = grid
        .iter()
        .map(|p| window_weights(p, &cfg.smoother, field.n(), field.m()))
        .collect::<Result<Vec<_>>>()?;
    let sigma = sigma_hats(&residuals, &windows, &cfg.hac)?;
    let panel = build_panels(&residuals, grid, cfg, qn, qm)?;
    let increments = replicate_all(&panel, cfg);
    Ok(Replicates {
        estimates,
        residuals,
        sigma,
        increments,
        sqrt_mode: qn.mode(),
    })
}

/// Estimates, replicates and the simultaneous confidence region.
pub fn run_lwmb(field: &Field, grid: &PositionGrid, cfg: &BootstrapConfig) -> Result<BootstrapResult> {
    cfg.validate()?;
    let (qn, qm) = sqrt_pair(field.n(), field.m(), &cfg.hac, cfg.sqrt)?;
    let reps = run_replicates(field, grid, cfg, &qn, &qm)?;
    Ok(reps.finish(cfg.alpha, cfg.mode))
}

/// `μ₀` evaluated at each position.
pub fn mu0_at(grid: &PositionGrid, mu0: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    grid.iter().map(|p| mu0(p.x, p.y)).collect()
}

/// `S = max_v T_nm|μ̂ − μ₀|/(B_nm τ̂_v)`; reject when `S > C*`.
pub fn test_mean(result: &BootstrapResult, mu0: &[f64]) -> Result<Verdict> {
    let est = &result.estimates;
    if mu0.len() != est.estimates.len() {
        return Err(Error::Shape {
            expected: format!("{} null values", est.estimates.len()),
            found: format!("{}", mu0.len()),
        });
    }
    let scale = est.t_nm / est.b_nm;
    let stats: Vec<f64> = est
        .estimates
        .iter()
        .zip(mu0)
        .zip(&result.tau)
        .map(|((mu, m0), t)| scale * (mu - m0).abs() / t)
        .collect();
    let statistic = stats.iter().copied().fold(0.0, f64::max);
    Ok(Verdict {
        statistic,
        critical: result.c_quantile,
        reject: statistic > result.c_quantile,
        flags: stats.iter().map(|s| *s > result.c_quantile).collect(),
    })
}
