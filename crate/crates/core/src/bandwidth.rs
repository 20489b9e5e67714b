//! Data-driven bandwidths: leave-one-out cross-validation for `𝒦` and the
//! randomized block-subsampling selector for `ℬ`.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::draw_multipliers;
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::kernels::{SmoothingKernel, VarianceKernel};
use crate::rng::{stream, Domain};
use crate::smoother::{nw_surface, residual_field, ResidualField, SmootherConfig};
use crate::toeplitz::{apply_sqrt_columns, sqrt_operator, Side, SqrtChoice, SqrtOperator};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub k_max: usize,
    pub kernel: SmoothingKernel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvOutcome {
    pub k_best: usize,
    /// `(𝒦, Ẽ(𝒦))` for `𝒦 = 1..=k_max`.
    pub scores: Vec<(usize, f64)>,
}

/// `Ẽ(𝒦) = Σ (X − μ̃)²` over `[2𝒦+1, n−2𝒦] × [2𝒦+1, m−2𝒦]`, where `μ̃`
/// drops the centre cell from the window sum but keeps the divisor `T_nm`.
pub fn cv_score(field: &Field, k: usize, kernel: &SmoothingKernel) -> Result<f64> {
    let (n, m) = (field.n(), field.m());
    if n < 4 * k + 2 || m < 4 * k + 2 {
        return Err(Error::BandwidthTooLarge { k, n, m });
    }
    let cfg = SmootherConfig::new(k, kernel.clone())?;
    let surface = nw_surface(field, &cfg)?;
    let g0 = kernel.eval(0.0);
    let (t, _) = crate::smoother::smoothing_constants(&cfg);
    let centre = g0 * g0 / t;
    let mut total = 0.0;
    for i in 2 * k + 1..=n - 2 * k {
        for j in 2 * k + 1..=m - 2 * k {
            let x = field.get(i, j);
            let loo = surface.get(i, j) - centre * x;
            total += (x - loo).powi(2);
        }
    }
    Ok(total)
}

/// Minimizes `Ẽ(𝒦)` over `1..=k_max`; ties go to the smallest `𝒦`.
pub fn cv_select_k(field: &Field, cfg: &CvConfig) -> Result<CvOutcome> {
    let (n, m) = (field.n(), field.m());
    if cfg.k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    if n < 4 * cfg.k_max + 2 || m < 4 * cfg.k_max + 2 {
        return Err(Error::BandwidthTooLarge { k: cfg.k_max, n, m });
    }
    let scores = (1..=cfg.k_max)
        .into_par_iter()
        .map(|k| cv_score(field, k, &cfg.kernel).map(|e| (k, e)))
        .collect::<Result<Vec<_>>>()?;
    let k_best = argmin(&scores).0;
    Ok(CvOutcome { k_best, scores })
}

/// First entry with the smallest score (by total order), so the earliest
/// candidate wins ties.
fn argmin<T: Copy>(scores: &[(T, f64)]) -> (T, f64) {
    scores
        .iter()
        .copied()
        .reduce(|best, cur| if cur.1.total_cmp(&best.1).is_lt() { cur } else { best })
        .expect("non-empty candidate list")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbConfig {
    /// Block fraction `q`.
    pub q: f64,
    /// Candidate set `Γ`.
    pub gamma: Vec<f64>,
    /// Number of blocks `H`.
    pub iterations: usize,
    /// Pilot bandwidth `ℬ_p`.
    pub pilot: f64,
    pub reps: usize,
    pub seed: u64,
    pub sqrt: SqrtChoice,
}

impl Default for VbConfig {
    fn default() -> Self {
        Self {
            q: 0.1,
            gamma: (1..=10).map(f64::from).collect(),
            iterations: 15,
            pilot: 5.0,
            reps: 200,
            seed: 0,
            sqrt: SqrtChoice::Auto,
        }
    }
}

impl VbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(format!("block fraction q must lie in (0, 1), got {}", self.q)));
        }
        if self.gamma.is_empty() {
            return Err(Error::Config("candidate set for the variance bandwidth is empty".into()));
        }
        if let Some(b) = self.gamma.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::Config(format!("variance bandwidth candidates must be positive, got {b}")));
        }
        if !(self.pilot > 0.0 && self.pilot.is_finite()) {
            return Err(Error::Config(format!("pilot bandwidth must be positive, got {}", self.pilot)));
        }
        if self.iterations == 0 || self.reps == 0 {
            return Err(Error::Config("iterations and replicates must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VbOutcome {
    pub b_best: f64,
    /// `(ℬ, loss)` in the order of `Γ`.
    pub losses: Vec<(f64, f64)>,
    /// Full-field bootstrap variance `σ̂²*` under the pilot bandwidth.
    pub pilot_variance: f64,
    /// 1-based top-left corners of the `H` blocks.
    pub blocks: Vec<(usize, usize)>,
}

/// The matrix `W` with `⟨W, E⟩ = γ*`, the interior mean of the multiplier
/// perturbed residuals `ε̂ ⊙ (Q⁽ⁿ⁾ E Q⁽ᵐ⁾)`.
pub fn grand_mean_functional(res: &ResidualField, qn: &SqrtOperator, qm: &SqrtOperator) -> Result<Array2<f64>> {
    let k = res.bandwidth();
    let count = ((res.n() - 2 * k) * (res.m() - 2 * k)) as f64;
    let a = res.values() / count;
    let left = apply_sqrt_columns(qn, &a, Side::Left)?;
    apply_sqrt_columns(qm, &left, Side::Right)
}

/// Sample variance with divisor `B`.
fn population_variance(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Bootstrap variance of the grand mean over `reps` multiplier fields.
fn bootstrap_variance(functional: &Array2<f64>, draws: &[Array2<f64>]) -> f64 {
    let g: Vec<f64> = draws.iter().map(|e| dot(functional, e)).collect();
    population_variance(&g)
}

/// Chooses `ℬ ∈ Γ` minimizing `Σ_l (τ̂²*_l − σ̂²*)²`; ties go to the
/// smallest bandwidth. All candidates see the same blocks and the same
/// multiplier fields.
pub fn select_variance_bandwidth(
    field: &Field,
    smoother: &SmootherConfig,
    kernel: &VarianceKernel,
    cfg: &VbConfig,
) -> Result<VbOutcome> {
    cfg.validate()?;
    let (n, m) = (field.n(), field.m());
    let k = smoother.bandwidth;
    let (dn, dm) = ((cfg.q * n as f64).floor() as usize, (cfg.q * m as f64).floor() as usize);
    let (n0, m0) = (dn + 1, dm + 1);
    if n0 < 2 * k + 1 || m0 < 2 * k + 1 || n0 > n || m0 > m {
        return Err(Error::BlockTooSmall { n0, m0, k });
    }

    let res = residual_field(field, smoother)?;
    let qn = sqrt_operator(n, cfg.pilot, kernel, cfg.sqrt)?;
    let qm = sqrt_operator(m, cfg.pilot, kernel, cfg.sqrt)?;
    let pilot_functional = grand_mean_functional(&res, &qn, &qm)?;
    let gammas: Vec<f64> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|b| dot(&pilot_functional, &draw_multipliers(cfg.seed, Domain::PilotBootstrap, b, n, m)))
        .collect();
    let pilot_variance = population_variance(&gammas);

    let mut corner_rng = stream(cfg.seed, Domain::BlockCorner, 0);
    let blocks: Vec<(usize, usize)> = (0..cfg.iterations)
        .map(|_| (corner_rng.random_range(1..=n - dn), corner_rng.random_range(1..=m - dm)))
        .collect();

    // Block-size roots for every candidate, shared by all blocks.
    let roots = cfg
        .gamma
        .iter()
        .map(|&b| {
            let rn = sqrt_operator(n0, b, kernel, cfg.sqrt)?;
            let rm = sqrt_operator(m0, b, kernel, cfg.sqrt)?;
            Ok((rn, rm))
        })
        .collect::<Result<Vec<_>>>()?;

    let per_block = blocks
        .par_iter()
        .enumerate()
        .map(|(l, &(u, v))| -> Result<Vec<f64>> {
            let block = field.block(u, v, n0, m0)?;
            let bres = residual_field(&block, smoother)?;
            let draws: Vec<Array2<f64>> = (0..cfg.reps as u64)
                .map(|b| draw_multipliers(cfg.seed, Domain::BlockBootstrap, ((l as u64) << 32) | b, n0, m0))
                .collect();
            roots
                .iter()
                .map(|(rn, rm)| Ok(bootstrap_variance(&grand_mean_functional(&bres, rn, rm)?, &draws)))
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let losses: Vec<(f64, f64)> = cfg
        .gamma
        .iter()
        .enumerate()
        .map(|(c, &b)| {
            let loss = per_block.iter().map(|taus| (taus[c] - pilot_variance).powi(2)).sum();
            (b, loss)
        })
        .collect();
    let b_best = losses
        .iter()
        .copied()
        .reduce(|best, cur| match cur.1.total_cmp(&best.1) {
            std::cmp::Ordering::Less => cur,
            std::cmp::Ordering::Equal if cur.0 < best.0 => cur,
            _ => best,
        })
        .expect("non-empty candidate set")
        .0;
    Ok(VbOutcome {
        b_best,
        losses,
        pilot_variance,
        blocks,
    })
}
