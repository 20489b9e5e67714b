//! Mean fields, heterogeneous AR/MA noise and the Monte-Carlo study runners.
//!
//! Noise innovations are drawn per lattice cell from streams keyed by the
//! cell's coordinates, so a cell's draw does not depend on the lattice size
//! or on the burn-in margin.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{cv_select_k, select_variance_bandwidth, CvConfig, VbConfig};
use crate::bootstrap::{mu0_at, run_replicates, sqrt_pair, test_mean, BootstrapConfig, BootstrapMode, Replicates};
use crate::error::{Error, Result};
use crate::grid::{make_position_grid, Field, PositionGrid};
use crate::hac::HacConfig;
use crate::kernels::{SmoothingKernel, VarianceKernel};
use crate::rng::{child_seed, stream, Domain, StreamFamily};
use crate::smoother::SmootherConfig;
use crate::toeplitz::{SqrtChoice, SqrtOperator};

/// Burn-in margin for the AR recursion; the recursion's impulse response
/// has fallen below `1e-11` at this distance.
pub const AR_MARGIN: usize = 150;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MeanFieldKind {
    Zero,
    Elliptical,
    Sinusoidal,
    Disc { height: f64, radius: f64, center: (f64, f64) },
}

impl MeanFieldKind {
    /// Height 0.3, radius 0.1, centred at `(0.5, 0.5)`.
    pub const DEFAULT_DISC: Self = Self::Disc {
        height: 0.3,
        radius: 0.1,
        center: (0.5, 0.5),
    };

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Disc { radius, .. } if !(*radius > 0.0) => {
                Err(Error::Config(format!("disc radius must be positive, got {radius}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for MeanFieldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => f.write_str("zero"),
            Self::Elliptical => f.write_str("elliptical"),
            Self::Sinusoidal => f.write_str("sinusoidal"),
            Self::Disc { .. } => f.write_str("disc"),
        }
    }
}

impl FromStr for MeanFieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Self::Zero),
            "elliptical" => Ok(Self::Elliptical),
            "sinusoidal" => Ok(Self::Sinusoidal),
            "disc" => Ok(Self::DEFAULT_DISC),
            _ => Err(Error::InvalidArgument(format!("unknown mean field {s:?}"))),
        }
    }
}

pub fn mean_value(kind: &MeanFieldKind, x: f64, y: f64) -> f64 {
    match *kind {
        MeanFieldKind::Zero => 0.0,
        MeanFieldKind::Elliptical => 1.0 - (1.5 * (x - 0.5).powi(2) + 6.0 * (y - 0.5).powi(2)),
        MeanFieldKind::Sinusoidal => {
            let a = (2.0 * (x - 0.6)).sin();
            let b = (3.0 * (y - 0.3)).cos();
            a * a + b * b + a * b
        }
        MeanFieldKind::Disc { height, radius, center } => {
            if (x - center.0).powi(2) + (y - center.1).powi(2) <= radius * radius {
                height
            } else {
                0.0
            }
        }
    }
}

/// `μ(i/n, j/m)` on the full lattice.
pub fn mean_lattice(kind: &MeanFieldKind, n: usize, m: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |(r, c)| {
        mean_value(kind, (r + 1) as f64 / n as f64, (c + 1) as f64 / m as f64)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    #[serde(rename = "iid")]
    IidNormal,
    #[serde(rename = "ar")]
    Ar2d,
    #[serde(rename = "ma")]
    Ma2d,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::IidNormal => "iid",
            Self::Ar2d => "ar",
            Self::Ma2d => "ma",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" | "normal" => Ok(Self::IidNormal),
            "ar" => Ok(Self::Ar2d),
            "ma" => Ok(Self::Ma2d),
            _ => Err(Error::InvalidArgument(format!("unknown noise model {s:?}"))),
        }
    }
}

const COEF_ROW: f64 = 0.3;
const COEF_COL: f64 = -0.4;
const COEF_DIAG: f64 = -0.2;

fn cell_key(i: i64, j: i64) -> u64 {
    (((i + (1 << 31)) as u64) << 32) | ((j + (1 << 31)) as u64 & 0xFFFF_FFFF)
}

/// `Z₁·Z₂` with `Z₁ ~ N(0, sd₁²)`, `Z₂ ~ N(0, sd₂²)` independent.
fn product_normal(rng: &mut ChaCha8Rng, sd1: f64, sd2: f64) -> f64 {
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    (sd1 * a) * (sd2 * b)
}

fn spread(i: i64, j: i64, n: usize, m: usize) -> f64 {
    (i as f64 / n as f64 - j as f64 / m as f64).abs()
}

/// Noise field of the given kind; deterministic in `(kind, n, m, seed)`.
pub fn simulate_noise(kind: NoiseKind, n: usize, m: usize, seed: u64) -> Result<Field> {
    simulate_noise_with_margin(kind, n, m, seed, AR_MARGIN)
}

/// As [`simulate_noise`] with an explicit AR burn-in margin (ignored for
/// the other kinds).
pub fn simulate_noise_with_margin(kind: NoiseKind, n: usize, m: usize, seed: u64, margin: usize) -> Result<Field> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument("noise lattice must be non-empty".into()));
    }
    let values = match kind {
        NoiseKind::IidNormal => {
            let mut rng = stream(seed, Domain::Noise, 0);
            Array2::from_shape_simple_fn((n, m), || rng.sample(StandardNormal))
        }
        NoiseKind::Ar2d => ar_noise(n, m, seed, margin),
        NoiseKind::Ma2d => ma_noise(n, m, seed),
    };
    Field::new(values)
}

fn ar_noise(n: usize, m: usize, seed: u64, margin: usize) -> Array2<f64> {
    let fam = StreamFamily::new(seed, Domain::NoiseCell);
    let (rows, cols) = (n + margin, m + margin);
    // ext[[a, b]] is cell (a − margin + 1, b − margin + 1); zero before the first row/column
    let mut ext = Array2::<f64>::zeros((rows + 1, cols + 1));
    for a in 1..=rows {
        let i = a as i64 - margin as i64;
        for b in 1..=cols {
            let j = b as i64 - margin as i64;
            let d = spread(i, j, n, m);
            let e = product_normal(&mut fam.stream(cell_key(i, j)), 0.7 + 0.5 * d, 0.5 + 0.7 * d);
            ext[[a, b]] = COEF_ROW * ext[[a - 1, b]] + COEF_COL * ext[[a, b - 1]] + COEF_DIAG * ext[[a - 1, b - 1]] + e;
        }
    }
    ext.slice(ndarray::s![margin + 1.., margin + 1..]).to_owned()
}

fn ma_noise(n: usize, m: usize, seed: u64) -> Array2<f64> {
    let fam = StreamFamily::new(seed, Domain::NoiseCell);
    let mut f = Array2::<f64>::zeros((n + 1, m + 1));
    for i in 1..=n {
        for j in 1..=m {
            let d = spread(i as i64, j as i64, n, m);
            f[[i, j]] = product_normal(&mut fam.stream(cell_key(i as i64, j as i64)), 1.2 - 0.5 * d, 1.2 - 0.7 * d);
        }
    }
    Array2::from_shape_fn((n, m), |(r, c)| {
        let (i, j) = (r + 1, c + 1);
        COEF_ROW * f[[i - 1, j]] + COEF_COL * f[[i, j - 1]] + COEF_DIAG * f[[i - 1, j - 1]] + f[[i, j]]
    })
}

/// `X = μ(i/n, j/m) + ε`.
pub fn simulate_dataset(mean: &MeanFieldKind, noise: NoiseKind, n: usize, m: usize, seed: u64) -> Result<Field> {
    simulate_dataset_scaled(mean, noise, n, m, seed, 1.0)
}

/// `X = μ(i/n, j/m) + scale·ε`; `scale = 0` gives the bare mean lattice.
pub fn simulate_dataset_scaled(
    mean: &MeanFieldKind,
    noise: NoiseKind,
    n: usize,
    m: usize,
    seed: u64,
    scale: f64,
) -> Result<Field> {
    mean.validate()?;
    let eps = simulate_noise(noise, n, m, seed)?;
    Field::new(mean_lattice(mean, n, m) + eps.values() * scale)
}

fn default_divisions() -> usize {
    20
}

fn default_modes() -> Vec<BootstrapMode> {
    vec![BootstrapMode::Homogeneous, BootstrapMode::Heterogeneous]
}

/// Configuration of a Monte-Carlo study. `k`/`b` set to `null` select the
/// bandwidths per simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub n: usize,
    pub m: usize,
    pub mean: MeanFieldKind,
    pub noise: NoiseKind,
    #[serde(default = "default_divisions")]
    pub grid_divisions: usize,
    pub alpha: f64,
    pub sims: usize,
    pub boot_reps: usize,
    #[serde(default = "default_modes")]
    pub modes: Vec<BootstrapMode>,
    pub seed: u64,
    pub k: Option<usize>,
    pub b: Option<f64>,
    pub k_max: usize,
    pub selection: VbConfig,
    pub smoothing_kernel: String,
    pub variance_kernel: String,
    pub sqrt: SqrtChoice,
    pub noise_scale: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            n: 200,
            m: 200,
            mean: MeanFieldKind::Elliptical,
            noise: NoiseKind::Ar2d,
            grid_divisions: default_divisions(),
            alpha: 0.05,
            sims: 200,
            boot_reps: 200,
            modes: default_modes(),
            seed: 0,
            k: Some(10),
            b: Some(2.0),
            k_max: 20,
            selection: VbConfig::default(),
            smoothing_kernel: "quartic".into(),
            variance_kernel: "gaussian".into(),
            sqrt: SqrtChoice::Auto,
            noise_scale: 1.0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sims == 0 || self.boot_reps == 0 {
            return Err(Error::Config("sims and boot_reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha out of range (0, 1): {}", self.alpha)));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("at least one bootstrap mode is required".into()));
        }
        if self.grid_divisions == 0 {
            return Err(Error::Config("grid_divisions must be at least 1".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config(format!("noise_scale must be non-negative, got {}", self.noise_scale)));
        }
        if let Some(b) = self.b {
            HacConfig::new(b, self.variance_kernel()?)?;
        }
        self.smoothing_kernel()?;
        self.mean.validate()
    }

    pub fn smoothing_kernel(&self) -> Result<SmoothingKernel> {
        self.smoothing_kernel.parse()
    }

    pub fn variance_kernel(&self) -> Result<VarianceKernel> {
        self.variance_kernel.parse()
    }

    /// Seed of simulated dataset `index`.
    pub fn sim_seed(&self, index: usize) -> u64 {
        child_seed(self.seed, Domain::Simulation, index as u64)
    }
}

/// Bandwidths used for one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bandwidths {
    pub k: usize,
    pub b: f64,
}

fn choose_bandwidths(field: &Field, cfg: &StudyConfig, seed: u64) -> Result<Bandwidths> {
    let g = cfg.smoothing_kernel()?;
    let k = match cfg.k {
        Some(k) => k,
        None => cv_select_k(field, &CvConfig { k_max: cfg.k_max, kernel: g.clone() })?.k_best,
    };
    let b = match cfg.b {
        Some(b) => b,
        None => {
            let sm = SmootherConfig::new(k, g)?;
            let vb = VbConfig { seed, ..cfg.selection.clone() };
            select_variance_bandwidth(field, &sm, &cfg.variance_kernel()?, &vb)?.b_best
        }
    };
    Ok(Bandwidths { k, b })
}

/// Shares the square roots across datasets when `ℬ` is fixed.
struct Roots {
    fixed: Option<(SqrtOperator, SqrtOperator)>,
}

impl Roots {
    fn new(cfg: &StudyConfig) -> Result<Self> {
        let fixed = match cfg.b {
            Some(b) => Some(sqrt_pair(cfg.n, cfg.m, &HacConfig::new(b, cfg.variance_kernel()?)?, cfg.sqrt)?),
            None => None,
        };
        Ok(Self { fixed })
    }

    fn replicates(&self, field: &Field, grid: &PositionGrid, cfg: &BootstrapConfig, study: &StudyConfig) -> Result<Replicates> {
        match &self.fixed {
            Some((qn, qm)) => run_replicates(field, grid, cfg, qn, qm),
            None => {
                let (qn, qm) = sqrt_pair(study.n, study.m, &cfg.hac, study.sqrt)?;
                run_replicates(field, grid, cfg, &qn, &qm)
            }
        }
    }
}

fn bootstrap_config(cfg: &StudyConfig, bw: Bandwidths, seed: u64) -> Result<BootstrapConfig> {
    Ok(BootstrapConfig {
        reps: cfg.boot_reps,
        alpha: cfg.alpha,
        mode: cfg.modes[0],
        seed,
        hac: HacConfig::new(bw.b, cfg.variance_kernel()?)?,
        smoother: SmootherConfig::new(bw.k, cfg.smoothing_kernel()?)?,
        sqrt: cfg.sqrt,
    })
}

/// Per-dataset record of a coverage study; vectors follow `modes`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSim {
    pub index: usize,
    pub seed: u64,
    pub bandwidths: Bandwidths,
    pub covered: Vec<bool>,
    pub average_width: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageRow {
    pub mode: BootstrapMode,
    pub coverage: f64,
    /// Mean over datasets of the mean full interval width `2·half_width`.
    pub average_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub sims: Vec<CoverageSim>,
}

/// Simultaneous coverage of the true mean at the grid positions.
pub fn coverage_study(cfg: &StudyConfig) -> Result<CoverageReport> {
    cfg.validate()?;
    let roots = Roots::new(cfg)?;
    let sims = (0..cfg.sims)
        .into_par_iter()
        .map(|index| -> Result<CoverageSim> {
            let seed = cfg.sim_seed(index);
            let field = simulate_dataset_scaled(&cfg.mean, cfg.noise, cfg.n, cfg.m, seed, cfg.noise_scale)?;
            let bandwidths = choose_bandwidths(&field, cfg, seed)?;
            let grid = make_position_grid(cfg.n, cfg.m, bandwidths.k, cfg.grid_divisions)?;
            let truth = mu0_at(&grid, |x, y| mean_value(&cfg.mean, x, y));
            let bc = bootstrap_config(cfg, bandwidths, seed)?;
            let reps = roots.replicates(&field, &grid, &bc, cfg)?;
            let (mut covered, mut average_width) = (Vec::new(), Vec::new());
            for &mode in &cfg.modes {
                let res = reps.finish(cfg.alpha, mode);
                covered.push(
                    res.estimates
                        .estimates
                        .iter()
                        .zip(&truth)
                        .zip(&res.half_widths)
                        .all(|((mu, t), h)| (mu - t).abs() <= *h),
                );
                average_width.push(2.0 * res.half_widths.iter().sum::<f64>() / res.half_widths.len() as f64);
            }
            Ok(CoverageSim { index, seed, bandwidths, covered, average_width })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = sims.len() as f64;
    let rows = cfg
        .modes
        .iter()
        .enumerate()
        .map(|(c, &mode)| CoverageRow {
            mode,
            coverage: sims.iter().filter(|s| s.covered[c]).count() as f64 / total,
            average_width: sims.iter().map(|s| s.average_width[c]).sum::<f64>() / total,
        })
        .collect();
    Ok(CoverageReport { rows, sims })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizePowerSim {
    pub index: usize,
    pub seed: u64,
    pub null_bandwidths: Bandwidths,
    pub alt_bandwidths: Bandwidths,
    pub null_reject: Vec<bool>,
    pub alt_reject: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizePowerRow {
    pub mode: BootstrapMode,
    pub size: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizePowerReport {
    pub rows: Vec<SizePowerRow>,
    pub sims: Vec<SizePowerSim>,
}

/// Rejection rates of `H₀: μ ≡ 0` under the zero mean (size) and under
/// `cfg.mean` (power). Both datasets of a simulation share the noise draw.
pub fn size_power_study(cfg: &StudyConfig) -> Result<SizePowerReport> {
    cfg.validate()?;
    let roots = Roots::new(cfg)?;
    let decide = |field: &Field, seed: u64| -> Result<(Bandwidths, Vec<bool>)> {
        let bw = choose_bandwidths(field, cfg, seed)?;
        let grid = make_position_grid(cfg.n, cfg.m, bw.k, cfg.grid_divisions)?;
        let bc = bootstrap_config(cfg, bw, seed)?;
        let reps = roots.replicates(field, &grid, &bc, cfg)?;
        let zero = vec![0.0; grid.len()];
        let rejects = cfg
            .modes
            .iter()
            .map(|&mode| test_mean(&reps.finish(cfg.alpha, mode), &zero).map(|v| v.reject))
            .collect::<Result<Vec<_>>>()?;
        Ok((bw, rejects))
    };
    let sims = (0..cfg.sims)
        .into_par_iter()
        .map(|index| -> Result<SizePowerSim> {
            let seed = cfg.sim_seed(index);
            let null = simulate_dataset_scaled(&MeanFieldKind::Zero, cfg.noise, cfg.n, cfg.m, seed, cfg.noise_scale)?;
            let alt = simulate_dataset_scaled(&cfg.mean, cfg.noise, cfg.n, cfg.m, seed, cfg.noise_scale)?;
            let (null_bandwidths, null_reject) = decide(&null, seed)?;
            let (alt_bandwidths, alt_reject) = decide(&alt, seed)?;
            Ok(SizePowerSim { index, seed, null_bandwidths, alt_bandwidths, null_reject, alt_reject })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = sims.len() as f64;
    let rows = cfg
        .modes
        .iter()
        .enumerate()
        .map(|(c, &mode)| SizePowerRow {
            mode,
            size: sims.iter().filter(|s| s.null_reject[c]).count() as f64 / total,
            power: sims.iter().filter(|s| s.alt_reject[c]).count() as f64 / total,
        })
        .collect();
    Ok(SizePowerReport { rows, sims })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_field_examples() {
        assert_eq!(mean_value(&MeanFieldKind::Elliptical, 0.5, 0.5), 1.0);
        let disc = MeanFieldKind::DEFAULT_DISC;
        assert_eq!(mean_value(&disc, 0.5, 0.5), 0.3);
        assert_eq!(mean_value(&disc, 0.7, 0.5), 0.0);
        assert_eq!(mean_value(&disc, 0.6, 0.5), 0.3);
        assert_eq!(mean_value(&MeanFieldKind::Zero, 0.3, 0.9), 0.0);
        let (a, b) = ((2.0f64 * -0.6).sin(), (3.0f64 * -0.3).cos());
        assert!((mean_value(&MeanFieldKind::Sinusoidal, 0.0, 0.0) - (a * a + b * b + a * b)).abs() < 1e-15);
    }

    #[test]
    fn bad_disc_is_rejected() {
        let d = MeanFieldKind::Disc { height: 1.0, radius: 0.0, center: (0.5, 0.5) };
        assert!(simulate_dataset(&d, NoiseKind::IidNormal, 5, 5, 0).is_err());
    }

    #[test]
    fn noise_is_reproducible() {
        for kind in [NoiseKind::IidNormal, NoiseKind::Ar2d, NoiseKind::Ma2d] {
            let a = simulate_noise(kind, 30, 20, 9).unwrap();
            let b = simulate_noise(kind, 30, 20, 9).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, simulate_noise(kind, 30, 20, 10).unwrap());
        }
    }

    #[test]
    fn ar_burn_in_has_converged() {
        let a = simulate_noise_with_margin(NoiseKind::Ar2d, 60, 50, 4, AR_MARGIN).unwrap();
        let b = simulate_noise_with_margin(NoiseKind::Ar2d, 60, 50, 4, 2 * AR_MARGIN).unwrap();
        let diff = (a.values() - b.values()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(diff < 1e-8, "{diff}");
        // the literal 50-cell margin is visibly short of that
        let c = simulate_noise_with_margin(NoiseKind::Ar2d, 60, 50, 4, 50).unwrap();
        let d = simulate_noise_with_margin(NoiseKind::Ar2d, 60, 50, 4, 100).unwrap();
        let short = (c.values() - d.values()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(short > 1e-8);
    }

    #[test]
    fn ar_recursion_holds_inside() {
        let a = simulate_noise(NoiseKind::Ar2d, 12, 12, 2).unwrap();
        let fam = StreamFamily::new(2, Domain::NoiseCell);
        for i in 2..=12usize {
            for j in 2..=12usize {
                let d = spread(i as i64, j as i64, 12, 12);
                let e = product_normal(&mut fam.stream(cell_key(i as i64, j as i64)), 0.7 + 0.5 * d, 0.5 + 0.7 * d);
                let rec = 0.3 * a.get(i - 1, j) - 0.4 * a.get(i, j - 1) - 0.2 * a.get(i - 1, j - 1) + e;
                assert!((a.get(i, j) - rec).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ma_boundary_uses_zero_outside() {
        let a = simulate_noise(NoiseKind::Ma2d, 6, 6, 3).unwrap();
        let fam = StreamFamily::new(3, Domain::NoiseCell);
        let d = spread(1, 1, 6, 6);
        let f11 = product_normal(&mut fam.stream(cell_key(1, 1)), 1.2 - 0.5 * d, 1.2 - 0.7 * d);
        assert_eq!(a.get(1, 1), f11);
    }

    #[test]
    fn ma_noise_has_zero_mean() {
        let f = simulate_noise(NoiseKind::Ma2d, 400, 400, 1).unwrap();
        let v = f.values();
        let mean = v.mean().unwrap();
        // long-run to marginal variance: (1 + 0.3 − 0.4 − 0.2)² / (1 + 0.3² + 0.4² + 0.2²)
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        let se = (var * 0.49 / 1.29 / v.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * se, "{mean} vs {se}");
    }

    #[test]
    fn ar_lag_correlation_signs() {
        let f = simulate_noise(NoiseKind::Ar2d, 500, 500, 6).unwrap();
        let v = f.values();
        let corr = |di: usize, dj: usize| {
            let a = v.slice(ndarray::s![di.., dj..]);
            let b = v.slice(ndarray::s![..500 - di, ..500 - dj]);
            (&a * &b).mean().unwrap() / v.mapv(|x| x * x).mean().unwrap()
        };
        assert!(corr(1, 0) > 0.05);
        assert!(corr(0, 1) < -0.05);
    }

    #[test]
    fn dataset_is_additive() {
        let mean = MeanFieldKind::Elliptical;
        let x = simulate_dataset(&mean, NoiseKind::Ar2d, 40, 30, 5).unwrap();
        let e = simulate_noise(NoiseKind::Ar2d, 40, 30, 5).unwrap();
        let mu = mean_lattice(&mean, 40, 30);
        for ((xv, ev), mv) in x.values().iter().zip(e.values()).zip(&mu) {
            assert_eq!(*xv, mv + ev);
            assert!((xv - mv - ev).abs() <= f64::EPSILON * xv.abs().max(mv.abs()));
        }
        let zero = simulate_dataset(&MeanFieldKind::Zero, NoiseKind::Ma2d, 20, 20, 5).unwrap();
        assert_eq!(zero, simulate_noise(NoiseKind::Ma2d, 20, 20, 5).unwrap());
        let bare = simulate_dataset_scaled(&mean, NoiseKind::IidNormal, 20, 20, 5, 0.0).unwrap();
        assert_eq!(bare.values(), &mean_lattice(&mean, 20, 20));
    }

    fn tiny_study() -> StudyConfig {
        StudyConfig {
            n: 30,
            m: 30,
            mean: MeanFieldKind::Zero,
            noise: NoiseKind::IidNormal,
            grid_divisions: 3,
            sims: 4,
            boot_reps: 30,
            k: Some(3),
            b: Some(1.0),
            ..StudyConfig::default()
        }
    }

    #[test]
    fn zero_noise_coverage_is_complete() {
        let cfg = StudyConfig { noise_scale: 0.0, ..tiny_study() };
        let rep = coverage_study(&cfg).unwrap();
        for row in &rep.rows {
            assert_eq!(row.coverage, 1.0);
            assert_eq!(row.average_width, 0.0);
        }
    }

    #[test]
    fn studies_are_reproducible() {
        let cfg = tiny_study();
        assert_eq!(coverage_study(&cfg).unwrap(), coverage_study(&cfg).unwrap());
        let sp = StudyConfig { mean: MeanFieldKind::DEFAULT_DISC, ..cfg };
        let a = size_power_study(&sp).unwrap();
        assert_eq!(a, size_power_study(&sp).unwrap());
        assert_eq!(a.rows.len(), 2);
    }

    #[test]
    fn auto_bandwidths_run() {
        let cfg = StudyConfig {
            n: 60,
            m: 60,
            k: None,
            b: None,
            k_max: 3,
            sims: 2,
            selection: VbConfig { q: 0.3, gamma: vec![1.0, 2.0], iterations: 3, reps: 20, ..VbConfig::default() },
            ..tiny_study()
        };
        let rep = coverage_study(&cfg).unwrap();
        assert!(rep.sims.iter().all(|s| (1..=3).contains(&s.bandwidths.k)));
    }
}
