//! HAC covariance of the window-weighted linear forms `Σ c_{i,v}^(j) ε_i^(j)`.
//!
//! The quadruple sum over cell pairs is evaluated lag by lag: for each
//! lag `(s, t)` the products `u₁(a)·u₂(a + (s, t))` of the weighted residuals
//! are accumulated over the overlap of the two windows and scaled by
//! `K(s/ℬ)K(t/ℬ)`. Lags whose kernel product is at most `1e-12` are skipped.

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::BootstrapMode;
use crate::error::{BoundaryViolation, Error, Result};
use crate::kernels::VarianceKernel;
use crate::smoother::{ResidualField, WindowWeights};

pub const LAG_CUTOFF: f64 = 1e-12;
pub const TAU_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct HacConfig {
    /// Variance bandwidth `ℬ`.
    pub bandwidth: f64,
    pub kernel: VarianceKernel,
}

impl HacConfig {
    pub fn new(bandwidth: f64, kernel: VarianceKernel) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "variance bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth, kernel })
    }

    /// `K(s/ℬ)` for `s = 0..=max_lag`, cut where the kernel has decayed below the cutoff.
    fn lag_weights(&self, max_lag: usize) -> Vec<f64> {
        let reach = self
            .kernel
            .effective_range(LAG_CUTOFF)
            .map(|r| (r * self.bandwidth).floor() as usize)
            .unwrap_or(max_lag);
        (0..=max_lag.min(reach))
            .map(|s| self.kernel.eval(s as f64 / self.bandwidth))
            .collect()
    }
}

fn check_support(res: &ResidualField, w: &WindowWeights, index: usize) -> Result<()> {
    let rows = w.row_range();
    let cols = w.col_range();
    let ok = res.is_interior(*rows.start(), *cols.start()) && res.is_interior(*rows.end(), *cols.end());
    if ok {
        Ok(())
    } else {
        Err(Error::Boundary(vec![BoundaryViolation { index, p: w.p, q: w.q }]))
    }
}

/// `c ⊙ ε̂` over the window.
fn weighted_residuals(res: &ResidualField, w: &WindowWeights) -> Array2<f64> {
    let r0 = w.p - w.k - 1;
    let c0 = w.q - w.k - 1;
    let size = w.weights.nrows();
    let block = res.values().slice(ndarray::s![r0..r0 + size, c0..c0 + size]);
    &w.weights * &block
}

/// `Σ c₁c₂ ε̂ε̂ K((i₁−i₂)/ℬ) K((j₁−j₂)/ℬ)` for two windows.
pub fn hac_cov(res: &ResidualField, w1: &WindowWeights, w2: &WindowWeights, cfg: &HacConfig) -> Result<f64> {
    check_support(res, w1, 0)?;
    check_support(res, w2, 1)?;
    let u1 = weighted_residuals(res, w1);
    let u2 = weighted_residuals(res, w2);
    let (h1, h2) = (u1.nrows() as i64, u2.nrows() as i64);

    // Window origins in lattice coordinates; lag d = origin₂ + b − (origin₁ + a).
    let (o1r, o1c) = (w1.p as i64 - w1.k as i64, w1.q as i64 - w1.k as i64);
    let (o2r, o2c) = (w2.p as i64 - w2.k as i64, w2.q as i64 - w2.k as i64);
    let lag_lo = |o1: i64, o2: i64| o2 - o1 - (h1 - 1);
    let lag_hi = |o1: i64, o2: i64| o2 - o1 + (h2 - 1);
    let max_lag = [
        lag_lo(o1r, o2r).abs(),
        lag_hi(o1r, o2r).abs(),
        lag_lo(o1c, o2c).abs(),
        lag_hi(o1c, o2c).abs(),
    ]
    .into_iter()
    .max()
    .unwrap_or(0) as usize;
    let kw = cfg.lag_weights(max_lag);
    let reach = kw.len() as i64 - 1;

    let mut total = 0.0;
    for s in lag_lo(o1r, o2r).max(-reach)..=lag_hi(o1r, o2r).min(reach) {
        let ks = kw[s.unsigned_abs() as usize];
        // rows a of u1 pairing with rows b = a + (o1r − o2r) + s of u2
        let shift_r = o1r - o2r + s;
        let a_lo = 0.max(-shift_r);
        let a_hi = (h1 - 1).min(h2 - 1 - shift_r);
        for t in lag_lo(o1c, o2c).max(-reach)..=lag_hi(o1c, o2c).min(reach) {
            let weight = ks * kw[t.unsigned_abs() as usize];
            if weight <= LAG_CUTOFF {
                continue;
            }
            let shift_c = o1c - o2c + t;
            let c_lo = 0.max(-shift_c);
            let c_hi = (h1 - 1).min(h2 - 1 - shift_c);
            if a_lo > a_hi || c_lo > c_hi {
                continue;
            }
            let mut acc = 0.0;
            for a in a_lo..=a_hi {
                let r1 = u1.row(a as usize);
                let r2 = u2.row((a + shift_r) as usize);
                for c in c_lo..=c_hi {
                    acc += r1[c as usize] * r2[(c + shift_c) as usize];
                }
            }
            total += weight * acc;
        }
    }
    Ok(total)
}

/// `σ̂_v` together with whether a negative quadratic form was clipped to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaHat {
    pub value: f64,
    pub clipped: bool,
}

pub fn sigma_hat(res: &ResidualField, w: &WindowWeights, cfg: &HacConfig) -> Result<SigmaHat> {
    let v = hac_cov(res, w, w, cfg)?;
    Ok(SigmaHat {
        value: v.max(0.0).sqrt(),
        clipped: v < 0.0,
    })
}

/// `σ̂_v` for every window, computed in parallel.
pub fn sigma_hats(res: &ResidualField, windows: &[WindowWeights], cfg: &HacConfig) -> Result<Vec<SigmaHat>> {
    windows.par_iter().map(|w| sigma_hat(res, w, cfg)).collect()
}

pub fn tau_hat(sigma: f64, mode: BootstrapMode) -> f64 {
    match mode {
        BootstrapMode::Homogeneous => 1.0,
        BootstrapMode::Heterogeneous => sigma.max(TAU_FLOOR).cbrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Field, Position};
    use crate::kernels::SmoothingKernel;
    use crate::rng::{stream, Domain};
    use crate::smoother::{residual_field, window_weights, SmootherConfig};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, Domain::Noise, 0);
        Array2::from_shape_fn((n, m), |_| rng.sample(StandardNormal))
    }

    fn brute(res: &ResidualField, w1: &WindowWeights, w2: &WindowWeights, cfg: &HacConfig) -> f64 {
        let (n, m) = (res.n(), res.m());
        let mut total = 0.0;
        for i1 in 1..=n {
            for j1 in 1..=m {
                let a = w1.get(i1, j1) * res.get(i1, j1);
                if a == 0.0 {
                    continue;
                }
                for i2 in 1..=n {
                    for j2 in 1..=m {
                        let b = w2.get(i2, j2) * res.get(i2, j2);
                        let di = (i1 as f64 - i2 as f64) / cfg.bandwidth;
                        let dj = (j1 as f64 - j2 as f64) / cfg.bandwidth;
                        total += a * b * cfg.kernel.eval(di) * cfg.kernel.eval(dj);
                    }
                }
            }
        }
        total
    }

    fn setup(n: usize, k: usize, seed: u64) -> (ResidualField, SmootherConfig) {
        let sm = SmootherConfig::new(k, SmoothingKernel::Quartic).unwrap();
        let f = Field::new(noise(n, n, seed)).unwrap();
        (residual_field(&f, &sm).unwrap(), sm)
    }

    fn ww(p: usize, q: usize, n: usize, sm: &SmootherConfig) -> WindowWeights {
        window_weights(&Position::at_lattice(p, q, n, n), sm, n, n).unwrap()
    }

    #[test]
    fn zero_residuals_give_zero() {
        let res = ResidualField::from_interior(Array2::zeros((10, 10)), 1).unwrap();
        let sm = SmootherConfig::new(1, SmoothingKernel::Quartic).unwrap();
        let w = ww(4, 5, 10, &sm);
        let cfg = HacConfig::new(2.0, VarianceKernel::Gaussian).unwrap();
        assert_eq!(hac_cov(&res, &w, &w, &cfg).unwrap(), 0.0);
        assert_eq!(sigma_hat(&res, &w, &cfg).unwrap(), SigmaHat { value: 0.0, clipped: false });
    }

    #[test]
    fn matches_quadruple_sum_on_eight_by_eight() {
        let (res, sm) = setup(8, 1, 5);
        let cfg = HacConfig::new(2.0, VarianceKernel::Gaussian).unwrap();
        let w = ww(4, 5, 8, &sm);
        let fast = hac_cov(&res, &w, &w, &cfg).unwrap();
        assert!((fast - brute(&res, &w, &w, &cfg)).abs() < 1e-10);
    }

    #[test]
    fn distant_windows_decouple() {
        let (res, sm) = setup(40, 3, 17);
        let cfg = HacConfig::new(1.0, VarianceKernel::Gaussian).unwrap();
        let (w1, w2) = (ww(8, 8, 40, &sm), ww(32, 32, 40, &sm));
        let norm: f64 = res.values().iter().map(|v| v * v).sum();
        let fast = hac_cov(&res, &w1, &w2, &cfg).unwrap();
        let slow = brute(&res, &w1, &w2, &cfg);
        assert!(fast.abs() <= 1e-8 * norm);
        assert!(slow.abs() <= 1e-8 * norm);
    }

    #[test]
    fn near_zero_bandwidth_keeps_only_the_diagonal() {
        for seed in 0..5 {
            let raw = noise(60, 60, 100 + seed);
            let res = ResidualField::from_interior(raw, 10).unwrap();
            let sm = SmootherConfig::new(10, SmoothingKernel::Quartic).unwrap();
            let w = ww(30, 30, 60, &sm);
            let cfg = HacConfig::new(1e-6, VarianceKernel::Gaussian).unwrap();
            let s = sigma_hat(&res, &w, &cfg).unwrap().value;
            let diag: f64 = w
                .row_range()
                .flat_map(|i| w.col_range().map(move |j| (i, j)))
                .map(|(i, j)| (w.get(i, j) * res.get(i, j)).powi(2))
                .sum();
            assert!((s * s - diag).abs() < 1e-12);
            assert!((0.8..=1.2).contains(&s), "{s}");
        }
    }

    #[test]
    fn support_outside_interior_is_rejected() {
        let (res, _) = setup(20, 3, 1);
        let sm = SmootherConfig::new(3, SmoothingKernel::Quartic).unwrap();
        let w = ww(5, 10, 20, &sm);
        let cfg = HacConfig::new(1.0, VarianceKernel::Gaussian).unwrap();
        assert!(matches!(hac_cov(&res, &w, &w, &cfg), Err(Error::Boundary(_))));
    }

    #[test]
    fn negative_forms_are_clipped() {
        let sm = SmootherConfig::new(1, SmoothingKernel::Uniform).unwrap();
        let signs = Array2::from_shape_fn((9, 9), |(_, j)| if j % 2 == 0 { 1.0 } else { -1.0 });
        let res = ResidualField::from_interior(signs, 1).unwrap();
        let cfg = HacConfig::new(1.0, VarianceKernel::custom("step", |x: f64| match x.abs() {
            a if a < 0.5 => 1.0,
            a if a < 1.5 => -1.0,
            _ => 0.0,
        }))
        .unwrap();
        let w = ww(5, 5, 9, &sm);
        // rows: 3 − 2·2 = −1, columns: 3 + 2·2 = 7, weights 1/9
        assert!((hac_cov(&res, &w, &w, &cfg).unwrap() + 7.0 / 9.0).abs() < 1e-12);
        assert_eq!(sigma_hat(&res, &w, &cfg).unwrap(), SigmaHat { value: 0.0, clipped: true });
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_hat(123.0, BootstrapMode::Homogeneous), 1.0);
        assert_eq!(tau_hat(1.0, BootstrapMode::Heterogeneous), 1.0);
        assert!((tau_hat(0.008, BootstrapMode::Heterogeneous) - 0.2).abs() < 1e-15);
        assert_eq!(tau_hat(0.0, BootstrapMode::Heterogeneous), TAU_FLOOR.cbrt());
    }

    #[test]
    fn parallel_sigmas_match_serial() {
        let (res, sm) = setup(40, 3, 2);
        let cfg = HacConfig::new(2.0, VarianceKernel::Bartlett).unwrap();
        let ws: Vec<_> = (7..=34).step_by(3).map(|p| ww(p, 41 - p, 40, &sm)).collect();
        let par = sigma_hats(&res, &ws, &cfg).unwrap();
        for (w, s) in ws.iter().zip(&par) {
            assert_eq!(*s, sigma_hat(&res, w, &cfg).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn lag_sum_matches_oracle(n in 6usize..=12, k in 1usize..=2, b in 1usize..=2,
                                  seed in 0u64..10_000, picks in prop::array::uniform4(0.0f64..1.0),
                                  bartlett in any::<bool>()) {
            prop_assume!(n >= 4 * k + 2);
            let (res, sm) = setup(n, k, seed);
            let kern = if bartlett { VarianceKernel::Bartlett } else { VarianceKernel::Gaussian };
            let cfg = HacConfig::new(b as f64, kern).unwrap();
            let lo = 2 * k + 1;
            let span = (n - 2 * k - lo) as f64;
            let at = |x: f64| lo + (x * span).round() as usize;
            let w1 = ww(at(picks[0]), at(picks[1]), n, &sm);
            let w2 = ww(at(picks[2]), at(picks[3]), n, &sm);
            let fast = hac_cov(&res, &w1, &w2, &cfg).unwrap();
            prop_assert!((fast - brute(&res, &w1, &w2, &cfg)).abs() < 1e-10);
            let back = hac_cov(&res, &w2, &w1, &cfg).unwrap();
            prop_assert!((fast - back).abs() < 1e-12);
        }

        #[test]
        fn quadratic_in_residual_scale(lambda in -4.0f64..4.0, seed in 0u64..1000) {
            let (res, sm) = setup(30, 3, seed);
            let cfg = HacConfig::new(2.0, VarianceKernel::Gaussian).unwrap();
            let (w1, w2) = (ww(12, 14, 30, &sm), ww(15, 18, 30, &sm));
            let base = hac_cov(&res, &w1, &w2, &cfg).unwrap();
            let scaled = hac_cov(&res.scaled(lambda), &w1, &w2, &cfg).unwrap();
            prop_assert!((scaled - lambda * lambda * base).abs() < 1e-10 * (1.0 + base.abs()));
        }
    }
}
