use fieldinfer::bandwidth::{select_variance_bandwidth, VbConfig};
use fieldinfer::grid::make_position_grid;
use fieldinfer::hac::{sigma_hat, HacConfig};
use fieldinfer::kernels::{SmoothingKernel, VarianceKernel};
use fieldinfer::simulate::{simulate_noise, NoiseKind};
use fieldinfer::smoother::{estimate_set, residual_field, window_weights, ResidualField, SmootherConfig};

/// Mean `σ̂²` (from residuals and from the true noise) against the
/// Monte-Carlo second moment of `(T/B)·μ̂`, pooled over a 5×5 grid.
fn hac_ratios(sims: u64) -> (f64, f64) {
    let sm = SmootherConfig::new(10, SmoothingKernel::Quartic).unwrap();
    let hac = HacConfig::new(2.0, VarianceKernel::Gaussian).unwrap();
    let grid = make_position_grid(200, 200, 10, 5).unwrap();
    let windows: Vec<_> = grid.iter().map(|p| window_weights(p, &sm, 200, 200).unwrap()).collect();
    let (mut from_res, mut from_noise, mut mc) = (0.0, 0.0, 0.0);
    for seed in 0..sims {
        let f = simulate_noise(NoiseKind::Ar2d, 200, 200, seed).unwrap();
        let est = estimate_set(&f, &grid, &sm).unwrap();
        let res = residual_field(&f, &sm).unwrap();
        let noise = ResidualField::from_interior(f.values().clone(), 10).unwrap();
        for (w, mu) in windows.iter().zip(&est.estimates) {
            from_res += sigma_hat(&res, w, &hac).unwrap().value.powi(2);
            from_noise += sigma_hat(&noise, w, &hac).unwrap().value.powi(2);
            mc += (est.t_nm / est.b_nm * mu).powi(2);
        }
    }
    (from_res / mc, from_noise / mc)
}

#[test]
fn hac_tracks_monte_carlo_variance() {
    let (res, noise) = hac_ratios(100);
    assert!((noise - 1.0).abs() <= 0.15, "noise-based ratio {noise}");
    // residual smoothing removes part of the window-scale covariance
    assert!((0.75..1.0).contains(&res), "residual-based ratio {res}");
}

#[test]
fn iid_sigma_is_near_one() {
    let sm = SmootherConfig::new(10, SmoothingKernel::Quartic).unwrap();
    let hac = HacConfig::new(1e-6, VarianceKernel::Gaussian).unwrap();
    let grid = make_position_grid(200, 200, 10, 3).unwrap();
    for seed in 0..5 {
        let f = simulate_noise(NoiseKind::IidNormal, 200, 200, seed).unwrap();
        let raw = ResidualField::from_interior(f.into_values(), 10).unwrap();
        for p in grid.iter() {
            let s = sigma_hat(&raw, &window_weights(p, &sm, 200, 200).unwrap(), &hac).unwrap();
            assert!((0.8..=1.2).contains(&s.value), "{}", s.value);
            assert!(!s.clipped);
        }
    }
}

#[test]
fn variance_bandwidth_mode_on_ar_noise() {
    let sm = SmootherConfig::new(10, SmoothingKernel::Quartic).unwrap();
    let mut counts = [0usize; 11];
    for seed in 0..20u64 {
        let f = simulate_noise(NoiseKind::Ar2d, 200, 200, 1000 + seed).unwrap();
        let cfg = VbConfig { seed, ..VbConfig::default() };
        let out = select_variance_bandwidth(&f, &sm, &VarianceKernel::Gaussian, &cfg).unwrap();
        counts[out.b_best as usize] += 1;
    }
    let mode = (1..=10).max_by_key(|&b| (counts[b], std::cmp::Reverse(b))).unwrap();
    assert!((1..=4).contains(&mode), "{counts:?}");
}
