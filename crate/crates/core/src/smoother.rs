//! Nadaraya–Watson mean-field estimation with a product kernel
//! `G((i − p)/𝒦)·G((j − q)/𝒦)` over the `(2𝒦+1)²` window, residual fields
//! and the normalized window weights `c_{i,v}^(j)`.
//!
//! Window sums are evaluated separably (inner sum along `j`, outer along
//! `i`) in one fixed order, so a single estimate and the corresponding cell
//! of the full surface are bit-identical.

use ndarray::Array2;
use serde::Serialize;

use crate::error::{BoundaryViolation, Error, Result};
use crate::grid::{validate_positions, Field, Position, PositionGrid};
use crate::kernels::SmoothingKernel;

#[derive(Debug, Clone, PartialEq)]
pub struct SmootherConfig {
    /// Window half-width `𝒦` in lattice cells.
    pub bandwidth: usize,
    pub kernel: SmoothingKernel,
}

impl SmootherConfig {
    pub fn new(bandwidth: usize, kernel: SmoothingKernel) -> Result<Self> {
        if bandwidth == 0 {
            return Err(Error::InvalidArgument("smoothing bandwidth must be at least 1".into()));
        }
        Ok(Self { bandwidth, kernel })
    }

    /// `G(u/𝒦)` for `u = −𝒦..=𝒦`.
    pub fn weights(&self) -> Vec<f64> {
        self.kernel.window(self.bandwidth)
    }
}

/// `(T_nm, B_nm)`: `T = ΣΣ G(i/𝒦)G(j/𝒦)` and `B = √(ΣΣ G²(i/𝒦)G²(j/𝒦))`.
pub fn smoothing_constants(cfg: &SmootherConfig) -> (f64, f64) {
    let g = cfg.weights();
    let s1: f64 = g.iter().sum();
    let s2: f64 = g.iter().map(|v| v * v).sum();
    (s1 * s1, (s2 * s2).sqrt())
}

/// `Σ_u g_u Σ_v g_v X[p+u][q+v]` with 1-based anchor `(p, q)`.
#[inline]
fn window_sum(values: &Array2<f64>, p: usize, q: usize, g: &[f64]) -> f64 {
    let k = g.len() / 2;
    let mut total = 0.0;
    for (u, gu) in g.iter().enumerate() {
        let row = values.row(p - 1 - k + u);
        let mut inner = 0.0;
        for (v, gv) in g.iter().enumerate() {
            inner += gv * row[q - 1 - k + v];
        }
        total += gu * inner;
    }
    total
}

fn check_window(pos: &Position, n: usize, m: usize, k: usize) -> Result<()> {
    let inside = |a: usize, len: usize| a > k && a + k <= len;
    if inside(pos.p, n) && inside(pos.q, m) {
        Ok(())
    } else {
        Err(Error::Boundary(vec![BoundaryViolation {
            index: 0,
            p: pos.p,
            q: pos.q,
        }]))
    }
}

/// `μ̂(x, y)` at a single position; needs `𝒦+1 ≤ p ≤ n−𝒦` and likewise for `q`.
pub fn nw_estimate(field: &Field, pos: &Position, cfg: &SmootherConfig) -> Result<f64> {
    check_window(pos, field.n(), field.m(), cfg.bandwidth)?;
    let g = cfg.weights();
    let (t, _) = smoothing_constants(cfg);
    Ok(window_sum(field.values(), pos.p, pos.q, &g) / t)
}

/// `μ̂(i/n, j/m)` on the interior lattice `[𝒦+1, n−𝒦] × [𝒦+1, m−𝒦]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSurface {
    n: usize,
    m: usize,
    k: usize,
    values: Array2<f64>,
}

impl MeanSurface {
    pub fn bandwidth(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    /// Interior values, row `r` holding logical row `𝒦+1+r`.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// `μ̂(i/n, j/m)` for logical interior indices.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i - self.k - 1, j - self.k - 1]]
    }
}

pub fn nw_surface(field: &Field, cfg: &SmootherConfig) -> Result<MeanSurface> {
    let (n, m, k) = (field.n(), field.m(), cfg.bandwidth);
    if n < 2 * k + 1 || m < 2 * k + 1 {
        return Err(Error::BandwidthTooLarge { k, n, m });
    }
    let g = cfg.weights();
    let (t, _) = smoothing_constants(cfg);
    let x = field.values();
    let (ni, mi) = (n - 2 * k, m - 2 * k);

    // Horizontal pass on every row, vertical pass on the interior rows.
    let mut horiz = Array2::<f64>::zeros((n, mi));
    for (r, mut out) in horiz.rows_mut().into_iter().enumerate() {
        let row = x.row(r);
        for c in 0..mi {
            let mut inner = 0.0;
            for (v, gv) in g.iter().enumerate() {
                inner += gv * row[c + v];
            }
            out[c] = inner;
        }
    }
    let mut values = Array2::<f64>::zeros((ni, mi));
    for r in 0..ni {
        for c in 0..mi {
            let mut total = 0.0;
            for (u, gu) in g.iter().enumerate() {
                total += gu * horiz[[r + u, c]];
            }
            values[[r, c]] = total / t;
        }
    }
    Ok(MeanSurface { n, m, k, values })
}

/// `ε̂ = X − μ̂` on the interior lattice, exact zeros outside.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    k: usize,
    values: Array2<f64>,
}

impl ResidualField {
    /// Wraps precomputed residuals; entries outside the interior are zeroed.
    pub fn from_interior(mut values: Array2<f64>, k: usize) -> Result<Self> {
        let (n, m) = values.dim();
        if n < 2 * k + 1 || m < 2 * k + 1 {
            return Err(Error::BandwidthTooLarge { k, n, m });
        }
        for ((r, c), v) in values.indexed_iter_mut() {
            if !(r >= k && r < n - k && c >= k && c < m - k) {
                *v = 0.0;
            }
        }
        Ok(Self { k, values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn bandwidth(&self) -> usize {
        self.k
    }

    /// Full `n × m` array, zero outside the interior.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        i > self.k && i + self.k <= self.n() && j > self.k && j + self.k <= self.m()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[[i - 1, j - 1]]
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            k: self.k,
            values: &self.values * factor,
        }
    }
}

pub fn residuals_from_surface(field: &Field, surface: &MeanSurface) -> ResidualField {
    let k = surface.k;
    let mut values = Array2::<f64>::zeros((field.n(), field.m()));
    for ((r, c), mu) in surface.values.indexed_iter() {
        values[[r + k, c + k]] = field.values()[[r + k, c + k]] - mu;
    }
    ResidualField { k, values }
}

pub fn residual_field(field: &Field, cfg: &SmootherConfig) -> Result<ResidualField> {
    Ok(residuals_from_surface(field, &nw_surface(field, cfg)?))
}

/// Normalized weights `c_{i,v}^(j) = G((i−p)/𝒦)G((j−q)/𝒦)/B_nm` on the window
/// around `(p, q)`; `Σ c² = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowWeights {
    pub p: usize,
    pub q: usize,
    pub k: usize,
    /// `(2𝒦+1)²` block; entry `[a, b]` belongs to cell `(p−𝒦+a, q−𝒦+b)`.
    pub weights: Array2<f64>,
}

impl WindowWeights {
    /// `c` at logical cell `(i, j)`, zero outside the window.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (i + self.k, j + self.k);
        if a < self.p || b < self.q || a > self.p + 2 * self.k || b > self.q + 2 * self.k {
            0.0
        } else {
            self.weights[[a - self.p, b - self.q]]
        }
    }

    /// Logical rows `p−𝒦 ..= p+𝒦`.
    pub fn row_range(&self) -> std::ops::RangeInclusive<usize> {
        self.p - self.k..=self.p + self.k
    }

    pub fn col_range(&self) -> std::ops::RangeInclusive<usize> {
        self.q - self.k..=self.q + self.k
    }
}

pub fn window_weights(pos: &Position, cfg: &SmootherConfig, n: usize, m: usize) -> Result<WindowWeights> {
    check_window(pos, n, m, cfg.bandwidth)?;
    let g = cfg.weights();
    let (_, b) = smoothing_constants(cfg);
    let weights = Array2::from_shape_fn((g.len(), g.len()), |(a, c)| g[a] * g[c] / b);
    Ok(WindowWeights {
        p: pos.p,
        q: pos.q,
        k: cfg.bandwidth,
        weights,
    })
}

/// Estimates at the target positions with the constants used to normalize
/// the bootstrap.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateSet {
    pub positions: PositionGrid,
    pub estimates: Vec<f64>,
    pub t_nm: f64,
    pub b_nm: f64,
}

/// Validates the positions (`2𝒦+1 ≤ p ≤ n−2𝒦`) and evaluates `μ̂` at each.
pub fn estimate_set(field: &Field, grid: &PositionGrid, cfg: &SmootherConfig) -> Result<EstimateSet> {
    validate_positions(grid, field.n(), field.m(), cfg.bandwidth)?;
    let g = cfg.weights();
    let (t_nm, b_nm) = smoothing_constants(cfg);
    let estimates = grid
        .iter()
        .map(|pos| window_sum(field.values(), pos.p, pos.q, &g) / t_nm)
        .collect();
    Ok(EstimateSet {
        positions: grid.clone(),
        estimates,
        t_nm,
        b_nm,
    })
}
