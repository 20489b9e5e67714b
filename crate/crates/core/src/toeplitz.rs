//! Symmetric square roots of the Toeplitz kernel matrices
//! `K_r = {K((i₁ − i₂)/ℬ)}` and `K_c = {K((j₁ − j₂)/ℬ)}`.
//!
//! Two constructions are provided:
//!
//! - [`sqrt_dense`]: eigendecomposition of the full matrix, negative
//!   eigenvalues clipped to zero, `Q = U·diag(√λ)·Uᵀ`. Exact, `O(n³)`.
//! - [`sqrt_fft`]: the circulant route. The kernel row is embedded evenly
//!   in a circulant of length `L = 2^⌈log₂ 2n⌉`, its spectrum is clipped at
//!   zero and square-rooted, and the operator is applied as
//!   FFT → multiply → inverse FFT → truncate. The truncated circulant root
//!   agrees with the exact root away from the matrix edges but is off by
//!   `O(1)` within a few bandwidths of them, so the operator also carries a
//!   dense `h × h` correction for the two corner blocks. The correction comes
//!   from the exact root of a `3h × 3h` section, and by persymmetry the same
//!   block serves both corners. Application stays `O(n log n + h²)`.
//!
//! When the two boundary layers would overlap (`3h ≥ n`) the FFT operator
//! simply stores the exact dense root.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView1, ArrayViewMut1, Axis};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::VarianceKernel;

/// Largest matrix the dense path will decompose.
pub const DENSE_CAP: usize = 2048;

/// Sizes up to this use the dense root when the caller asks for [`SqrtChoice::Auto`].
pub const AUTO_DENSE_MAX: usize = 256;

/// First row `t ↦ K(t/ℬ)`, `t = 0..n`, of a symmetric Toeplitz kernel matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzKernelRow {
    bandwidth: f64,
    kernel: String,
    values: Vec<f64>,
}

impl ToeplitzKernelRow {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// The full `n × n` Toeplitz matrix.
    pub fn to_matrix(&self) -> Array2<f64> {
        let n = self.len();
        Array2::from_shape_fn((n, n), |(i, j)| self.values[i.abs_diff(j)])
    }

    fn truncated(&self, n: usize) -> Self {
        Self {
            bandwidth: self.bandwidth,
            kernel: self.kernel.clone(),
            values: self.values[..n].to_vec(),
        }
    }
}

pub fn build_row(n: usize, bandwidth: f64, k: &VarianceKernel) -> Result<ToeplitzKernelRow> {
    if n == 0 {
        return Err(Error::InvalidArgument("Toeplitz size must be at least 1".into()));
    }
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "variance bandwidth must be positive, got {bandwidth}"
        )));
    }
    Ok(ToeplitzKernelRow {
        bandwidth,
        kernel: k.name().to_string(),
        values: (0..n).map(|t| k.eval(t as f64 / bandwidth)).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SqrtMode {
    Dense,
    Fft,
}

/// Which construction to use; `Auto` picks dense up to [`AUTO_DENSE_MAX`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SqrtChoice {
    #[default]
    Auto,
    Dense,
    Fft,
}

impl std::str::FromStr for SqrtChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "dense" => Ok(Self::Dense),
            "fft" => Ok(Self::Fft),
            _ => Err(Error::InvalidArgument(format!("unknown square-root mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `Q·mat`
    Left,
    /// `mat·Q`
    Right,
}

struct Spectral {
    len: usize,
    /// `√s / L`, so the inverse transform needs no further scaling.
    root: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// `h × h` correction added to both corner blocks.
    corner: Array2<f64>,
}

enum Repr {
    Dense(Array2<f64>),
    Spectral(Spectral),
}

/// Symmetric square root `Q` of a Toeplitz kernel matrix, `Q·Q ≈ T`.
pub struct SqrtOperator {
    size: usize,
    mode: SqrtMode,
    bandwidth: f64,
    kernel: String,
    clipped: f64,
    repr: Repr,
}

impl fmt::Debug for SqrtOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SqrtOperator")
            .field("size", &self.size)
            .field("mode", &self.mode)
            .field("bandwidth", &self.bandwidth)
            .field("kernel", &self.kernel)
            .field("clipped", &self.clipped)
            .finish()
    }
}

impl SqrtOperator {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn mode(&self) -> SqrtMode {
        self.mode
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn kernel_name(&self) -> &str {
        &self.kernel
    }

    /// Magnitude of the most negative eigenvalue (dense) or spectral value
    /// (FFT) that was clipped to zero; `0` when nothing was clipped.
    pub fn clipped(&self) -> f64 {
        self.clipped
    }

    /// Whether this operator was built for the given bandwidth and kernel.
    pub fn matches(&self, bandwidth: f64, kernel: &VarianceKernel) -> bool {
        self.bandwidth == bandwidth && self.kernel == kernel.name()
    }

    /// Width of the corrected boundary layer (0 for dense storage).
    pub fn boundary_layer(&self) -> usize {
        match &self.repr {
            Repr::Dense(_) => 0,
            Repr::Spectral(s) => s.corner.nrows(),
        }
    }

    /// `Q·v`.
    pub fn apply(&self, v: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
        self.check_len(v.len())?;
        let mut out = vec![0.0; self.size];
        match &self.repr {
            Repr::Dense(q) => {
                for (o, row) in out.iter_mut().zip(q.rows()) {
                    *o = row.dot(&v);
                }
            }
            Repr::Spectral(s) => {
                let mut scratch = s.buffers();
                s.apply_pair(v, None, &mut scratch);
                for (o, c) in out.iter_mut().zip(&scratch.0) {
                    *o = c.re;
                }
                s.add_corners(v, &mut ArrayViewMut1::from(out.as_mut_slice()));
            }
        }
        Ok(out)
    }

    /// The explicit `n × n` matrix of the operator.
    pub fn to_dense(&self) -> Array2<f64> {
        match &self.repr {
            Repr::Dense(q) => q.clone(),
            Repr::Spectral(_) => apply_sqrt_columns(self, &Array2::eye(self.size), Side::Left)
                .expect("identity has matching shape"),
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.size {
            return Err(Error::Shape {
                expected: format!("dimension {}", self.size),
                found: format!("dimension {len}"),
            });
        }
        Ok(())
    }
}

struct Scratch(Vec<Complex64>, Vec<Complex64>);

impl Spectral {
    fn buffers(&self) -> Scratch {
        let scratch_len = self
            .fwd
            .get_inplace_scratch_len()
            .max(self.inv.get_inplace_scratch_len());
        Scratch(
            vec![Complex64::new(0.0, 0.0); self.len],
            vec![Complex64::new(0.0, 0.0); scratch_len],
        )
    }

    /// Circulant part applied to `a + i·b`. The multiplier is real and even,
    /// so the real and imaginary parts of the result are the images of `a`
    /// and `b` separately.
    fn apply_pair(&self, a: ArrayView1<'_, f64>, b: Option<ArrayView1<'_, f64>>, s: &mut Scratch) {
        let n = a.len();
        let buf = &mut s.0;
        for (t, slot) in buf.iter_mut().enumerate() {
            *slot = if t < n {
                Complex64::new(a[t], b.map_or(0.0, |b| b[t]))
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        self.fwd.process_with_scratch(buf, &mut s.1);
        for (c, r) in buf.iter_mut().zip(&self.root) {
            *c *= *r;
        }
        self.inv.process_with_scratch(buf, &mut s.1);
    }

    fn add_corners(&self, v: ArrayView1<'_, f64>, out: &mut ArrayViewMut1<'_, f64>) {
        let n = v.len();
        let h = self.corner.nrows();
        for a in 0..h {
            let row = self.corner.row(a);
            let mut top = 0.0;
            let mut bottom = 0.0;
            for b in 0..h {
                top += row[b] * v[b];
                bottom += row[b] * v[n - 1 - b];
            }
            out[a] += top;
            out[n - 1 - a] += bottom;
        }
    }
}

fn eig_root(t: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = t.nrows();
    let mat = DMatrix::from_fn(n, n, |i, j| t[[i, j]]);
    let eig = SymmetricEigen::new(mat);
    let min_eig = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let mut scaled = eig.eigenvectors.clone();
    for (mut col, &lambda) in scaled.column_iter_mut().zip(eig.eigenvalues.iter()) {
        col *= lambda.max(0.0).sqrt();
    }
    let q = scaled * eig.eigenvectors.transpose();
    let mut out = Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)]);
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (out[[i, j]] + out[[j, i]]);
            out[[i, j]] = avg;
            out[[j, i]] = avg;
        }
    }
    (out, (-min_eig).max(0.0))
}

pub fn sqrt_dense(row: &ToeplitzKernelRow) -> Result<SqrtOperator> {
    sqrt_dense_capped(row, DENSE_CAP)
}

pub fn sqrt_dense_capped(row: &ToeplitzKernelRow, cap: usize) -> Result<SqrtOperator> {
    let n = row.len();
    if n > cap {
        return Err(Error::Size { size: n, cap });
    }
    let (q, clipped) = eig_root(&row.to_matrix());
    Ok(SqrtOperator {
        size: n,
        mode: SqrtMode::Dense,
        bandwidth: row.bandwidth,
        kernel: row.kernel.clone(),
        clipped,
        repr: Repr::Dense(q),
    })
}

/// Corrected boundary layer width for bandwidth `ℬ`.
fn boundary_width(bandwidth: f64) -> usize {
    (12.0 * bandwidth).ceil().max(24.0) as usize
}

fn embedding(row: &ToeplitzKernelRow) -> (usize, Vec<f64>, f64, Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    let n = row.len();
    let len = (2 * n).next_power_of_two();
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    buf[0].re = row.values[0];
    for t in 1..n {
        buf[t].re = row.values[t];
        buf[len - t].re = row.values[t];
    }
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    fwd.process(&mut buf);
    let min_s = buf.iter().map(|c| c.re).fold(f64::INFINITY, f64::min);
    let root = buf
        .iter()
        .map(|c| c.re.max(0.0).sqrt() / len as f64)
        .collect();
    (len, root, (-min_s).max(0.0), fwd, inv)
}

/// First row of the truncated circulant root: inverse FFT of the clipped,
/// square-rooted spectrum of the evenly embedded kernel row. Entry `d` is
/// the coefficient at offset `±d`.
pub fn circulant_root_row(row: &ToeplitzKernelRow) -> Vec<f64> {
    let (_, root, _, _, inv) = embedding(row);
    let mut buf: Vec<Complex64> = root.iter().map(|&r| Complex64::new(r, 0.0)).collect();
    inv.process(&mut buf);
    buf.iter().take(row.len()).map(|c| c.re).collect()
}

pub fn sqrt_fft(row: &ToeplitzKernelRow) -> Result<SqrtOperator> {
    let n = row.len();
    if n < 2 {
        return Err(Error::InvalidArgument("FFT square root needs n ≥ 2".into()));
    }
    let h = boundary_width(row.bandwidth);
    if 3 * h >= n {
        let dense = sqrt_dense(row)?;
        return Ok(SqrtOperator {
            mode: SqrtMode::Fft,
            ..dense
        });
    }
    let section = 3 * h;
    if section > DENSE_CAP {
        return Err(Error::Size {
            size: section,
            cap: DENSE_CAP,
        });
    }
    let (len, root, clipped, fwd, inv) = embedding(row);
    let mut r: Vec<Complex64> = root.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    inv.process(&mut r);
    let (exact, _) = eig_root(&row.truncated(section).to_matrix());
    let corner = Array2::from_shape_fn((h, h), |(i, j)| exact[[i, j]] - r[i.abs_diff(j)].re);
    Ok(SqrtOperator {
        size: n,
        mode: SqrtMode::Fft,
        bandwidth: row.bandwidth,
        kernel: row.kernel.clone(),
        clipped,
        repr: Repr::Spectral(Spectral {
            len,
            root,
            fwd,
            inv,
            corner,
        }),
    })
}

/// Builds the root for `n` points with the requested construction.
pub fn sqrt_operator(
    n: usize,
    bandwidth: f64,
    k: &VarianceKernel,
    choice: SqrtChoice,
) -> Result<SqrtOperator> {
    let row = build_row(n, bandwidth, k)?;
    match choice {
        SqrtChoice::Dense => sqrt_dense(&row),
        SqrtChoice::Fft if n >= 2 => sqrt_fft(&row),
        SqrtChoice::Fft => sqrt_dense(&row),
        SqrtChoice::Auto if n <= AUTO_DENSE_MAX => sqrt_dense(&row),
        SqrtChoice::Auto => sqrt_fft(&row),
    }
}

/// `Q·mat` (`Side::Left`) or `mat·Q` (`Side::Right`).
pub fn apply_sqrt_columns(op: &SqrtOperator, mat: &Array2<f64>, side: Side) -> Result<Array2<f64>> {
    let dim = match side {
        Side::Left => mat.nrows(),
        Side::Right => mat.ncols(),
    };
    if dim != op.size {
        return Err(Error::Shape {
            expected: format!("{:?} dimension {}", side, op.size),
            found: format!("{}x{} matrix", mat.nrows(), mat.ncols()),
        });
    }
    match &op.repr {
        Repr::Dense(q) => Ok(match side {
            Side::Left => q.dot(mat),
            Side::Right => mat.dot(q),
        }),
        Repr::Spectral(s) => {
            // Left acts on columns, Right on rows (Q is symmetric).
            let axis = match side {
                Side::Left => Axis(1),
                Side::Right => Axis(0),
            };
            let mut out = Array2::zeros(mat.dim());
            let mut scratch = s.buffers();
            let lanes: Vec<_> = mat.axis_iter(axis).collect();
            let mut outs: Vec<_> = out.axis_iter_mut(axis).collect();
            for (pair, dst) in lanes.chunks(2).zip(outs.chunks_mut(2)) {
                s.apply_pair(pair[0].view(), pair.get(1).map(|b| b.view()), &mut scratch);
                for (t, c) in scratch.0.iter().take(op.size).enumerate() {
                    dst[0][t] = c.re;
                    if dst.len() > 1 {
                        dst[1][t] = c.im;
                    }
                }
                for (lane, d) in pair.iter().zip(dst.iter_mut()) {
                    s.add_corners(lane.view(), d);
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn random_matrix(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::stream(seed, crate::rng::Domain::Noise, 0);
        Array2::from_shape_fn((r, c), |_| rng.sample(StandardNormal))
    }

    #[test]
    fn row_examples() {
        let r = build_row(3, 1.0, &VarianceKernel::Gaussian).unwrap();
        assert_eq!(r.values(), &[1.0, (-0.5f64).exp(), (-2.0f64).exp()]);
        let wide = build_row(5, 1e12, &VarianceKernel::Gaussian).unwrap();
        assert!(wide.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(build_row(4, 0.0, &VarianceKernel::Gaussian).is_err());
    }

    #[test]
    fn dense_single_point() {
        let op = sqrt_dense(&build_row(1, 3.0, &VarianceKernel::Gaussian).unwrap()).unwrap();
        assert_eq!(op.to_dense()[[0, 0]], 1.0);
    }

    #[test]
    fn dense_two_by_two_closed_form() {
        let a = (-0.5f64).exp();
        let op = sqrt_dense(&build_row(2, 1.0, &VarianceKernel::Gaussian).unwrap()).unwrap();
        let q = op.to_dense();
        // eigenvalues 1 ± a on (1,1)/√2 and (1,−1)/√2
        let (sp, sm) = ((1.0 + a).sqrt(), (1.0 - a).sqrt());
        assert!((q[[0, 0]] - 0.5 * (sp + sm)).abs() < 1e-12);
        assert!((q[[0, 1]] - 0.5 * (sp - sm)).abs() < 1e-12);
        assert_eq!(q[[0, 1]], q[[1, 0]]);
        let t = Array2::from_shape_vec((2, 2), vec![1.0, a, a, 1.0]).unwrap();
        assert!(max_abs(&(q.dot(&q) - t)) < 1e-12);
    }

    #[test]
    fn identity_row_gives_identity() {
        let k = VarianceKernel::Bartlett;
        let row = build_row(40, 0.5, &k).unwrap();
        assert_eq!(&row.values()[..3], &[1.0, 0.0, 0.0]);
        let dense = sqrt_dense(&row).unwrap().to_dense();
        assert!(max_abs(&(dense - Array2::<f64>::eye(40))) < 1e-14);
        let fft = sqrt_fft(&build_row(300, 1e-3, &VarianceKernel::Gaussian).unwrap()).unwrap();
        assert_eq!(fft.mode(), SqrtMode::Fft);
        assert!(fft.boundary_layer() > 0);
        let v = random_matrix(300, 1, 3);
        let w = apply_sqrt_columns(&fft, &v, Side::Left).unwrap();
        assert!(max_abs(&(w - &v)) < 1e-12);
    }

    #[test]
    fn dense_cap() {
        let row = build_row(10, 2.0, &VarianceKernel::Gaussian).unwrap();
        assert!(matches!(sqrt_dense_capped(&row, 8), Err(Error::Size { size: 10, cap: 8 })));
    }

    #[test]
    fn dense_reproduces_toeplitz() {
        for n in [5, 32, 100] {
            for b in [0.7, 2.0, 5.0, 10.0] {
                let row = build_row(n, b, &VarianceKernel::Gaussian).unwrap();
                let q = sqrt_dense(&row).unwrap().to_dense();
                assert_eq!(q, q.t());
                assert!(max_abs(&(q.dot(&q) - row.to_matrix())) <= 1e-8);
            }
        }
    }

    #[test]
    fn fft_square_reproduces_toeplitz() {
        for (n, b) in [(64, 5.0), (300, 2.0), (400, 5.0)] {
            let row = build_row(n, b, &VarianceKernel::Gaussian).unwrap();
            let op = sqrt_fft(&row).unwrap();
            let t = row.to_matrix();
            let mut v = random_matrix(n, 20, 11);
            for mut col in v.columns_mut() {
                let norm = col.dot(&col).sqrt();
                col /= norm;
            }
            let once = apply_sqrt_columns(&op, &v, Side::Left).unwrap();
            let twice = apply_sqrt_columns(&op, &once, Side::Left).unwrap();
            assert!(max_abs(&(twice - t.dot(&v))) <= 1e-6, "n={n} b={b}");
        }
    }

    #[test]
    fn fft_matches_dense_root() {
        for (n, b) in [(64, 5.0), (200, 1.0), (300, 2.0), (500, 5.0)] {
            let row = build_row(n, b, &VarianceKernel::Gaussian).unwrap();
            let fft = sqrt_fft(&row).unwrap();
            let dense = sqrt_dense(&row).unwrap();
            let v = random_matrix(n, 20, 5);
            let a = apply_sqrt_columns(&fft, &v, Side::Left).unwrap();
            let d = apply_sqrt_columns(&dense, &v, Side::Left).unwrap();
            assert!(max_abs(&(a - d)) <= 1e-6, "n={n} b={b}");
        }
    }

    #[test]
    fn circulant_root_is_exact_only_in_the_interior() {
        let n = 256;
        let row = build_row(n, 2.0, &VarianceKernel::Gaussian).unwrap();
        let r = circulant_root_row(&row);
        let q = sqrt_dense(&row).unwrap().to_dense();
        let edge = (q[[0, 0]] - r[0]).abs();
        assert!(edge > 1e-2, "edge deviation {edge}");
        let interior = (40..n - 40)
            .flat_map(|i| (40..n - 40).map(move |j| (i, j)))
            .map(|(i, j)| (q[[i, j]] - r[i.abs_diff(j)]).abs())
            .fold(0.0f64, f64::max);
        assert!(interior < 1e-8, "interior deviation {interior}");
    }

    #[test]
    fn fft_apply_is_linear() {
        let row = build_row(333, 3.0, &VarianceKernel::Gaussian).unwrap();
        let op = sqrt_fft(&row).unwrap();
        let u = random_matrix(333, 1, 1);
        let v = random_matrix(333, 1, 2);
        let (alpha, beta) = (0.37, -2.1);
        let lhs = apply_sqrt_columns(&op, &(&u * alpha + &v * beta), Side::Left).unwrap();
        let rhs = apply_sqrt_columns(&op, &u, Side::Left).unwrap() * alpha
            + apply_sqrt_columns(&op, &v, Side::Left).unwrap() * beta;
        assert!(max_abs(&(lhs - rhs)) < 1e-12);
    }

    #[test]
    fn single_vector_apply_matches_matrix_apply() {
        let row = build_row(301, 2.0, &VarianceKernel::Gaussian).unwrap();
        let op = sqrt_fft(&row).unwrap();
        let m = random_matrix(301, 3, 8);
        let all = apply_sqrt_columns(&op, &m, Side::Left).unwrap();
        for c in 0..3 {
            let one = op.apply(m.column(c)).unwrap();
            for (a, b) in one.iter().zip(all.column(c)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(op.apply(m.row(0)).is_err());
    }

    #[test]
    fn dense_products_match_explicit_multiply() {
        let op = sqrt_dense(&build_row(4, 1.5, &VarianceKernel::Gaussian).unwrap()).unwrap();
        let q = op.to_dense();
        let m = random_matrix(4, 4, 21);
        let left = apply_sqrt_columns(&op, &m, Side::Left).unwrap();
        let mut explicit = Array2::<f64>::zeros((4, 4));
        for i in 0..4 {
            for j in 0..4 {
                explicit[[i, j]] = (0..4).map(|k| q[[i, k]] * m[[k, j]]).sum();
            }
        }
        assert!(max_abs(&(left - explicit)) < 1e-13);
    }

    #[test]
    fn two_sided_product_on_rectangle() {
        let qr = sqrt_dense(&build_row(8, 2.0, &VarianceKernel::Gaussian).unwrap()).unwrap();
        let qc = sqrt_dense(&build_row(6, 1.0, &VarianceKernel::Gaussian).unwrap()).unwrap();
        let m = random_matrix(8, 6, 4);
        let both = apply_sqrt_columns(
            &qc,
            &apply_sqrt_columns(&qr, &m, Side::Left).unwrap(),
            Side::Right,
        )
        .unwrap();
        let (a, c) = (qr.to_dense(), qc.to_dense());
        let mut explicit = Array2::<f64>::zeros((8, 6));
        for i in 0..8 {
            for j in 0..6 {
                let mut s = 0.0;
                for k in 0..8 {
                    for l in 0..6 {
                        s += a[[i, k]] * m[[k, l]] * c[[l, j]];
                    }
                }
                explicit[[i, j]] = s;
            }
        }
        assert!(max_abs(&(both - explicit)) < 1e-12);
        assert!(apply_sqrt_columns(&qr, &m, Side::Right).is_err());
    }

    #[test]
    fn identity_operator_is_noop() {
        let row = build_row(7, 1e-6, &VarianceKernel::Gaussian).unwrap();
        let op = sqrt_dense(&row).unwrap();
        let m = random_matrix(7, 3, 9);
        assert_eq!(apply_sqrt_columns(&op, &m, Side::Left).unwrap(), m);
    }

    #[test]
    fn clipping_reported_for_non_psd_kernel() {
        let boxcar = VarianceKernel::custom("boxcar", |x: f64| if x.abs() <= 1.0 { 1.0 } else { 0.0 });
        let op = sqrt_dense(&build_row(30, 4.0, &boxcar).unwrap()).unwrap();
        assert!(op.clipped() > 1e-3);
        let gauss = sqrt_dense(&build_row(30, 0.8, &VarianceKernel::Gaussian).unwrap()).unwrap();
        assert!(gauss.clipped() < 1e-10);
    }
}
