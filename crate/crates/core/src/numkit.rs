//! Small dense numerics: matrices, activations, PCA, gradient clipping,
//! Adagrad and seeded random streams.
//!
//! Everything is `f64` and single-threaded. The model module works on flat
//! parameter slices, so the optimizer and clipping helpers take `&mut [f64]`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("matrix entry {v}")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.values[c * self.rows + r] = self.get(r, c);
            }
        }
        t
    }
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::Shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.values[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.values[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let b_row = &b.values[k * b.cols..(k + 1) * b.cols];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aik * bv;
            }
        }
    }
    Ok(out)
}

/// `out += W x` for a row-major `W` with `x.len()` columns.
#[inline]
pub fn gemv_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), cols * out.len());
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ y` for a row-major `W` with `out.len()` columns.
#[inline]
pub fn gemv_t_acc(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    debug_assert_eq!(w.len(), cols * y.len());
    for (&yv, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yv == 0.0 {
            continue;
        }
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += yv * wv;
        }
    }
}

/// `G += y xᵀ` for a row-major gradient with `x.len()` columns.
#[inline]
pub fn outer_acc(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    debug_assert_eq!(g.len(), cols * y.len());
    for (&yv, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        if yv == 0.0 {
            continue;
        }
        for (gv, &xv) in row.iter_mut().zip(x) {
            *gv += yv * xv;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative at `x`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("input[{i}] = {}", x[i]))),
        None => Ok(()),
    }
}

pub fn activate(x: &[f64], kind: Activation) -> Result<Vec<f64>> {
    check_finite(x)?;
    Ok(x.iter().map(|&v| kind.apply(v)).collect())
}

pub fn activate_grad(x: &[f64], kind: Activation) -> Result<Vec<f64>> {
    check_finite(x)?;
    Ok(x.iter().map(|&v| kind.derivative(v)).collect())
}

/// Eigen decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` sorted by descending eigenvalue;
/// eigenvector `i` is row `i` of the returned matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Shape(format!("{}x{} is not square", a.rows, a.cols)));
    }
    let mut m = a.values.clone();
    // v holds eigenvectors as columns while rotating
    let mut v = Matrix::identity(n).values;
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m[p * n + q] * m[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (row, &col) in order.iter().enumerate() {
        for k in 0..n {
            vectors.values[row * n + k] = v[k * n + col];
        }
        canonical_sign(&mut vectors.values[row * n..(row + 1) * n]);
    }
    Ok((values, vectors))
}

/// Flip `v` so its first clearly nonzero entry is positive.
fn canonical_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Top-k principal directions of a sample matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
}

impl PcaProjection {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "vector of length {} for a {}-dim projection",
                x.len(),
                self.dim()
            )));
        }
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        Ok(self.components.iter().map(|c| dot(c, &centered)).collect())
    }

    pub fn reconstruct(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.k() {
            return Err(Error::Shape(format!("{} coords for k = {}", z.len(), self.k())));
        }
        let mut out = self.mean.clone();
        for (c, &w) in self.components.iter().zip(z) {
            for (o, &cv) in out.iter_mut().zip(c) {
                *o += w * cv;
            }
        }
        Ok(out)
    }
}

pub fn pca_fit(samples: &Matrix, k: usize) -> Result<PcaProjection> {
    let (n, d) = (samples.rows, samples.cols);
    if n < 2 {
        return Err(Error::InsufficientData(format!("PCA needs >= 2 samples, got {n}")));
    }
    if k > d {
        return Err(Error::Shape(format!("k = {k} exceeds dimension {d}")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(samples.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let centered: Vec<f64> = samples.row(r).iter().zip(&mean).map(|(x, m)| x - m).collect();
        outer_acc(&mut cov.values, &centered, &centered);
    }
    cov.values.iter_mut().for_each(|c| *c /= (n - 1) as f64);

    let (_, vectors) = symmetric_eigen(&cov)?;
    let components = (0..k).map(|i| vectors.row(i).to_vec()).collect();
    Ok(PcaProjection { mean, components })
}

pub fn global_norm(grads: &[f64]) -> f64 {
    norm(grads)
}

/// Rescale `grads` in place so their joint Euclidean norm is at most
/// `max_norm`. Returns the pre-clip norm.
pub fn global_norm_clip(grads: &mut [f64], max_norm: f64) -> f64 {
    let g = global_norm(grads);
    if g > max_norm {
        let scale = max_norm / g;
        grads.iter_mut().for_each(|x| *x *= scale);
    }
    g
}

pub const ADAGRAD_EPS: f64 = 1e-8;

/// Per-parameter accumulated squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    pub accumulator: Vec<f64>,
}

impl AdagradState {
    pub fn new(len: usize) -> Self {
        Self {
            accumulator: vec![0.0; len],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.accumulator.len() {
            return Err(Error::Shape(format!(
                "adagrad: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.accumulator.len()
            )));
        }
        for ((p, &g), acc) in params.iter_mut().zip(grads).zip(&mut self.accumulator) {
            *acc += g * g;
            *p -= lr * g / (*acc + ADAGRAD_EPS).sqrt();
        }
        Ok(())
    }
}

/// Seeded random stream: ChaCha8 keyed by `seed` on stream `stream`.
///
/// Different stream ids under the same seed are independent keystreams, so
/// per-user or per-purpose generators never share state.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, 0)
    }

    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform index in `0..n` (n > 0).
    pub fn below(&mut self, n: usize) -> usize {
        rand::Rng::random_range(&mut self.rng, 0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
