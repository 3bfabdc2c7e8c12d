//! Dense linear-algebra substrate: row-major matrices, the kernels the
//! model needs, parameter initialization, MLPs, the gradient tape, and
//! the adaptive-moment optimizer.

mod adam;
mod init;
mod mlp;
mod tape;

pub use adam::AdamState;
pub use init::{xavier_from_rng, xavier_init};
pub use mlp::{mlp_forward, mlp_forward_on_tape, Activation, MlpSpec, MlpWeights};
pub use tape::{GradientSet, GradientTape, ParamId, TensorId};

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

static THREADS: AtomicUsize = AtomicUsize::new(1);

/// Sets the number of worker threads used by row-parallel kernels.
/// Results are bitwise identical for any thread count: each output row
/// is accumulated in the same order regardless of how rows are split.
pub fn set_threads(n: usize) {
    THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn threads() -> usize {
    THREADS.load(Ordering::Relaxed)
}

/// Dense row-major matrix of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a tensor from row-major data. Errors when the data length
    /// does not equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(
                "from_vec",
                format!("{} values cannot fill a {rows}x{cols} tensor", data.len()),
            ));
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dimension(
                    "from_rows",
                    format!("ragged rows: expected width {c}, found {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Tensor2::from_vec(r, c, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.cols.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the row-major buffer under a new shape with the
    /// same number of elements.
    pub fn reshaped(&self, rows: usize, cols: usize) -> Result<Tensor2> {
        Tensor2::from_vec(rows, cols, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Frobenius distance between two same-shaped tensors.
    pub fn frobenius_distance(&self, other: &Tensor2) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn shape_err(op: &'static str, a: &Tensor2, b: &Tensor2) -> Error {
    Error::dimension(
        op,
        format!(
            "{}x{} is incompatible with {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ),
    )
}

/// `out = a · b`. Row-parallel when `set_threads` was raised; the
/// per-row accumulation order never changes, so results are bitwise
/// independent of the thread count.
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.rows {
        return Err(shape_err("matmul", a, b));
    }
    let mut out = Tensor2::zeros(a.rows, b.cols);
    matmul_into(a, b, &mut out);
    Ok(out)
}

fn matmul_into(a: &Tensor2, b: &Tensor2, out: &mut Tensor2) {
    let cols = b.cols;
    let run = |rows: std::ops::Range<usize>, out_chunk: &mut [f64]| {
        for (local, r) in rows.enumerate() {
            let orow = &mut out_chunk[local * cols..(local + 1) * cols];
            let arow = a.row(r);
            for (k, &aik) in arow.iter().enumerate() {
                let brow = &b.data[k * cols..(k + 1) * cols];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
    };
    parallel_rows(a.rows, cols, out.data_mut(), run);
}

/// `a · bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols != b.cols {
        return Err(shape_err("matmul_nt", a, b));
    }
    let mut out = Tensor2::zeros(a.rows, b.rows);
    let cols = b.rows;
    let run = |rows: std::ops::Range<usize>, out_chunk: &mut [f64]| {
        for (local, r) in rows.enumerate() {
            let arow = a.row(r);
            let orow = &mut out_chunk[local * cols..(local + 1) * cols];
            for (j, o) in orow.iter_mut().enumerate() {
                let brow = b.row(j);
                *o = dot(arow, brow);
            }
        }
    };
    parallel_rows(a.rows, cols, out.data_mut(), run);
    Ok(out)
}

/// `aᵀ · b` without materializing the transpose.
pub fn matmul_tn(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.rows != b.rows {
        return Err(shape_err("matmul_tn", a, b));
    }
    let mut out = Tensor2::zeros(a.cols, b.cols);
    for k in 0..a.rows {
        let arow = a.row(k);
        let brow = b.row(k);
        for (i, &aki) in arow.iter().enumerate() {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aki * bkj;
            }
        }
    }
    Ok(out)
}

fn parallel_rows(
    rows: usize,
    cols: usize,
    out: &mut [f64],
    run: impl Fn(std::ops::Range<usize>, &mut [f64]) + Sync,
) {
    let n = threads();
    if n <= 1 || rows < 128 {
        run(0..rows, out);
        return;
    }
    let chunk_rows = rows.div_ceil(n);
    std::thread::scope(|scope| {
        let mut rest = out;
        let mut start = 0;
        while start < rows {
            let end = (start + chunk_rows).min(rows);
            let (chunk, tail) = rest.split_at_mut((end - start) * cols);
            rest = tail;
            let range = start..end;
            let run = &run;
            scope.spawn(move || run(range, chunk));
            start = end;
        }
    });
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    zip_elementwise("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    zip_elementwise("sub", a, b, |x, y| x - y)
}

pub fn hadamard(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    zip_elementwise("hadamard", a, b, |x, y| x * y)
}

fn zip_elementwise(
    op: &'static str,
    a: &Tensor2,
    b: &Tensor2,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor2> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor2 {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Adds a 1-row bias to every row of `a`.
pub fn add_row_broadcast(a: &Tensor2, bias: &Tensor2) -> Result<Tensor2> {
    if bias.rows != 1 || bias.cols != a.cols {
        return Err(shape_err("add_row_broadcast", a, bias));
    }
    let mut out = a.clone();
    for r in 0..out.rows {
        for (o, &b) in out.row_mut(r).iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

// Largest f64 strictly below 1.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Numerically stable sigmoid, clamped so the result stays strictly
/// inside (0, 1) even where the exact value would round to 0 or 1.
pub fn sigmoid(x: f64) -> f64 {
    let y = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    y.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

pub fn sigmoid_tensor(a: &Tensor2) -> Tensor2 {
    a.map(sigmoid)
}

/// Concatenates tensors side by side; all parts must share a row count.
pub fn concat_cols(parts: &[&Tensor2]) -> Result<Tensor2> {
    let rows = parts.first().map_or(0, |p| p.rows);
    let cols: usize = parts.iter().map(|p| p.cols).sum();
    for p in parts {
        if p.rows != rows {
            return Err(Error::dimension(
                "concat_cols",
                format!("row counts differ: {} vs {}", rows, p.rows),
            ));
        }
    }
    let mut out = Tensor2::zeros(rows, cols);
    for r in 0..rows {
        let orow = out.row_mut(r);
        let mut at = 0;
        for p in parts {
            orow[at..at + p.cols].copy_from_slice(p.row(r));
            at += p.cols;
        }
    }
    Ok(out)
}

/// Temperature softmax of `src` written into `dst`, with
/// max-subtraction so `exp` never overflows.
pub fn softmax_into(dst: &mut [f64], src: &[f64], temperature: f64) {
    debug_assert_eq!(dst.len(), src.len());
    debug_assert!(temperature > 0.0);
    let max = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (d, &s) in dst.iter_mut().zip(src) {
        let e = ((s - max) / temperature).exp();
        *d = e;
        total += e;
    }
    for d in dst.iter_mut() {
        *d /= total;
    }
}

/// Column-sum of `a` as a 1-row tensor.
pub fn column_sums(a: &Tensor2) -> Tensor2 {
    let mut out = Tensor2::zeros(1, a.cols);
    for r in 0..a.rows {
        for (o, &v) in out.data.iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    out
}
