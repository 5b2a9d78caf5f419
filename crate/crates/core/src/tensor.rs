//! Dense row-major `f64` arrays and the cross-attention arithmetic.
//!
//! Only the handful of operations the morphing pipeline needs are provided:
//! row softmax, scaled dot-product cross-attention, linear interpolation and
//! per-row scaling. There is no broadcasting.

use crate::error::{Error, Result};

/// A dense array with explicit shape, stored row-major.
///
/// Every dimension is positive, `data.len()` equals the product of the shape
/// and all entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        if rows.iter().any(|r| r.as_ref().len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(vec![rows.len(), cols], data)
    }

    /// Internal constructor for results computed from already-valid tensors.
    fn from_parts(shape: Vec<usize>, data: Vec<f64>, op: &'static str) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(op));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a 2-D tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::Shape(format!(
                "expected a 2-D tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape[self.shape.len() - 1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Rounds every entry to the nearest `f32`, as happens when a tensor is
    /// persisted.
    pub fn round_to_f32(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| x as f32 as f64).collect(),
        }
    }

    /// True when every entry survives an `f32` round trip unchanged.
    pub fn is_f32_exact(&self) -> bool {
        self.data
            .iter()
            .all(|&x| (x as f32 as f64).to_bits() == x.to_bits())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "cannot compare {:?} with {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = self.dims2()?;
        let (k2, m) = other.dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {n}x{k} · {k2}x{m}"
            )));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            let o = &mut out[i * m..(i + 1) * m];
            for (p, &aip) in a.iter().enumerate() {
                let b = &other.data[p * m..(p + 1) * m];
                for (oj, &bpj) in o.iter_mut().zip(b) {
                    *oj += aip * bpj;
                }
            }
        }
        Tensor::from_parts(vec![n, m], out, "matmul")
    }

    /// Matrix product `self · otherᵀ`.
    pub fn matmul_transposed(&self, other: &Tensor) -> Result<Tensor> {
        let (n, d) = self.dims2()?;
        let (m, d2) = other.dims2()?;
        if d != d2 {
            return Err(Error::Shape(format!(
                "trailing dimensions differ: {n}x{d} vs {m}x{d2}"
            )));
        }
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..m {
                out.push(a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum());
            }
        }
        Tensor::from_parts(vec![n, m], out, "matmul_transposed")
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (rows, cols) = m.dims2()?;
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let row = m.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::from_parts(vec![rows, cols], out, "softmax_rows")
}

/// The attention map `softmax(q·kᵀ/√d)`.
pub fn attention_map(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (_, d) = q.dims2()?;
    let logits = q.matmul_transposed(k)?;
    let scale = (d as f64).sqrt();
    let scaled = Tensor::from_parts(
        logits.shape.clone(),
        logits.data.iter().map(|x| x / scale).collect(),
        "attention_map",
    )?;
    softmax_rows(&scaled)
}

/// Scaled dot-product cross-attention, `softmax(q·kᵀ/√d)·v`.
///
/// `q` is `n × d`, `k` is `m × d`, `v` is `m × dv`; the result is `n × dv`.
pub fn cross_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let (_, d) = q.dims2()?;
    let (m, dk) = k.dims2()?;
    let (mv, _) = v.dims2()?;
    if d != dk {
        return Err(Error::Shape(format!(
            "query width {d} differs from key width {dk}"
        )));
    }
    if m != mv {
        return Err(Error::Shape(format!("{m} keys but {mv} values")));
    }
    attention_map(q, k)?.matmul(v)
}

/// Weights `(w_a, w_b)` used by [`lerp`] for a given `alpha`.
///
/// `w_a` is `1 − alpha` rounded once and `w_b` is its exact complement, so the
/// pair always sums to one and `lerp_weights(1 − alpha)` is the swapped pair.
/// That makes `lerp(a, b, α)` and `lerp(b, a, 1 − α)` bitwise identical.
pub fn lerp_weights(alpha: f64) -> (f64, f64) {
    let wa = 1.0 - alpha;
    (wa, 1.0 - wa)
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    Ok(())
}

/// Elementwise `α·b + (1 − α)·a`; `a` is the source, `b` the target.
///
/// The endpoints return an exact copy of the corresponding operand.
pub fn lerp(a: &Tensor, b: &Tensor, alpha: f64) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Shape(format!(
            "cannot interpolate {:?} with {:?}",
            a.shape, b.shape
        )));
    }
    check_alpha(alpha)?;
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    if alpha == 1.0 {
        return Ok(b.clone());
    }
    let (wa, wb) = lerp_weights(alpha);
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| wb * y + wa * x)
        .collect();
    Tensor::from_parts(a.shape.clone(), data, "lerp")
}

/// Multiplies row `i` of `v` by `wts[i]`.
pub fn scale_rows(v: &Tensor, wts: &Tensor) -> Result<Tensor> {
    let (m, dv) = v.dims2()?;
    if wts.shape.len() != 1 || wts.len() != m {
        return Err(Error::Shape(format!(
            "weight vector of shape {:?} does not match {m} rows",
            wts.shape
        )));
    }
    let mut data = Vec::with_capacity(m * dv);
    for (i, &w) in wts.data.iter().enumerate() {
        data.extend(v.row(i).iter().map(|&x| w * x));
    }
    Tensor::from_parts(v.shape.clone(), data, "scale_rows")
}
