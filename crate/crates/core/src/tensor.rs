//! Minimal dense row-major tensor of f64 values.
//!
//! No autodiff, no views, no arbitrary broadcasting: the only broadcast
//! supported is a rank-1 row vector against the trailing axis of a
//! higher-rank tensor, which is all the toolkit needs.

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Build a tensor, checking the shape/data contract and finiteness.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape_len(&shape) != data.len() {
            return Err(CoreError::Contract(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                shape_len(&shape),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::Contract(format!(
                "non-finite element {} at index {}",
                data[i], i
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Like `new` but without the finiteness check, for internal results
    /// whose contract explicitly allows extreme values.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape_len(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape_len(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(CoreError::Contract("from_rows: empty row list".into()));
        }
        let cols = rows[0].len();
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(CoreError::ShapeMismatch {
                op: "from_rows",
                left: vec![rows.len(), cols],
                right: vec![bad.len()],
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Scalar value of a single-element tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(CoreError::Contract(format!(
                "scalar: tensor has shape {:?}",
                self.shape
            )))
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape_len(&shape) != self.data.len() {
            return Err(CoreError::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Length of the trailing axis (the channel axis by convention).
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when the tensor is viewed as `[rows × last_dim]`.
    pub fn leading_len(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.data.len() / self.last_dim()
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.rank(), 2);
        let cols = self.shape[1];
        self.data[i * cols + j] = v;
    }

    /// Standard matrix product with f64 accumulation.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 2 || rhs.rank() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(CoreError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = rhs.shape[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &rhs.data[p * n..(p + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_raw(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(CoreError::ShapeMismatch {
                op: "transpose",
                left: self.shape.clone(),
                right: vec![],
            });
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_raw(vec![n, m], out))
    }

    fn zip_broadcast(
        &self,
        rhs: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        let mut out = Vec::with_capacity(self.data.len().max(rhs.data.len()));
        if self.shape == rhs.shape {
            out.extend(self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)));
            return Ok(Tensor::from_raw(self.shape.clone(), out));
        }
        // Row vector broadcast over the trailing axis, either side.
        if rhs.rank() == 1 && self.last_dim() == rhs.len() {
            let d = rhs.len();
            out.extend(
                self.data
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| f(a, rhs.data[i % d])),
            );
            return Ok(Tensor::from_raw(self.shape.clone(), out));
        }
        if self.rank() == 1 && rhs.last_dim() == self.len() {
            let d = self.len();
            out.extend(
                rhs.data
                    .iter()
                    .enumerate()
                    .map(|(i, &b)| f(self.data[i % d], b)),
            );
            return Ok(Tensor::from_raw(rhs.shape.clone(), out));
        }
        Err(CoreError::ShapeMismatch {
            op,
            left: self.shape.clone(),
            right: rhs.shape.clone(),
        })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(rhs, "sub", |a, b| a - b)
    }

    /// Hadamard product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_broadcast(rhs, "mul", |a, b| a * b)
    }

    pub fn div(&self, rhs: &Tensor) -> Result<Tensor> {
        // Pre-scan the divisor so a zero is reported instead of a silent Inf.
        if let Some(i) = rhs.data.iter().position(|&b| b == 0.0) {
            return Err(CoreError::DivisionByZero { op: "div", index: i });
        }
        self.zip_broadcast(rhs, "div", |a, b| a / b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&a| a * k).collect())
    }

    pub fn exp(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&a| a.exp()).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::domain("exp", "overflow to non-finite value"));
        }
        Ok(Tensor::from_raw(self.shape.clone(), data))
    }

    pub fn log2(&self) -> Result<Tensor> {
        if let Some(i) = self.data.iter().position(|&a| a <= 0.0) {
            return Err(CoreError::domain(
                "log2",
                format!("non-positive element {} at index {}", self.data[i], i),
            ));
        }
        Ok(Tensor::from_raw(
            self.shape.clone(),
            self.data.iter().map(|&a| a.log2()).collect(),
        ))
    }

    /// Round to nearest, ties to even. Fixed for reproducibility.
    pub fn round_half_to_even(&self) -> Tensor {
        Tensor::from_raw(
            self.shape.clone(),
            self.data.iter().map(|&a| a.round_ties_even()).collect(),
        )
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        Tensor::from_raw(
            self.shape.clone(),
            self.data.iter().map(|&a| a.clamp(lo, hi)).collect(),
        )
    }

    fn reduce_axis(&self, axis: usize, init: f64, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(CoreError::Contract(format!(
                "reduce: axis {} out of range for shape {:?}",
                axis, self.shape
            )));
        }
        let axis_len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        let mut out = vec![init; outer * inner];
        for o in 0..outer {
            for a in 0..axis_len {
                let base = (o * axis_len + a) * inner;
                for i in 0..inner {
                    let slot = &mut out[o * inner + i];
                    *slot = f(*slot, self.data[base + i]);
                }
            }
        }
        Ok(Tensor::from_raw(out_shape, out))
    }

    pub fn reduce_min(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, f64::INFINITY, f64::min)
    }

    pub fn reduce_max(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, f64::NEG_INFINITY, f64::max)
    }

    pub fn reduce_mean(&self, axis: usize) -> Result<Tensor> {
        let n = self.shape.get(axis).copied().unwrap_or(0);
        if n == 0 {
            return Err(CoreError::Contract(format!(
                "reduce_mean: axis {} out of range for shape {:?}",
                axis, self.shape
            )));
        }
        let sum = self.reduce_axis(axis, 0.0, |acc, v| acc + v)?;
        Ok(sum.scale(1.0 / n as f64))
    }

    /// Population variance (divide by the axis length).
    pub fn reduce_var(&self, axis: usize) -> Result<Tensor> {
        let n = self.shape.get(axis).copied().unwrap_or(0);
        if n == 0 {
            return Err(CoreError::Contract(format!(
                "reduce_var: axis {} out of range for shape {:?}",
                axis, self.shape
            )));
        }
        let mean = self.reduce_mean(axis)?;
        // E[(x - mean)^2] accumulated against the broadcast mean.
        let axis_len = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let outer: usize = self.shape[..axis].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..axis_len {
                let base = (o * axis_len + a) * inner;
                for i in 0..inner {
                    let d = self.data[base + i] - mean.data[o * inner + i];
                    out[o * inner + i] += d * d;
                }
            }
        }
        let mut out_shape = self.shape.clone();
        out_shape.remove(axis);
        Ok(Tensor::from_raw(out_shape, out).scale(1.0 / axis_len as f64))
    }

    /// Per-channel min and max with the trailing axis as channels.
    pub fn channel_min_max(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.last_dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for (i, &v) in self.data.iter().enumerate() {
            let c = i % d;
            if v < lo[c] {
                lo[c] = v;
            }
            if v > hi[c] {
                hi[c] = v;
            }
        }
        (lo, hi)
    }
}

/// True when the value is an exact integer (quantized codes are stored as
/// floats holding integer values).
pub fn is_integral(v: f64) -> bool {
    v.is_finite() && v == v.trunc()
}
