//! Dense rank-4 `[N, C, H, W]` storage and the elementwise/reduction kernels
//! shared by every layer.
//!
//! Lower-rank data (linear-layer vectors, per-channel scales) is embedded as
//! `[N, C, 1, 1]`. The only broadcast supported is a per-channel right-hand
//! operand of shape `[N, C, 1, 1]` or `[1, C, 1, 1]`.

use std::fmt;
use std::io::{Read, Write};

use num_traits::Float;

use crate::error::{Error, Result};

pub type Shape = [usize; 4];

/// Storage precision tag used by the binary tensor format.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32 = 0,
    F64 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::F64),
            t => Err(Error::format(format!("unknown dtype tag {t}"))),
        }
    }
}

/// Scalar type a tensor can hold. Training runs in `f32`; gradient checks
/// switch the whole run to `f64`.
pub trait Real:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static
{
    const DTYPE: DType;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const DTYPE: DType = DType::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: DType = DType::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

impl BinaryOp {
    #[inline]
    fn apply<T: Real>(self, a: T, b: T) -> T {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceAxes {
    /// `H, W` -> result `[N, C, 1, 1]`.
    Spatial,
    /// `N, H, W` -> result `[1, C, 1, 1]`.
    BatchSpatial,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        let len = shape.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::invalid(format!(
                "tensor {shape:?} needs {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Shape, v: T) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.shape)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            for j in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(i, j, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// Per-channel vector embedded as `[1, C, 1, 1]`.
    pub fn channel_vector(values: &[T]) -> Self {
        Tensor {
            shape: [1, values.len(), 1, 1],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = v;
    }

    /// One `H x W` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place `self += other`, exact shapes.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// `op(a, b)` with `b` either the same shape as `a` or a per-channel
    /// `[N, C, 1, 1]` / `[1, C, 1, 1]` operand.
    pub fn elementwise(op: BinaryOp, a: &Self, b: &Self) -> Result<Self> {
        if a.shape == b.shape {
            let data = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| op.apply(x, y))
                .collect();
            return Ok(Tensor {
                shape: a.shape,
                data,
            });
        }
        if !is_channel_broadcast(a.shape, b.shape) {
            return Err(Error::ShapeMismatch {
                op: "elementwise",
                lhs: a.shape,
                rhs: b.shape,
            });
        }
        let [n, c, h, w] = a.shape;
        let hw = h * w;
        let mut data = Vec::with_capacity(a.len());
        for i in 0..n {
            let bn = if b.shape[0] == 1 { 0 } else { i };
            for j in 0..c {
                let y = b.data[bn * c + j];
                let start = (i * c + j) * hw;
                data.extend(a.data[start..start + hw].iter().map(|&x| op.apply(x, y)));
            }
        }
        Ok(Tensor {
            shape: a.shape,
            data,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        Self::elementwise(BinaryOp::Mul, self, other)
    }

    pub fn reduce(&self, kind: ReduceKind, axes: ReduceAxes) -> Result<Self> {
        if self.is_empty() {
            return Err(Error::Empty("reduce"));
        }
        let [n, c, h, w] = self.shape;
        let hw = h * w;
        let mut out = match axes {
            ReduceAxes::Spatial => Tensor::zeros([n, c, 1, 1]),
            ReduceAxes::BatchSpatial => Tensor::zeros([1, c, 1, 1]),
        };
        for i in 0..n {
            for j in 0..c {
                let s: T = self.plane(i, j).iter().copied().sum();
                let k = match axes {
                    ReduceAxes::Spatial => i * c + j,
                    ReduceAxes::BatchSpatial => j,
                };
                out.data[k] = out.data[k] + s;
            }
        }
        if kind == ReduceKind::Mean {
            let count = match axes {
                ReduceAxes::Spatial => hw,
                ReduceAxes::BatchSpatial => n * hw,
            };
            let inv = T::one() / T::from_f64(count as f64);
            out.data.iter_mut().for_each(|v| *v = *v * inv);
        }
        Ok(out)
    }

    /// Global average pooling over `H, W`.
    pub fn gap(&self) -> Result<Self> {
        self.reduce(ReduceKind::Mean, ReduceAxes::Spatial)
    }

    /// Serialize in the `LKDT` binary format.
    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(4 + 2 + 1 + 32 + self.len() * T::DTYPE.size());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.push(T::DTYPE as u8);
        for d in self.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(&mut buf);
        }
        out.write_all(&buf)?;
        Ok(())
    }

    /// Read an `LKDT` record. Payloads stored at the other precision are
    /// converted.
    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut header = [0u8; 4 + 2 + 1 + 32];
        read_exact(input, &mut header)?;
        if &header[0..4] != MAGIC {
            return Err(Error::format("missing LKDT magic"));
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FORMAT_VERSION {
            return Err(Error::format(format!(
                "unsupported tensor format version {version}"
            )));
        }
        let dtype = DType::from_tag(header[6])?;
        let mut shape = [0usize; 4];
        for (k, d) in shape.iter_mut().enumerate() {
            let s = 7 + 8 * k;
            let v = u64::from_le_bytes(header[s..s + 8].try_into().expect("8 bytes"));
            *d = usize::try_from(v).map_err(|_| Error::format("dimension overflows usize"))?;
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("tensor size overflows"))?;
        let mut payload = vec![0u8; len * dtype.size()];
        read_exact(input, &mut payload)?;
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::read_le(b) as f64))
                .collect(),
            DType::F64 => payload
                .chunks_exact(8)
                .map(|b| T::from_f64(f64::read_le(b)))
                .collect(),
        };
        Ok(Tensor { shape, data })
    }
}

pub const MAGIC: &[u8; 4] = b"LKDT";
pub const FORMAT_VERSION: u16 = 1;

/// Header bytes preceding the payload of one `LKDT` record.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 32;

fn read_exact(input: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format("truncated tensor record")
        } else {
            Error::Io(e)
        }
    })
}

pub(crate) fn is_channel_broadcast(a: Shape, b: Shape) -> bool {
    b[1] == a[1] && b[2] == 1 && b[3] == 1 && (b[0] == a[0] || b[0] == 1)
}
