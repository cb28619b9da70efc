//! Dense row-major tensors.

use crate::error::{Error, Result};
use crate::rng::Xorshift64Star;
use crate::scalar::Scalar;

/// Dense row-major tensor. A rank-0 tensor (empty shape) holds one scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_dims(shape: &[usize]) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::InvalidShape(format!("zero-sized dimension in {shape:?}")));
    }
    Ok(())
}

impl<T: Copy> Tensor<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_dims(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::InvalidShape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::InvalidShape("empty shape".into()));
        }
        check_dims(shape)?;
        let n = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::InvalidShape(format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map<U: Copy, V: Copy>(&self, other: &Tensor<U>, f: impl Fn(T, U) -> V) -> Result<Tensor<V>> {
        if self.shape != other.shape {
            return Err(Error::InvalidShape(format!(
                "elementwise shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        check_dims(&shape)?;
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::InvalidShape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Normal samples with the given standard deviation from the portable PRNG.
    pub fn randn(shape: &[usize], seed: u64, stddev: f64) -> Result<Self> {
        let mut rng = Xorshift64Star::new(seed);
        Self::randn_with(shape, &mut rng, stddev)
    }

    pub fn randn_with(shape: &[usize], rng: &mut Xorshift64Star, stddev: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        for v in t.data.iter_mut() {
            *v = T::lit(rng.normal() * stddev);
        }
        Ok(t)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Row-major product `a (m×k) · b (k×n)`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::InvalidShape(format!(
                "matmul inner dims differ: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nn(&self.data, &other.data, &mut out, m, k, n);
        Self::from_vec(vec![m, n], out)
    }

    /// `a (m×k) · bᵀ` where `b` is `n×k`.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2()?;
        let (n, k2) = other.dims2()?;
        if k != k2 {
            return Err(Error::InvalidShape(format!(
                "matmul_t inner dims differ: {:?} x {:?}ᵀ",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_nt(&self.data, &other.data, &mut out, m, k, n);
        Self::from_vec(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::from_vec(vec![c, r], out)
    }
}

/// Raw matrix kernels over row-major slices. Loop orders keep the innermost
/// access contiguous; accumulation order is fixed so results are reproducible.
pub(crate) mod kernels {
    use crate::scalar::Scalar;

    /// `out += a (m×k) · b (k×n)`
    pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == T::zero() {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
    }

    /// `out += a (m×k) · bᵀ`, `b` is `n×k`.
    pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for i in 0..m {
            let arow = &a[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &b[j * k..(j + 1) * k];
                let mut acc = T::zero();
                for (&x, &y) in arow.iter().zip(brow) {
                    acc += x * y;
                }
                out[i * n + j] += acc;
            }
        }
    }

    /// `out += aᵀ · b` where `a` is `m×k` and `b` is `m×n`; `out` is `k×n`.
    pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
        for r in 0..m {
            let brow = &b[r * n..(r + 1) * n];
            for p in 0..k {
                let arp = a[r * k + p];
                if arp == T::zero() {
                    continue;
                }
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += arp * bv;
                }
            }
        }
    }
}
