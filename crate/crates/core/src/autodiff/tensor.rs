use crate::error::{Error, Result};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt::Debug;

/// Element dtype tag, stored in checkpoints so a file written with one
/// precision cannot be silently reinterpreted as the other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    pub fn from_byte(b: u8) -> Option<Dtype> {
        match b {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F64),
            _ => None,
        }
    }
}

/// Scalar type the engine is generic over. f32 is the training precision,
/// f64 the gradient-checking precision; both route matrix products through
/// matrixmultiply's fixed-order kernels so results are run-to-run identical.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {
    const DTYPE: Dtype;
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn read_le(bytes: &[u8]) -> Self;
    fn put_le(self, out: &mut Vec<u8>);

    /// C <- alpha * A x B + beta * C with explicit row/col strides.
    ///
    /// # Safety
    /// Pointers must reference buffers valid for the given dimensions and
    /// strides; see matrixmultiply's contract.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    fn put_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major tensor. Shape is dynamic; the element count always equals
/// the product of the dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Tensor<T>> {
        let expect = checked_len(&shape)?;
        if data.len() != expect {
            return Err(Error::shape(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Tensor<T> {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], v: T) -> Tensor<T> {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; len],
        }
    }

    pub fn scalar(v: T) -> Tensor<T> {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<T>) -> Result<Tensor<T>> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// First dimension, i.e. the batch size for [B, ...] tensors.
    pub fn rows(&self) -> usize {
        *self.shape.first().unwrap_or(&0)
    }

    /// Elements per leading-dimension slice.
    pub fn row_len(&self) -> usize {
        if self.shape.is_empty() {
            0
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let expect = checked_len(&shape)?;
        if expect != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v.as_f64()).collect(),
        }
    }

    pub fn cast_from_f64(src: &Tensor<f64>) -> Tensor<T> {
        Tensor {
            shape: src.shape.clone(),
            data: src.data.iter().map(|&v| T::from_f64(v)).collect(),
        }
    }

    /// Element-wise precision cast.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Stack per-row slices into a [rows.len(), row_len] tensor (gather).
    pub fn gather_rows(&self, idx: &[usize]) -> Tensor<T> {
        let w = self.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = idx.len();
        Tensor { shape, data }
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    let mut n: usize = 1;
    for &d in shape {
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::shape(format!("shape {shape:?} overflows usize")))?;
    }
    Ok(n)
}

/// Draw an i.i.d. standard-normal tensor from the given RNG. The draw order
/// is row-major, so a seeded RNG yields the same tensor every time.
pub fn sample_standard_normal<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let len: usize = shape.iter().product();
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        let v: f64 = StandardNormal.sample(rng);
        data.push(T::from_f64(v));
    }
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mismatched_len_is_error() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn zero_sized_shape_gives_empty_tensor() {
        let t = Tensor::<f32>::zeros(&[0]);
        assert_eq!(t.len(), 0);
        assert!(t.is_empty());
        let t = Tensor::<f64>::zeros(&[0, 7]);
        assert_eq!(t.len(), 0);
    }

    #[test]
    fn reshape_checks_element_count() {
        let t = Tensor::<f32>::zeros(&[2, 6]);
        assert!(t.reshaped(vec![3, 4]).is_ok());
        assert!(t.reshaped(vec![5, 2]).is_err());
    }

    #[test]
    fn gather_rows_picks_rows_in_order() {
        let t = Tensor::<f64>::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let g = t.gather_rows(&[2, 0]);
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.data(), &[5.0, 6.0, 1.0, 2.0]);
    }

    #[test]
    fn normal_sampling_is_seed_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let ta: Tensor<f32> = sample_standard_normal(&[4, 3], &mut a);
        let tb: Tensor<f32> = sample_standard_normal(&[4, 3], &mut b);
        assert_eq!(ta, tb);
        let empty: Tensor<f32> = sample_standard_normal(&[0], &mut a);
        assert_eq!(empty.len(), 0);
    }

    #[test]
    fn normal_sampling_has_sane_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Tensor<f64> = sample_standard_normal(&[100_000], &mut rng);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
