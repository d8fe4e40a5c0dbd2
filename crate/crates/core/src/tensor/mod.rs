//! Dense row-major tensors and a tape-based reverse-mode autodiff core.
//!
//! Everything the encoder needs lives here: [`Tensor`] values, the
//! per-forward-pass [`Graph`] tape, named parameter storage, a central
//! finite-difference oracle for gradient verification, and the binary
//! checkpoint format.
//!
//! Precision is chosen through the [`Scalar`] trait. Training runs in `f32`;
//! gradient checks run in `f64`.

mod checkpoint;
mod gradcheck;
mod graph;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use gradcheck::{finite_difference_grad, relative_error};
pub use graph::{Gradients, Graph, NodeId};
pub use params::ParamStore;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

/// Errors raised by tensor construction, graph evaluation and checkpoints.
#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("backward has already been run on this graph")]
    BackwardTwice,
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("function is not deterministic: {first} != {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Floating-point element type of a tensor.
pub trait Scalar: Float + Default + Debug + Send + Sync + Sum + 'static {
    /// Bytes per element in the checkpoint layout.
    const WIDTH: u8;

    /// `c = a · b + beta · c` for row-major-or-strided operands.
    ///
    /// `a` is `m × k`, `b` is `k × n`, `c` is `m × n`; strides are given in
    /// elements as `(row, col)` pairs.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Replaces every element by its exponential. Implementations may flush
    /// results too small to matter next to 1 to zero.
    fn exp_in_place(xs: &mut [Self]) {
        for x in xs {
            *x = x.exp();
        }
    }
}

fn check_gemm_bounds<T>(len: usize, rows: usize, cols: usize, strides: (usize, usize)) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * strides.0 + (cols - 1) * strides.1;
    assert!(last < len, "gemm operand of {} elements too short for {rows}x{cols} with strides {strides:?} ({})", len, std::any::type_name::<T>());
}

macro_rules! impl_scalar {
    ($t:ty, $width:expr, $gemm:path, $exp:path) => {
        impl Scalar for $t {
            const WIDTH: u8 = $width;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_bounds::<$t>(a.len(), m, k, a_strides);
                check_gemm_bounds::<$t>(b.len(), k, n, b_strides);
                assert!(c.len() >= m * n, "gemm output too short");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every pointer offset touched by the kernel is
                // bounds-checked above; `c` is exclusively borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; $width];
                buf.copy_from_slice(&bytes[..$width]);
                <$t>::from_le_bytes(buf)
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn as_f64(self) -> f64 {
                self as f64
            }

            fn exp_in_place(xs: &mut [Self]) {
                $exp(xs)
            }
        }
    };
}

impl_scalar!(f32, 4, matrixmultiply::sgemm, exp_f32_slice);
impl_scalar!(f64, 8, matrixmultiply::dgemm, exp_std);

fn exp_std<T: Float>(xs: &mut [T]) {
    for x in xs {
        *x = x.exp();
    }
}

/// Branch-free single-precision exponential, accurate to about one ulp.
/// Results below about 1e-30 are flushed to zero: softmax rows never need
/// them, and letting them through puts later products in the subnormal
/// range, which is many times slower on common CPUs.
fn exp_f32_slice(xs: &mut [f32]) {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0; // 1.5 · 2^23
    for x in xs {
        let v = if *x < -87.0 { -87.0 } else if *x > 88.0 { 88.0 } else { *x };
        // After adding ROUND the low mantissa bits hold round(v · log2 e).
        let t = v * LOG2E + ROUND;
        let n = t - ROUND;
        let k = t.to_bits().wrapping_sub(ROUND.to_bits());
        let r = v - n * LN2_HI - n * LN2_LO;
        let p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
        let e = p * f32::from_bits(k.wrapping_add(127) << 23);
        *x = if v < -69.0 { 0.0 } else { e };
    }
}

/// An immutable dense tensor in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![F::zero(); n] }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn scalar(value: F) -> Self {
        Self { shape: Vec::new(), data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> F) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a scalar (or single-element) tensor.
    pub fn item(&self) -> F {
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        // `v - v` is zero for finite values and NaN otherwise; independent
        // accumulators keep the loop branch-free.
        let mut acc = [F::zero(); 8];
        let mut chunks = self.data.chunks_exact(8);
        for c in &mut chunks {
            for (a, v) in acc.iter_mut().zip(c) {
                *a = *a + (*v - *v);
            }
        }
        let tail = chunks.remainder().iter().fold(F::zero(), |a, v| a + (*v - *v));
        acc.iter().fold(tail, |a, b| a + *b) == F::zero()
    }

    /// Same values viewed under a different shape with equal element count.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::Shape { op: "reshape", lhs: self.shape, rhs: shape });
        }
        Ok(Self { shape, data: self.data })
    }

    /// Converts element precision.
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect() }
    }
}
