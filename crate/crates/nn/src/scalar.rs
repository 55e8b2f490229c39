use std::fmt::Debug;

use num_traits::Float;

/// Floating-point element type of tensors: `f32` for training, `f64` for
/// gradient checking.
pub trait Scalar: Float + Default + Debug + Send + Sync + std::iter::Sum + 'static {
    /// `c ← a·b + beta·c` for an `m×k` by `k×n` product with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn from_f64(v: f64) -> Self;

    fn to_le_bytes_vec(self) -> [u8; 4];

    fn from_le_f32(bytes: [u8; 4]) -> Self;
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

fn check(m: usize, k: usize, n: usize, a: usize, sa: (isize, isize), b: usize, sb: (isize, isize), c: usize, sc: (isize, isize)) {
    assert!(sa.0 >= 0 && sa.1 >= 0 && sb.0 >= 0 && sb.1 >= 0 && sc.0 >= 0 && sc.1 >= 0);
    assert!(span(m, k, sa) <= a, "gemm: a too short");
    assert!(span(k, n, sb) <= b, "gemm: b too short");
    assert!(span(m, n, sc) <= c, "gemm: c too short");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                sa: (isize, isize),
                b: &[Self],
                sb: (isize, isize),
                beta: Self,
                c: &mut [Self],
                sc: (isize, isize),
            ) {
                check(m, k, n, a.len(), sa, b.len(), sb, c.len(), sc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the strided extents of a, b and c were checked against
                // the slice lengths above, and c does not alias a or b.
                unsafe {
                    $gemm(
                        m, k, n, 1.0, a.as_ptr(), sa.0, sa.1, b.as_ptr(), sb.0, sb.1, beta,
                        c.as_mut_ptr(), sc.0, sc.1,
                    );
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }

            fn to_le_bytes_vec(self) -> [u8; 4] {
                (self as f32).to_le_bytes()
            }

            fn from_le_f32(bytes: [u8; 4]) -> Self {
                f32::from_le_bytes(bytes) as $t
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
