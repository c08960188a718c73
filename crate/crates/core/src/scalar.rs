use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar used throughout the crate.
///
/// Dense linear algebra is routed through the two associated functions so
/// that generic code never has to juggle `num_traits::Float` and
/// `nalgebra::RealField` method names at the same time.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal.
    fn lit(x: f64) -> Self;

    /// Widens to `f64` for reporting and error payloads.
    fn as_f64(self) -> f64;

    /// Solves `a x = b` by LU with partial pivoting.
    fn lu_solve(a: DMatrix<Self>, b: DVector<Self>) -> Option<DVector<Self>>;

    /// Eigen-decomposition of a symmetric matrix, eigenvalues ascending,
    /// eigenvectors as matching columns.
    fn symmetric_eigen(a: DMatrix<Self>) -> (Vec<Self>, DMatrix<Self>);

    /// Eigenvalues of a symmetric matrix, ascending.
    fn symmetric_eigenvalues(a: DMatrix<Self>) -> Vec<Self>;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn lu_solve(a: DMatrix<Self>, b: DVector<Self>) -> Option<DVector<Self>> {
                a.lu().solve(&b)
            }

            fn symmetric_eigen(a: DMatrix<Self>) -> (Vec<Self>, DMatrix<Self>) {
                let eig = a.symmetric_eigen();
                let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
                order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
                let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
                let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
                    eig.eigenvectors[(r, order[c])]
                });
                (values, vectors)
            }

            fn symmetric_eigenvalues(a: DMatrix<Self>) -> Vec<Self> {
                let mut v: Vec<Self> = a.symmetric_eigenvalues().iter().copied().collect();
                v.sort_by(|x, y| x.total_cmp(y));
                v
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);
