//! Green's functions of `(1 - alpha^2 Laplacian)` and the Gram systems built from them.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Gram systems whose 1-norm condition number exceeds this are treated as a collision.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HelmholtzKernel {
    alpha: f64,
    dim: usize,
}

impl HelmholtzKernel {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha = {alpha} must be positive")));
        }
        if dim != 1 && dim != 3 {
            return Err(Error::InvalidArgument(format!("kernel dimension {dim} is not supported (1 or 3)")));
        }
        Ok(Self { alpha, dim })
    }

    pub fn one_d(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `G(m, m')`
    pub fn eval(&self, m: &[f64], m_prime: &[f64]) -> Result<f64> {
        check_dim(self.dim, m.len())?;
        check_dim(self.dim, m_prime.len())?;
        let r = distance(m, m_prime);
        match self.dim {
            1 => Ok(self.eval_1d_dist(r)),
            _ => {
                if r == 0.0 {
                    return Err(Error::SingularKernel);
                }
                Ok((-r / self.alpha).exp() / (4.0 * PI * self.alpha * self.alpha * r))
            }
        }
    }

    /// Derivative of `G` in its first argument.
    ///
    /// In 1D the value at coincidence is defined as zero (the even-function
    /// convention under which an isolated peakon keeps its momentum).
    pub fn grad_q(&self, q: &[f64], q_prime: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, q.len())?;
        check_dim(self.dim, q_prime.len())?;
        match self.dim {
            1 => Ok(vec![self.grad_1d(q[0], q_prime[0])]),
            _ => {
                let r = distance(q, q_prime);
                if r == 0.0 {
                    return Err(Error::SingularKernel);
                }
                let a = self.alpha;
                // dG/dr = -G (1/alpha + 1/r)
                let g = (-r / a).exp() / (4.0 * PI * a * a * r);
                let dg = -g * (1.0 / a + 1.0 / r);
                Ok(q.iter().zip(q_prime).map(|(x, y)| dg * (x - y) / r).collect())
            }
        }
    }

    #[inline]
    fn eval_1d_dist(&self, r: f64) -> f64 {
        (-r / self.alpha).exp() / (2.0 * self.alpha)
    }

    /// Scalar fast path of [`eval`](Self::eval) for one-dimensional kernels.
    #[inline]
    pub fn eval_1d(&self, x: f64, y: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        self.eval_1d_dist((x - y).abs())
    }

    /// Scalar fast path of [`grad_q`](Self::grad_q) for one-dimensional kernels.
    #[inline]
    pub fn grad_1d(&self, x: f64, y: f64) -> f64 {
        debug_assert_eq!(self.dim, 1);
        let d = x - y;
        if d == 0.0 {
            0.0
        } else {
            -d.signum() * self.eval_1d_dist(d.abs()) / self.alpha
        }
    }

    pub fn gram(&self, points: &[Vec<f64>]) -> Result<GramSystem> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("gram needs at least one point".into()));
        }
        let n = points.len();
        let mut matrix = DMatrix::zeros(n, n);
        for a in 0..n {
            for b in a..n {
                let v = if a == b && self.dim == 3 {
                    // the diagonal of the 3D kernel is singular
                    return Err(Error::SingularKernel);
                } else {
                    self.eval(&points[a], &points[b])?
                };
                matrix[(a, b)] = v;
                matrix[(b, a)] = v;
            }
        }
        Ok(GramSystem::from_matrix(points.to_vec(), matrix))
    }

    /// Gram system of scalar positions (1D kernels).
    pub fn gram_1d(&self, points: &[f64]) -> Result<GramSystem> {
        if self.dim != 1 {
            return Err(Error::InvalidArgument("gram_1d requires a one-dimensional kernel".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument("gram needs at least one point".into()));
        }
        let n = points.len();
        let matrix = DMatrix::from_fn(n, n, |a, b| self.eval_1d(points[a], points[b]));
        Ok(GramSystem::from_matrix(points.iter().map(|&p| vec![p]).collect(), matrix))
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Symmetric kernel matrix `G(Q_a, Q_b)` with its Cholesky factor when it exists.
#[derive(Clone, Debug)]
pub struct GramSystem {
    pub points: Vec<Vec<f64>>,
    pub matrix: DMatrix<f64>,
    /// 1-norm condition number; `f64::INFINITY` when the matrix is numerically singular
    /// or not positive definite.
    pub cond_estimate: f64,
    factor: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl GramSystem {
    fn from_matrix(points: Vec<Vec<f64>>, matrix: DMatrix<f64>) -> Self {
        let factor = matrix.clone().cholesky();
        let cond_estimate = match &factor {
            Some(chol) => {
                let inv = chol.inverse();
                let c = one_norm(&matrix) * one_norm(&inv);
                if c.is_finite() && c < 1.0 / f64::EPSILON {
                    c
                } else {
                    f64::INFINITY
                }
            }
            None => f64::INFINITY,
        };
        Self {
            points,
            matrix,
            cond_estimate,
            factor,
        }
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Solves `G x = rhs`, refusing systems past [`CONDITION_LIMIT`].
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.len(), rhs.len())?;
        if !(self.cond_estimate <= CONDITION_LIMIT) {
            return Err(Error::NearCollision(format!(
                "Gram condition estimate {:e} exceeds {CONDITION_LIMIT:e}",
                self.cond_estimate
            )));
        }
        let chol = self.factor.as_ref().expect("finite condition implies a factor");
        let x = chol.solve(&DVector::from_column_slice(rhs));
        Ok(x.iter().copied().collect())
    }
}

/// Free-function form of [`GramSystem::solve`].
pub fn solve_gram(g: &GramSystem, rhs: &[f64]) -> Result<Vec<f64>> {
    g.solve(rhs)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
