use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BilevelProblem, ExactOracles, Matrix, SecondOrderOracles, SmoothnessConstants, Vector};

use super::{is_symmetric, spectral_norm, sym_eigen_range};

/// Nonconvex-strongly-concave quadratic game
///
/// ```text
/// f(x, y) = q Σ x_i⁴ + ½ xᵀ A x + xᵀ B y − ½ yᵀ C y
/// ```
///
/// posed as a bilevel problem with `g = −f`. `Φ(x) = max_y f(x, y)` equals
/// `q Σ x_i⁴ + ½ xᵀ (A + B C⁻¹ Bᵀ) x`.
#[derive(Clone, Debug)]
pub struct MinimaxQuadratic {
    a_x: Matrix,
    b: Matrix,
    c: Matrix,
    quartic: f64,
    box_radius: f64,
    constants: SmoothnessConstants,
    c_chol: Cholesky<f64, nalgebra::Dyn>,
    // A + B C⁻¹ Bᵀ
    schur: Matrix,
    // B C⁻¹, d × n
    jac: Matrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxSpec {
    pub a_x: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    #[serde(default)]
    pub quartic: f64,
    pub box_radius: f64,
}

impl MinimaxQuadratic {
    /// `b` is `d × n`.
    pub fn new(a_x: Matrix, b: Matrix, c: Matrix, quartic: f64, box_radius: f64) -> Result<Self> {
        let d = a_x.nrows();
        let n = c.nrows();
        if a_x.ncols() != d || c.ncols() != n || b.nrows() != d || b.ncols() != n {
            return Err(Error::ConstructionFailed("minimax dimensions disagree".into()));
        }
        if !is_symmetric(&a_x) || !is_symmetric(&c) {
            return Err(Error::ConstructionFailed("A and C must be symmetric".into()));
        }
        if !(quartic >= 0.0 && quartic.is_finite()) || !(box_radius > 0.0) {
            return Err(Error::ConstructionFailed("invalid quartic or box radius".into()));
        }
        let (mu, _) = sym_eigen_range(&c);
        if mu <= 0.0 {
            return Err(Error::ConstructionFailed("C must be positive definite".into()));
        }
        let c_chol = Cholesky::new(c.clone()).ok_or(Error::SingularSystem)?;
        let jac = c_chol.solve(&b.transpose()).transpose();
        let schur = &a_x + &jac * b.transpose();
        let schur = (&schur + schur.transpose()) * 0.5;

        let mut joint = Matrix::zeros(d + n, d + n);
        joint.view_mut((0, 0), (d, d)).copy_from(&a_x);
        joint.view_mut((0, d), (d, n)).copy_from(&b);
        joint.view_mut((d, 0), (n, d)).copy_from(&b.transpose());
        joint.view_mut((d, d), (n, n)).copy_from(&(-&c));
        let r = box_radius;
        let ell = (spectral_norm(&joint) + 12.0 * quartic * r * r).max(mu);
        let rho = 24.0 * quartic * r;
        // y ranges over y*(box), whose radius is ‖C⁻¹Bᵀ‖ R.
        let ry = spectral_norm(&jac) * r;
        let bn = spectral_norm(&b);
        let gx = 4.0 * quartic * r.powi(3) + spectral_norm(&a_x) * r + bn * ry;
        let gy = bn * r + spectral_norm(&c) * ry;
        let m_bound = (gx * gx + gy * gy).sqrt();
        let constants = SmoothnessConstants::new(mu, ell, rho, 0.0, m_bound, 0.0)?;
        Ok(Self {
            a_x,
            b,
            c,
            quartic,
            box_radius,
            constants,
            c_chol,
            schur,
            jac,
        })
    }

    pub fn from_spec(s: &MinimaxSpec) -> Result<Self> {
        Self::new(
            super::matrix_from_rows(&s.a_x)?,
            super::matrix_from_rows(&s.b)?,
            super::matrix_from_rows(&s.c)?,
            s.quartic,
            s.box_radius,
        )
    }

    pub fn to_spec(&self) -> MinimaxSpec {
        MinimaxSpec {
            a_x: super::matrix_to_rows(&self.a_x),
            b: super::matrix_to_rows(&self.b),
            c: super::matrix_to_rows(&self.c),
            quartic: self.quartic,
            box_radius: self.box_radius,
        }
    }

    pub fn a_x(&self) -> &Matrix {
        &self.a_x
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Matrix {
        &self.c
    }
    pub fn quartic(&self) -> f64 {
        self.quartic
    }

    /// The game objective `f` itself.
    pub fn value(&self, x: &Vector, y: &Vector) -> f64 {
        let quart: f64 = x.iter().map(|t| t.powi(4)).sum();
        self.quartic * quart + 0.5 * x.dot(&(&self.a_x * x)) + x.dot(&(&self.b * y)) - 0.5 * y.dot(&(&self.c * y))
    }

    pub fn grad_x(&self, x: &Vector, y: &Vector) -> Vector {
        x.map(|t| 4.0 * self.quartic * t * t * t) + &self.a_x * x + &self.b * y
    }

    pub fn grad_y(&self, x: &Vector, y: &Vector) -> Vector {
        self.b.transpose() * x - &self.c * y
    }

    pub fn hess_xx(&self, x: &Vector) -> Matrix {
        let mut h = self.a_x.clone();
        for i in 0..x.len() {
            h[(i, i)] += 12.0 * self.quartic * x[i] * x[i];
        }
        h
    }
}

impl BilevelProblem for MinimaxQuadratic {
    fn dim_x(&self) -> usize {
        self.a_x.nrows()
    }
    fn dim_y(&self) -> usize {
        self.c.nrows()
    }
    fn f(&self, x: &Vector, y: &Vector) -> f64 {
        self.value(x, y)
    }
    fn g(&self, x: &Vector, y: &Vector) -> f64 {
        -self.value(x, y)
    }
    fn grad_x_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.grad_x(x, y)
    }
    fn grad_y_f(&self, x: &Vector, y: &Vector) -> Vector {
        self.grad_y(x, y)
    }
    fn grad_y_g(&self, x: &Vector, y: &Vector) -> Vector {
        -self.grad_y(x, y)
    }
    fn hvp_yy_g(&self, _x: &Vector, _y: &Vector, v: &Vector) -> Vector {
        &self.c * v
    }
    fn jvp_xy_g(&self, _x: &Vector, _y: &Vector, v: &Vector) -> Vector {
        -(&self.b * v)
    }
    fn constants(&self) -> &SmoothnessConstants {
        &self.constants
    }
    fn exact(&self) -> Option<&dyn ExactOracles> {
        Some(self)
    }
    fn second_order(&self) -> Option<&dyn SecondOrderOracles> {
        Some(self)
    }
    fn is_minimax(&self) -> bool {
        true
    }
}

impl ExactOracles for MinimaxQuadratic {
    fn y_star(&self, x: &Vector) -> Vector {
        self.c_chol.solve(&(self.b.transpose() * x))
    }
    fn phi(&self, x: &Vector) -> f64 {
        let quart: f64 = x.iter().map(|t| t.powi(4)).sum();
        self.quartic * quart + 0.5 * x.dot(&(&self.schur * x))
    }
    fn grad_phi(&self, x: &Vector) -> Vector {
        x.map(|t| 4.0 * self.quartic * t * t * t) + &self.schur * x
    }
    fn hess_phi(&self, x: &Vector) -> Matrix {
        let mut h = self.schur.clone();
        for i in 0..x.len() {
            h[(i, i)] += 12.0 * self.quartic * x[i] * x[i];
        }
        h
    }
}

impl SecondOrderOracles for MinimaxQuadratic {
    fn hess_xx_f(&self, x: &Vector, _y: &Vector) -> Matrix {
        self.hess_xx(x)
    }
    fn hess_xy_f(&self, _x: &Vector, _y: &Vector) -> Matrix {
        self.b.clone()
    }
    fn hess_yy_f(&self, _x: &Vector, _y: &Vector) -> Matrix {
        -self.c.clone()
    }
    fn ystar_jacobian(&self, _x: &Vector) -> Matrix {
        self.jac.clone()
    }
    fn ystar_curvature(&self, _x: &Vector, _w: &Vector) -> Matrix {
        Matrix::zeros(self.dim_x(), self.dim_x())
    }
}
