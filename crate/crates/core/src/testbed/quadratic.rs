use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{BilevelProblem, ExactOracles, Matrix, SecondOrderOracles, SmoothnessConstants, Vector};

use super::{is_symmetric, spectral_norm, sym_eigen_range};

/// Quadratic lower level coupled to a quartic-plus-quadratic upper level.
///
/// ```text
/// f(x, y) = q Σ x_i⁴ + ½ xᵀ P x + aᵀ y
/// g(x, y) = ½ yᵀ Q y − yᵀ (B x + c)
/// ```
///
/// Then `y*(x) = Q⁻¹(Bx + c)` and `Φ(x) = q Σ x_i⁴ + ½ xᵀ P x + aᵀ Q⁻¹ (Bx + c)`.
/// Constants are taken over the ball `‖x‖ ≤ box_radius`.
#[derive(Clone, Debug)]
pub struct QuadraticCoupledBilevel {
    q: Matrix,
    b: Matrix,
    c: Vector,
    p_upper: Matrix,
    quartic: f64,
    a: Vector,
    box_radius: f64,
    constants: SmoothnessConstants,
    q_chol: Cholesky<f64, nalgebra::Dyn>,
    // Bᵀ Q⁻¹ a, the constant part of ∇Φ.
    phi_lin: Vector,
    // aᵀ Q⁻¹ c
    phi_const: f64,
    // ∂y*/∂x as d × n, i.e. Bᵀ Q⁻¹.
    jac: Matrix,
}

/// Plain-data form used for JSON problem descriptions.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticSpec {
    pub q: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub p_upper: Vec<Vec<f64>>,
    #[serde(default)]
    pub quartic: f64,
    pub a: Vec<f64>,
    pub box_radius: f64,
}

impl QuadraticCoupledBilevel {
    /// `b` is `n × d`. Constants are derived from the data over the declared box.
    pub fn new(
        q: Matrix,
        b: Matrix,
        c: Vector,
        p_upper: Matrix,
        quartic: f64,
        a: Vector,
        box_radius: f64,
    ) -> Result<Self> {
        let n = q.nrows();
        let d = b.ncols();
        if q.ncols() != n || b.nrows() != n || c.len() != n || a.len() != n {
            return Err(Error::ConstructionFailed("lower-level dimensions disagree".into()));
        }
        if p_upper.nrows() != d || p_upper.ncols() != d {
            return Err(Error::ConstructionFailed("P must be d × d".into()));
        }
        if !is_symmetric(&q) || !is_symmetric(&p_upper) {
            return Err(Error::ConstructionFailed("Q and P must be symmetric".into()));
        }
        if !(quartic >= 0.0 && quartic.is_finite()) {
            return Err(Error::ConstructionFailed("quartic coefficient must be ≥ 0".into()));
        }
        if !(box_radius > 0.0 && box_radius.is_finite()) {
            return Err(Error::ConstructionFailed("box radius must be positive".into()));
        }
        let (mu, _) = sym_eigen_range(&q);
        if mu <= 0.0 {
            return Err(Error::ConstructionFailed("Q must be positive definite".into()));
        }

        let mut joint = Matrix::zeros(d + n, d + n);
        joint.view_mut((d, d), (n, n)).copy_from(&q);
        joint.view_mut((0, d), (d, n)).copy_from(&(-b.transpose()));
        joint.view_mut((d, 0), (n, d)).copy_from(&(-&b));
        let p_norm = spectral_norm(&p_upper);
        let r = box_radius;
        let ell = spectral_norm(&joint).max(12.0 * quartic * r * r + p_norm).max(mu);
        let rho = 24.0 * quartic * r;
        let gx = 4.0 * quartic * r.powi(3) + p_norm * r;
        let m_bound = (gx * gx + a.norm_squared()).sqrt();
        let constants = SmoothnessConstants::new(mu, ell, rho, 0.0, m_bound, 0.0)?;

        Self::with_constants(q, b, c, p_upper, quartic, a, box_radius, constants)
    }

    /// Same as [`new`](Self::new) but with caller-supplied constants. Used for
    /// batch-averaged problems whose constants are inherited from the family.
    #[allow(clippy::too_many_arguments)]
    pub fn with_constants(
        q: Matrix,
        b: Matrix,
        c: Vector,
        p_upper: Matrix,
        quartic: f64,
        a: Vector,
        box_radius: f64,
        constants: SmoothnessConstants,
    ) -> Result<Self> {
        let q_chol = Cholesky::new(q.clone()).ok_or(Error::SingularSystem)?;
        let z = q_chol.solve(&a);
        let phi_lin = b.transpose() * &z;
        let phi_const = z.dot(&c);
        let jac = q_chol.solve(&b).transpose();
        Ok(Self {
            q,
            b,
            c,
            p_upper,
            quartic,
            a,
            box_radius,
            constants,
            q_chol,
            phi_lin,
            phi_const,
            jac,
        })
    }

    pub fn from_spec(s: &QuadraticSpec) -> Result<Self> {
        Self::new(
            super::matrix_from_rows(&s.q)?,
            super::matrix_from_rows(&s.b)?,
            Vector::from_vec(s.c.clone()),
            super::matrix_from_rows(&s.p_upper)?,
            s.quartic,
            Vector::from_vec(s.a.clone()),
            s.box_radius,
        )
    }

    pub fn to_spec(&self) -> QuadraticSpec {
        QuadraticSpec {
            q: super::matrix_to_rows(&self.q),
            b: super::matrix_to_rows(&self.b),
            c: self.c.iter().copied().collect(),
            p_upper: super::matrix_to_rows(&self.p_upper),
            quartic: self.quartic,
            a: self.a.iter().copied().collect(),
            box_radius: self.box_radius,
        }
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }
    pub fn b(&self) -> &Matrix {
        &self.b
    }
    pub fn c(&self) -> &Vector {
        &self.c
    }
    pub fn a(&self) -> &Vector {
        &self.a
    }
    pub fn p_upper(&self) -> &Matrix {
        &self.p_upper
    }
    pub fn quartic(&self) -> f64 {
        self.quartic
    }
    pub fn box_radius(&self) -> f64 {
        self.box_radius
    }

    /// Overrides the cached constant term of ∇Φ. Planted problems use this so
    /// that the planted gradient cancels bit-for-bit at the saddle.
    pub(crate) fn set_phi_lin(&mut self, phi_lin: Vector) {
        self.phi_lin = phi_lin;
    }

    /// `4q x³ + P x`, the part of ∇Φ that depends on x.
    pub(crate) fn upper_grad(&self, x: &Vector) -> Vector {
        let cubes = x.map(|t| 4.0 * self.quartic * t * t * t);
        cubes + &self.p_upper * x
    }

    pub(crate) fn upper_value(&self, x: &Vector) -> f64 {
        let quart: f64 = x.iter().map(|t| t.powi(4)).sum();
        self.quartic * quart + 0.5 * x.dot(&(&self.p_upper * x))
    }

    pub(crate) fn upper_hess(&self, x: &Vector) -> Matrix {
        let mut h = self.p_upper.clone();
        for i in 0..x.len() {
            h[(i, i)] += 12.0 * self.quartic * x[i] * x[i];
        }
        h
    }
}

impl BilevelProblem for QuadraticCoupledBilevel {
    fn dim_x(&self) -> usize {
        self.b.ncols()
    }
    fn dim_y(&self) -> usize {
        self.q.nrows()
    }
    fn f(&self, x: &Vector, y: &Vector) -> f64 {
        self.upper_value(x) + self.a.dot(y)
    }
    fn g(&self, x: &Vector, y: &Vector) -> f64 {
        0.5 * y.dot(&(&self.q * y)) - y.dot(&(&self.b * x + &self.c))
    }
    fn grad_x_f(&self, x: &Vector, _y: &Vector) -> Vector {
        self.upper_grad(x)
    }
    fn grad_y_f(&self, _x: &Vector, _y: &Vector) -> Vector {
        self.a.clone()
    }
    fn grad_y_g(&self, x: &Vector, y: &Vector) -> Vector {
        &self.q * y - &self.b * x - &self.c
    }
    fn hvp_yy_g(&self, _x: &Vector, _y: &Vector, v: &Vector) -> Vector {
        &self.q * v
    }
    fn jvp_xy_g(&self, _x: &Vector, _y: &Vector, v: &Vector) -> Vector {
        -(self.b.transpose() * v)
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
}

impl ExactOracles for QuadraticCoupledBilevel {
    fn y_star(&self, x: &Vector) -> Vector {
        self.q_chol.solve(&(&self.b * x + &self.c))
    }
    fn phi(&self, x: &Vector) -> f64 {
        self.upper_value(x) + self.phi_lin.dot(x) + self.phi_const
    }
    fn grad_phi(&self, x: &Vector) -> Vector {
        self.upper_grad(x) + &self.phi_lin
    }
    fn hess_phi(&self, x: &Vector) -> Matrix {
        self.upper_hess(x)
    }
}

impl SecondOrderOracles for QuadraticCoupledBilevel {
    fn hess_xx_f(&self, x: &Vector, _y: &Vector) -> Matrix {
        self.upper_hess(x)
    }
    fn hess_xy_f(&self, _x: &Vector, _y: &Vector) -> Matrix {
        Matrix::zeros(self.dim_x(), self.dim_y())
    }
    fn hess_yy_f(&self, _x: &Vector, _y: &Vector) -> Matrix {
        Matrix::zeros(self.dim_y(), self.dim_y())
    }
    fn ystar_jacobian(&self, _x: &Vector) -> Matrix {
        self.jac.clone()
    }
    // y* is affine in x.
    fn ystar_curvature(&self, _x: &Vector, _w: &Vector) -> Matrix {
        Matrix::zeros(self.dim_x(), self.dim_x())
    }
}
