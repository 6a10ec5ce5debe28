//! Surface geometry for a thermostat scene: conformal metric on a disk
//! chart, external field, curvature quantities and boundary convexity data.

use crate::error::{Error, Result};
use crate::poly::Poly2;
use serde::{Deserialize, Serialize};

/// Scalar field sigma(x) defining the conformal metric g = e^{2 sigma} |dx|^2.
///
/// All built-in families have analytic first and second partials.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Zero,
    Constant { value: f64 },
    /// sigma = ln(2 / (1 - |x|^2)): hyperbolic disk, K = -1. Chart radius
    /// must stay below 1.
    Poincare,
    /// Real polynomial given as (i, j, c) terms for c x^i y^j.
    Polynomial { terms: Vec<(usize, usize, f64)> },
}

impl ScalarField {
    fn poly(terms: &[(usize, usize, f64)]) -> Poly2 {
        Poly2::from_terms(
            &terms
                .iter()
                .map(|&(i, j, c)| (i, j, num_complex::Complex64::new(c, 0.0)))
                .collect::<Vec<_>>(),
        )
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            ScalarField::Zero => 0.0,
            ScalarField::Constant { value } => *value,
            ScalarField::Poincare => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                (2.0 / (1.0 - r2)).ln()
            }
            ScalarField::Polynomial { terms } => Self::poly(terms).eval(x).re,
        }
    }

    pub fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            ScalarField::Zero | ScalarField::Constant { .. } => [0.0, 0.0],
            ScalarField::Poincare => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let d = 2.0 / (1.0 - r2);
                [d * x[0], d * x[1]]
            }
            ScalarField::Polynomial { terms } => {
                let p = Self::poly(terms);
                [p.ddx().eval(x).re, p.ddy().eval(x).re]
            }
        }
    }

    /// Hessian as [d11, d12, d22].
    pub fn hess(&self, x: [f64; 2]) -> [f64; 3] {
        match self {
            ScalarField::Zero | ScalarField::Constant { .. } => [0.0; 3],
            ScalarField::Poincare => {
                let r2 = x[0] * x[0] + x[1] * x[1];
                let d = 1.0 - r2;
                [
                    2.0 / d + 4.0 * x[0] * x[0] / (d * d),
                    4.0 * x[0] * x[1] / (d * d),
                    2.0 / d + 4.0 * x[1] * x[1] / (d * d),
                ]
            }
            ScalarField::Polynomial { terms } => {
                let p = Self::poly(terms);
                [
                    p.ddx().ddx().eval(x).re,
                    p.ddx().ddy().eval(x).re,
                    p.ddy().ddy().eval(x).re,
                ]
            }
        }
    }

    pub fn laplacian(&self, x: [f64; 2]) -> f64 {
        let h = self.hess(x);
        h[0] + h[2]
    }
}

/// External field E given by chart components (E^1, E^2).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VectorField {
    Zero,
    Constant { components: [f64; 2] },
    /// c (x^1 d_1 + x^2 d_2)
    Radial { c: f64 },
    Polynomial {
        e1: Vec<(usize, usize, f64)>,
        e2: Vec<(usize, usize, f64)>,
    },
}

impl VectorField {
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        match self {
            VectorField::Zero => [0.0, 0.0],
            VectorField::Constant { components } => *components,
            VectorField::Radial { c } => [c * x[0], c * x[1]],
            VectorField::Polynomial { e1, e2 } => [
                ScalarField::poly(e1).eval(x).re,
                ScalarField::poly(e2).eval(x).re,
            ],
        }
    }

    /// Jacobian [dE1/dx, dE1/dy, dE2/dx, dE2/dy].
    pub fn jacobian(&self, x: [f64; 2]) -> [f64; 4] {
        match self {
            VectorField::Zero | VectorField::Constant { .. } => [0.0; 4],
            VectorField::Radial { c } => [*c, 0.0, 0.0, *c],
            VectorField::Polynomial { e1, e2 } => {
                let p1 = ScalarField::poly(e1);
                let p2 = ScalarField::poly(e2);
                [
                    p1.ddx().eval(x).re,
                    p1.ddy().eval(x).re,
                    p2.ddx().eval(x).re,
                    p2.ddy().eval(x).re,
                ]
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, VectorField::Zero)
    }
}

/// The (M, g, E) triple: disk chart of radius R, conformal factor sigma and
/// external field E.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scene {
    pub radius: f64,
    pub sigma: ScalarField,
    pub e_field: VectorField,
}

/// Curvature data sampled over a grid covering the chart domain.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    /// Gaussian curvature samples.
    pub k: Vec<f64>,
    /// div_g E samples.
    pub div_e: Vec<f64>,
    /// K_E = K - div_g E samples.
    pub k_e: Vec<f64>,
    /// Largest kappa >= 0 with K_E <= -kappa over the grid, when the grid
    /// maximum of K_E is negative.
    pub kappa: Option<f64>,
    pub grid_points: usize,
}

/// Boundary point with metric-normalized inward normal and positively
/// oriented unit tangent (chart components).
#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    /// Chart angle of the point on the boundary circle.
    pub phi: f64,
    /// Arc length from chart angle 0.
    pub s: f64,
    pub x: [f64; 2],
    pub nu: [f64; 2],
    pub tangent: [f64; 2],
}

impl Scene {
    pub fn new(radius: f64, sigma: ScalarField, e_field: VectorField) -> Self {
        Scene { radius, sigma, e_field }
    }

    /// Flat Euclidean disk without external field.
    pub fn flat_disk(radius: f64) -> Self {
        Scene::new(radius, ScalarField::Zero, VectorField::Zero)
    }

    /// Flat disk with radial external field c*x; K_E = -2c everywhere.
    pub fn flat_radial(radius: f64, c: f64) -> Self {
        Scene::new(radius, ScalarField::Zero, VectorField::Radial { c })
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[0] * x[0] + x[1] * x[1] <= self.radius * self.radius * (1.0 + 1e-12)
    }

    pub fn check_domain(&self, x: [f64; 2]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain(x[0], x[1]))
        }
    }

    /// Boundary defining function rho = R^2 - |x|^2 (positive inside).
    pub fn rho(&self, x: [f64; 2]) -> f64 {
        self.radius * self.radius - x[0] * x[0] - x[1] * x[1]
    }

    #[inline]
    pub fn sigma_at(&self, x: [f64; 2]) -> f64 {
        self.sigma.eval(x)
    }

    /// Conformal factor e^{2 sigma} = sqrt(det g).
    #[inline]
    pub fn conformal_factor(&self, x: [f64; 2]) -> f64 {
        (2.0 * self.sigma.eval(x)).exp()
    }

    pub fn metric(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let f = self.conformal_factor(x);
        [[f, 0.0], [0.0, f]]
    }

    pub fn inv_metric(&self, x: [f64; 2]) -> [[f64; 2]; 2] {
        let f = 1.0 / self.conformal_factor(x);
        [[f, 0.0], [0.0, f]]
    }

    /// Christoffel symbols gamma[k][i][j] of the conformal metric.
    pub fn christoffel(&self, x: [f64; 2]) -> [[[f64; 2]; 2]; 2] {
        let [sx, sy] = self.sigma.grad(x);
        [
            [[sx, sy], [sy, -sx]],
            [[-sy, sx], [sx, sy]],
        ]
    }

    /// g-inner product of chart vectors at x.
    pub fn inner(&self, x: [f64; 2], v: [f64; 2], w: [f64; 2]) -> f64 {
        self.conformal_factor(x) * (v[0] * w[0] + v[1] * w[1])
    }

    pub fn norm(&self, x: [f64; 2], v: [f64; 2]) -> f64 {
        self.inner(x, v, v).sqrt()
    }

    /// 90-degree rotation keeping |iv|_g = |v|_g with (v, iv) positively
    /// oriented: iv = (-v^2, v^1) in the conformal chart.
    pub fn rotate90(&self, _x: [f64; 2], v: [f64; 2]) -> [f64; 2] {
        [-v[1], v[0]]
    }

    /// Chart components of the g-unit vector with fiber angle theta in the
    /// orthonormal frame (e^{-sigma} d_1, e^{-sigma} d_2).
    pub fn unit_vector(&self, x: [f64; 2], theta: f64) -> [f64; 2] {
        let s = (-self.sigma.eval(x)).exp();
        [s * theta.cos(), s * theta.sin()]
    }

    /// Fiber angle of a (near-)unit chart vector.
    pub fn fiber_angle(&self, _x: [f64; 2], v: [f64; 2]) -> f64 {
        v[1].atan2(v[0])
    }

    /// lambda(x, v) = <E(x), iv>_g for the unit vector of fiber angle theta.
    /// Only +-1 fiber Fourier modes are present.
    pub fn lambda(&self, x: [f64; 2], theta: f64) -> f64 {
        let e = self.e_field.eval(x);
        let es = self.sigma.eval(x).exp();
        es * (-e[0] * theta.sin() + e[1] * theta.cos())
    }

    /// lambda for an arbitrary chart vector v with |v|_g = 1 within `tol`.
    pub fn lambda_vec(&self, x: [f64; 2], v: [f64; 2], tol: f64) -> Result<f64> {
        let n = self.norm(x, v);
        if (n - 1.0).abs() > tol {
            return Err(Error::NonUnitVelocity { norm: n });
        }
        let iv = self.rotate90(x, v);
        let e = self.e_field.eval(x);
        Ok(self.conformal_factor(x) * (e[0] * iv[0] + e[1] * iv[1]))
    }

    /// Gaussian curvature K = -e^{-2 sigma} (Laplacian of sigma).
    pub fn gauss_curvature(&self, x: [f64; 2]) -> f64 {
        -self.sigma.laplacian(x) / self.conformal_factor(x)
    }

    /// div_g E = d_i E^i + 2 <grad sigma, E> in the conformal chart.
    pub fn div_e(&self, x: [f64; 2]) -> f64 {
        let j = self.e_field.jacobian(x);
        let e = self.e_field.eval(x);
        let [sx, sy] = self.sigma.grad(x);
        j[0] + j[3] + 2.0 * (sx * e[0] + sy * e[1])
    }

    /// Thermostat curvature K_E = K - div_g E.
    pub fn thermostat_curvature(&self, x: [f64; 2]) -> f64 {
        self.gauss_curvature(x) - self.div_e(x)
    }

    /// Sample K, div_g E and K_E over an n x n polar grid of the disk.
    pub fn curvature_report(&self, n: usize) -> CurvatureReport {
        let mut k = Vec::with_capacity(n * n);
        let mut div_e = Vec::with_capacity(n * n);
        let mut k_e = Vec::with_capacity(n * n);
        for i in 0..n {
            let r = self.radius * (i as f64 + 0.5) / n as f64;
            for j in 0..n {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                let x = [r * phi.cos(), r * phi.sin()];
                let kk = self.gauss_curvature(x);
                let dd = self.div_e(x);
                k.push(kk);
                div_e.push(dd);
                k_e.push(kk - dd);
            }
        }
        let max_ke = k_e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let kappa = if max_ke < 0.0 { Some(-max_ke) } else { None };
        CurvatureReport { k, div_e, k_e, kappa, grid_points: n * n }
    }

    /// The grid-certified kappa with K_E <= -kappa, or an error.
    pub fn kappa(&self, n: usize) -> Result<f64> {
        self.curvature_report(n).kappa.ok_or_else(|| {
            let max_ke = self
                .curvature_report(n)
                .k_e
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            Error::CurvatureNotNegative { max_ke }
        })
    }

    /// Boundary point at chart angle phi with metric-unit inward normal and
    /// positively oriented unit tangent.
    pub fn boundary_point(&self, phi: f64) -> BoundaryPoint {
        let x = [self.radius * phi.cos(), self.radius * phi.sin()];
        let es = (-self.sigma.eval(x)).exp();
        let nu = [-es * phi.cos(), -es * phi.sin()];
        let tangent = [-es * phi.sin(), es * phi.cos()];
        BoundaryPoint { phi, s: self.arc_length(phi), x, nu, tangent }
    }

    /// Arc length of the boundary from chart angle 0 to phi.
    pub fn arc_length(&self, phi: f64) -> f64 {
        let n = 512;
        let h = phi / n as f64;
        let speed = |p: f64| {
            let x = [self.radius * p.cos(), self.radius * p.sin()];
            self.sigma.eval(x).exp() * self.radius
        };
        // composite Simpson
        let mut s = speed(0.0) + speed(phi);
        for i in 1..n {
            s += speed(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    /// Second fundamental form Lambda(x, v) of the boundary circle w.r.t.
    /// the inward normal, evaluated on the unit tangent (in 2D it does not
    /// depend on the choice of +-tangent).
    pub fn boundary_second_fundamental(&self, phi: f64) -> f64 {
        let bp = self.boundary_point(phi);
        let x = bp.x;
        let v = bp.tangent;
        // dv/dphi of v(phi) = e^{-sigma(gamma(phi))} (-sin phi, cos phi)
        let [sx, sy] = self.sigma.grad(x);
        let es = (-self.sigma.eval(x)).exp();
        let dgamma = [-self.radius * phi.sin(), self.radius * phi.cos()];
        let dsigma = sx * dgamma[0] + sy * dgamma[1];
        let dv_dphi = [
            -dsigma * v[0] + es * (-phi.cos()),
            -dsigma * v[1] + es * (-phi.sin()),
        ];
        // unit-speed parameter: dphi/dt = 1 / (R e^{sigma})
        let dphi_dt = 1.0 / (self.radius * self.sigma.eval(x).exp());
        let gamma = self.christoffel(x);
        let mut acc = [0.0; 2];
        for k in 0..2 {
            let mut c = dv_dphi[k] * dphi_dt;
            for i in 0..2 {
                for j in 0..2 {
                    c += gamma[k][i][j] * v[i] * v[j];
                }
            }
            acc[k] = c;
        }
        self.inner(x, acc, bp.nu)
    }

    /// <E, nu>_g at the boundary point of chart angle phi.
    pub fn boundary_e_nu(&self, phi: f64) -> f64 {
        let bp = self.boundary_point(phi);
        let e = self.e_field.eval(bp.x);
        self.inner(bp.x, e, bp.nu)
    }

    /// min over the boundary of Lambda - <E, nu>_g. The scene is strictly
    /// convex iff the margin is positive.
    pub fn convexity_margin(&self, n_samples: usize) -> f64 {
        let mut margin = f64::INFINITY;
        for i in 0..n_samples {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / n_samples as f64;
            let m = self.boundary_second_fundamental(phi) - self.boundary_e_nu(phi);
            margin = margin.min(m);
        }
        margin
    }

    pub fn require_strictly_convex(&self, n_samples: usize) -> Result<f64> {
        let m = self.convexity_margin(n_samples);
        if m > 0.0 {
            Ok(m)
        } else {
            Err(Error::NonConvex { margin: m })
        }
    }

    /// Nodes and weights for smooth quadrature over the disk with the
    /// Riemannian volume dVol_g = e^{2 sigma} dx (polar tensor rule:
    /// Gauss-Legendre in r, trapezoid in phi).
    pub fn disk_quadrature(&self, n_r: usize, n_phi: usize) -> Vec<([f64; 2], f64)> {
        let (rs, ws) = gauss_legendre(n_r, 0.0, self.radius);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut out = Vec::with_capacity(n_r * n_phi);
        for (r, wr) in rs.iter().zip(&ws) {
            for j in 0..n_phi {
                let phi = j as f64 * dphi;
                let x = [r * phi.cos(), r * phi.sin()];
                out.push((x, wr * r * dphi * self.conformal_factor(x)));
            }
        }
        out
    }
}

/// Gauss-Legendre nodes/weights on [a, b] via Newton on Legendre polynomials.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = (n + 1) / 2;
    for i in 0..m {
        // initial guess (Chebyshev)
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j as f64 + 1.0) * z * p1 - j as f64 * p2) / (j as f64 + 1.0);
            }
            pp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let xm = 0.5 * (b + a);
        let xl = 0.5 * (b - a);
        xs[i] = xm - xl * z;
        xs[n - 1 - i] = xm + xl * z;
        ws[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
        ws[n - 1 - i] = ws[i];
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn flat_metric_ops() {
        let s = Scene::flat_disk(1.0);
        let x = [0.3, -0.2];
        assert_eq!(s.metric(x), [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(s.christoffel(x), [[[0.0; 2]; 2]; 2]);
    }

    #[test]
    fn constant_conformal_factor() {
        let s = Scene::new(1.0, ScalarField::Constant { value: 2f64.ln() }, VectorField::Zero);
        assert_relative_eq!(s.conformal_factor([0.1, 0.1]), 4.0, epsilon = 1e-14);
        assert_eq!(s.christoffel([0.1, 0.1]), [[[0.0; 2]; 2]; 2]);
    }

    #[test]
    fn poincare_metric_at_origin() {
        let s = Scene::new(0.9, ScalarField::Poincare, VectorField::Zero);
        // g(0) = 4 I
        assert_relative_eq!(s.conformal_factor([0.0, 0.0]), 4.0, epsilon = 1e-14);
        // cross-check Christoffel against central differences of sigma
        let x = [0.2, -0.35];
        let h = 1e-6;
        let fd_sx = (s.sigma.eval([x[0] + h, x[1]]) - s.sigma.eval([x[0] - h, x[1]])) / (2.0 * h);
        let fd_sy = (s.sigma.eval([x[0], x[1] + h]) - s.sigma.eval([x[0], x[1] - h])) / (2.0 * h);
        let gamma = s.christoffel(x);
        assert_relative_eq!(gamma[0][0][0], fd_sx, epsilon = 1e-8);
        assert_relative_eq!(gamma[0][0][1], fd_sy, epsilon = 1e-8);
    }

    #[test]
    fn rotate90_basics() {
        let s = Scene::flat_disk(1.0);
        assert_eq!(s.rotate90([0.0, 0.0], [1.0, 0.0]), [0.0, 1.0]);
        assert_eq!(s.rotate90([0.0, 0.0], [0.0, 1.0]), [-1.0, 0.0]);
        // i(iv) = -v
        let v = [0.3, 0.7];
        let iiv = s.rotate90([0.0, 0.0], s.rotate90([0.0, 0.0], v));
        assert_eq!(iiv, [-0.3, -0.7]);
    }

    #[test]
    fn rotate90_conformal_norm_orthogonality() {
        let s = Scene::new(1.0, ScalarField::Constant { value: 2f64.ln() }, VectorField::Zero);
        let x = [0.1, 0.2];
        let v = [0.5, 0.0]; // g-unit: |v|_g = 2 * 0.5 = 1
        let iv = s.rotate90(x, v);
        assert_eq!(iv, [0.0, 0.5]);
        assert_relative_eq!(s.norm(x, iv), 1.0, epsilon = 1e-14);
        assert_relative_eq!(s.inner(x, v, iv), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn lambda_flat_constant_field() {
        let e = 0.7;
        let s = Scene::new(1.0, ScalarField::Zero, VectorField::Constant { components: [e, 0.0] });
        for &theta in &[0.0, 0.5, std::f64::consts::FRAC_PI_2, 2.4] {
            assert_relative_eq!(s.lambda([0.1, 0.1], theta), -e * theta.sin(), epsilon = 1e-14);
        }
        let z = Scene::flat_disk(1.0);
        assert_eq!(z.lambda([0.0, 0.3], 1.1), 0.0);
    }

    #[test]
    fn lambda_has_only_first_fourier_modes() {
        let s = Scene::new(
            0.8,
            ScalarField::Polynomial { terms: vec![(0, 0, 0.1), (1, 0, 0.2), (0, 2, -0.15)] },
            VectorField::Polynomial {
                e1: vec![(0, 0, 0.3), (1, 1, 0.4)],
                e2: vec![(0, 1, -0.2), (2, 0, 0.1)],
            },
        );
        let x = [0.3, -0.4];
        let n = 32;
        let samples: Vec<f64> = (0..n)
            .map(|j| s.lambda(x, 2.0 * std::f64::consts::PI * j as f64 / n as f64))
            .collect();
        // DFT: modes |k| != 1 must vanish
        for k in 0..n {
            let kk = if k > n / 2 { k as i64 - n as i64 } else { k as i64 };
            let mut re = 0.0;
            let mut im = 0.0;
            for (j, v) in samples.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            let mag = (re * re + im * im).sqrt() / n as f64;
            if kk.abs() != 1 {
                assert!(mag < 1e-10, "mode {kk} has magnitude {mag}");
            }
        }
    }

    #[test]
    fn curvature_flat_radial() {
        let s = Scene::flat_radial(1.0, 0.5);
        let rep = s.curvature_report(24);
        for (&k, &d) in rep.k.iter().zip(&rep.div_e) {
            assert_relative_eq!(k, 0.0, epsilon = 1e-13);
            assert_relative_eq!(d, 1.0, epsilon = 1e-13);
        }
        assert_relative_eq!(rep.kappa.unwrap(), 1.0, epsilon = 1e-12);
        // K_E = K - div_E pointwise, exactly by construction
        for i in 0..rep.k_e.len() {
            assert_eq!(rep.k_e[i], rep.k[i] - rep.div_e[i]);
        }
    }

    #[test]
    fn curvature_flat_geodesic_has_no_kappa() {
        let rep = Scene::flat_disk(1.0).curvature_report(16);
        assert!(rep.kappa.is_none());
        assert!(rep.k_e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn poincare_curvature_is_minus_one() {
        let s = Scene::new(0.9, ScalarField::Poincare, VectorField::Zero);
        let rep = s.curvature_report(32);
        for &k in &rep.k {
            assert_relative_eq!(k, -1.0, epsilon = 1e-6);
        }
        // finite-difference Laplacian oracle at a sample point
        let x = [0.25, -0.4];
        let h = 1e-4;
        let sg = |x: [f64; 2]| s.sigma.eval(x);
        let lap = (sg([x[0] + h, x[1]]) + sg([x[0] - h, x[1]]) + sg([x[0], x[1] + h])
            + sg([x[0], x[1] - h])
            - 4.0 * sg(x))
            / (h * h);
        assert_relative_eq!(s.gauss_curvature(x), -lap / s.conformal_factor(x), epsilon = 1e-6);
    }

    #[test]
    fn convexity_margin_examples() {
        // Euclidean unit disk, E = 0: Lambda = 1, margin = 1
        let m = Scene::flat_disk(1.0).convexity_margin(64);
        assert_relative_eq!(m, 1.0, epsilon = 1e-10);
        // E = 0.5 x: <E, nu> = -0.5 on the boundary (nu inward), margin 1.5
        let m = Scene::flat_radial(1.0, 0.5).convexity_margin(64);
        assert_relative_eq!(m, 1.5, epsilon = 1e-10);
        // reversed sign: E = -2x gives margin 1 - 2 = -1, rejected
        let s = Scene::flat_radial(1.0, -2.0);
        assert_relative_eq!(s.convexity_margin(64), -1.0, epsilon = 1e-10);
        assert!(s.require_strictly_convex(64).is_err());
    }

    #[test]
    fn boundary_point_is_orthonormal() {
        let s = Scene::new(0.8, ScalarField::Poincare, VectorField::Zero);
        let bp = s.boundary_point(1.2);
        assert_relative_eq!(s.norm(bp.x, bp.nu), 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.inner(bp.x, bp.nu, bp.tangent), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let s = Scene::flat_disk(1.0);
        assert!(s.check_domain([1.5, 0.0]).is_err());
        assert!(s.check_domain([0.5, 0.0]).is_ok());
    }

    #[test]
    fn disk_quadrature_area() {
        let s = Scene::flat_disk(1.0);
        let q = s.disk_quadrature(24, 48);
        let area: f64 = q.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(area, std::f64::consts::PI, epsilon = 1e-10);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8, 0.0, 2.0);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(7)).sum();
        assert_relative_eq!(integral, 2.0f64.powi(8) / 8.0, epsilon = 1e-12);
    }
}
