//! Dense bivariate polynomials with complex coefficients.
//!
//! Used for metric/field families, tensor coefficient functions and gauge
//! fields. Degrees stay small (<= ~14 after products with the boundary
//! cutoff), so the dense rectangular representation is fine.

use num_complex::Complex64;

/// Polynomial sum c[i][j] x^i y^j stored row-major in `coeffs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly2 {
    pub nx: usize,
    pub ny: usize,
    pub coeffs: Vec<Complex64>,
}

impl Poly2 {
    pub fn zero() -> Self {
        Poly2 { nx: 1, ny: 1, coeffs: vec![Complex64::ZERO] }
    }

    pub fn constant(c: Complex64) -> Self {
        Poly2 { nx: 1, ny: 1, coeffs: vec![c] }
    }

    pub fn from_terms(terms: &[(usize, usize, Complex64)]) -> Self {
        let nx = terms.iter().map(|t| t.0).max().unwrap_or(0) + 1;
        let ny = terms.iter().map(|t| t.1).max().unwrap_or(0) + 1;
        let mut coeffs = vec![Complex64::ZERO; nx * ny];
        for &(i, j, c) in terms {
            coeffs[i * ny + j] += c;
        }
        Poly2 { nx, ny, coeffs }
    }

    /// Monomial x^i y^j.
    pub fn monomial(i: usize, j: usize) -> Self {
        Self::from_terms(&[(i, j, Complex64::ONE)])
    }

    #[inline]
    pub fn coeff(&self, i: usize, j: usize) -> Complex64 {
        if i < self.nx && j < self.ny {
            self.coeffs[i * self.ny + j]
        } else {
            Complex64::ZERO
        }
    }

    pub fn eval(&self, x: [f64; 2]) -> Complex64 {
        // Horner in x of Horner-in-y rows.
        let mut acc = Complex64::ZERO;
        for i in (0..self.nx).rev() {
            let mut row = Complex64::ZERO;
            for j in (0..self.ny).rev() {
                row = row * x[1] + self.coeffs[i * self.ny + j];
            }
            acc = acc * x[0] + row;
        }
        acc
    }

    pub fn ddx(&self) -> Poly2 {
        if self.nx <= 1 {
            return Poly2::zero();
        }
        let nx = self.nx - 1;
        let mut coeffs = vec![Complex64::ZERO; nx * self.ny];
        for i in 1..self.nx {
            for j in 0..self.ny {
                coeffs[(i - 1) * self.ny + j] = self.coeffs[i * self.ny + j] * (i as f64);
            }
        }
        Poly2 { nx, ny: self.ny, coeffs }
    }

    pub fn ddy(&self) -> Poly2 {
        if self.ny <= 1 {
            return Poly2::zero();
        }
        let ny = self.ny - 1;
        let mut coeffs = vec![Complex64::ZERO; self.nx * ny];
        for i in 0..self.nx {
            for j in 1..self.ny {
                coeffs[i * ny + j - 1] = self.coeffs[i * self.ny + j] * (j as f64);
            }
        }
        Poly2 { nx: self.nx, ny, coeffs }
    }

    pub fn deriv(&self, axis: usize) -> Poly2 {
        match axis {
            0 => self.ddx(),
            1 => self.ddy(),
            _ => panic!("axis must be 0 or 1"),
        }
    }

    pub fn add(&self, other: &Poly2) -> Poly2 {
        let nx = self.nx.max(other.nx);
        let ny = self.ny.max(other.ny);
        let mut coeffs = vec![Complex64::ZERO; nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                coeffs[i * ny + j] = self.coeff(i, j) + other.coeff(i, j);
            }
        }
        Poly2 { nx, ny, coeffs }
    }

    pub fn scale(&self, s: Complex64) -> Poly2 {
        let mut p = self.clone();
        for c in &mut p.coeffs {
            *c *= s;
        }
        p
    }

    pub fn mul(&self, other: &Poly2) -> Poly2 {
        let nx = self.nx + other.nx - 1;
        let ny = self.ny + other.ny - 1;
        let mut coeffs = vec![Complex64::ZERO; nx * ny];
        for i in 0..self.nx {
            for j in 0..self.ny {
                let a = self.coeffs[i * self.ny + j];
                if a == Complex64::ZERO {
                    continue;
                }
                for k in 0..other.nx {
                    for l in 0..other.ny {
                        coeffs[(i + k) * ny + j + l] += a * other.coeffs[k * other.ny + l];
                    }
                }
            }
        }
        Poly2 { nx, ny, coeffs }
    }

    /// Total-degree bound of the stored coefficient block.
    pub fn total_degree(&self) -> usize {
        let mut d = 0;
        for i in 0..self.nx {
            for j in 0..self.ny {
                if self.coeffs[i * self.ny + j].norm() > 0.0 {
                    d = d.max(i + j);
                }
            }
        }
        d
    }

    /// Coefficient vector in the total-degree monomial ordering
    /// (1, x, y, x^2, xy, y^2, ...) up to total degree `d`.
    pub fn monomial_coords(&self, d: usize) -> Vec<Complex64> {
        let mut out = Vec::with_capacity((d + 1) * (d + 2) / 2);
        for t in 0..=d {
            for j in 0..=t {
                out.push(self.coeff(t - j, j));
            }
        }
        out
    }
}

/// R^2 - x^2 - y^2: vanishes on the boundary circle of radius `r`.
pub fn boundary_factor(r: f64) -> Poly2 {
    Poly2::from_terms(&[
        (0, 0, Complex64::new(r * r, 0.0)),
        (2, 0, -Complex64::ONE),
        (0, 2, -Complex64::ONE),
    ])
}

/// Number of bivariate monomials of total degree <= d.
pub fn poly_space_dim(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

/// Monomials of total degree <= d in the same ordering as `monomial_coords`.
pub fn monomial_basis(d: usize) -> Vec<Poly2> {
    let mut out = Vec::with_capacity(poly_space_dim(d));
    for t in 0..=d {
        for j in 0..=t {
            out.push(Poly2::monomial(t - j, j));
        }
    }
    out
}
