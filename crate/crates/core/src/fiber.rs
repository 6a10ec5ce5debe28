//! Discretization of functions on the unit sphere bundle and of the frame
//! and ladder operators V, X, X_perp, eta_pm, mu_pm, G_E, with checks of
//! the structural equations, commutator identities, energy identities and
//! the Carleman-type mode estimate.

use crate::error::{Error, Result};
use crate::poly::Poly2;
use crate::scene::{ScalarField, Scene};
use crate::transport::ConnectionPair;
use crate::CMat;
use ndarray::{Array2, Array3, Array4};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;
use std::sync::Arc;

/// Sign convention for X_perp. `Standard` uses X_perp = [X, V], under which
/// all bracket identities hold with eta_pm = (X +- i X_perp) / 2 and eta_+
/// raises the fiber mode. `Flipped` negates X_perp.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FrameOrientation {
    Standard,
    Flipped,
}

/// Tensor grid on the disk's bounding square times equispaced fiber angles.
pub struct FiberGrid {
    pub scene: Scene,
    /// Cells per spatial axis (even); nodes per axis = cells + 1.
    pub cells: usize,
    pub nx: usize,
    pub ntheta: usize,
    pub h: f64,
    pub xs: Vec<f64>,
    pub thetas: Vec<f64>,
    pub orientation: FrameOrientation,
    emsig: Array2<f64>,
    sx: Array2<f64>,
    sy: Array2<f64>,
    /// Masked Simpson x Simpson x trapezoid weight including e^{2 sigma};
    /// zero outside the disk.
    weight: Array2<f64>,
    lambda: Array3<f64>,
    kgauss: Array2<f64>,
    ke: Array2<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl FiberGrid {
    pub fn new(scene: Scene, cells: usize, ntheta: usize) -> Result<Arc<Self>> {
        if cells < 8 || cells % 2 != 0 {
            return Err(Error::Config(format!("cells must be even and >= 8, got {cells}")));
        }
        if ntheta < 8 || ntheta % 2 != 0 {
            return Err(Error::Config(format!("ntheta must be even and >= 8, got {ntheta}")));
        }
        let nx = cells + 1;
        let r = scene.radius;
        let h = 2.0 * r / cells as f64;
        let xs: Vec<f64> = (0..nx).map(|i| -r + i as f64 * h).collect();
        let thetas: Vec<f64> = (0..ntheta)
            .map(|t| 2.0 * std::f64::consts::PI * t as f64 / ntheta as f64)
            .collect();

        let mut emsig = Array2::zeros((nx, nx));
        let mut sx = Array2::zeros((nx, nx));
        let mut sy = Array2::zeros((nx, nx));
        let mut weight = Array2::zeros((nx, nx));
        let mut kgauss = Array2::zeros((nx, nx));
        let mut ke = Array2::zeros((nx, nx));
        let simpson = |i: usize| -> f64 {
            if i == 0 || i == nx - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        for i in 0..nx {
            for j in 0..nx {
                let x = [xs[i], xs[j]];
                let sig = scene.sigma_at(x);
                emsig[(i, j)] = (-sig).exp();
                let g = scene.sigma.grad(x);
                sx[(i, j)] = g[0];
                sy[(i, j)] = g[1];
                kgauss[(i, j)] = scene.gauss_curvature(x);
                ke[(i, j)] = scene.thermostat_curvature(x);
                let inside = x[0] * x[0] + x[1] * x[1] <= r * r + 1e-14;
                weight[(i, j)] = if inside {
                    simpson(i) * simpson(j) * (h / 3.0) * (h / 3.0) * (2.0 * sig).exp()
                } else {
                    0.0
                };
            }
        }
        let mut lambda = Array3::zeros((nx, nx, ntheta));
        for i in 0..nx {
            for j in 0..nx {
                for t in 0..ntheta {
                    lambda[(i, j, t)] = scene.lambda([xs[i], xs[j]], thetas[t]);
                }
            }
        }
        let mut planner = FftPlanner::new();
        let fft_fwd = planner.plan_fft_forward(ntheta);
        let fft_inv = planner.plan_fft_inverse(ntheta);
        Ok(Arc::new(FiberGrid {
            scene,
            cells,
            nx,
            ntheta,
            h,
            xs,
            thetas,
            orientation: FrameOrientation::Standard,
            emsig,
            sx,
            sy,
            weight,
            lambda,
            kgauss,
            ke,
            fft_fwd,
            fft_inv,
        }))
    }

    /// Signed mode index of an FFT bin.
    pub fn mode_of_bin(&self, bin: usize) -> i64 {
        if bin <= self.ntheta / 2 - 1 {
            bin as i64
        } else {
            bin as i64 - self.ntheta as i64
        }
    }

    pub fn bin_of_mode(&self, k: i64) -> usize {
        if k >= 0 {
            k as usize
        } else {
            (self.ntheta as i64 + k) as usize
        }
    }
}

/// C^n-valued function sampled on the bundle grid, axes [comp, ix, iy, itheta].
#[derive(Clone)]
pub struct BundleFunction {
    pub grid: Arc<FiberGrid>,
    pub nc: usize,
    pub data: Array4<Complex64>,
}

impl BundleFunction {
    pub fn zeros(grid: &Arc<FiberGrid>, nc: usize) -> Self {
        let data = Array4::zeros((nc, grid.nx, grid.nx, grid.ntheta));
        BundleFunction { grid: grid.clone(), nc, data }
    }

    pub fn from_fn(
        grid: &Arc<FiberGrid>,
        nc: usize,
        f: impl Fn(usize, [f64; 2], f64) -> Complex64,
    ) -> Self {
        let mut u = Self::zeros(grid, nc);
        for c in 0..nc {
            for i in 0..grid.nx {
                for j in 0..grid.nx {
                    for t in 0..grid.ntheta {
                        u.data[(c, i, j, t)] =
                            f(c, [grid.xs[i], grid.xs[j]], grid.thetas[t]);
                    }
                }
            }
        }
        u
    }

    /// Pure fiber mode k with x-dependent coefficient per component.
    pub fn pure_mode(
        grid: &Arc<FiberGrid>,
        nc: usize,
        k: i64,
        coeff: impl Fn(usize, [f64; 2]) -> Complex64,
    ) -> Self {
        Self::from_fn(grid, nc, |c, x, th| {
            coeff(c, x) * Complex64::from_polar(1.0, k as f64 * th)
        })
    }

    pub fn add_scaled(&mut self, other: &BundleFunction, s: Complex64) {
        self.data.zip_mut_with(&other.data, |a, &b| *a += s * b);
    }

    pub fn sub(&self, other: &BundleFunction) -> BundleFunction {
        let mut out = self.clone();
        out.add_scaled(other, -Complex64::ONE);
        out
    }

    pub fn scale(&self, s: Complex64) -> BundleFunction {
        let mut out = self.clone();
        out.data.mapv_inplace(|a| s * a);
        out
    }

    /// Vertical Fourier coefficients, axes [comp, ix, iy, bin].
    pub fn modes(&self) -> Array4<Complex64> {
        let g = &self.grid;
        let mut out = self.data.clone();
        let mut buf = vec![Complex64::ZERO; g.ntheta];
        for c in 0..self.nc {
            for i in 0..g.nx {
                for j in 0..g.nx {
                    for t in 0..g.ntheta {
                        buf[t] = out[(c, i, j, t)];
                    }
                    g.fft_fwd.process(&mut buf);
                    for t in 0..g.ntheta {
                        out[(c, i, j, t)] = buf[t] / g.ntheta as f64;
                    }
                }
            }
        }
        out
    }

    /// Relative L^2 mass of the top (Nyquist-adjacent) fiber modes.
    pub fn top_mode_fraction(&self) -> f64 {
        let norms = mode_norms(self);
        let total: f64 = norms.iter().map(|(_, m)| m).sum();
        if total == 0.0 {
            return 0.0;
        }
        let half = self.grid.ntheta as i64 / 2;
        let top: f64 = norms
            .iter()
            .filter(|(k, _)| k.abs() >= half - 1)
            .map(|(_, m)| m)
            .sum();
        top / total
    }
}

/// L^2(SM) pairing with the frame volume e^{2 sigma} dx dy dtheta, masked
/// to the disk.
pub fn inner_product(u: &BundleFunction, w: &BundleFunction) -> Complex64 {
    let g = &u.grid;
    assert_eq!(u.nc, w.nc);
    let dth = 2.0 * std::f64::consts::PI / g.ntheta as f64;
    let mut acc = Complex64::ZERO;
    for i in 0..g.nx {
        for j in 0..g.nx {
            let wt = g.weight[(i, j)];
            if wt == 0.0 {
                continue;
            }
            let mut s = Complex64::ZERO;
            for c in 0..u.nc {
                for t in 0..g.ntheta {
                    s += u.data[(c, i, j, t)].conj() * w.data[(c, i, j, t)];
                }
            }
            acc += s * wt;
        }
    }
    acc * dth
}

pub fn norm(u: &BundleFunction) -> f64 {
    inner_product(u, u).re.max(0.0).sqrt()
}

/// Squared mode norms ||u_k||^2 (summed over components), indexed by signed k.
pub fn mode_norms(u: &BundleFunction) -> Vec<(i64, f64)> {
    let g = &u.grid;
    let m = u.modes();
    let mut out = Vec::with_capacity(g.ntheta);
    let two_pi = 2.0 * std::f64::consts::PI;
    for bin in 0..g.ntheta {
        let mut acc = 0.0;
        for i in 0..g.nx {
            for j in 0..g.nx {
                let wt = g.weight[(i, j)];
                if wt == 0.0 {
                    continue;
                }
                for c in 0..u.nc {
                    acc += m[(c, i, j, bin)].norm_sqr() * wt;
                }
            }
        }
        out.push((g.mode_of_bin(bin), acc * two_pi));
    }
    out.sort_by_key(|(k, _)| *k);
    out
}

// ---------------------------------------------------------------------------
// Differential operators
// ---------------------------------------------------------------------------

/// 4th-order stencil derivative along a spatial axis (0 = x, 1 = y), with
/// one-sided stencils on the two edge rings of the bounding square.
fn d_spatial(u: &BundleFunction, axis: usize) -> BundleFunction {
    let g = &u.grid;
    let n = g.nx;
    let ih = 1.0 / (12.0 * g.h);
    let mut out = BundleFunction::zeros(&u.grid, u.nc);
    let get = |u: &BundleFunction, c: usize, i: usize, j: usize, p: usize, t: usize| {
        if axis == 0 {
            u.data[(c, p, j, t)]
        } else {
            u.data[(c, i, p, t)]
        }
    };
    for c in 0..u.nc {
        for i in 0..n {
            for j in 0..n {
                let m = if axis == 0 { i } else { j };
                for t in 0..g.ntheta {
                    let f = |p: usize| get(u, c, i, j, p, t);
                    let v = if m >= 2 && m + 2 < n {
                        (f(m - 2) - f(m - 1) * 8.0 + f(m + 1) * 8.0 - f(m + 2)) * ih
                    } else if m == 0 {
                        (f(0) * -25.0 + f(1) * 48.0 - f(2) * 36.0 + f(3) * 16.0 - f(4) * 3.0) * ih
                    } else if m == 1 {
                        (f(0) * -3.0 - f(1) * 10.0 + f(2) * 18.0 - f(3) * 6.0 + f(4)) * ih
                    } else if m == n - 1 {
                        (f(n - 1) * 25.0 - f(n - 2) * 48.0 + f(n - 3) * 36.0 - f(n - 4) * 16.0
                            + f(n - 5) * 3.0)
                            * ih
                    } else {
                        (f(n - 1) * 3.0 + f(n - 2) * 10.0 - f(n - 3) * 18.0 + f(n - 4) * 6.0
                            - f(n - 5))
                            * ih
                    };
                    out.data[(c, i, j, t)] = v;
                }
            }
        }
    }
    out
}

/// Vertical derivative V = d/dtheta, spectral.
pub fn apply_v(u: &BundleFunction) -> BundleFunction {
    let g = &u.grid;
    let mut out = u.clone();
    let mut buf = vec![Complex64::ZERO; g.ntheta];
    let scale = 1.0 / g.ntheta as f64;
    for c in 0..u.nc {
        for i in 0..g.nx {
            for j in 0..g.nx {
                for t in 0..g.ntheta {
                    buf[t] = out.data[(c, i, j, t)];
                }
                g.fft_fwd.process(&mut buf);
                for (bin, b) in buf.iter_mut().enumerate() {
                    let k = g.mode_of_bin(bin);
                    // drop the unpaired Nyquist mode from the derivative
                    let kk = if bin == g.ntheta / 2 { 0.0 } else { k as f64 };
                    *b *= Complex64::new(0.0, kk) * scale;
                }
                g.fft_inv.process(&mut buf);
                for t in 0..g.ntheta {
                    out.data[(c, i, j, t)] = buf[t];
                }
            }
        }
    }
    out
}

/// Geodesic part X = e^{-sigma}(cos th d_x + sin th d_y
///                              + (-sigma_x sin th + sigma_y cos th) d_th).
pub fn apply_x(u: &BundleFunction) -> BundleFunction {
    let g = &u.grid;
    let ux = d_spatial(u, 0);
    let uy = d_spatial(u, 1);
    let ut = apply_v(u);
    let mut out = BundleFunction::zeros(&u.grid, u.nc);
    for c in 0..u.nc {
        for i in 0..g.nx {
            for j in 0..g.nx {
                let es = g.emsig[(i, j)];
                let (sx, sy) = (g.sx[(i, j)], g.sy[(i, j)]);
                for t in 0..g.ntheta {
                    let (st, ct) = g.thetas[t].sin_cos();
                    out.data[(c, i, j, t)] = Complex64::new(es, 0.0)
                        * (ux.data[(c, i, j, t)] * ct
                            + uy.data[(c, i, j, t)] * st
                            + ut.data[(c, i, j, t)] * (-sx * st + sy * ct));
                }
            }
        }
    }
    out
}

/// X_perp = [X, V] in the `Standard` orientation:
/// e^{-sigma}(sin th d_x - cos th d_y + (sigma_x cos th + sigma_y sin th) d_th).
pub fn apply_xperp(u: &BundleFunction) -> BundleFunction {
    let g = &u.grid;
    let ux = d_spatial(u, 0);
    let uy = d_spatial(u, 1);
    let ut = apply_v(u);
    let sgn = match g.orientation {
        FrameOrientation::Standard => 1.0,
        FrameOrientation::Flipped => -1.0,
    };
    let mut out = BundleFunction::zeros(&u.grid, u.nc);
    for c in 0..u.nc {
        for i in 0..g.nx {
            for j in 0..g.nx {
                let es = sgn * g.emsig[(i, j)];
                let (sx, sy) = (g.sx[(i, j)], g.sy[(i, j)]);
                for t in 0..g.ntheta {
                    let (st, ct) = g.thetas[t].sin_cos();
                    out.data[(c, i, j, t)] = Complex64::new(es, 0.0)
                        * (ux.data[(c, i, j, t)] * st - uy.data[(c, i, j, t)] * ct
                            + ut.data[(c, i, j, t)] * (sx * ct + sy * st));
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LadderSign {
    Plus,
    Minus,
}

/// eta_pm = (X pm i X_perp) / 2; eta_+ maps mode k to k + 1.
pub fn apply_eta(u: &BundleFunction, sign: LadderSign) -> BundleFunction {
    let xu = apply_x(u);
    let xp = apply_xperp(u);
    let s = match sign {
        LadderSign::Plus => Complex64::new(0.0, 0.5),
        LadderSign::Minus => Complex64::new(0.0, -0.5),
    };
    let mut out = xu.scale(Complex64::new(0.5, 0.0));
    out.add_scaled(&xp, s);
    out
}

/// Multiplication by the fiber-mode component lambda_pm of the thermostat
/// drift: lambda_+ = (e^{sigma}/2)(E^2 + i E^1) e^{i th}, lambda_- its
/// conjugate-mode partner.
pub fn lambda_mode_factor(scene: &Scene, x: [f64; 2], theta: f64, sign: LadderSign) -> Complex64 {
    let e = scene.e_field.eval(x);
    let es = scene.sigma_at(x).exp();
    let half = Complex64::new(0.5 * es * e[1], 0.5 * es * e[0]);
    match sign {
        LadderSign::Plus => half * Complex64::from_polar(1.0, theta),
        LadderSign::Minus => half.conj() * Complex64::from_polar(1.0, -theta),
    }
}

fn mul_pointwise(
    u: &BundleFunction,
    f: impl Fn([f64; 2], f64) -> Complex64,
) -> BundleFunction {
    let g = &u.grid;
    let mut out = u.clone();
    for i in 0..g.nx {
        for j in 0..g.nx {
            let x = [g.xs[i], g.xs[j]];
            for t in 0..g.ntheta {
                let s = f(x, g.thetas[t]);
                for c in 0..u.nc {
                    out.data[(c, i, j, t)] = u.data[(c, i, j, t)] * s;
                }
            }
        }
    }
    out
}

/// Pointwise matrix multiplication (m(x, theta) u)(x, theta).
pub fn mul_matrix(u: &BundleFunction, f: impl Fn([f64; 2], f64) -> CMat) -> BundleFunction {
    let g = &u.grid;
    let mut out = BundleFunction::zeros(&u.grid, u.nc);
    for i in 0..g.nx {
        for j in 0..g.nx {
            let x = [g.xs[i], g.xs[j]];
            for t in 0..g.ntheta {
                let m = f(x, g.thetas[t]);
                for c in 0..u.nc {
                    let mut s = Complex64::ZERO;
                    for d in 0..u.nc {
                        s += m[(c, d)] * u.data[(d, i, j, t)];
                    }
                    out.data[(c, i, j, t)] = s;
                }
            }
        }
    }
    out
}

/// mu_pm = eta_pm + lambda_pm V.
pub fn apply_mu(u: &BundleFunction, sign: LadderSign) -> BundleFunction {
    let scene = u.grid.scene.clone();
    let mut out = apply_eta(u, sign);
    let vu = apply_v(u);
    let lv = mul_pointwise(&vu, |x, th| lambda_mode_factor(&scene, x, th, sign));
    out.add_scaled(&lv, Complex64::ONE);
    out
}

/// Thermostat generator G_E = X + lambda V.
pub fn apply_g_e(u: &BundleFunction) -> BundleFunction {
    let g = &u.grid;
    let mut out = apply_x(u);
    let vu = apply_v(u);
    for c in 0..u.nc {
        for i in 0..g.nx {
            for j in 0..g.nx {
                for t in 0..g.ntheta {
                    out.data[(c, i, j, t)] += vu.data[(c, i, j, t)] * g.lambda[(i, j, t)];
                }
            }
        }
    }
    out
}

/// Connection mode multipliers A_pm: A_+ = (e^{-sigma}/2)(A_1 - i A_2) e^{i th}.
pub fn connection_mode_factor(
    scene: &Scene,
    pair: &ConnectionPair,
    x: [f64; 2],
    sign: LadderSign,
) -> CMat {
    let es = (-scene.sigma_at(x)).exp();
    let a1 = pair.a1.eval(x);
    let a2 = pair.a2.eval(x);
    let half = Complex64::new(0.5 * es, 0.0);
    match sign {
        LadderSign::Plus => (a1 - a2 * Complex64::I) * half,
        LadderSign::Minus => (a1 + a2 * Complex64::I) * half,
    }
}

/// Multiplication by A_pm (a pure mode pm1 matrix function on SM).
pub fn apply_connection_mode(
    u: &BundleFunction,
    pair: &ConnectionPair,
    sign: LadderSign,
) -> BundleFunction {
    let scene = u.grid.scene.clone();
    let pair = pair.clone();
    let phase = match sign {
        LadderSign::Plus => 1.0,
        LadderSign::Minus => -1.0,
    };
    mul_matrix(u, move |x, th| {
        connection_mode_factor(&scene, &pair, x, sign) * Complex64::from_polar(1.0, phase * th)
    })
}

// ---------------------------------------------------------------------------
// Curvature of a connection
// ---------------------------------------------------------------------------

/// Hodge dual of the connection curvature via the coordinate formula
/// (d_1 A_2 - d_2 A_1 + [A_1, A_2]) / e^{2 sigma}.
pub fn star_curvature_coord(scene: &Scene, pair: &ConnectionPair, x: [f64; 2]) -> CMat {
    let a1 = pair.a1.eval(x);
    let a2 = pair.a2.eval(x);
    let d1a2 = pair.a2.dx(x, 0);
    let d2a1 = pair.a1.dx(x, 1);
    (d1a2 - d2a1 + &a1 * &a2 - a2 * a1) * Complex64::new((-2.0 * scene.sigma_at(x)).exp(), 0.0)
}

/// The same quantity from the ladder components:
/// eta_+ A_- - eta_- A_+ + [A_+, A_-] = (i/2) star F_A, evaluated with the
/// analytic mode-wise action of eta_pm on single-mode matrix functions.
pub fn star_curvature_fiber(scene: &Scene, pair: &ConnectionPair, x: [f64; 2]) -> CMat {
    let es = (-scene.sigma_at(x)).exp();
    let [gx, gy] = scene.sigma.grad(x);
    let half_es = Complex64::new(0.5 * es, 0.0);

    let p = connection_mode_factor(scene, pair, x, LadderSign::Plus);
    let m = connection_mode_factor(scene, pair, x, LadderSign::Minus);
    let eval_p = |xx: [f64; 2]| connection_mode_factor(scene, pair, xx, LadderSign::Plus);
    let eval_m = |xx: [f64; 2]| connection_mode_factor(scene, pair, xx, LadderSign::Minus);
    let hstep = 1e-5 * scene.radius;
    let dx = |f: &dyn Fn([f64; 2]) -> CMat, axis: usize| {
        let mut xp = x;
        let mut xm = x;
        xp[axis] += hstep;
        xm[axis] -= hstep;
        (f(xp) - f(xm)) / Complex64::new(2.0 * hstep, 0.0)
    };
    // eta_+ on mode -1 coefficient M: (e^{-sigma}/2)[(d_x - i d_y)M + (s_x - i s_y)M]
    let eta_p_m =
        (dx(&eval_m, 0) - dx(&eval_m, 1) * Complex64::I + &m * Complex64::new(gx, -gy)) * half_es;
    // eta_- on mode +1 coefficient P: (e^{-sigma}/2)[(d_x + i d_y)P + (s_x + i s_y)P]
    let eta_m_p =
        (dx(&eval_p, 0) + dx(&eval_p, 1) * Complex64::I + &p * Complex64::new(gx, gy)) * half_es;
    let comm = &p * &m - m * p;
    let s = eta_p_m - eta_m_p + comm;
    // s = (i/2) star F_A
    s * Complex64::new(0.0, -2.0)
}

#[derive(Debug, Serialize)]
pub struct StarCurvatureReport {
    /// sup of the spectral norm of i star F_A over the disk grid
    pub sup_norm: f64,
    pub lambda_min_integral: f64,
    pub lambda_max_integral: f64,
    /// kappa > sup ||i star F_A||: the small-curvature injectivity condition
    /// for every mode k >= 1
    pub small_curvature_condition: bool,
    /// for k = 1..=4: does 2 pi k chi < integral of lambda_min hold
    pub euler_condition: Vec<(i64, bool)>,
    /// max over sample points of the coordinate-vs-ladder route discrepancy
    pub route_discrepancy: f64,
}

/// Pointwise eigenvalue and sup-norm reports for i star F_A of a unitary
/// connection, with the two computation routes cross-checked.
pub fn star_curvature_report(
    scene: &Scene,
    pair: &ConnectionPair,
    kappa: f64,
    chi: i64,
    n_grid: usize,
) -> Result<StarCurvatureReport> {
    if !pair.unitary_a {
        return Err(Error::Config(
            "eigenvalue report requires a unitary connection".into(),
        ));
    }
    let quad = scene.disk_quadrature(n_grid, 2 * n_grid);
    let mut sup: f64 = 0.0;
    let mut int_min = 0.0;
    let mut int_max = 0.0;
    let mut route: f64 = 0.0;
    for (x, w) in &quad {
        let f = star_curvature_coord(scene, pair, *x);
        let ifa = f * Complex64::I;
        let herm = (&ifa + ifa.adjoint()) * Complex64::new(0.5, 0.0);
        let eig = herm.symmetric_eigenvalues();
        let lo = eig.iter().fold(f64::INFINITY, |a, b| a.min(*b));
        let hi = eig.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        sup = sup.max(lo.abs().max(hi.abs()));
        int_min += lo * w;
        int_max += hi * w;
        let alt = star_curvature_fiber(scene, pair, *x);
        route = route.max((star_curvature_coord(scene, pair, *x) - alt).norm());
    }
    let euler = (1..=4)
        .map(|k| {
            let bound = 2.0 * std::f64::consts::PI * (k * chi) as f64;
            (k, bound < int_min)
        })
        .collect();
    Ok(StarCurvatureReport {
        sup_norm: sup,
        lambda_min_integral: int_min,
        lambda_max_integral: int_max,
        small_curvature_condition: kappa > sup,
        euler_condition: euler,
        route_discrepancy: route,
    })
}

// ---------------------------------------------------------------------------
// Test functions
// ---------------------------------------------------------------------------

/// C^4 bump supported in |x| <= rho: (1 - (r/rho)^2)^5.
pub fn support_bump(x: [f64; 2], rho: f64) -> f64 {
    let s2 = (x[0] * x[0] + x[1] * x[1]) / (rho * rho);
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - s2).powi(5)
    }
}

/// Random band-limited function sum_{|k| <= kmax} c_k(x) e^{ik th} with
/// low-degree polynomial coefficients times the support bump.
pub fn random_band_limited(
    grid: &Arc<FiberGrid>,
    nc: usize,
    kmax: i64,
    support: f64,
    min_abs_mode: i64,
    seed: u64,
) -> BundleFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut polys: Vec<(i64, Vec<Poly2>)> = Vec::new();
    for k in -kmax..=kmax {
        if k.abs() < min_abs_mode {
            continue;
        }
        let ps = (0..nc)
            .map(|_| {
                let mut terms = Vec::new();
                for i in 0..=2usize {
                    for j in 0..=(2 - i) {
                        terms.push((
                            i,
                            j,
                            Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                        ));
                    }
                }
                Poly2::from_terms(&terms)
            })
            .collect();
        polys.push((k, ps));
    }
    BundleFunction::from_fn(grid, nc, |c, x, th| {
        let bump = support_bump(x, support);
        if bump == 0.0 {
            return Complex64::ZERO;
        }
        let mut acc = Complex64::ZERO;
        for (k, ps) in &polys {
            acc += ps[c].eval(x) * Complex64::from_polar(1.0, *k as f64 * th);
        }
        acc * bump
    })
}

// ---------------------------------------------------------------------------
// Identity suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct OperatorReport {
    pub name: String,
    /// (cells, ntheta, relative residual) per tested resolution
    pub residuals: Vec<(usize, usize, f64)>,
    /// convergence order fitted from the last two resolutions; `None` when
    /// the residual is at the round-off floor at every resolution
    pub order: Option<f64>,
}

impl OperatorReport {
    pub fn finest_residual(&self) -> f64 {
        self.residuals.last().map(|r| r.2).unwrap_or(0.0)
    }

    /// Converges at the requested order, or sits at the round-off floor.
    pub fn order_at_least(&self, want: f64) -> bool {
        match self.order {
            Some(o) => o >= want,
            None => true,
        }
    }
}

fn fit_order(residuals: &[(usize, usize, f64)]) -> Option<f64> {
    if residuals.len() < 2 {
        return None;
    }
    let (c0, _, r0) = residuals[residuals.len() - 2];
    let (c1, _, r1) = residuals[residuals.len() - 1];
    if r1 < 1e-11 {
        return None;
    }
    let ratio = r0 / r1;
    Some(ratio.log2() / ((c1 as f64 / c0 as f64).log2()))
}

struct IdentityCase {
    name: &'static str,
    residual: Box<dyn Fn(&Arc<FiberGrid>, &BundleFunction, &ConnectionPair) -> f64>,
}

fn relative(res: &BundleFunction, reference: &BundleFunction) -> f64 {
    let d = norm(reference).max(1e-300);
    norm(res) / d
}

fn identity_cases() -> Vec<IdentityCase> {
    vec![
        IdentityCase {
            name: "vertical_bracket_recovers_x",
            residual: Box::new(|_, u, _| {
                // [V, X_perp] u = X u
                let lhs = apply_v(&apply_xperp(u)).sub(&apply_xperp(&apply_v(u)));
                let xu = apply_x(u);
                relative(&lhs.sub(&xu), &xu)
            }),
        },
        IdentityCase {
            name: "frame_bracket_recovers_xperp",
            residual: Box::new(|_, u, _| {
                // [X, V] u = X_perp u
                let lhs = apply_x(&apply_v(u)).sub(&apply_v(&apply_x(u)));
                let xp = apply_xperp(u);
                relative(&lhs.sub(&xp), &xp)
            }),
        },
        IdentityCase {
            name: "horizontal_bracket_curvature",
            residual: Box::new(|g, u, _| {
                // [X, X_perp] u = -K V u
                let lhs = apply_x(&apply_xperp(u)).sub(&apply_xperp(&apply_x(u)));
                let vu = apply_v(u);
                let kv = {
                    let mut out = vu.clone();
                    for c in 0..u.nc {
                        for i in 0..g.nx {
                            for j in 0..g.nx {
                                for t in 0..g.ntheta {
                                    out.data[(c, i, j, t)] =
                                        vu.data[(c, i, j, t)] * g.kgauss[(i, j)];
                                }
                            }
                        }
                    }
                    out
                };
                let mut res = lhs;
                res.add_scaled(&kv, Complex64::ONE);
                relative(&res, &apply_x(u))
            }),
        },
        IdentityCase {
            name: "ladder_bracket_curvature",
            residual: Box::new(|g, u, _| {
                // [eta_+, eta_-] u = (i/2) K V u
                let lhs = apply_eta(&apply_eta(u, LadderSign::Minus), LadderSign::Plus)
                    .sub(&apply_eta(&apply_eta(u, LadderSign::Plus), LadderSign::Minus));
                let vu = apply_v(u);
                let mut rhs = vu.clone();
                for c in 0..u.nc {
                    for i in 0..g.nx {
                        for j in 0..g.nx {
                            for t in 0..g.ntheta {
                                rhs.data[(c, i, j, t)] = vu.data[(c, i, j, t)]
                                    * Complex64::new(0.0, 0.5 * g.kgauss[(i, j)]);
                            }
                        }
                    }
                }
                relative(&lhs.sub(&rhs), &apply_x(u))
            }),
        },
        IdentityCase {
            name: "twisted_ladder_bracket",
            residual: Box::new(|g, u, _| {
                // [mu_+, mu_-] u = (i/2) K_E V u - i lambda_- mu_+ u - i lambda_+ mu_- u
                let scene = g.scene.clone();
                let mp = apply_mu(u, LadderSign::Plus);
                let mm = apply_mu(u, LadderSign::Minus);
                let lhs = apply_mu(&mm, LadderSign::Plus).sub(&apply_mu(&mp, LadderSign::Minus));
                let vu = apply_v(u);
                let mut rhs = vu.clone();
                for c in 0..u.nc {
                    for i in 0..g.nx {
                        for j in 0..g.nx {
                            for t in 0..g.ntheta {
                                rhs.data[(c, i, j, t)] =
                                    vu.data[(c, i, j, t)] * Complex64::new(0.0, 0.5 * g.ke[(i, j)]);
                            }
                        }
                    }
                }
                let s1 = mul_pointwise(&mp, |x, th| {
                    -Complex64::I * lambda_mode_factor(&scene, x, th, LadderSign::Minus)
                });
                let s2 = mul_pointwise(&mm, |x, th| {
                    -Complex64::I * lambda_mode_factor(&scene, x, th, LadderSign::Plus)
                });
                rhs.add_scaled(&s1, Complex64::ONE);
                rhs.add_scaled(&s2, Complex64::ONE);
                relative(&lhs.sub(&rhs), &apply_x(u))
            }),
        },
        IdentityCase {
            name: "connection_ladder_bracket",
            residual: Box::new(|g, u, pair| {
                // [mu_+ + A_+, mu_- + A_-] u
                //   = (i/2) K_E V u + (i/2) star F_A u
                //     - i lambda_- (mu_+ + A_+) u - i lambda_+ (mu_- + A_-) u
                let scene = g.scene.clone();
                let op = |w: &BundleFunction, s: LadderSign| {
                    let mut out = apply_mu(w, s);
                    out.add_scaled(&apply_connection_mode(w, pair, s), Complex64::ONE);
                    out
                };
                let pu = op(u, LadderSign::Plus);
                let mu_ = op(u, LadderSign::Minus);
                let lhs = op(&mu_, LadderSign::Plus).sub(&op(&pu, LadderSign::Minus));
                let vu = apply_v(u);
                let mut rhs = vu.clone();
                for c in 0..u.nc {
                    for i in 0..g.nx {
                        for j in 0..g.nx {
                            for t in 0..g.ntheta {
                                rhs.data[(c, i, j, t)] =
                                    vu.data[(c, i, j, t)] * Complex64::new(0.0, 0.5 * g.ke[(i, j)]);
                            }
                        }
                    }
                }
                let sc = scene.clone();
                let pr = pair.clone();
                let fu = mul_matrix(u, move |x, _| {
                    star_curvature_coord(&sc, &pr, x) * Complex64::new(0.0, 0.5)
                });
                rhs.add_scaled(&fu, Complex64::ONE);
                let s1 = mul_pointwise(&pu, |x, th| {
                    -Complex64::I * lambda_mode_factor(&scene, x, th, LadderSign::Minus)
                });
                let s2 = mul_pointwise(&mu_, |x, th| {
                    -Complex64::I * lambda_mode_factor(&scene, x, th, LadderSign::Plus)
                });
                rhs.add_scaled(&s1, Complex64::ONE);
                rhs.add_scaled(&s2, Complex64::ONE);
                relative(&lhs.sub(&rhs), &apply_x(u))
            }),
        },
        IdentityCase {
            name: "drift_mode_divergence",
            residual: Box::new(|g, _, _| {
                // eta_+ lambda_- - eta_- lambda_+ = -(i/2) div_g E
                let scene = g.scene.clone();
                let sc2 = scene.clone();
                let lm = BundleFunction::from_fn(g, 1, |_, x, th| {
                    lambda_mode_factor(&scene, x, th, LadderSign::Minus)
                });
                let lp = BundleFunction::from_fn(g, 1, |_, x, th| {
                    lambda_mode_factor(&sc2, x, th, LadderSign::Plus)
                });
                let lhs = apply_eta(&lm, LadderSign::Plus).sub(&apply_eta(&lp, LadderSign::Minus));
                let sc3 = g.scene.clone();
                let rhs = BundleFunction::from_fn(g, 1, |_, x, _| {
                    Complex64::new(0.0, -0.5 * sc3.div_e(x))
                });
                let scale = BundleFunction::from_fn(g, 1, |_, x, th| {
                    lambda_mode_factor(&g.scene, x, th, LadderSign::Plus)
                });
                let denom = norm(&apply_x(&scale)).max(norm(&rhs)).max(1e-300);
                norm(&lhs.sub(&rhs)) / denom
            }),
        },
        IdentityCase {
            name: "generator_ladder_sum",
            residual: Box::new(|_, u, _| {
                // G_E u = mu_+ u + mu_- u (exact split)
                let mut rhs = apply_mu(u, LadderSign::Plus);
                rhs.add_scaled(&apply_mu(u, LadderSign::Minus), Complex64::ONE);
                relative(&apply_g_e(u).sub(&rhs), &apply_g_e(u))
            }),
        },
        IdentityCase {
            name: "ladder_restriction_shift",
            residual: Box::new(|g, u, pair| {
                // on a pure mode k: (mu_+ + A_+) u = eta_+ u + (A - k theta)_+ u
                // with theta the 1-form dual to E (lambda_+ = i theta_+)
                let m = u.modes();
                let mut best_k = 0i64;
                let mut best = 0.0;
                for bin in 0..g.ntheta {
                    let mass: f64 = (0..u.nc)
                        .map(|c| {
                            (0..g.nx)
                                .map(|i| {
                                    (0..g.nx).map(|j| m[(c, i, j, bin)].norm_sqr()).sum::<f64>()
                                })
                                .sum::<f64>()
                        })
                        .sum();
                    if mass > best {
                        best = mass;
                        best_k = g.mode_of_bin(bin);
                    }
                }
                let k = best_k;
                let scene = g.scene.clone();
                let mut lhs = apply_mu(u, LadderSign::Plus);
                lhs.add_scaled(
                    &apply_connection_mode(u, pair, LadderSign::Plus),
                    Complex64::ONE,
                );
                let mut rhs = apply_eta(u, LadderSign::Plus);
                rhs.add_scaled(
                    &apply_connection_mode(u, pair, LadderSign::Plus),
                    Complex64::ONE,
                );
                // (theta)_+ = lambda_+ / i
                let tu = mul_pointwise(u, |x, th| {
                    lambda_mode_factor(&scene, x, th, LadderSign::Plus) / Complex64::I
                });
                rhs.add_scaled(&tu, Complex64::new(-(k as f64), 0.0));
                relative(&lhs.sub(&rhs), &lhs)
            }),
        },
    ]
}

/// Run every operator identity at each resolution on seeded random
/// band-limited data; reports relative residuals and convergence orders.
pub fn identity_suite(
    scene: &Scene,
    pair: &ConnectionPair,
    resolutions: &[(usize, usize)],
    seed: u64,
) -> Result<Vec<OperatorReport>> {
    let cases = identity_cases();
    let mut reports: Vec<OperatorReport> = cases
        .iter()
        .map(|c| OperatorReport { name: c.name.to_string(), residuals: Vec::new(), order: None })
        .collect();
    for &(cells, ntheta) in resolutions {
        let grid = FiberGrid::new(scene.clone(), cells, ntheta)?;
        let u = random_band_limited(&grid, pair.n, 3, 0.9 * scene.radius, 0, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let coeffs: Vec<Poly2> = (0..pair.n)
            .map(|_| {
                Poly2::from_terms(&[
                    (0, 0, Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
                    (1, 0, Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
                    (0, 1, Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)),
                ])
            })
            .collect();
        let rho = 0.9 * scene.radius;
        let u_pure = BundleFunction::pure_mode(&grid, pair.n, 2, |c, x| {
            coeffs[c].eval(x) * Complex64::new(support_bump(x, rho), 0.0)
        });
        if u.top_mode_fraction() > 1e-8 {
            return Err(Error::BandwidthOverflow(u.top_mode_fraction()));
        }
        for (case, report) in cases.iter().zip(reports.iter_mut()) {
            let data = if case.name == "ladder_restriction_shift" { &u_pure } else { &u };
            let r = (case.residual)(&grid, data, pair);
            report.residuals.push((cells, ntheta, r));
        }
    }
    for report in reports.iter_mut() {
        report.order = fit_order(&report.residuals);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Energy identities
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub lhs: f64,
    pub rhs: f64,
    /// |lhs - rhs| / ||u||^2
    pub residual: f64,
}

fn ke_quadratic_form(u: &BundleFunction) -> f64 {
    let g = &u.grid;
    let dth = 2.0 * std::f64::consts::PI / g.ntheta as f64;
    let mut acc = 0.0;
    for i in 0..g.nx {
        for j in 0..g.nx {
            let w = g.weight[(i, j)] * g.ke[(i, j)];
            if w == 0.0 {
                continue;
            }
            for c in 0..u.nc {
                for t in 0..g.ntheta {
                    acc += u.data[(c, i, j, t)].norm_sqr() * w;
                }
            }
        }
    }
    acc * dth
}

/// ||mu_+ u||^2 = ||mu_- u||^2 - (k/2)(K_E u, u) for a pure mode k with
/// u vanishing near the boundary.
pub fn energy_identity(u: &BundleFunction, k: i64) -> EnergyReport {
    let lhs = norm(&apply_mu(u, LadderSign::Plus)).powi(2);
    let rhs = norm(&apply_mu(u, LadderSign::Minus)).powi(2) - 0.5 * k as f64 * ke_quadratic_form(u);
    let nu = norm(u).powi(2).max(1e-300);
    EnergyReport { lhs, rhs, residual: (lhs - rhs).abs() / nu }
}

/// Weighted variant: with P = (mu_+ + A_+) + (eta_+ phi) and
/// Q = (mu_- + A_-) - (eta_- phi),
/// ||P u||^2 = ||Q u||^2 - (k/2)(K_E u, u) - (1/2)((Delta_g phi) u, u)
///            + (i/2)(star F_A u, u).
pub fn weighted_energy_identity(
    u: &BundleFunction,
    k: i64,
    phi: &ScalarField,
    pair: &ConnectionPair,
) -> Result<EnergyReport> {
    if !pair.unitary_a || !pair.skew_hermitian_phi {
        return Err(Error::Config("weighted identity requires a unitary pair".into()));
    }
    let g = &u.grid;
    let scene = g.scene.clone();

    // eta_+ phi and eta_- phi as pointwise multipliers (phi is x-only, mode 0)
    let eta_phi = |x: [f64; 2], th: f64, sign: LadderSign| -> Complex64 {
        let es = (-scene.sigma_at(x)).exp();
        let [px, py] = phi.grad(x);
        match sign {
            LadderSign::Plus => {
                Complex64::new(0.5 * es * px, -0.5 * es * py) * Complex64::from_polar(1.0, th)
            }
            LadderSign::Minus => {
                Complex64::new(0.5 * es * px, 0.5 * es * py) * Complex64::from_polar(1.0, -th)
            }
        }
    };

    let mut pu = apply_mu(u, LadderSign::Plus);
    pu.add_scaled(&apply_connection_mode(u, pair, LadderSign::Plus), Complex64::ONE);
    pu.add_scaled(
        &mul_pointwise(u, |x, th| eta_phi(x, th, LadderSign::Plus)),
        Complex64::ONE,
    );
    let mut qu = apply_mu(u, LadderSign::Minus);
    qu.add_scaled(&apply_connection_mode(u, pair, LadderSign::Minus), Complex64::ONE);
    qu.add_scaled(
        &mul_pointwise(u, |x, th| eta_phi(x, th, LadderSign::Minus)),
        -Complex64::ONE,
    );

    let lhs = norm(&pu).powi(2);

    // -(1/2)((Delta_g phi) u, u) with Delta_g = e^{-2 sigma} Delta
    let sc = scene.clone();
    let lap_term = {
        let dth = 2.0 * std::f64::consts::PI / g.ntheta as f64;
        let mut acc = 0.0;
        for i in 0..g.nx {
            for j in 0..g.nx {
                let w = g.weight[(i, j)];
                if w == 0.0 {
                    continue;
                }
                let x = [g.xs[i], g.xs[j]];
                let lap = (-2.0 * sc.sigma_at(x)).exp() * phi.laplacian(x);
                for c in 0..u.nc {
                    for t in 0..g.ntheta {
                        acc += u.data[(c, i, j, t)].norm_sqr() * w * lap;
                    }
                }
            }
        }
        acc * dth
    };

    // (i/2)(star F_A u, u)
    let sc2 = scene.clone();
    let pr = pair.clone();
    let fu = mul_matrix(u, move |x, _| {
        star_curvature_coord(&sc2, &pr, x) * Complex64::new(0.0, 0.5)
    });
    let curv_term = inner_product(u, &fu).re;

    let rhs = norm(&qu).powi(2) - 0.5 * k as f64 * ke_quadratic_form(u) - 0.5 * lap_term
        + curv_term;
    let nu = norm(u).powi(2).max(1e-300);
    Ok(EnergyReport { lhs, rhs, residual: (lhs - rhs).abs() / nu })
}

// ---------------------------------------------------------------------------
// Carleman-type mode estimate
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct CarlemanReport {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub s: f64,
    pub m: i64,
    pub kappa: f64,
}

/// sum_{k >= m} k^{2s+1}(||u_k||^2 + ||u_{-k}||^2)
///   <= (1/(kappa s)) sum_{k >= m+1} k^{2s+1}(||(G_E u)_k||^2 + ||(G_E u)_{-k}||^2)
/// for u vanishing on the boundary, when K_E <= -kappa < 0.
pub fn carleman_check(u: &BundleFunction, s: f64, m: i64, kappa: f64) -> Result<CarlemanReport> {
    if kappa <= 0.0 {
        return Err(Error::Config(format!("kappa must be positive, got {kappa}")));
    }
    if m < 1 {
        return Err(Error::Config(format!("m must be >= 1, got {m}")));
    }
    let un = mode_norms(u);
    let gn = mode_norms(&apply_g_e(u));
    let lookup = |norms: &[(i64, f64)], k: i64| -> f64 {
        norms.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v).unwrap_or(0.0)
    };
    let kmax = u.grid.ntheta as i64 / 2 - 1;
    let mut lhs = 0.0;
    for k in m..=kmax {
        lhs += (k as f64).powf(2.0 * s + 1.0) * (lookup(&un, k) + lookup(&un, -k));
    }
    let mut rhs = 0.0;
    for k in (m + 1)..=kmax {
        rhs += (k as f64).powf(2.0 * s + 1.0) * (lookup(&gn, k) + lookup(&gn, -k));
    }
    rhs /= kappa * s;
    Ok(CarlemanReport { lhs, rhs, margin: rhs - lhs, s, m, kappa })
}

// ---------------------------------------------------------------------------
// Mode decay profile
// ---------------------------------------------------------------------------

/// Per-mode norms ||u_k|| in descending |k|-grouped table form.
pub fn finite_degree_profile(u: &BundleFunction) -> Vec<(i64, f64)> {
    mode_norms(u)
        .into_iter()
        .map(|(k, m)| (k, m.max(0.0).sqrt()))
        .collect()
}

/// Fraction of squared mode mass beyond |k| > degree in a 1D angular sample
/// set (values of a function at equispaced fiber angles over one base point).
pub fn angular_tail_fraction(samples: &[Complex64], degree: i64) -> f64 {
    let n = samples.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = samples.to_vec();
    fft.process(&mut buf);
    let mut total = 0.0;
    let mut tail = 0.0;
    for (bin, v) in buf.iter().enumerate() {
        let k = if bin <= n / 2 - 1 { bin as i64 } else { bin as i64 - n as i64 };
        let m = v.norm_sqr();
        total += m;
        if k.abs() > degree {
            tail += m;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        tail / total
    }
}
