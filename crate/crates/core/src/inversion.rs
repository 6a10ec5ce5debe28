//! Discretized forward operator for the attenuated ray transform on tensor
//! pairs, numerical kernel analysis against the natural kernel, Tikhonov
//! reconstruction, and the scattering-rigidity experiment.

use crate::error::{Error, Result};
use crate::flow::{backward_entry, influx_point, thermostat_rhs, BoundaryFan, PhasePoint};
use crate::ode::{rk4_path, OdeOptions};
use crate::poly::{boundary_factor, monomial_basis, poly_space_dim, Poly2};
use crate::scene::{ScalarField, Scene};
use crate::transport::{
    binomial, gauge_transform, parallel_transport, ConnectionPair, FiberSource, GaugeField,
};
use crate::{cmat_id, CMat, CVec};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

/// Packs/unpacks complex matrices in column-major re/im interleaving.
fn pack(m: &CMat, out: &mut [f64]) {
    for (k, c) in m.iter().enumerate() {
        out[2 * k] = c.re;
        out[2 * k + 1] = c.im;
    }
}

fn unpack(n: usize, data: &[f64]) -> CMat {
    CMat::from_fn(n, n, |i, j| {
        let k = j * n + i;
        Complex64::new(data[2 * k], data[2 * k + 1])
    })
}

/// Column layout of the tensor-pair basis: for each part (the order-m
/// component f, then the order-(m-1) component h), slot index, fiber
/// component, and total-degree monomial index.
#[derive(Clone, Debug)]
pub struct BasisSpec {
    pub m: usize,
    pub d: usize,
    pub n: usize,
}

impl BasisSpec {
    pub fn poly_dim(&self) -> usize {
        poly_space_dim(self.d)
    }

    pub fn f_slots(&self) -> usize {
        self.m + 1
    }

    pub fn h_slots(&self) -> usize {
        self.m
    }

    pub fn cols(&self) -> usize {
        (self.f_slots() + self.h_slots()) * self.n * self.poly_dim()
    }

    /// Flat column index of (part, slot, comp, poly).
    pub fn col(&self, part: usize, slot: usize, comp: usize, q: usize) -> usize {
        let pd = self.poly_dim();
        let before = if part == 0 { 0 } else { self.f_slots() };
        ((before + slot) * self.n + comp) * pd + q
    }
}

pub struct DiscreteForwardMap {
    pub spec: BasisSpec,
    /// rows = n x (fan size), columns in mass-orthonormal coordinates
    pub matrix: CMat,
    /// lower Cholesky factor of the basis mass matrix (Gram = L L^H)
    pub chol_l: CMat,
    pub fan_size: usize,
}

impl DiscreteForwardMap {
    /// Mass-orthonormal coordinates of a monomial-coefficient vector.
    pub fn to_orthonormal(&self, c: &CVec) -> CVec {
        self.chol_l.adjoint() * c
    }
}

fn angular_gram(order: usize) -> Vec<Vec<f64>> {
    // int_0^{2pi} cos^{a+a'} sin^{2 order - a - a'} dtheta by trapezoid
    let nq = 512;
    let mut t = vec![vec![0.0; order + 1]; order + 1];
    for a in 0..=order {
        for b in 0..=order {
            let mut acc = 0.0;
            for j in 0..nq {
                let th = 2.0 * std::f64::consts::PI * j as f64 / nq as f64;
                acc += th.cos().powi((a + b) as i32)
                    * th.sin().powi((2 * order - a - b) as i32);
            }
            t[a][b] = acc * 2.0 * std::f64::consts::PI / nq as f64;
        }
    }
    t
}

/// Mass matrix of the pair basis in the L^2(SM) pairing of induced fiber
/// functions, with the e^{2 sigma} volume weight.
fn mass_matrix(scene: &Scene, spec: &BasisSpec) -> CMat {
    let pd = spec.poly_dim();
    let monos = monomial_basis(spec.d);
    let cols = spec.cols();
    let mut gram = CMat::zeros(cols, cols);
    for (part, order) in [(0usize, spec.m), (1usize, spec.m.wrapping_sub(1))] {
        if part == 1 && spec.m == 0 {
            continue;
        }
        let t = angular_gram(order);
        // spatial Gram with weight e^{(2 - 2 order) sigma}
        let quad = scene.disk_quadrature(2 * spec.d + 4, 4 * spec.d + 8);
        let mut gp = vec![vec![0.0; pd]; pd];
        for (x, w) in &quad {
            let extra = (-2.0 * order as f64 * scene.sigma_at(*x)).exp();
            let vals: Vec<f64> = monos.iter().map(|p| p.eval(*x).re).collect();
            for q in 0..pd {
                for q2 in 0..pd {
                    gp[q][q2] += vals[q] * vals[q2] * w * extra;
                }
            }
        }
        for a in 0..=order {
            for b in 0..=order {
                let coef = binomial(order, a) * binomial(order, b) * t[a][b];
                if coef == 0.0 {
                    continue;
                }
                for c in 0..spec.n {
                    for q in 0..pd {
                        for q2 in 0..pd {
                            let i = spec.col(part, a, c, q);
                            let j = spec.col(part, b, c, q2);
                            gram[(i, j)] += Complex64::new(coef * gp[q][q2], 0.0);
                        }
                    }
                }
            }
        }
    }
    gram
}

/// Assembles the forward matrix: each column is the transform of one basis
/// pair element sampled over the fan, in mass-orthonormal column
/// coordinates. One fixed-step transport trace per ray is shared by every
/// column.
pub fn assemble_forward(
    scene: &Scene,
    pair: &ConnectionPair,
    spec: &BasisSpec,
    fan: &BoundaryFan,
    opts: &OdeOptions,
) -> Result<DiscreteForwardMap> {
    let n = pair.n;
    if n != spec.n {
        return Err(Error::RankMismatch(n, spec.n));
    }
    let pd = spec.poly_dim();
    let monos = monomial_basis(spec.d);
    let cols = spec.cols();
    let steps = 256;

    let rows: Vec<Result<Vec<CVec>>> = fan
        .entries
        .par_iter()
        .map(|e| {
            let orbit =
                crate::flow::integrate_orbit(scene, e.point, crate::flow::Direction::Forward, opts)?;
            let tau = orbit.tau;
            let nn = 2 * n * n;
            let mut y0 = vec![0.0; 3 + nn];
            y0[0] = e.point.x[0];
            y0[1] = e.point.x[1];
            y0[2] = e.point.theta;
            pack(&cmat_id(n), &mut y0[3..]);
            let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
                thermostat_rhs(scene, y, dy);
                let x = [y[0], y[1]];
                let att = pair.attenuation(scene, x, y[2]);
                let w = unpack(n, &y[3..]);
                let dw = w * att;
                pack(&dw, &mut dy[3..]);
            };
            let path = rk4_path(&mut rhs, y0, tau, steps);
            let h = tau / steps as f64;

            // row block of this ray: n rows x cols
            let mut block = vec![CVec::zeros(cols); n];
            for (i, y) in path.iter().enumerate() {
                let sw = if i == 0 || i == steps {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                } * h
                    / 3.0;
                let x = [y[0], y[1]];
                let (st, ct) = y[2].sin_cos();
                let w = unpack(n, &y[3..]);
                let mono_vals: Vec<f64> = monos.iter().map(|p| p.eval(x).re).collect();
                for (part, order) in [(0usize, spec.m), (1usize, spec.m.wrapping_sub(1))] {
                    if part == 1 && spec.m == 0 {
                        continue;
                    }
                    let ems = (-(order as f64) * scene.sigma_at(x)).exp();
                    for a in 0..=order {
                        let ang = binomial(order, a)
                            * ct.powi(a as i32)
                            * st.powi((order - a) as i32)
                            * ems;
                        if ang == 0.0 {
                            continue;
                        }
                        for c in 0..n {
                            for q in 0..pd {
                                let s = Complex64::new(sw * ang * mono_vals[q], 0.0);
                                let j = spec.col(part, a, c, q);
                                for r in 0..n {
                                    block[r][j] += s * w[(r, c)];
                                }
                            }
                        }
                    }
                }
            }
            Ok(block)
        })
        .collect();

    let mut matrix = CMat::zeros(n * fan.entries.len(), cols);
    for (e_idx, block) in rows.into_iter().enumerate() {
        let block = block?;
        for (r, row) in block.iter().enumerate() {
            for j in 0..cols {
                matrix[(e_idx * n + r, j)] = row[j];
            }
        }
    }

    let gram = mass_matrix(scene, spec);
    let chol = nalgebra::Cholesky::new(gram)
        .ok_or_else(|| Error::Config("basis mass matrix is not positive definite".into()))?;
    let l = chol.l();
    // orthonormal-coordinate matrix: M L^{-H}, via L^{-1} M^H
    let solved = l
        .solve_lower_triangular(&matrix.adjoint())
        .ok_or_else(|| Error::Config("singular Cholesky factor".into()))?;
    let matrix = solved.adjoint();

    Ok(DiscreteForwardMap { spec: spec.clone(), matrix, chol_l: l, fan_size: fan.entries.len() })
}

/// Monomial-coefficient vector of the natural kernel pair generated by
/// p = (R^2 - |x|^2) q e_c for one scalar monomial q of degree <= d - 2.
/// Requires m = 1 and a flat chart (sigma = 0), where the slot expansion of
/// G_E p + A p stays polynomial.
fn natural_kernel_column(
    scene: &Scene,
    pair: &ConnectionPair,
    spec: &BasisSpec,
    comp: usize,
    q: &Poly2,
) -> Result<CVec> {
    if spec.m != 1 {
        return Err(Error::Config("natural kernel basis implemented for m = 1".into()));
    }
    if !matches!(scene.sigma, ScalarField::Zero) {
        return Err(Error::Config("natural kernel basis requires a flat chart".into()));
    }
    let p = boundary_factor(scene.radius).mul(q);
    let px = p.ddx();
    let py = p.ddy();
    let pd = spec.poly_dim();
    let mut out = CVec::zeros(spec.cols());
    // constant matrices (acceptance scenes use constant pairs)
    let a1 = pair.a1.eval([0.0, 0.0]);
    let a2 = pair.a2.eval([0.0, 0.0]);
    let phi = pair.phi.eval([0.0, 0.0]);
    // f slot a=1 (cos theta): d_x p + A_1 p; slot a=0 (sin theta): d_y p + A_2 p
    for r in 0..spec.n {
        let f1 = px
            .scale(if r == comp { Complex64::ONE } else { Complex64::ZERO })
            .add(&p.scale(a1[(r, comp)]));
        let f0 = py
            .scale(if r == comp { Complex64::ONE } else { Complex64::ZERO })
            .add(&p.scale(a2[(r, comp)]));
        let h0 = p.scale(phi[(r, comp)]);
        for (q_idx, c) in f1.monomial_coords(spec.d).into_iter().enumerate().take(pd) {
            out[spec.col(0, 1, r, q_idx)] += c;
        }
        for (q_idx, c) in f0.monomial_coords(spec.d).into_iter().enumerate().take(pd) {
            out[spec.col(0, 0, r, q_idx)] += c;
        }
        for (q_idx, c) in h0.monomial_coords(spec.d).into_iter().enumerate().take(pd) {
            out[spec.col(1, 0, r, q_idx)] += c;
        }
    }
    Ok(out)
}

/// Mass-orthonormal basis of the natural kernel within the discrete basis:
/// all pairs [G_E p + A p, Phi p] with p = (R^2 - |x|^2) q, deg q <= d - 2.
pub fn natural_kernel_basis(
    scene: &Scene,
    pair: &ConnectionPair,
    map: &DiscreteForwardMap,
) -> Result<CMat> {
    let spec = &map.spec;
    if spec.d < 2 {
        return Ok(CMat::zeros(spec.cols(), 0));
    }
    let qs = monomial_basis(spec.d - 2);
    let dim = qs.len() * spec.n;
    let mut raw = CMat::zeros(spec.cols(), dim);
    let mut j = 0;
    for comp in 0..spec.n {
        for q in &qs {
            let c = natural_kernel_column(scene, pair, spec, comp, q)?;
            let u = map.to_orthonormal(&c);
            for i in 0..spec.cols() {
                raw[(i, j)] = u[i];
            }
            j += 1;
        }
    }
    let qr = raw.qr();
    Ok(qr.q())
}

#[derive(Debug, Serialize)]
pub struct KernelReport {
    pub singular_values: Vec<f64>,
    pub kernel_dim: usize,
    pub natural_dim: usize,
    /// ratio across the spectral gap separating the numerical kernel
    pub gap: f64,
    pub principal_angles: Vec<f64>,
}

/// Sorted singular spectrum and right singular vectors, descending.
fn sorted_svd(m: &CMat) -> (Vec<f64>, CMat) {
    let svd = nalgebra::SVD::new(m.clone(), false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let sv: Vec<f64> = idx.iter().map(|&i| svd.singular_values[i]).collect();
    // columns of V in the same order
    let v = CMat::from_fn(m.ncols(), idx.len(), |r, c| vt[(idx[c], r)].conj());
    (sv, v)
}

/// SVD kernel detection and principal-angle comparison with the natural
/// kernel subspace. Both subspaces live in mass-orthonormal coordinates.
pub fn kernel_analysis(
    scene: &Scene,
    pair: &ConnectionPair,
    map: &DiscreteForwardMap,
) -> Result<KernelReport> {
    let (sv, v) = sorted_svd(&map.matrix);
    let natural = natural_kernel_basis(scene, pair, map)?;
    let natural_dim = natural.ncols();

    // largest relative gap among singular values below 1e-6 x sigma_max
    let smax = sv[0];
    let mut cut = None;
    let mut best = 0.0;
    for i in 0..sv.len() - 1 {
        if sv[i + 1] < 1e-6 * smax {
            let ratio = sv[i] / sv[i + 1].max(f64::MIN_POSITIVE);
            if ratio > best {
                best = ratio;
                cut = Some(i + 1);
            }
        }
    }
    let cut = cut.ok_or(Error::NoSpectralGap)?;
    let kernel_dim = sv.len() - cut;

    let kernel = v.columns(cut, kernel_dim).into_owned();
    let overlap = natural.adjoint() * kernel;
    let ssv = nalgebra::SVD::new(overlap, false, false).singular_values;
    let mut angles: Vec<f64> = ssv.iter().map(|s| s.min(1.0).acos()).collect();
    angles.sort_by(|a, b| b.partial_cmp(a).unwrap());

    Ok(KernelReport {
        singular_values: sv,
        kernel_dim,
        natural_dim,
        gap: best,
        principal_angles: angles,
    })
}

/// Tikhonov-regularized least squares in orthonormal coordinates.
pub fn reconstruct(map: &DiscreteForwardMap, data: &CVec, alpha: f64) -> Result<CVec> {
    if alpha <= 0.0 {
        return Err(Error::Config(format!("regularization must be positive, got {alpha}")));
    }
    let m = &map.matrix;
    let normal = m.adjoint() * m + cmat_id(m.ncols()) * Complex64::new(alpha, 0.0);
    let rhs = m.adjoint() * data;
    let chol = nalgebra::Cholesky::new(normal)
        .ok_or_else(|| Error::Config("normal matrix not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Removes the component of `u` lying in the column span of the
/// orthonormal basis `q`.
pub fn project_out(u: &CVec, q: &CMat) -> CVec {
    u - q * (q.adjoint() * u)
}

// ---------------------------------------------------------------------------
// Scattering rigidity
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct RigidityReport {
    /// max over the fan of ||C_{A,Phi} - C_{B,Psi}||
    pub scattering_max_diff: f64,
    /// max normalized residual of the pseudolinearized transport identity
    /// along the sampled rays
    pub transport_identity_residual: f64,
    /// ||V U|| / ||U|| of the relative transport factor on the fiber grid
    pub fiber_constancy: f64,
    /// max over sample points of ||U(x, .) - Q(x)||
    pub gauge_match: f64,
}

/// Full rigidity experiment for a boundary-fixed gauge: equal scattering
/// data, the transport identity satisfied by U = U_{A,Phi} U_{B,Psi}^{-1},
/// fiber-independence of U, and pointwise recovery of Q.
pub fn rigidity_experiment(
    scene: &Scene,
    pair: &ConnectionPair,
    q: &GaugeField,
    fan: &BoundaryFan,
    opts: &OdeOptions,
) -> Result<RigidityReport> {
    let dev = q.boundary_deviation(scene.radius, 256);
    if dev > 1e-9 {
        return Err(Error::Config(format!(
            "gauge is not the identity on the boundary (deviation {dev:.3e})"
        )));
    }
    q.check_invertible(scene.radius, 32)?;
    let pair_b = gauge_transform(q, pair)?;
    let n = pair.n;

    // (i) scattering data agree
    let scattering_max_diff = fan
        .entries
        .par_iter()
        .map(|e| {
            let ca = parallel_transport(scene, pair, e.point, opts)?;
            let cb = parallel_transport(scene, &pair_b, e.point, opts)?;
            Ok((ca.c - cb.c).norm())
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    // (ii) transport identity along rays: with Ucal = U - Id,
    // dU/dt + A_v Ucal - Ucal B_v + Phi Ucal - Ucal Psi
    //   = -(A_v - B_v + Phi - Psi)
    let steps = 256usize;
    let transport_identity_residual = fan
        .entries
        .par_iter()
        .map(|e| {
            let orbit =
                crate::flow::integrate_orbit(scene, e.point, crate::flow::Direction::Forward, opts)?;
            let tau = orbit.tau;
            let nn = 2 * n * n;
            let mut y0 = vec![0.0; 3 + 2 * nn];
            y0[0] = e.point.x[0];
            y0[1] = e.point.x[1];
            y0[2] = e.point.theta;
            pack(&cmat_id(n), &mut y0[3..3 + nn]);
            pack(&cmat_id(n), &mut y0[3 + nn..]);
            let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
                thermostat_rhs(scene, y, dy);
                let x = [y[0], y[1]];
                let att_a = pair.attenuation(scene, x, y[2]);
                let att_b = pair_b.attenuation(scene, x, y[2]);
                let ua = unpack(n, &y[3..3 + nn]);
                let wb = unpack(n, &y[3 + nn..]);
                let dua = -(att_a) * ua;
                let dwb = wb * att_b;
                pack(&dua, &mut dy[3..3 + nn]);
                pack(&dwb, &mut dy[3 + nn..]);
            };
            let path = rk4_path(&mut rhs, y0, tau, steps);
            let h = tau / steps as f64;
            let us: Vec<CMat> = path
                .iter()
                .map(|y| unpack(n, &y[3..3 + nn]) * unpack(n, &y[3 + nn..]))
                .collect();
            let mut worst: f64 = 0.0;
            for i in 2..steps - 1 {
                let y = &path[i];
                let x = [y[0], y[1]];
                let v = scene.unit_vector(x, y[2]);
                let av = pair.a_at(x, v);
                let bv = pair_b.a_at(x, v);
                let phi = pair.phi.eval(x);
                let psi = pair_b.phi.eval(x);
                let eight = Complex64::new(8.0, 0.0);
                let du = (&us[i - 2] - &us[i - 1] * eight + &us[i + 1] * eight - &us[i + 2])
                    / Complex64::new(12.0 * h, 0.0);
                let ucal = &us[i] - cmat_id(n);
                let res = du + &av * &ucal - &ucal * &bv + &phi * &ucal - &ucal * &psi
                    + (av - bv + phi - psi);
                worst = worst.max(res.norm() / (1.0 + us[i].norm()));
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    // (iii)+(iv) U on a fiber sample: fiber-constancy and gauge recovery
    let ntheta = 32usize;
    let sample_points = [
        [0.0, 0.0],
        [0.35 * scene.radius, 0.1 * scene.radius],
        [-0.2 * scene.radius, 0.45 * scene.radius],
        [0.1 * scene.radius, -0.55 * scene.radius],
        [-0.5 * scene.radius, -0.25 * scene.radius],
        [0.6 * scene.radius, 0.3 * scene.radius],
    ];
    let mut num = 0.0;
    let mut den = 0.0;
    let mut gauge_match: f64 = 0.0;
    for x in sample_points {
        let samples: Vec<CMat> = (0..ntheta)
            .into_par_iter()
            .map(|t| {
                let theta = 2.0 * std::f64::consts::PI * t as f64 / ntheta as f64;
                let p = PhasePoint::new(x, theta);
                let (phi_b, alpha_b, tau_back) = backward_entry(scene, &p, opts)?;
                let entry = influx_point(scene, phi_b, alpha_b);
                let nn = 2 * n * n;
                let mut y0 = vec![0.0; 3 + 2 * nn];
                y0[0] = entry.x[0];
                y0[1] = entry.x[1];
                y0[2] = entry.theta;
                pack(&cmat_id(n), &mut y0[3..3 + nn]);
                pack(&cmat_id(n), &mut y0[3 + nn..]);
                let mut rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
                    thermostat_rhs(scene, y, dy);
                    let xx = [y[0], y[1]];
                    let att_a = pair.attenuation(scene, xx, y[2]);
                    let att_b = pair_b.attenuation(scene, xx, y[2]);
                    let ua = unpack(n, &y[3..3 + nn]);
                    let wb = unpack(n, &y[3 + nn..]);
                    pack(&(-(att_a) * ua), &mut dy[3..3 + nn]);
                    pack(&(wb * att_b), &mut dy[3 + nn..]);
                };
                let path = rk4_path(&mut rhs, y0, tau_back, 256);
                let y = path.last().unwrap();
                Ok(unpack(n, &y[3..3 + nn]) * unpack(n, &y[3 + nn..]))
            })
            .collect::<Result<Vec<CMat>>>()?;
        // spectral V on each matrix entry across theta
        let qx = q.eval(x);
        for u in &samples {
            gauge_match = gauge_match.max((u - &qx).norm());
        }
        for r in 0..n {
            for c in 0..n {
                let entries: Vec<Complex64> = samples.iter().map(|m| m[(r, c)]).collect();
                let mut planner = rustfft::FftPlanner::new();
                let fft = planner.plan_fft_forward(ntheta);
                let mut buf = entries.clone();
                fft.process(&mut buf);
                for (bin, v) in buf.iter().enumerate() {
                    let k = if bin <= ntheta / 2 - 1 {
                        bin as i64
                    } else {
                        bin as i64 - ntheta as i64
                    };
                    num += (k as f64 * k as f64) * v.norm_sqr();
                    den += v.norm_sqr();
                }
            }
        }
    }
    let fiber_constancy = (num / den.max(1e-300)).sqrt();

    Ok(RigidityReport {
        scattering_max_diff,
        transport_identity_residual,
        fiber_constancy,
        gauge_match,
    })
}

/// Relative norm of the transform of a pair, for annihilation checks:
/// ||I[f, h]|| over the fan against the fan-sampled norm of the source.
pub fn transform_relative_norm(
    scene: &Scene,
    pair: &ConnectionPair,
    source: &dyn FiberSource,
    scale: f64,
    fan: &BoundaryFan,
    opts: &OdeOptions,
) -> Result<f64> {
    let vals = crate::transport::ray_transform(scene, pair, source, fan, opts)?;
    let worst = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(worst / scale)
}
