//! Non-abelian transport along thermostat orbits: parallel transport
//! U_{A,Phi}, scattering data C_{A,Phi}, attenuated ray transforms of
//! symmetric tensor fields, natural kernel elements, gauge transformations
//! and the pseudolinearization onto the endomorphism bundle.

use crate::error::{Error, Result};
use crate::flow::{thermostat_rhs, BoundaryFan, PhasePoint};
use crate::ode::OdeOptions;
use crate::poly::{boundary_factor, Poly2};
use crate::scene::Scene;
use crate::{cmat_id, CMat, CVec};
use num_complex::Complex64;
use rand::Rng;
use std::sync::Arc;

/// Matrix-valued field on the chart. Derivatives default to central
/// differences; polynomial fields override them analytically.
pub trait MatrixField: Send + Sync {
    fn rank(&self) -> usize;
    fn eval(&self, x: [f64; 2]) -> CMat;
    fn dx(&self, x: [f64; 2], axis: usize) -> CMat {
        let h = 1e-5;
        let mut xp = x;
        let mut xm = x;
        xp[axis] += h;
        xm[axis] -= h;
        (self.eval(xp) - self.eval(xm)) / Complex64::new(2.0 * h, 0.0)
    }
}

pub type FieldRef = Arc<dyn MatrixField>;

/// Identically-zero matrix field.
pub struct ZeroField(pub usize);

impl MatrixField for ZeroField {
    fn rank(&self) -> usize {
        self.0
    }
    fn eval(&self, _x: [f64; 2]) -> CMat {
        CMat::zeros(self.0, self.0)
    }
    fn dx(&self, _x: [f64; 2], _axis: usize) -> CMat {
        CMat::zeros(self.0, self.0)
    }
}

/// Polynomial matrix field: sum of x^i y^j M_{ij} terms.
#[derive(Clone)]
pub struct MatrixPoly {
    pub n: usize,
    pub terms: Vec<(usize, usize, CMat)>,
}

impl MatrixPoly {
    pub fn constant(m: CMat) -> Self {
        let n = m.nrows();
        MatrixPoly { n, terms: vec![(0, 0, m)] }
    }

    pub fn zero(n: usize) -> Self {
        MatrixPoly { n, terms: vec![] }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(cmat_id(n))
    }

    /// Random dense complex polynomial field of the given total degree.
    pub fn random<R: Rng>(n: usize, degree: usize, scale: f64, rng: &mut R) -> Self {
        let mut terms = Vec::new();
        for i in 0..=degree {
            for j in 0..=(degree - i) {
                let m = CMat::from_fn(n, n, |_, _| {
                    Complex64::new(
                        scale * (rng.gen::<f64>() - 0.5),
                        scale * (rng.gen::<f64>() - 0.5),
                    )
                });
                terms.push((i, j, m));
            }
        }
        MatrixPoly { n, terms }
    }

    /// Random field with skew-Hermitian matrix coefficients and real
    /// monomials, so the value is in u(n) at every real chart point.
    pub fn random_skew_hermitian<R: Rng>(
        n: usize,
        degree: usize,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut terms = Vec::new();
        for i in 0..=degree {
            for j in 0..=(degree - i) {
                let g = CMat::from_fn(n, n, |_, _| {
                    Complex64::new(
                        scale * (rng.gen::<f64>() - 0.5),
                        scale * (rng.gen::<f64>() - 0.5),
                    )
                });
                let m = (&g - g.adjoint()) * Complex64::new(0.5, 0.0);
                terms.push((i, j, m));
            }
        }
        MatrixPoly { n, terms }
    }

    /// From scalar bivariate polynomials per entry (rank 1 helper).
    pub fn scalar(p: Poly2) -> Self {
        let mut terms = Vec::new();
        for i in 0..p.nx {
            for j in 0..p.ny {
                let c = p.coeff(i, j);
                if c.norm() > 0.0 {
                    terms.push((i, j, CMat::from_element(1, 1, c)));
                }
            }
        }
        MatrixPoly { n: 1, terms }
    }
}

impl MatrixField for MatrixPoly {
    fn rank(&self) -> usize {
        self.n
    }
    fn eval(&self, x: [f64; 2]) -> CMat {
        let mut acc = CMat::zeros(self.n, self.n);
        for (i, j, m) in &self.terms {
            let s = x[0].powi(*i as i32) * x[1].powi(*j as i32);
            acc += m * Complex64::new(s, 0.0);
        }
        acc
    }
    fn dx(&self, x: [f64; 2], axis: usize) -> CMat {
        let mut acc = CMat::zeros(self.n, self.n);
        for (i, j, m) in &self.terms {
            let (p, q) = (*i, *j);
            let s = match axis {
                0 if p > 0 => p as f64 * x[0].powi(p as i32 - 1) * x[1].powi(q as i32),
                1 if q > 0 => q as f64 * x[0].powi(p as i32) * x[1].powi(q as i32 - 1),
                _ => 0.0,
            };
            if s != 0.0 {
                acc += m * Complex64::new(s, 0.0);
            }
        }
        acc
    }
}

/// A connection (two coordinate component matrices) together with a Higgs
/// field on the trivial bundle M x C^n.
#[derive(Clone)]
pub struct ConnectionPair {
    pub n: usize,
    pub a1: FieldRef,
    pub a2: FieldRef,
    pub phi: FieldRef,
    pub unitary_a: bool,
    pub skew_hermitian_phi: bool,
}

impl ConnectionPair {
    pub fn zero(n: usize) -> Self {
        ConnectionPair {
            n,
            a1: Arc::new(ZeroField(n)),
            a2: Arc::new(ZeroField(n)),
            phi: Arc::new(ZeroField(n)),
            unitary_a: true,
            skew_hermitian_phi: true,
        }
    }

    pub fn new(a1: FieldRef, a2: FieldRef, phi: FieldRef) -> Result<Self> {
        let n = a1.rank();
        if a2.rank() != n || phi.rank() != n {
            return Err(Error::RankMismatch(n, a2.rank().max(phi.rank())));
        }
        Ok(ConnectionPair { n, a1, a2, phi, unitary_a: false, skew_hermitian_phi: false })
    }

    pub fn with_unitary_flags(mut self, unitary_a: bool, skew_phi: bool) -> Self {
        self.unitary_a = unitary_a;
        self.skew_hermitian_phi = skew_phi;
        self
    }

    /// A(x, v) = A_1 v^1 + A_2 v^2 for a chart vector v.
    pub fn a_at(&self, x: [f64; 2], v: [f64; 2]) -> CMat {
        self.a1.eval(x) * Complex64::new(v[0], 0.0) + self.a2.eval(x) * Complex64::new(v[1], 0.0)
    }

    /// Full attenuation A(x, v(theta)) + Phi(x) at a phase point.
    pub fn attenuation(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CMat {
        let v = scene.unit_vector(x, theta);
        self.a_at(x, v) + self.phi.eval(x)
    }
}

/// Gauge field Q: chart -> GL(n, C) with analytic derivatives, plus helpers
/// for boundary-fixed bumps used in gauge-invariance experiments.
#[derive(Clone)]
pub struct GaugeField {
    pub q: MatrixPoly,
}

impl GaugeField {
    pub fn identity(n: usize) -> Self {
        GaugeField { q: MatrixPoly::identity(n) }
    }

    /// Q = Id + c (R^2 - |x|^2)^2 N(x): equals Id on the boundary with
    /// vanishing first derivatives there.
    pub fn boundary_fixed_bump(n: usize, radius: f64, amplitude: f64, nfield: MatrixPoly) -> Self {
        let cut = boundary_factor(radius);
        let cut2 = cut.mul(&cut);
        let scale = amplitude / radius.powi(4);
        let mut terms = vec![(0usize, 0usize, cmat_id(n))];
        for (i, j, m) in &nfield.terms {
            for a in 0..cut2.nx {
                for b in 0..cut2.ny {
                    let c = cut2.coeff(a, b) * Complex64::new(scale, 0.0);
                    if c.norm() > 0.0 {
                        terms.push((i + a, j + b, m * c));
                    }
                }
            }
        }
        GaugeField { q: MatrixPoly { n, terms } }
    }

    pub fn rank(&self) -> usize {
        self.q.n
    }

    pub fn eval(&self, x: [f64; 2]) -> CMat {
        self.q.eval(x)
    }

    pub fn inv(&self, x: [f64; 2]) -> Result<CMat> {
        self.q
            .eval(x)
            .try_inverse()
            .ok_or(Error::SingularGauge(x[0], x[1]))
    }

    /// Check invertibility over a polar grid of the disk.
    pub fn check_invertible(&self, radius: f64, n: usize) -> Result<()> {
        for i in 0..n {
            let r = radius * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                self.inv([r * phi.cos(), r * phi.sin()])?;
            }
        }
        Ok(())
    }

    /// Max deviation of Q from Id on the boundary circle.
    pub fn boundary_deviation(&self, radius: f64, n: usize) -> f64 {
        let mut dev: f64 = 0.0;
        for j in 0..n {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
            let q = self.eval([radius * phi.cos(), radius * phi.sin()]);
            dev = dev.max((q - cmat_id(self.q.n)).norm());
        }
        dev
    }
}

struct GaugedConnComponent {
    q: GaugeField,
    inner: FieldRef,
    axis: usize,
}

impl MatrixField for GaugedConnComponent {
    fn rank(&self) -> usize {
        self.inner.rank()
    }
    fn eval(&self, x: [f64; 2]) -> CMat {
        let qi = self.q.inv(x).expect("gauge singular inside chart");
        let dq = self.q.q.dx(x, self.axis);
        let a = self.inner.eval(x);
        &qi * (dq + a * self.q.eval(x))
    }
}

struct ConjugatedField {
    q: GaugeField,
    inner: FieldRef,
}

impl MatrixField for ConjugatedField {
    fn rank(&self) -> usize {
        self.inner.rank()
    }
    fn eval(&self, x: [f64; 2]) -> CMat {
        let qi = self.q.inv(x).expect("gauge singular inside chart");
        &qi * self.inner.eval(x) * self.q.eval(x)
    }
}

/// Gauge change (A, Phi) -> (Q^{-1}(d + A)Q, Q^{-1} Phi Q).
pub fn gauge_transform(q: &GaugeField, pair: &ConnectionPair) -> Result<ConnectionPair> {
    if q.rank() != pair.n {
        return Err(Error::RankMismatch(q.rank(), pair.n));
    }
    Ok(ConnectionPair {
        n: pair.n,
        a1: Arc::new(GaugedConnComponent { q: q.clone(), inner: pair.a1.clone(), axis: 0 }),
        a2: Arc::new(GaugedConnComponent { q: q.clone(), inner: pair.a2.clone(), axis: 1 }),
        phi: Arc::new(ConjugatedField { q: q.clone(), inner: pair.phi.clone() }),
        unitary_a: false,
        skew_hermitian_phi: false,
    })
}

struct CommutatorField {
    a: FieldRef,
    b: FieldRef,
}

impl MatrixField for CommutatorField {
    fn rank(&self) -> usize {
        self.a.rank() * self.a.rank()
    }
    fn eval(&self, x: [f64; 2]) -> CMat {
        let n = self.a.rank();
        let a = self.a.eval(x);
        let b = self.b.eval(x);
        // column-major vec: vec(A X - X B) = (I (x) A - B^T (x) I) vec(X)
        cmat_id(n).kronecker(&a) - b.transpose().kronecker(&cmat_id(n))
    }
}

/// Pseudolinearization: the pair (bold A, bold Phi) acting on n x n matrices
/// flattened (column-major) to C^{n^2}: bold A_i(X) = A_i X - X B_i and
/// bold Phi(X) = Phi X - X Psi.
pub fn pseudolinearize(pair_a: &ConnectionPair, pair_b: &ConnectionPair) -> Result<ConnectionPair> {
    if pair_a.n != pair_b.n {
        return Err(Error::RankMismatch(pair_a.n, pair_b.n));
    }
    let n2 = pair_a.n * pair_a.n;
    Ok(ConnectionPair {
        n: n2,
        a1: Arc::new(CommutatorField { a: pair_a.a1.clone(), b: pair_b.a1.clone() }),
        a2: Arc::new(CommutatorField { a: pair_a.a2.clone(), b: pair_b.a2.clone() }),
        phi: Arc::new(CommutatorField { a: pair_a.phi.clone(), b: pair_b.phi.clone() }),
        unitary_a: false,
        skew_hermitian_phi: false,
    })
}

// ---------------------------------------------------------------------------
// State packing for augmented integration
// ---------------------------------------------------------------------------

fn pack_mat(m: &CMat, out: &mut [f64]) {
    for (k, c) in m.iter().enumerate() {
        out[2 * k] = c.re;
        out[2 * k + 1] = c.im;
    }
}

fn unpack_mat(n: usize, data: &[f64]) -> CMat {
    CMat::from_fn(n, n, |i, j| {
        let k = j * n + i;
        Complex64::new(data[2 * k], data[2 * k + 1])
    })
}

fn unpack_vec(n: usize, data: &[f64]) -> CVec {
    CVec::from_fn(n, |i, _| Complex64::new(data[2 * i], data[2 * i + 1]))
}

/// Transport solution along one orbit.
pub struct TransportResult {
    /// (t, phase point, U, W) at accepted steps, ending at the exit.
    pub samples: Vec<(f64, PhasePoint, CMat, CMat)>,
    pub tau: f64,
    pub exit: PhasePoint,
    /// Exit value of U: the scattering data of this ray.
    pub c: CMat,
    /// Exit value of W = U^{-1}.
    pub w_exit: CMat,
    /// Set when ||U|| * ||W|| exceeded 1e8 along the ray.
    pub conditioning_warning: bool,
}

/// Solve U' = -(A + Phi) U, W' = W (A + Phi) jointly with the orbit ODE,
/// with U(0) = W(0) = Id at `entry`. No matrix inversion is performed.
pub fn parallel_transport(
    scene: &Scene,
    pair: &ConnectionPair,
    entry: PhasePoint,
    opts: &OdeOptions,
) -> Result<TransportResult> {
    let n = pair.n;
    let nn = 2 * n * n;
    let mut y0 = vec![0.0; 3 + 2 * nn];
    y0[0] = entry.x[0];
    y0[1] = entry.x[1];
    y0[2] = entry.theta;
    pack_mat(&cmat_id(n), &mut y0[3..3 + nn]);
    pack_mat(&cmat_id(n), &mut y0[3 + nn..]);

    let sol = crate::flow::integrate_augmented(
        scene,
        |_t, y, dy| {
            thermostat_rhs(scene, y, dy);
            let x = [y[0], y[1]];
            let att = pair.attenuation(scene, x, y[2]);
            let u = unpack_mat(n, &y[3..3 + nn]);
            let w = unpack_mat(n, &y[3 + nn..]);
            let du = -(&att) * u;
            let dw = w * att;
            pack_mat(&du, &mut dy[3..3 + nn]);
            pack_mat(&dw, &mut dy[3 + nn..]);
        },
        y0,
        opts,
    )?;

    let tau = sol.event_time.unwrap();
    let ye = sol.event_state.as_ref().unwrap();
    let exit = PhasePoint::new([ye[0], ye[1]], ye[2]);
    let c = unpack_mat(n, &ye[3..3 + nn]);
    let w_exit = unpack_mat(n, &ye[3 + nn..]);
    let mut warning = false;
    let samples: Vec<_> = sol
        .ts
        .iter()
        .zip(&sol.ys)
        .map(|(&t, y)| {
            let u = unpack_mat(n, &y[3..3 + nn]);
            let w = unpack_mat(n, &y[3 + nn..]);
            if u.norm() * w.norm() > 1e8 {
                warning = true;
            }
            (t, PhasePoint::new([y[0], y[1]], y[2]), u, w)
        })
        .collect();
    Ok(TransportResult {
        samples,
        tau,
        exit,
        c,
        w_exit,
        conditioning_warning: warning,
    })
}

/// Scattering data over the whole fan: per-entry exit point and C value.
pub fn scattering_data_map(
    scene: &Scene,
    pair: &ConnectionPair,
    fan: &BoundaryFan,
    opts: &OdeOptions,
) -> Result<Vec<(PhasePoint, CMat)>> {
    use rayon::prelude::*;
    fan.entries
        .par_iter()
        .map(|e| parallel_transport(scene, pair, e.point, opts).map(|r| (r.exit, r.c)))
        .collect()
}

// ---------------------------------------------------------------------------
// Sources: symmetric tensor fields and their induced fiber functions
// ---------------------------------------------------------------------------

/// Anything integrable against the attenuated transport: a C^n-valued
/// function on SM evaluable at phase points.
pub trait FiberSource: Send + Sync {
    fn rank(&self) -> usize;
    fn eval(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CVec;
}

/// C^n-valued symmetric m-tensor with polynomial coefficients.
///
/// `comps[a][c]` is the coefficient (as a polynomial in the chart) of the
/// symmetric slot with `a` indices equal to 1 and `m - a` equal to 2, for
/// the c-th C^n component; the induced function on SM is
/// sum_a binom(m, a) f_a(x) (v^1)^a (v^2)^{m-a}.
#[derive(Clone)]
pub struct SymmetricTensorField {
    pub order: usize,
    pub n: usize,
    pub comps: Vec<Vec<Poly2>>,
}

pub fn binomial(m: usize, a: usize) -> f64 {
    let mut b = 1.0;
    for i in 0..a {
        b = b * (m - i) as f64 / (i + 1) as f64;
    }
    b
}

impl SymmetricTensorField {
    pub fn new(order: usize, n: usize, comps: Vec<Vec<Poly2>>) -> Self {
        assert_eq!(comps.len(), order + 1);
        assert!(comps.iter().all(|c| c.len() == n));
        SymmetricTensorField { order, n, comps }
    }

    pub fn zero(order: usize, n: usize) -> Self {
        Self::new(order, n, vec![vec![Poly2::zero(); n]; order + 1])
    }

    /// Order-0 field from per-component polynomials.
    pub fn scalar(n: usize, polys: Vec<Poly2>) -> Self {
        assert_eq!(polys.len(), n);
        Self::new(0, n, vec![polys])
    }

    /// Random field with all slot coefficients of the given degree,
    /// multiplied by the boundary-vanishing cutoff (R^2 - |x|^2)^2 when
    /// `cutoff` is set.
    pub fn random<R: Rng>(
        order: usize,
        n: usize,
        degree: usize,
        scale: f64,
        radius: f64,
        cutoff: bool,
        rng: &mut R,
    ) -> Self {
        let cut = if cutoff {
            let b = boundary_factor(radius);
            Some(b.mul(&b).scale(Complex64::new(1.0 / radius.powi(4), 0.0)))
        } else {
            None
        };
        let comps = (0..=order)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let mut terms = Vec::new();
                        for i in 0..=degree {
                            for j in 0..=(degree - i) {
                                terms.push((
                                    i,
                                    j,
                                    Complex64::new(
                                        scale * (rng.gen::<f64>() - 0.5),
                                        scale * (rng.gen::<f64>() - 0.5),
                                    ),
                                ));
                            }
                        }
                        let p = Poly2::from_terms(&terms);
                        match &cut {
                            Some(c) => p.mul(c),
                            None => p,
                        }
                    })
                    .collect()
            })
            .collect();
        Self::new(order, n, comps)
    }

    /// Induced fiber function at a phase point.
    pub fn eval_fiber(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CVec {
        let m = self.order;
        let ems = (-(m as f64) * scene.sigma_at(x)).exp();
        let (st, ct) = theta.sin_cos();
        let mut out = CVec::zeros(self.n);
        for a in 0..=m {
            let w = binomial(m, a) * ems * ct.powi(a as i32) * st.powi((m - a) as i32);
            for c in 0..self.n {
                out[c] += self.comps[a][c].eval(x) * Complex64::new(w, 0.0);
            }
        }
        out
    }

    /// (G_E p)(x, theta) via the analytic chain rule for the induced fiber
    /// function (X p + lambda V p).
    pub fn g_e_eval(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CVec {
        let m = self.order as i32;
        let sig = scene.sigma_at(x);
        let [sx, sy] = scene.sigma.grad(x);
        let emsig = (-(m as f64) * sig).exp();
        let es = (-sig).exp();
        let (st, ct) = theta.sin_cos();
        let lambda = scene.lambda(x, theta);

        let mut dpx = CVec::zeros(self.n);
        let mut dpy = CVec::zeros(self.n);
        let mut dpt = CVec::zeros(self.n);
        for a in 0..=self.order {
            let b = self.order - a;
            let ang = ct.powi(a as i32) * st.powi(b as i32);
            let w = binomial(self.order, a);
            // d/dtheta [cos^a sin^b] = -a cos^{a-1} sin^{b+1} + b cos^{a+1} sin^{b-1}
            let mut dang = 0.0;
            if a > 0 {
                dang -= a as f64 * ct.powi(a as i32 - 1) * st.powi(b as i32 + 1);
            }
            if b > 0 {
                dang += b as f64 * ct.powi(a as i32 + 1) * st.powi(b as i32 - 1);
            }
            for c in 0..self.n {
                let f = self.comps[a][c].eval(x);
                let fx = self.comps[a][c].ddx().eval(x);
                let fy = self.comps[a][c].ddy().eval(x);
                let ws = Complex64::new(w * emsig, 0.0);
                dpx[c] += ws * (fx - f * Complex64::new(m as f64 * sx, 0.0))
                    * Complex64::new(ang, 0.0);
                dpy[c] += ws * (fy - f * Complex64::new(m as f64 * sy, 0.0))
                    * Complex64::new(ang, 0.0);
                dpt[c] += ws * f * Complex64::new(dang, 0.0);
            }
        }
        let drift = -sx * st + sy * ct;
        let mut out = CVec::zeros(self.n);
        for c in 0..self.n {
            out[c] = Complex64::new(es, 0.0)
                * (dpx[c] * Complex64::new(ct, 0.0)
                    + dpy[c] * Complex64::new(st, 0.0)
                    + dpt[c] * Complex64::new(drift, 0.0))
                + dpt[c] * Complex64::new(lambda, 0.0);
        }
        out
    }

    /// Max pointwise norm over the boundary circle.
    pub fn boundary_sup(&self, scene: &Scene, n_samples: usize) -> f64 {
        let mut sup: f64 = 0.0;
        for j in 0..n_samples {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / n_samples as f64;
            for theta in [0.0, 1.0, 2.5] {
                let v = self.eval_fiber(
                    scene,
                    [scene.radius * phi.cos(), scene.radius * phi.sin()],
                    theta,
                );
                sup = sup.max(v.norm());
            }
        }
        sup
    }
}

impl FiberSource for SymmetricTensorField {
    fn rank(&self) -> usize {
        self.n
    }
    fn eval(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CVec {
        self.eval_fiber(scene, x, theta)
    }
}

/// A pair [f, h] of tensor fields of orders m and m-1, integrated together.
pub struct SourcePair {
    pub f: Arc<dyn FiberSource>,
    pub h: Arc<dyn FiberSource>,
}

impl FiberSource for SourcePair {
    fn rank(&self) -> usize {
        self.f.rank()
    }
    fn eval(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CVec {
        self.f.eval(scene, x, theta) + self.h.eval(scene, x, theta)
    }
}

/// f = G_E p + A p evaluated through the induced fiber function of p.
pub struct KernelFSource {
    pub p: SymmetricTensorField,
    pub pair: ConnectionPair,
}

impl FiberSource for KernelFSource {
    fn rank(&self) -> usize {
        self.pair.n
    }
    fn eval(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CVec {
        let gep = self.p.g_e_eval(scene, x, theta);
        let pv = self.p.eval_fiber(scene, x, theta);
        let v = scene.unit_vector(x, theta);
        gep + self.pair.a_at(x, v) * pv
    }
}

/// h = Phi p.
pub struct KernelHSource {
    pub p: SymmetricTensorField,
    pub pair: ConnectionPair,
}

impl FiberSource for KernelHSource {
    fn rank(&self) -> usize {
        self.pair.n
    }
    fn eval(&self, scene: &Scene, x: [f64; 2], theta: f64) -> CVec {
        self.pair.phi.eval(x) * self.p.eval_fiber(scene, x, theta)
    }
}

/// Natural kernel element [G_E p + A p, Phi p] for p vanishing on the
/// boundary. Errors unless p|_{boundary} is below `tol`.
pub fn kernel_element(
    scene: &Scene,
    pair: &ConnectionPair,
    p: SymmetricTensorField,
    tol: f64,
) -> Result<SourcePair> {
    let sup = p.boundary_sup(scene, 128);
    if sup > tol {
        return Err(Error::BoundaryNonVanishing(sup));
    }
    Ok(SourcePair {
        f: Arc::new(KernelFSource { p: p.clone(), pair: pair.clone() }),
        h: Arc::new(KernelHSource { p, pair: pair.clone() }),
    })
}

// ---------------------------------------------------------------------------
// Attenuated ray transform
// ---------------------------------------------------------------------------

/// I_{A,Phi} of a source along the ray through `entry`: integral of
/// W(t) f(phi_t) over [0, tau], co-integrated with the orbit and transport.
pub fn ray_transform_entry(
    scene: &Scene,
    pair: &ConnectionPair,
    source: &dyn FiberSource,
    entry: PhasePoint,
    opts: &OdeOptions,
) -> Result<CVec> {
    let n = pair.n;
    let nn = 2 * n * n;
    let nv = 2 * n;
    let mut y0 = vec![0.0; 3 + 2 * nn + nv];
    y0[0] = entry.x[0];
    y0[1] = entry.x[1];
    y0[2] = entry.theta;
    pack_mat(&cmat_id(n), &mut y0[3..3 + nn]);
    pack_mat(&cmat_id(n), &mut y0[3 + nn..3 + 2 * nn]);

    let sol = crate::flow::integrate_augmented(
        scene,
        |_t, y, dy| {
            thermostat_rhs(scene, y, dy);
            let x = [y[0], y[1]];
            let att = pair.attenuation(scene, x, y[2]);
            let u = unpack_mat(n, &y[3..3 + nn]);
            let w = unpack_mat(n, &y[3 + nn..3 + 2 * nn]);
            let du = -(&att) * u;
            let dw = &w * att;
            pack_mat(&du, &mut dy[3..3 + nn]);
            pack_mat(&dw, &mut dy[3 + nn..3 + 2 * nn]);
            let f = source.eval(scene, x, y[2]);
            let dq = w * f;
            for i in 0..n {
                dy[3 + 2 * nn + 2 * i] = dq[i].re;
                dy[3 + 2 * nn + 2 * i + 1] = dq[i].im;
            }
        },
        y0,
        opts,
    )?;
    let ye = sol.event_state.as_ref().unwrap();
    Ok(unpack_vec(n, &ye[3 + 2 * nn..]))
}

/// Ray transform over a whole fan (deterministic parallel map).
pub fn ray_transform(
    scene: &Scene,
    pair: &ConnectionPair,
    source: &dyn FiberSource,
    fan: &BoundaryFan,
    opts: &OdeOptions,
) -> Result<Vec<CVec>> {
    use rayon::prelude::*;
    fan.entries
        .par_iter()
        .map(|e| ray_transform_entry(scene, pair, source, e.point, opts))
        .collect()
}

/// Interior value of the transport solution u^f with u|_{outflux} = 0:
/// u(x, v) = int_0^tau P^{-1}(t) f(phi_t) dt with P the transport cocycle
/// from (x, v). Shares the integration path with `ray_transform_entry`.
pub fn transport_solution_at(
    scene: &Scene,
    pair: &ConnectionPair,
    source: &dyn FiberSource,
    p: PhasePoint,
    opts: &OdeOptions,
) -> Result<CVec> {
    ray_transform_entry(scene, pair, source, p, opts)
}
