//! Thermostat flow on the unit sphere bundle: orbit integration, boundary
//! exit detection, exit time tau, the scattering relation and first
//! integrals.

use crate::error::Result;
use crate::ode::{integrate_to_event, OdeOptions, OdeSolution};
use crate::scene::Scene;
use crate::CVec;

/// Point of SM stored as chart coordinates plus the fiber angle of the unit
/// velocity in the frame (e^{-sigma} d_1, e^{-sigma} d_2); |v|_g = 1 holds
/// by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub x: [f64; 2],
    pub theta: f64,
}

impl PhasePoint {
    pub fn new(x: [f64; 2], theta: f64) -> Self {
        PhasePoint { x, theta }
    }

    pub fn velocity(&self, scene: &Scene) -> [f64; 2] {
        scene.unit_vector(self.x, self.theta)
    }

    /// The flip (x, v) -> (x, -v).
    pub fn flip(&self) -> Self {
        PhasePoint { x: self.x, theta: self.theta + std::f64::consts::PI }
    }

    fn from_state(y: &[f64]) -> Self {
        PhasePoint { x: [y[0], y[1]], theta: y[2] }
    }

    fn to_state(self) -> Vec<f64> {
        vec![self.x[0], self.x[1], self.theta]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Integrated orbit up to boundary exit.
#[derive(Debug, Clone)]
pub struct OrbitRecord {
    /// (t, phase point) at accepted integrator steps, ending at the exit.
    pub samples: Vec<(f64, PhasePoint)>,
    /// Exit time (unit speed, so time = g-length).
    pub tau: f64,
    /// Exit point on the boundary sphere bundle.
    pub exit: PhasePoint,
}

/// Phase velocity (x', theta') of the thermostat generator G_E = X + lambda V.
pub fn thermostat_rhs(scene: &Scene, y: &[f64], dy: &mut [f64]) {
    let x = [y[0], y[1]];
    let theta = y[2];
    let es = (-scene.sigma_at(x)).exp();
    let (st, ct) = theta.sin_cos();
    let [sx, sy] = scene.sigma.grad(x);
    dy[0] = es * ct;
    dy[1] = es * st;
    dy[2] = es * (-sx * st + sy * ct) + scene.lambda(x, theta);
}

/// Integrate the orbit of `p0` to boundary exit. `Backward` integrates
/// phi_{-t}; the recorded tau is the (non-negative) elapsed time.
pub fn integrate_orbit(
    scene: &Scene,
    p0: PhasePoint,
    direction: Direction,
    opts: &OdeOptions,
) -> Result<OrbitRecord> {
    let sgn = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let sol = integrate_to_event(
        |_t, y, dy| {
            thermostat_rhs(scene, y, dy);
            for d in dy.iter_mut() {
                *d *= sgn;
            }
        },
        |y| scene.rho([y[0], y[1]]),
        p0.to_state(),
        opts,
        true,
    )?;
    let tau = sol.event_time.expect("event must fire before t_max");
    let exit = PhasePoint::from_state(sol.event_state.as_ref().unwrap());
    let samples = sol
        .ts
        .iter()
        .zip(&sol.ys)
        .map(|(&t, y)| (t, PhasePoint::from_state(y)))
        .collect();
    Ok(OrbitRecord { samples, tau, exit })
}

/// Raw solver access for augmented systems (transport co-integration).
pub fn integrate_augmented<F>(
    scene: &Scene,
    rhs: F,
    y0: Vec<f64>,
    opts: &OdeOptions,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_to_event(rhs, |y| scene.rho([y[0], y[1]]), y0, opts, true)
}

/// Boundary parameterization of a phase point at the boundary circle:
/// returns (phi, alpha) where alpha is the signed angle from the inward
/// normal for influx points, or from the outward normal for outflux points.
pub fn boundary_coords(scene: &Scene, p: &PhasePoint, influx: bool) -> (f64, f64) {
    let phi = p.x[1].atan2(p.x[0]);
    let bp = scene.boundary_point(phi);
    let v = p.velocity(scene);
    let vn = scene.inner(p.x, v, bp.nu);
    let vt = scene.inner(p.x, v, bp.tangent);
    let alpha = if influx { vt.atan2(vn) } else { vt.atan2(-vn) };
    (phi, alpha)
}

/// Influx boundary point at chart angle phi with entrance angle alpha
/// (measured from the inward normal): v = cos(alpha) nu + sin(alpha) tangent.
pub fn influx_point(scene: &Scene, phi: f64, alpha: f64) -> PhasePoint {
    let (sa, ca) = alpha.sin_cos();
    let (sp, cp) = phi.sin_cos();
    // frame components: nu = -(cos phi, sin phi), tangent = (-sin phi, cos phi)
    let vf = [-ca * cp - sa * sp, -ca * sp + sa * cp];
    let theta = vf[1].atan2(vf[0]);
    PhasePoint::new([scene.radius * cp, scene.radius * sp], theta)
}

/// A grid over the influx bundle: n_s boundary angles x n_alpha entrance
/// angles strictly inside (-pi/2, pi/2).
#[derive(Debug, Clone)]
pub struct BoundaryFan {
    pub n_s: usize,
    pub n_alpha: usize,
    pub entries: Vec<FanEntry>,
}

#[derive(Debug, Clone)]
pub struct FanEntry {
    pub i_s: usize,
    pub i_alpha: usize,
    pub phi: f64,
    pub alpha: f64,
    pub point: PhasePoint,
}

impl BoundaryFan {
    pub fn new(scene: &Scene, n_s: usize, n_alpha: usize) -> Self {
        let mut entries = Vec::with_capacity(n_s * n_alpha);
        for i in 0..n_s {
            let phi = 2.0 * std::f64::consts::PI * i as f64 / n_s as f64;
            for j in 0..n_alpha {
                let alpha = -std::f64::consts::FRAC_PI_2
                    + std::f64::consts::PI * (j as f64 + 0.5) / n_alpha as f64;
                entries.push(FanEntry {
                    i_s: i,
                    i_alpha: j,
                    phi,
                    alpha,
                    point: influx_point(scene, phi, alpha),
                });
            }
        }
        BoundaryFan { n_s, n_alpha, entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The scattering relation S: entry on the influx bundle to the exit phase
/// point, together with tau.
pub fn scattering_relation(
    scene: &Scene,
    entry: &PhasePoint,
    opts: &OdeOptions,
) -> Result<(PhasePoint, f64)> {
    let orb = integrate_orbit(scene, *entry, Direction::Forward, opts)?;
    Ok((orb.exit, orb.tau))
}

/// Max tau over the fan; raises TrappedOrbit if any orbit exceeds t_max.
pub fn nontrapping_guard(scene: &Scene, fan: &BoundaryFan, opts: &OdeOptions) -> Result<f64> {
    use rayon::prelude::*;
    scene
        .require_strictly_convex(4 * fan.n_s.max(16))
        .map_err(|e| e)?;
    let taus: Result<Vec<f64>> = fan
        .entries
        .par_iter()
        .map(|e| integrate_orbit(scene, e.point, Direction::Forward, opts).map(|o| o.tau))
        .collect();
    Ok(taus?.into_iter().fold(0.0, f64::max))
}

/// Backward-exit parameterization: follow phi_{-t} from `p` to the boundary
/// and return the influx coordinates (phi, alpha) of the forward entry plus
/// the backward time.
pub fn backward_entry(
    scene: &Scene,
    p: &PhasePoint,
    opts: &OdeOptions,
) -> Result<(f64, f64, f64)> {
    let orb = integrate_orbit(scene, *p, Direction::Backward, opts)?;
    let (phi, alpha) = boundary_coords(scene, &orb.exit, true);
    Ok((phi, alpha, orb.tau))
}

/// Extend boundary data to the first integral w_psi: w_psi(x, v) is the
/// value of `w` at the backward-exit point on the influx bundle.
pub fn first_integral_extend<W>(
    scene: &Scene,
    w: &W,
    points: &[PhasePoint],
    opts: &OdeOptions,
) -> Result<Vec<CVec>>
where
    W: Fn(f64, f64) -> CVec + Sync,
{
    use rayon::prelude::*;
    points
        .par_iter()
        .map(|p| {
            let (phi, alpha, _) = backward_entry(scene, p, opts)?;
            Ok(w(phi, alpha))
        })
        .collect()
}

/// The operator A of the boundary-value calculus: w on the influx part and
/// w o S^{-1} on the outflux part.
pub fn operator_a<W>(
    scene: &Scene,
    w: &W,
    outflux: &PhasePoint,
    opts: &OdeOptions,
) -> Result<CVec>
where
    W: Fn(f64, f64) -> CVec,
{
    let orb = integrate_orbit(scene, *outflux, Direction::Backward, opts)?;
    let (phi, alpha) = boundary_coords(scene, &orb.exit, true);
    Ok(w(phi, alpha))
}
