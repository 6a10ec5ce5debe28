//! Adaptive embedded Runge-Kutta integration (Dormand-Prince 5(4)) with
//! dense-output event location, plus a fixed-step RK4 driver used for
//! reference solutions and quadrature traces.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub t_max: f64,
}

impl OdeOptions {
    pub fn for_chart_radius(r: f64) -> Self {
        OdeOptions { rtol: 1e-10, atol: 1e-10, max_step: 0.01 * r, t_max: 100.0 * r }
    }
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    /// Accepted-step times, starting at 0.
    pub ts: Vec<f64>,
    /// States at accepted steps.
    pub ys: Vec<Vec<f64>>,
    /// Event crossing time, when the event fired.
    pub event_time: Option<f64>,
    /// Interpolated state at the event.
    pub event_state: Option<Vec<f64>>,
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const C: [f64; 6] = [0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Cubic Hermite interpolation on a step [t0, t0+h].
fn hermite(t0: f64, h: f64, y0: &[f64], f0: &[f64], y1: &[f64], f1: &[f64], t: f64) -> Vec<f64> {
    let s = (t - t0) / h;
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    (0..y0.len())
        .map(|i| h00 * y0[i] + h * h10 * f0[i] + h01 * y1[i] + h * h11 * f1[i])
        .collect()
}

/// Integrate y' = rhs(t, y) until `event` crosses from positive to negative
/// (boundary exit) or `t_max` is exceeded.
///
/// The event is located by scanning the dense output of each accepted step
/// and bisecting the cubic Hermite interpolant; the whole state at the
/// crossing comes from the same interpolant.
pub fn integrate_to_event<F, G>(
    mut rhs: F,
    event: G,
    y0: Vec<f64>,
    opts: &OdeOptions,
    record: bool,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    G: Fn(&[f64]) -> f64,
{
    let dim = y0.len();
    let mut t = 0.0;
    let mut y = y0;
    let mut f0 = vec![0.0; dim];
    rhs(t, &y, &mut f0);

    let mut sol = OdeSolution { ts: vec![0.0], ys: Vec::new(), event_time: None, event_state: None };
    if record {
        sol.ys.push(y.clone());
    }

    // Immediate exit: on or outside the boundary and not moving inward.
    let g0 = event(&y);
    if g0 <= 1e-13 {
        let mut y_eps = y.clone();
        let eps = 1e-9;
        for i in 0..dim {
            y_eps[i] += eps * f0[i];
        }
        if event(&y_eps) <= g0 {
            sol.event_time = Some(0.0);
            sol.event_state = Some(y.clone());
            return Ok(sol);
        }
    }

    let mut h = opts.max_step.min(opts.t_max);
    let mut k = vec![vec![0.0; dim]; 7];
    let mut rejected_in_a_row = 0usize;

    while t < opts.t_max * (1.0 - 1e-12) {
        h = h.min(opts.max_step).min(opts.t_max - t);
        if h < 1e-14 {
            return Err(Error::StepFailure { t, reason: "step size underflow".into() });
        }
        k[0].copy_from_slice(&f0);
        let mut ytmp = vec![0.0; dim];
        for stage in 0..6 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(stage + 1) {
                    acc += A[stage][j] * kj[i];
                }
                ytmp[i] = y[i] + h * acc;
            }
            let ts = t + C[stage] * h;
            let (head, tail) = k.split_at_mut(stage + 1);
            let _ = head;
            rhs(ts, &ytmp, &mut tail[0]);
        }
        // 5th-order solution is the last stage argument (FSAL): y1 = ytmp of stage 5
        let y1 = ytmp.clone();
        let f1 = k[6].clone();
        // error estimate
        let mut err = 0.0f64;
        for i in 0..dim {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            e *= h;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y1[i].abs());
            err += (e / sc) * (e / sc);
        }
        err = (err / dim as f64).sqrt();

        if err <= 1.0 {
            rejected_in_a_row = 0;
            // scan dense output for a + -> - crossing of the event
            let n_scan = 8;
            let mut ga = event(&y);
            let mut ta = t;
            let mut found = None;
            for q in 1..=n_scan {
                let tb = t + h * q as f64 / n_scan as f64;
                let yb = if q == n_scan {
                    y1.clone()
                } else {
                    hermite(t, h, &y, &f0, &y1, &f1, tb)
                };
                let gb = event(&yb);
                if ga > 0.0 && gb <= 0.0 {
                    found = Some((ta, tb));
                    break;
                }
                ga = gb;
                ta = tb;
            }
            if let Some((mut ta, mut tb)) = found {
                for _ in 0..80 {
                    let tm = 0.5 * (ta + tb);
                    let ym = hermite(t, h, &y, &f0, &y1, &f1, tm);
                    if event(&ym) > 0.0 {
                        ta = tm;
                    } else {
                        tb = tm;
                    }
                    if tb - ta < 1e-15 * (1.0 + tb.abs()) {
                        break;
                    }
                }
                let mut te = 0.5 * (ta + tb);
                // Re-integrate from the accepted state at t to te with RK4
                // substeps (the Hermite bracket is only O(h^4) accurate off
                // the trajectory), then Newton-polish on the true dynamics
                // until |event| < 1e-13.
                let mut ye = crate::ode::rk4_path(&mut rhs, y.clone(), te - t, 8)
                    .into_iter()
                    .last()
                    .unwrap();
                let mut fe = vec![0.0; dim];
                for _ in 0..6 {
                    let g = event(&ye);
                    if g.abs() < 1e-13 {
                        break;
                    }
                    rhs(te, &ye, &mut fe);
                    let delta = 1e-7 * (1.0 + te.abs());
                    let yd: Vec<f64> =
                        (0..dim).map(|i| ye[i] + delta * fe[i]).collect();
                    let dg = (event(&yd) - g) / delta;
                    if dg.abs() < 1e-300 {
                        break;
                    }
                    let dt = -g / dg;
                    // one RK4 micro-step of size dt
                    let step = crate::ode::rk4_path(&mut rhs, ye.clone(), dt, 1);
                    ye = step.into_iter().last().unwrap();
                    te += dt;
                }
                sol.ts.push(te);
                if record {
                    sol.ys.push(ye.clone());
                }
                sol.event_time = Some(te);
                sol.event_state = Some(ye);
                return Ok(sol);
            }
            t += h;
            y = y1;
            f0 = f1;
            sol.ts.push(t);
            if record {
                sol.ys.push(y.clone());
            }
        } else {
            rejected_in_a_row += 1;
            if rejected_in_a_row > 50 {
                return Err(Error::StepFailure { t, reason: "too many rejected steps".into() });
            }
        }
        let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
        h *= fac;
    }
    Err(Error::TrappedOrbit { t_max: opts.t_max })
}

/// Fixed-step classic RK4 over [0, t_end] with n steps; returns the state at
/// every node (n + 1 entries).
pub fn rk4_path<F>(mut rhs: F, y0: Vec<f64>, t_end: f64, n: usize) -> Vec<Vec<f64>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let h = t_end / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut y = y0;
    out.push(y.clone());
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    for step in 0..n {
        let t = step as f64 * h;
        rhs(t, &y, &mut k1);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..dim {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(t + h, &tmp, &mut k4);
        for i in 0..dim {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out.push(y.clone());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dp5_exponential_decay_event() {
        // y' = -y from 1; event y - 0.5 crosses at t = ln 2
        let opts = OdeOptions { rtol: 1e-10, atol: 1e-12, max_step: 0.05, t_max: 10.0 };
        let sol = integrate_to_event(
            |_t, y, dy| dy[0] = -y[0],
            |y| y[0] - 0.5,
            vec![1.0],
            &opts,
            false,
        )
        .unwrap();
        assert_relative_eq!(sol.event_time.unwrap(), 2f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn dp5_no_event_is_trapped() {
        let opts = OdeOptions { rtol: 1e-8, atol: 1e-10, max_step: 0.1, t_max: 1.0 };
        let r = integrate_to_event(|_t, _y, dy| dy[0] = 0.0, |_y| 1.0, vec![0.0], &opts, false);
        assert!(matches!(r, Err(Error::TrappedOrbit { .. })));
    }

    #[test]
    fn rk4_harmonic_oscillator() {
        let path = rk4_path(
            |_t, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
            },
            vec![1.0, 0.0],
            std::f64::consts::PI,
            2000,
        );
        let last = path.last().unwrap();
        assert_relative_eq!(last[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(last[1], 0.0, epsilon = 1e-10);
    }
}
