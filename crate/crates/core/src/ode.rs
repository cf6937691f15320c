//! Dormand-Prince 5(4) embedded Runge-Kutta pair with step-size control,
//! a hard step cap and exact hits of the requested output times.

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// error coefficients: 5th-order weights minus 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OdeStats {
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
}

/// Stall report: the time at which the controller gave up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stalled {
    pub t: f64,
    pub stats: OdeStats,
}

/// Integrates y' = f(t, y) from `t0` through every time in `t_out`
/// (ascending, all >= t0). `output(i, t, y, f(t, y), stats)` is called at
/// each output time; `after_step(y)` may rescale the state between steps.
pub fn dopri5(
    f: &mut dyn FnMut(f64, &[f64], &mut [f64]),
    t0: f64,
    y0: &[f64],
    t_out: &[f64],
    opts: &OdeOptions,
    output: &mut dyn FnMut(usize, f64, &[f64], &[f64], OdeStats),
    after_step: &mut dyn FnMut(&mut [f64], &mut [f64]),
) -> Result<OdeStats, Stalled> {
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut stats = OdeStats::default();
    let mut t = t0;
    f(t, &y, &mut k1);
    stats.evals += 1;
    let mut h = opts.h_max;
    let mut next = 0;
    while next < t_out.len() && t_out[next] <= t {
        output(next, t, &y, &k1, stats);
        next += 1;
    }
    let mut err_prev: f64 = 1e-4;
    while next < t_out.len() {
        if stats.steps + stats.rejected >= opts.max_steps {
            return Err(Stalled { t, stats });
        }
        let target = t_out[next];
        let mut hit = false;
        let mut hs = h.min(opts.h_max);
        if t + hs >= target - 1e-14 * target.abs().max(1.0) {
            hs = target - t;
            hit = true;
        }
        if hs <= 1e-15 * t.abs().max(1.0) {
            return Err(Stalled { t, stats });
        }
        for i in 0..n {
            tmp[i] = y[i] + hs * A21 * k1[i];
        }
        f(t + C2 * hs, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * hs, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * hs, &tmp, &mut k4);
        for i in 0..n {
            tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * hs, &tmp, &mut k5);
        for i in 0..n {
            tmp[i] = y[i]
                + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        let t_new = if hit { target } else { t + hs };
        f(t_new, &tmp, &mut k6);
        for i in 0..n {
            ynew[i] = y[i]
                + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t_new, &ynew, &mut k7);
        stats.evals += 6;
        let mut err = 0.0;
        for i in 0..n {
            let e = hs
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            err += (e / sc) * (e / sc);
        }
        let err = (err / n as f64).sqrt();
        if !err.is_finite() {
            stats.rejected += 1;
            h = hs * 0.2;
            continue;
        }
        if err <= 1.0 {
            stats.steps += 1;
            t = t_new;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            // PI controller (Hairer-Wanner constants)
            let fac = 0.9 * err.max(1e-10).powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0);
            err_prev = err.max(1e-4);
            if !hit {
                h = hs * fac.clamp(0.2, 5.0);
            }
            if hit {
                output(next, t, &y, &k1, stats);
                next += 1;
                while next < t_out.len() && t_out[next] <= t {
                    output(next, t, &y, &k1, stats);
                    next += 1;
                }
            }
            after_step(&mut y, &mut k1);
        } else {
            stats.rejected += 1;
            let fac = 0.9 * err.powf(-0.2);
            h = hs * fac.clamp(0.2, 1.0);
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(h_max: f64) -> OdeOptions {
        OdeOptions { rtol: 1e-10, atol: 1e-12, h_max, max_steps: 1_000_000 }
    }

    #[test]
    fn exponential_decay() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let mut got = vec![];
        dopri5(
            &mut f,
            0.0,
            &[1.0],
            &[0.5, 1.0, 2.0],
            &opts(1.0),
            &mut |_, t, y, _, _| got.push((t, y[0])),
            &mut |_, _| {},
        )
        .unwrap();
        assert_eq!(got.len(), 3);
        for (t, y) in got {
            assert!((y - (-t).exp()).abs() < 1e-9, "{t} {y}");
        }
    }

    #[test]
    fn harmonic_oscillator_hits_nodes() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -100.0 * y[0];
        };
        let mut last = (0.0, 0.0);
        dopri5(
            &mut f,
            0.0,
            &[1.0, 0.0],
            &[0.0, 0.3, 1.0],
            &opts(0.025),
            &mut |_, t, y, _, _| last = (t, y[0]),
            &mut |_, _| {},
        )
        .unwrap();
        assert_eq!(last.0, 1.0);
        assert!((last.1 - 10f64.cos()).abs() < 1e-8);
    }

    #[test]
    fn stall_is_reported() {
        let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * y[0];
        let r = dopri5(
            &mut f,
            0.0,
            &[1.0],
            &[2.0],
            &OdeOptions { rtol: 1e-10, atol: 1e-12, h_max: 0.1, max_steps: 100_000 },
            &mut |_, _, _, _, _| {},
            &mut |_, _| {},
        );
        let e = r.unwrap_err();
        assert!(e.t < 1.0 + 1e-6);
    }
}
