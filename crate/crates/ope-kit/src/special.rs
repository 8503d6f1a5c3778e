//! Modified Bessel functions of the second kind, `K_nu` for integer `nu`.
//!
//! These drive the massive two-point function and its radial derivatives.
//! Strategy: compute `K_0` and `K_1` (in exponentially scaled form
//! `e^z K_nu(z)`) with the classical power series for `z <= 2` and a
//! continued-fraction evaluation for `z > 2`, then climb to higher orders
//! with the (upward-stable) three-term recurrence
//! `K_{nu+1} = K_{nu-1} + (2 nu / z) K_nu`.
//!
//! Accuracy target: relative error below 1e-12 for `z` in `[1e-6, 700]` and
//! `nu <= 20`, verified against a frozen high-precision table in the tests.

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const SERIES_EPS: f64 = 1e-18;
const CF_EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// `e^z K_nu(z)` for integer order. Panics if `z <= 0`.
pub(crate) fn scaled_bessel_k(nu: u32, z: f64) -> f64 {
    assert!(z > 0.0, "K_nu requires a positive argument, got {z}");
    let (k0, k1) = scaled_k0_k1(z);
    match nu {
        0 => k0,
        1 => k1,
        _ => {
            // Upward recurrence on scaled values (the common e^z cancels).
            let (mut prev, mut cur) = (k0, k1);
            for n in 1..nu {
                let next = prev + (2.0 * n as f64 / z) * cur;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// `K_nu(z)` together with an underflow flag: `true` when the true value is
/// positive but too small for binary64, so the returned value is `0.0`.
pub(crate) fn bessel_k(nu: u32, z: f64) -> (f64, bool) {
    let scaled = scaled_bessel_k(nu, z);
    let value = scaled * (-z).exp();
    (value, value == 0.0 && scaled > 0.0)
}

/// `e^z K_nu(z)` for every `nu = 0..=nu_max`, sharing one recurrence pass.
pub(crate) fn scaled_bessel_k_all(nu_max: u32, z: f64) -> Vec<f64> {
    assert!(z > 0.0, "K_nu requires a positive argument, got {z}");
    let (k0, k1) = scaled_k0_k1(z);
    let mut out = Vec::with_capacity(nu_max as usize + 1);
    out.push(k0);
    if nu_max >= 1 {
        out.push(k1);
        for n in 1..nu_max {
            let next = out[n as usize - 1] + (2.0 * n as f64 / z) * out[n as usize];
            out.push(next);
        }
    }
    out
}

/// `(e^z K_0(z), e^z K_1(z))`.
fn scaled_k0_k1(z: f64) -> (f64, f64) {
    if z <= 2.0 {
        let (k0, k1) = small_z_k0_k1(z);
        let ez = z.exp();
        (k0 * ez, k1 * ez)
    } else {
        large_z_scaled_k0_k1(z)
    }
}

/// Power series for `K_0`, `K_1` at `z <= 2` (unscaled).
///
/// With `t = z^2/4` and harmonic numbers `H_k`:
///   `I_0 = sum t^k/(k!)^2`, `I_1 = (z/2) sum t^k/(k!(k+1)!)`,
///   `K_0 = -(ln(z/2)+g) I_0 + sum_{k>=1} H_k t^k/(k!)^2`,
///   `K_1 = 1/z + (ln(z/2)+g) I_1 - (z/4) sum t^k (H_k+H_{k+1})/(k!(k+1)!)`.
fn small_z_k0_k1(z: f64) -> (f64, f64) {
    let t = 0.25 * z * z;
    let lg = (0.5 * z).ln() + EULER_GAMMA;

    let mut i0 = 1.0;
    let mut k0_sum = 0.0;
    let mut i1_sum = 1.0; // sum t^k / (k!(k+1)!), k=0 term
    let mut k1_sum = 1.0; // sum t^k (H_k + H_{k+1}) / (k!(k+1)!), k=0 term = H_1
    let mut term0 = 1.0; // t^k / (k!)^2
    let mut term1 = 1.0; // t^k / (k!(k+1)!)
    let mut hk = 0.0;
    for k in 1..MAX_ITER {
        let kf = k as f64;
        term0 *= t / (kf * kf);
        term1 *= t / (kf * (kf + 1.0));
        hk += 1.0 / kf;
        let hk1 = hk + 1.0 / (kf + 1.0);
        i0 += term0;
        k0_sum += term0 * hk;
        i1_sum += term1;
        k1_sum += term1 * (hk + hk1);
        if term0 < SERIES_EPS * i0 && term1 < SERIES_EPS * i1_sum {
            break;
        }
    }
    let i1 = 0.5 * z * i1_sum;
    let k0 = -lg * i0 + k0_sum;
    let k1 = 1.0 / z + lg * i1 - 0.25 * z * k1_sum;
    (k0, k1)
}

/// Steed continued-fraction evaluation of `e^z K_0`, `e^z K_1` for `z > 2`.
fn large_z_scaled_k0_k1(z: f64) -> (f64, f64) {
    let a1 = 0.25; // 1/4 - mu^2 with mu = 0
    let mut b = 2.0 * (1.0 + z);
    let mut d = 1.0 / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = 0.0;
    let mut q2 = 1.0;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = 1.0 + q * delh;
    let mut converged = false;
    for i in 1..MAX_ITER {
        let fi = i as f64;
        a -= 2.0 * fi;
        c = -a * c / (fi + 1.0);
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += 2.0;
        d = 1.0 / (b + a * d);
        delh = (b * d - 1.0) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() <= CF_EPS {
            converged = true;
            break;
        }
    }
    debug_assert!(converged, "continued fraction stalled at z = {z}");
    h *= a1;
    let k0 = (std::f64::consts::PI / (2.0 * z)).sqrt() / s;
    let k1 = k0 * (z + 0.5 - h) / z;
    (k0, k1)
}

// ---------------------------------------------------------------------------
