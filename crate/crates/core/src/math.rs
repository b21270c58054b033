//! Scalar helpers: angle handling, smooth step functions, Bessel functions,
//! one-dimensional search and Gauss-Legendre nodes.

use alloc::vec::Vec;
use core::f64::consts::PI;
use num_traits::Float;

#[inline]
pub fn deg2rad(x: f64) -> f64 {
    x * PI / 180.0
}

#[inline]
pub fn rad2deg(x: f64) -> f64 {
    x * 180.0 / PI
}

/// Wraps an angle in degrees to `[-180, 180)`.
pub fn wrap_deg(x: f64) -> f64 {
    let mut y = (x + 180.0) % 360.0;
    if y < 0.0 {
        y += 360.0;
    }
    y - 180.0
}

/// Unit vector for elevation/azimuth in radians
/// (`[cos el cos az, cos el sin az, sin el]`).
#[inline]
pub fn unit_vector(el: f64, az: f64) -> [f64; 3] {
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    [ce * ca, ce * sa, se]
}

#[inline]
pub fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Great-circle separation of two directions, degrees.
pub fn angular_distance_deg(el1: f64, az1: f64, el2: f64, az2: f64) -> f64 {
    let a = unit_vector(deg2rad(el1), deg2rad(az1));
    let b = unit_vector(deg2rad(el2), deg2rad(az2));
    rad2deg(dot3(&a, &b).clamp(-1.0, 1.0).acos())
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[inline]
pub fn undb(x: f64) -> f64 {
    10.0.powf(x / 10.0)
}

/// Exponentially scaled modified Bessel function `e^{-|x|} I0(x)`.
pub fn bessel_i0e(x: f64) -> f64 {
    let ax = x.abs();
    if ax < 3.75 {
        let y = (x / 3.75).powi(2);
        let i0 = 1.0
            + y * (3.5156229
                + y * (3.0899424
                    + y * (1.2067492 + y * (0.2659732 + y * (0.0360768 + y * 0.0045813)))));
        i0 * (-ax).exp()
    } else {
        let y = 3.75 / ax;
        (0.39894228
            + y * (0.01328592
                + y * (0.00225319
                    + y * (-0.00157565
                        + y * (0.00916281
                            + y * (-0.02057706
                                + y * (0.02635537 + y * (-0.01647633 + y * 0.00392377))))))))
            / ax.sqrt()
    }
}

/// Exponentially scaled modified Bessel function `e^{-|x|} I1(x)`.
pub fn bessel_i1e(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < 3.75 {
        let y = (x / 3.75).powi(2);
        ax * (0.5
            + y * (0.87890594
                + y * (0.51498869
                    + y * (0.15084934 + y * (0.02658733 + y * (0.00301532 + y * 0.00032411))))))
            * (-ax).exp()
    } else {
        let y = 3.75 / ax;
        let p = 0.02282967 + y * (-0.02895312 + y * (0.01787654 - y * 0.00420059));
        let p = 0.39894228
            + y * (-0.03988024 + y * (-0.00362018 + y * (0.00163801 + y * (-0.01031555 + y * p))));
        p / ax.sqrt()
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// `ln I0(x)`, finite for any finite `x`.
pub fn ln_bessel_i0(x: f64) -> f64 {
    bessel_i0e(x).ln() + x.abs()
}

/// Ratio `I1(x) / I0(x)`.
pub fn bessel_ratio_i1_i0(x: f64) -> f64 {
    bessel_i1e(x) / bessel_i0e(x)
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
/// Returns the arg-max and the value there.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5.0f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Arithmetic mean; `NaN` for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median of a slice (copied and sorted).
pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
