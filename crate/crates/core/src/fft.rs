//! Discrete Fourier transforms of arbitrary length.
//!
//! Power-of-two lengths use an iterative radix-2 kernel; other lengths go
//! through Bluestein's chirp-z reformulation on a padded power-of-two grid.
//! Neither direction is normalized.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use num_complex::Complex64;

/// `X[k] = sum_n x[n] e^{-j 2 pi k n / N}`, in place.
pub fn forward(x: &mut [Complex64]) {
    transform(x, -1.0);
}

/// `x[n] = sum_k X[k] e^{+j 2 pi k n / N}`, in place (no `1/N`).
pub fn inverse(x: &mut [Complex64]) {
    transform(x, 1.0);
}

fn transform(x: &mut [Complex64], sign: f64) {
    let n = x.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        radix2(x, sign);
    } else {
        bluestein(x, sign);
    }
}

fn radix2(x: &mut [Complex64], sign: f64) {
    let n = x.len();
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            x.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        let tw: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, ang * k as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = x[start + k];
                let b = x[start + k + half] * tw[k];
                x[start + k] = a + b;
                x[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
}

fn bluestein(x: &mut [Complex64], sign: f64) {
    let n = x.len();
    let m = (2 * n - 1).next_power_of_two();
    // chirp w[k] = e^{sign j pi k^2 / n}; k^2 reduced mod 2n keeps the phase exact
    let chirp: Vec<Complex64> = (0..n)
        .map(|k| {
            let k2 = (k as u128 * k as u128 % (2 * n as u128)) as f64;
            Complex64::from_polar(1.0, sign * PI * k2 / n as f64)
        })
        .collect();
    let mut a = vec![Complex64::new(0.0, 0.0); m];
    for k in 0..n {
        a[k] = x[k] * chirp[k];
    }
    let mut b = vec![Complex64::new(0.0, 0.0); m];
    b[0] = chirp[0].conj();
    for k in 1..n {
        b[k] = chirp[k].conj();
        b[m - k] = chirp[k].conj();
    }
    radix2(&mut a, -1.0);
    radix2(&mut b, -1.0);
    for (ai, bi) in a.iter_mut().zip(&b) {
        *ai *= bi;
    }
    radix2(&mut a, 1.0);
    let scale = 1.0 / m as f64;
    for k in 0..n {
        x[k] = a[k] * chirp[k] * scale;
    }
}
