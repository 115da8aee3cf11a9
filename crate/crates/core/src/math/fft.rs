//! Complex FFT: iterative radix-2 for power-of-two lengths, Bluestein's
//! chirp-z transform for everything else. Enough machinery for periodograms;
//! not a general-purpose DSP library.

use std::f64::consts::PI;

/// In-place radix-2 decimation-in-time FFT. `re.len()` must be a power of two.
fn fft_radix2(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut m = n >> 1;
        while m >= 1 && j & m != 0 {
            j ^= m;
            m >>= 1;
        }
        j |= m;
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * PI / len as f64;
        let (w_re, w_im) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cur_re, mut cur_im) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let a = start + k;
                let b = start + k + len / 2;
                let t_re = re[b] * cur_re - im[b] * cur_im;
                let t_im = re[b] * cur_im + im[b] * cur_re;
                re[b] = re[a] - t_re;
                im[b] = im[a] - t_im;
                re[a] += t_re;
                im[a] += t_im;
                let next_re = cur_re * w_re - cur_im * w_im;
                cur_im = cur_re * w_im + cur_im * w_re;
                cur_re = next_re;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Forward DFT of a complex sequence of arbitrary length.
///
/// X_h = Σ_t x_t · exp(−i 2π t h / n). Radix-2 when n is a power of two,
/// otherwise Bluestein's algorithm on a padded power-of-two grid.
pub fn dft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    assert_eq!(n, im.len());
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    if n.is_power_of_two() {
        let mut r = re.to_vec();
        let mut i = im.to_vec();
        fft_radix2(&mut r, &mut i);
        return (r, i);
    }
    bluestein(re, im)
}

// Bluestein: x_t e^{-iπt²/n} convolved with the chirp e^{+iπt²/n}.
fn bluestein(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let m = (2 * n - 1).next_power_of_two();
    // Chirp terms w_t = exp(-i π t² / n); use t² mod 2n to avoid angle blowup.
    let mut w_re = vec![0.0; n];
    let mut w_im = vec![0.0; n];
    for t in 0..n {
        let k = ((t as u128 * t as u128) % (2 * n as u128)) as f64;
        let ang = -PI * k / n as f64;
        w_re[t] = ang.cos();
        w_im[t] = ang.sin();
    }
    let mut a_re = vec![0.0; m];
    let mut a_im = vec![0.0; m];
    for t in 0..n {
        a_re[t] = re[t] * w_re[t] - im[t] * w_im[t];
        a_im[t] = re[t] * w_im[t] + im[t] * w_re[t];
    }
    let mut b_re = vec![0.0; m];
    let mut b_im = vec![0.0; m];
    b_re[0] = w_re[0];
    b_im[0] = -w_im[0];
    for t in 1..n {
        b_re[t] = w_re[t];
        b_im[t] = -w_im[t];
        b_re[m - t] = b_re[t];
        b_im[m - t] = b_im[t];
    }
    fft_radix2(&mut a_re, &mut a_im);
    fft_radix2(&mut b_re, &mut b_im);
    for i in 0..m {
        let r = a_re[i] * b_re[i] - a_im[i] * b_im[i];
        let im_ = a_re[i] * b_im[i] + a_im[i] * b_re[i];
        a_re[i] = r;
        a_im[i] = im_;
    }
    // Inverse FFT via conjugation
    for i in 0..m {
        a_im[i] = -a_im[i];
    }
    fft_radix2(&mut a_re, &mut a_im);
    let scale = 1.0 / m as f64;
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for h in 0..n {
        let (cr, ci) = (a_re[h] * scale, -a_im[h] * scale);
        out_re[h] = cr * w_re[h] - ci * w_im[h];
        out_im[h] = cr * w_im[h] + ci * w_re[h];
    }
    (out_re, out_im)
}

/// Direct O(n²) DFT, kept as the slow reference path.
pub fn dft_direct(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for h in 0..n {
        let mut sr = 0.0;
        let mut si = 0.0;
        for t in 0..n {
            let ang = -2.0 * PI * (t as f64) * (h as f64) / n as f64;
            let (c, s) = (ang.cos(), ang.sin());
            sr += re[t] * c - im[t] * s;
            si += re[t] * s + im[t] * c;
        }
        out_re[h] = sr;
        out_im[h] = si;
    }
    (out_re, out_im)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn radix2_matches_direct() {
        let n = 64;
        let re: Vec<f64> = (0..n).map(|t| ((t * 7 % 13) as f64).sin()).collect();
        let im = vec![0.0; n];
        let (fr, fi) = dft(&re, &im);
        let (dr, di) = dft_direct(&re, &im);
        assert!(max_err(&fr, &dr) < 1e-9);
        assert!(max_err(&fi, &di) < 1e-9);
    }

    #[test]
    fn bluestein_matches_direct_odd_length() {
        let n = 101;
        let re: Vec<f64> = (0..n).map(|t| (0.3 * t as f64).cos() + 0.1 * t as f64).collect();
        let im: Vec<f64> = (0..n).map(|t| (0.11 * t as f64).sin()).collect();
        let (fr, fi) = dft(&re, &im);
        let (dr, di) = dft_direct(&re, &im);
        assert!(max_err(&fr, &dr) < 1e-8, "{}", max_err(&fr, &dr));
        assert!(max_err(&fi, &di) < 1e-8);
    }

    #[test]
    fn dft_of_pure_tone_is_concentrated() {
        let n = 64;
        let k = 4;
        let re: Vec<f64> =
            (0..n).map(|t| (2.0 * PI * (t * k) as f64 / n as f64).cos()).collect();
        let im = vec![0.0; n];
        let (fr, fi) = dft(&re, &im);
        // On-grid cosine: energy splits between bins k and n-k with value n/2.
        assert!((fr[k] - n as f64 / 2.0).abs() < 1e-9);
        assert!((fr[n - k] - n as f64 / 2.0).abs() < 1e-9);
        assert!(fi[k].abs() < 1e-9);
    }
}
