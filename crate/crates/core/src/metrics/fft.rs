use num_complex::Complex64;
use std::f64::consts::PI;

/// Unnormalized DFT bins of a zero-padded power-of-two length.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn n(&self) -> usize {
        self.bins.len()
    }

    /// `|X[k]|` for `k` in `0..=n/2`.
    pub fn one_sided_magnitudes(&self) -> Vec<f64> {
        self.bins[..=self.n() / 2].iter().map(|c| c.norm()).collect()
    }

    /// `(1/n) * sum |X|^2`, which equals the time-domain energy.
    pub fn energy(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.n() as f64
    }
}

/// Forward DFT of `x` zero-padded to `x.len().next_power_of_two()`.
/// An empty input yields a single zero bin.
pub fn fft(x: &[f64]) -> Spectrum {
    fft_padded(x, x.len().max(1).next_power_of_two())
}

/// Forward DFT of `x` zero-padded to `n`, which must be a power of two no
/// shorter than `x`.
pub fn fft_padded(x: &[f64], n: usize) -> Spectrum {
    assert!(
        n.is_power_of_two() && n >= x.len(),
        "fft length {n} for {} samples",
        x.len()
    );
    let mut bins = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in bins.iter_mut().zip(x) {
        b.re = v;
    }
    transform(&mut bins, false);
    Spectrum { bins }
}

/// Inverse DFT, including the `1/n` factor.
pub fn ifft(spectrum: &Spectrum) -> Vec<Complex64> {
    let mut out = spectrum.bins.clone();
    transform(&mut out, true);
    let n = out.len() as f64;
    out.iter_mut().for_each(|c| *c /= n);
    out
}

/// In-place iterative radix-2 decimation in time.
fn transform(a: &mut [Complex64], inverse: bool) {
    let n = a.len();
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            a.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        // Twiddles computed directly per index rather than by recurrence
        // so rounding does not grow with the transform length.
        let twiddles: Vec<Complex64> = (0..half)
            .map(|k| Complex64::from_polar(1.0, sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let u = a[start + k];
                let v = a[start + k + half] * twiddles[k];
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
        }
        len *= 2;
    }
}
