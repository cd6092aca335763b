//! FFT-backed correlation helpers.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

fn spectrum(planner: &mut FftPlanner<f64>, x: &[f64], size: usize) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(size).process(&mut buf);
    buf
}

/// Circular `y[d] = Σ_k p[k]·x[k+d]` for a buffer of `size ≥ len(x)+len(p)−1`;
/// negative lags wrap to the end.
fn circular_xcorr(planner: &mut FftPlanner<f64>, x: &[f64], p: &[f64], size: usize) -> Vec<f64> {
    let xs = spectrum(planner, x, size);
    let ps = spectrum(planner, p, size);
    let mut y: Vec<Complex<f64>> = xs.iter().zip(&ps).map(|(a, b)| a * b.conj()).collect();
    planner.plan_fft_inverse(size).process(&mut y);
    let scale = 1.0 / size as f64;
    y.iter().map(|c| c.re * scale).collect()
}

/// `out[l] = Σ_k p[k]·x[l+k]` for every full-overlap lag `l ∈ 0..=len(x)−len(p)`.
pub fn valid_xcorr(x: &[f64], p: &[f64]) -> Vec<f64> {
    if p.is_empty() || p.len() > x.len() {
        return Vec::new();
    }
    let size = (x.len() + p.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let mut y = circular_xcorr(&mut planner, x, p, size);
    y.truncate(x.len() - p.len() + 1);
    y
}

/// `out[d + len(p)−1] = Σ_k p[k]·x[k+d]` for `d ∈ −(len(p)−1)..=len(x)−1`.
pub fn full_xcorr(x: &[f64], p: &[f64]) -> Vec<f64> {
    if p.is_empty() || x.is_empty() {
        return Vec::new();
    }
    let size = (x.len() + p.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let y = circular_xcorr(&mut planner, x, p, size);
    let neg = p.len() - 1;
    let mut out = Vec::with_capacity(neg + x.len());
    out.extend_from_slice(&y[size - neg..]);
    out.extend_from_slice(&y[..x.len()]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_full(x: &[f64], p: &[f64]) -> Vec<f64> {
        let neg = p.len() as isize - 1;
        (-neg..x.len() as isize)
            .map(|d| {
                p.iter()
                    .enumerate()
                    .filter_map(|(k, pk)| {
                        x.get((k as isize + d) as usize)
                            .filter(|_| k as isize + d >= 0)
                            .map(|xv| pk * xv)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_direct_sums() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let p: Vec<f64> = (0..9).map(|i| ((i * 31) % 5) as f64 - 2.0).collect();
        let full = full_xcorr(&x, &p);
        let want = direct_full(&x, &p);
        assert_eq!(full.len(), want.len());
        for (a, b) in full.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
        let valid = valid_xcorr(&x, &p);
        assert_eq!(valid.len(), 29);
        for (l, v) in valid.iter().enumerate() {
            assert!((v - want[l + 8]).abs() < 1e-9);
        }
    }
}
