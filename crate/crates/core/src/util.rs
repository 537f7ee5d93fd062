//! Small numerical helpers shared across modules.

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Sum in a fixed binary-tree order, so the result does not depend on how
/// the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    match xs.len() {
        0 => Complex64::new(0.0, 0.0),
        1 => xs[0],
        n if n <= 8 => xs.iter().sum(),
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum_complex(a) + pairwise_sum_complex(b)
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = pairwise_sum(xs) / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let dev: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    (m, (pairwise_sum(&dev) / (n - 1.0)).sqrt())
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (my - b * mx, b, r2)
}

/// Uniform grid `start + i·step`, `i = 0..n`.
pub fn uniform_grid(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start + i as f64 * step).collect()
}

/// Unnormalised multi-dimensional FFT of a row-major array (axis 0 outer).
/// `forward = false` computes `Σ_k c_k e^{+2πi k·j/n}`.
pub fn fft_nd(buf: &mut [Complex64], dims: &[usize], forward: bool) {
    let mut planner = FftPlanner::new();
    let total: usize = dims.iter().product();
    assert_eq!(buf.len(), total);
    let mut stride = 1;
    for axis in (0..dims.len()).rev() {
        let n = dims[axis];
        if n > 1 {
            let plan = if forward { planner.plan_fft_forward(n) } else { planner.plan_fft_inverse(n) };
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let outer = total / (n * stride);
            for o in 0..outer {
                for s in 0..stride {
                    let base = o * n * stride + s;
                    for i in 0..n {
                        line[i] = buf[base + i * stride];
                    }
                    plan.process(&mut line);
                    for i in 0..n {
                        buf[base + i * stride] = line[i];
                    }
                }
            }
        }
        stride *= n;
    }
}
