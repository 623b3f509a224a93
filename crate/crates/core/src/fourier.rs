//! d-dimensional FFT helpers on the torus and the lattice Laplacian symbol.

use crate::lattice::Torus;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// In-place unnormalized FFT along every axis of a row-major array with
/// coordinate 0 fastest (the site indexing of [`Torus`]).
pub fn fft_nd(dims: &[usize], data: &mut [Complex<f64>], inverse: bool) {
    let total: usize = dims.iter().product();
    assert_eq!(data.len(), total);
    let mut planner = FftPlanner::new();
    let mut stride = 1usize;
    for &len in dims {
        let fft = if inverse {
            planner.plan_fft_inverse(len)
        } else {
            planner.plan_fft_forward(len)
        };
        let mut lane = vec![Complex::default(); len];
        let lanes = total / len;
        for lane_idx in 0..lanes {
            // starting offset of this lane: interleave the remaining axes
            let block = lane_idx / stride;
            let within = lane_idx % stride;
            let base = block * stride * len + within;
            for i in 0..len {
                lane[i] = data[base + i * stride];
            }
            fft.process(&mut lane);
            for i in 0..len {
                data[base + i * stride] = lane[i];
            }
        }
        stride *= len;
    }
}

/// Symbol of `-L` for unit conductances at integer mode `n`:
/// `λ(k) = 4 Σ_j sin²(π n_j / L)` with `k_j = 2π n_j / L`.
pub fn laplacian_symbol(t: Torus, mode: usize) -> f64 {
    let mut rest = mode;
    let mut lam = 0.0;
    for _ in 0..t.d() {
        let n = rest % t.l();
        rest /= t.l();
        lam += 4.0 * (std::f64::consts::PI * n as f64 / t.l() as f64).sin().powi(2);
    }
    lam
}
