//! Iterative radix-2 complex FFT. Grid sizes are powers of two by the grid
//! contract, so this covers every transform the crate needs. Twiddle factors
//! are computed once per call directly from sin/cos of exact angles; stages
//! index into that table, which keeps rounding near one ulp per butterfly.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::field::ScalarField;
use crate::grid::Grid;

/// exp(-2 pi i j / n) for j in 0..n/2.
fn twiddle_table(n: usize) -> Vec<Complex64> {
    let mut tw = Vec::with_capacity(n / 2);
    for j in 0..n / 2 {
        let ang = -core::f64::consts::TAU * j as f64 / n as f64;
        tw.push(Complex64::new(libm::cos(ang), libm::sin(ang)));
    }
    tw
}

fn bit_reverse_permute(buf: &mut [Complex64]) {
    let n = buf.len();
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            buf.swap(i, j);
        }
        let mut mask = n >> 1;
        while mask > 0 && j & mask != 0 {
            j &= !mask;
            mask >>= 1;
        }
        j |= mask;
    }
}

/// In-place transform of one line. `tw` must be `twiddle_table(buf.len())`.
/// Forward is unnormalized; the inverse divides by n.
fn fft_line(buf: &mut [Complex64], tw: &[Complex64], inverse: bool) {
    let n = buf.len();
    debug_assert!(n.is_power_of_two());
    debug_assert_eq!(tw.len(), n / 2);
    bit_reverse_permute(buf);
    let mut len = 2usize;
    while len <= n {
        let half = len / 2;
        let step = n / len;
        for start in (0..n).step_by(len) {
            for j in 0..half {
                let mut w = tw[j * step];
                if inverse {
                    w = w.conj();
                }
                let u = buf[start + j];
                let v = buf[start + j + half] * w;
                buf[start + j] = u + v;
                buf[start + j + half] = u - v;
            }
        }
        len <<= 1;
    }
    if inverse {
        let s = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }
}

/// d-dimensional transform over the grid's node ordering (axis 0 contiguous).
pub(crate) fn fft_nd(grid: &Grid, data: &mut [Complex64], inverse: bool) {
    let n = grid.n();
    let nn = grid.num_nodes();
    debug_assert_eq!(data.len(), nn);
    let tw = twiddle_table(n);
    let mut line = vec![Complex64::default(); n];
    for ax in 0..grid.dim() {
        let stride = grid.stride(ax);
        let block = stride * n;
        for base_block in (0..nn).step_by(block) {
            for offset in 0..stride {
                let base = base_block + offset;
                for k in 0..n {
                    line[k] = data[base + k * stride];
                }
                fft_line(&mut line, &tw, inverse);
                for k in 0..n {
                    data[base + k * stride] = line[k];
                }
            }
        }
    }
}

pub(crate) fn forward(field: &ScalarField) -> Vec<Complex64> {
    let mut data: Vec<Complex64> = field
        .values()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    fft_nd(field.grid(), &mut data, false);
    data
}

/// Inverse transform of a spectrum that represents a real field.
pub(crate) fn inverse_real(grid: &Grid, mut spec: Vec<Complex64>) -> ScalarField {
    fft_nd(grid, &mut spec, true);
    let data: Vec<f64> = spec.iter().map(|c| c.re).collect();
    debug_assert!(
        {
            let scale = data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            spec.iter().all(|c| c.im.abs() <= 1e-8 * scale.max(1.0))
        },
        "inverse_real applied to a spectrum without Hermitian symmetry"
    );
    ScalarField::from_data(*grid, data).expect("inverse FFT produced non-finite values")
}

/// Signed integer mode of index m on an n-point axis (m - n above n/2).
pub(crate) fn signed_mode(n: usize, m: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Physical wavenumber 2 pi m / L of axis index m, with the Nyquist mode
/// zeroed. First derivatives of real fields must kill the unpaired Nyquist
/// mode to stay real and keep gradient/divergence exactly skew-adjoint.
pub(crate) fn deriv_wavenumber(grid: &Grid, m: usize) -> f64 {
    let n = grid.n();
    if m == n / 2 {
        return 0.0;
    }
    core::f64::consts::TAU * signed_mode(n, m) as f64 / grid.length()
}

/// Physical wavenumber magnitude used by norm multipliers (Nyquist kept).
pub(crate) fn norm_wavenumber(grid: &Grid, m: usize) -> f64 {
    core::f64::consts::TAU * signed_mode(grid.n(), m) as f64 / grid.length()
}
