//! Spectral derivatives on the periodic grid. Differentiation multiplies
//! Fourier modes by i*xi with xi = 2*pi*m/L and the unpaired Nyquist mode
//! zeroed, so gradient and (minus) divergence are exactly adjoint in the
//! discrete inner product and repeated derivatives compose exactly.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::CoreError;
use crate::fft;
use crate::field::{same_grid, ScalarField, VectorField};
use crate::grid::Grid;

/// Derivative wavenumbers per axis index (all axes share n and L).
fn deriv_wavenumbers(grid: &Grid) -> Vec<f64> {
    (0..grid.n()).map(|m| fft::deriv_wavenumber(grid, m)).collect()
}

/// d/dx_axis via the spectral multiplier i*xi.
pub fn partial(f: &ScalarField, axis: usize) -> ScalarField {
    let grid = *f.grid();
    debug_assert!(axis < grid.dim());
    let k = deriv_wavenumbers(&grid);
    let mut spec = fft::forward(f);
    apply_imaginary_axis_multiplier(&grid, &mut spec, axis, &k);
    fft::inverse_real(&grid, spec)
}

fn apply_imaginary_axis_multiplier(
    grid: &Grid,
    spec: &mut [Complex64],
    axis: usize,
    k: &[f64],
) {
    let n = grid.n();
    let stride = grid.stride(axis);
    let block = stride * n;
    for base_block in (0..spec.len()).step_by(block) {
        for offset in 0..stride {
            for m in 0..n {
                let idx = base_block + offset + m * stride;
                let v = spec[idx];
                spec[idx] = Complex64::new(-k[m] * v.im, k[m] * v.re);
            }
        }
    }
}

/// Spectral gradient; one forward transform, one inverse per component.
pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = *f.grid();
    let base = fft::forward(f);
    let comps: Vec<ScalarField> = (0..grid.dim())
        .map(|ax| {
            let k = deriv_wavenumbers(&grid);
            let mut spec = base.clone();
            apply_imaginary_axis_multiplier(&grid, &mut spec, ax, &k);
            fft::inverse_real(&grid, spec)
        })
        .collect();
    VectorField::from_components(grid, comps).expect("gradient components share the grid")
}

/// Spectral divergence; the exact negative adjoint of [`gradient`].
pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = *v.grid();
    let mut acc = alloc::vec![Complex64::default(); grid.num_nodes()];
    for ax in 0..grid.dim() {
        let comp = v.comp_field(ax);
        let mut spec = fft::forward(&comp);
        let k = deriv_wavenumbers(&grid);
        apply_imaginary_axis_multiplier(&grid, &mut spec, ax, &k);
        for (a, s) in acc.iter_mut().zip(&spec) {
            *a += s;
        }
    }
    fft::inverse_real(&grid, acc)
}

/// d^2/dx_i dx_j as the exact composition of first derivatives.
pub fn second_partial(f: &ScalarField, i: usize, j: usize) -> ScalarField {
    let grid = *f.grid();
    debug_assert!(i < grid.dim() && j < grid.dim());
    let mut spec = fft::forward(f);
    let ki = deriv_wavenumbers(&grid);
    apply_imaginary_axis_multiplier(&grid, &mut spec, i, &ki);
    let kj = deriv_wavenumbers(&grid);
    apply_imaginary_axis_multiplier(&grid, &mut spec, j, &kj);
    fft::inverse_real(&grid, spec)
}

/// Discrete L^2 inner product: sum of products times the cell volume.
pub fn inner_product(f: &ScalarField, g: &ScalarField) -> Result<f64, CoreError> {
    same_grid(f.grid(), g.grid(), "inner product")?;
    let dot: f64 = f
        .values()
        .iter()
        .zip(g.values())
        .map(|(a, b)| a * b)
        .sum();
    Ok(dot * f.grid().cell_volume())
}

/// Inner product of vector fields, summed over components.
pub fn vector_inner_product(u: &VectorField, v: &VectorField) -> Result<f64, CoreError> {
    same_grid(u.grid(), v.grid(), "vector inner product")?;
    let nn = u.grid().num_nodes();
    let mut dot = 0.0;
    for c in 0..u.grid().dim() {
        for i in 0..nn {
            dot += u.comp(c)[i] * v.comp(c)[i];
        }
    }
    Ok(dot * u.grid().cell_volume())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use core::f64::consts::TAU;

    fn grid(n: usize) -> Grid {
        Grid::new(1, n, TAU).unwrap()
    }

    #[test]
    fn derivative_of_sine_is_cosine() {
        let g = grid(256);
        let f = ScalarField::from_fn(g, |x| x[0].sin()).unwrap();
        let df = partial(&f, 0);
        for (i, v) in df.values().iter().enumerate() {
            let x = g.coords(i)[0];
            assert!((v - x.cos()).abs() < 1e-10, "node {i}");
        }
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let g = Grid::new(2, 32, 3.0).unwrap();
        let f = ScalarField::constant(g, 4.2);
        let grad = gradient(&f);
        assert!(grad.max_norm() < 1e-13);
    }

    #[test]
    fn divergence_of_rotation_field_vanishes() {
        let g = Grid::new(2, 32, TAU).unwrap();
        // v = (sin y, sin x) has zero divergence.
        let v = VectorField::from_fn(g, |c, x| if c == 0 { x[1].sin() } else { x[0].sin() })
            .unwrap();
        let div = divergence(&v);
        assert!(div.max_abs() < 1e-12);
    }

    #[test]
    fn second_partial_composes_first_derivatives() {
        let g = Grid::new(2, 32, TAU).unwrap();
        let f = ScalarField::from_fn(g, |x| (2.0 * x[0]).sin() * x[1].cos()).unwrap();
        let direct = second_partial(&f, 0, 1);
        let composed = partial(&partial(&f, 0), 1);
        let diff = direct.sub(&composed).unwrap();
        assert!(diff.max_abs() < 1e-11);
    }

    #[test]
    fn gradient_divergence_adjoint_to_machine_precision() {
        // <grad f, v> = -<f, div v> must hold to ~1e-12 relative for any
        // discrete fields; this is what makes the energy identities exact.
        use rand::{Rng, SeedableRng};
        let g = Grid::new(2, 32, 5.0).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        for _ in 0..5 {
            let f = ScalarField::from_data(
                g,
                (0..g.num_nodes()).map(|_| rng.random::<f64>() - 0.5).collect(),
            )
            .unwrap();
            let v = VectorField::from_fn(g, |_, _| 0.0).unwrap();
            let mut v = v;
            for c in 0..2 {
                for val in v.comp_mut(c) {
                    *val = rng.random::<f64>() - 0.5;
                }
            }
            let lhs = vector_inner_product(&gradient(&f), &v).unwrap();
            let rhs = -inner_product(&f, &divergence(&v)).unwrap();
            let scale = lhs.abs().max(rhs.abs()).max(1e-30);
            assert!(
                (lhs - rhs).abs() <= 1e-12 * scale,
                "adjointness violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn three_d_gradient_component() {
        let g = Grid::new(3, 16, TAU).unwrap();
        let f = ScalarField::from_fn(g, |x| x[2].sin()).unwrap();
        let grad = gradient(&f);
        for (i, v) in grad.comp(2).iter().enumerate() {
            let x = g.coords(i)[2];
            assert!((v - x.cos()).abs() < 1e-10);
        }
        assert!(grad.comp_field(0).max_abs() < 1e-12);
    }
}
