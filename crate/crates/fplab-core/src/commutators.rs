//! Mollification commutators: the defect between smoothing-then-applying
//! and applying-then-smoothing a transport or diffusion operator. These are
//! the fields whose smallness (in the right norm) drives uniqueness
//! arguments, so they are computed here as plain grid fields ready for norm
//! measurement.
//!
//! Everything is computed in convolution form with spectral derivatives; the
//! transport commutator also has an independent kernel-quadrature form used
//! as a cross-check on discretization error.

use alloc::vec::Vec;

use crate::calculus::{divergence, gradient, partial, second_partial};
use crate::error::CoreError;
use crate::field::{same_grid, MatrixField, ScalarField, VectorField};
use crate::mollify::Mollifier;

/// Which commutator a measured field is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommutatorKind {
    /// Transport commutator div(b w^d) - div(b w)*rho.
    R,
    /// Its advective part b . grad(w^d) - (b . grad w)*rho.
    R1,
    /// Its divergence part w^d div b - (w div b)*rho.
    R2,
    /// Diffusion commutator [dd(a w)]*rho - dd(a w^d).
    S,
    /// Flux commutator div(a grad(w^d) - (a grad w)*rho).
    S1,
}

impl CommutatorKind {
    pub fn label(&self) -> &'static str {
        match self {
            CommutatorKind::R => "r",
            CommutatorKind::R1 => "r1",
            CommutatorKind::R2 => "r2",
            CommutatorKind::S => "s",
            CommutatorKind::S1 => "s1",
        }
    }
}

/// The transport commutator and its advective/divergence split.
#[derive(Debug, Clone)]
pub struct TransportCommutator {
    /// r = div(b w^d) - div(b w)*rho.
    pub total: ScalarField,
    /// r1 = b . grad(w^d) - (b . grad w)*rho.
    pub advective: ScalarField,
    /// r2 = w^d div b - (w div b)*rho.
    pub divergence_part: ScalarField,
}

fn dot(b: &VectorField, g: &VectorField) -> Result<ScalarField, CoreError> {
    same_grid(b.grid(), g.grid(), "vector dot product")?;
    let grid = *b.grid();
    let mut out = ScalarField::zeros(grid);
    let vals = out.values_mut();
    for c in 0..grid.dim() {
        for (dst, (x, y)) in vals.iter_mut().zip(b.comp(c).iter().zip(g.comp(c))) {
            *dst += x * y;
        }
    }
    Ok(out)
}

fn scale_vector(b: &VectorField, f: &ScalarField) -> Result<VectorField, CoreError> {
    same_grid(b.grid(), f.grid(), "vector-scalar product")?;
    let grid = *b.grid();
    let comps = (0..grid.dim())
        .map(|c| b.comp_field(c).mul_pointwise(f))
        .collect::<Result<Vec<_>, _>>()?;
    VectorField::from_components(grid, comps)
}

/// r, r1, r2 for drift b, profile w, mollifier m.
pub fn transport_commutator(
    b: &VectorField,
    w: &ScalarField,
    m: &Mollifier,
) -> Result<TransportCommutator, CoreError> {
    same_grid(b.grid(), w.grid(), "transport commutator")?;
    same_grid(b.grid(), m.grid(), "transport commutator mollifier")?;
    let w_moll = m.apply(w)?;

    let total = {
        let flux_moll = scale_vector(b, &w_moll)?;
        let flux = scale_vector(b, w)?;
        divergence(&flux_moll).sub(&m.apply(&divergence(&flux))?)?
    };

    let advective = {
        let adv_moll = dot(b, &gradient(&w_moll))?;
        let adv = dot(b, &gradient(w))?;
        adv_moll.sub(&m.apply(&adv)?)?
    };

    let divergence_part = {
        let div_b = divergence(b);
        let lhs = w_moll.mul_pointwise(&div_b)?;
        let rhs = m.apply(&w.mul_pointwise(&div_b)?)?;
        lhs.sub(&rhs)?
    };

    Ok(TransportCommutator {
        total,
        advective,
        divergence_part,
    })
}

/// The advective part r1 in its difference-quotient kernel form:
/// r1(x) = sum_z weight(z) (b(x) - b(x - z)) . grad w(x - z),
/// quadrature over the mollifier's support nodes. Cross-validates the
/// convolution form, which discretizes the same object through FFTs.
pub fn transport_commutator_kernel(
    b: &VectorField,
    w: &ScalarField,
    m: &Mollifier,
) -> Result<ScalarField, CoreError> {
    same_grid(b.grid(), w.grid(), "kernel-form commutator")?;
    same_grid(b.grid(), m.grid(), "kernel-form commutator mollifier")?;
    let grid = *b.grid();
    let d = grid.dim();
    let grad_w = gradient(w);
    let mut out = ScalarField::zeros(grid);
    let vals = out.values_mut();
    for node in m.support() {
        let weight = node.weight;
        for idx in 0..grid.num_nodes() {
            // x - z: step backwards along each axis by the node's offsets.
            let mut shifted = idx;
            for ax in 0..d {
                shifted = grid.neighbor(shifted, ax, -node.offsets[ax]);
            }
            let mut acc = 0.0;
            for c in 0..d {
                acc += (b.comp(c)[idx] - b.comp(c)[shifted]) * grad_w.comp(c)[shifted];
            }
            vals[idx] += weight * acc;
        }
    }
    Ok(out)
}

/// Diffusion commutator s = sum_ij [dd_ij(a_ij w)]*rho - dd_ij(a_ij w^d).
pub fn diffusion_commutator(
    a: &MatrixField,
    w: &ScalarField,
    m: &Mollifier,
) -> Result<ScalarField, CoreError> {
    same_grid(a.grid(), w.grid(), "diffusion commutator")?;
    same_grid(a.grid(), m.grid(), "diffusion commutator mollifier")?;
    let grid = *a.grid();
    let d = grid.dim();
    let w_moll = m.apply(w)?;
    let mut raw = ScalarField::zeros(grid);
    let mut moll_side = ScalarField::zeros(grid);
    for i in 0..d {
        for j in 0..d {
            let aij = a.comp_field(i, j);
            raw.axpy(1.0, &second_partial(&aij.mul_pointwise(w)?, i, j))?;
            moll_side.axpy(1.0, &second_partial(&aij.mul_pointwise(&w_moll)?, i, j))?;
        }
    }
    m.apply(&raw)?.sub(&moll_side)
}

/// Flux commutator s1 = sum_i d_i(sum_j a_ij d_j w^d - (a_ij d_j w)*rho).
pub fn flux_commutator(
    a: &MatrixField,
    w: &ScalarField,
    m: &Mollifier,
) -> Result<ScalarField, CoreError> {
    same_grid(a.grid(), w.grid(), "flux commutator")?;
    same_grid(a.grid(), m.grid(), "flux commutator mollifier")?;
    let grid = *a.grid();
    let d = grid.dim();
    let w_moll = m.apply(w)?;
    let mut out = ScalarField::zeros(grid);
    for i in 0..d {
        let mut flux_i = ScalarField::zeros(grid);
        for j in 0..d {
            let aij = a.comp_field(i, j);
            flux_i.axpy(1.0, &aij.mul_pointwise(&partial(&w_moll, j))?)?;
            flux_i.axpy(-1.0, &m.apply(&aij.mul_pointwise(&partial(w, j))?)?)?;
        }
        out.axpy(1.0, &partial(&flux_i, i))?;
    }
    Ok(out)
}

/// The candidate pointwise limit field - sum_ij d_j w d_i a_ij against which
/// the small-delta behaviour of s1 is measured.
pub fn flux_commutator_limit(
    a: &MatrixField,
    w: &ScalarField,
) -> Result<ScalarField, CoreError> {
    same_grid(a.grid(), w.grid(), "flux commutator limit")?;
    let grid = *a.grid();
    let d = grid.dim();
    let mut out = ScalarField::zeros(grid);
    for i in 0..d {
        for j in 0..d {
            let term = partial(w, j).mul_pointwise(&partial(&a.comp_field(i, j), i))?;
            out.axpy(-1.0, &term)?;
        }
    }
    Ok(out)
}
