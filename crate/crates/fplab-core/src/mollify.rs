//! Discrete mollifiers rho^delta(x) = delta^-d rho(x/delta) on the periodic
//! grid. The kernel is sampled at nodes inside its support, renormalized so
//! the node weights sum to exactly one, and applied either as an FFT
//! multiplier (the fast path) or as an explicit quadrature over the sampled
//! support (used by kernel-form cross checks). Both paths share one set of
//! weights, so they describe the same discrete operator.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::CoreError;
use crate::fft;
use crate::field::{same_grid, MatrixField, ScalarField, VectorField};
use crate::grid::{Grid, MAX_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    /// Compactly supported C^infinity bump, support radius delta.
    Bump,
    /// Gaussian of standard deviation delta, truncated at 4 delta.
    GaussianTruncated,
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Bump => "bump",
            KernelFamily::GaussianTruncated => "gaussian",
        }
    }

    fn support_radius(&self, delta: f64) -> f64 {
        match self {
            KernelFamily::Bump => delta,
            KernelFamily::GaussianTruncated => 4.0 * delta,
        }
    }

    /// Unnormalized radial profile at s = |z|/delta.
    fn profile(&self, s: f64) -> f64 {
        match self {
            KernelFamily::Bump => {
                if s < 1.0 {
                    libm::exp(-1.0 / (1.0 - s * s))
                } else {
                    0.0
                }
            }
            KernelFamily::GaussianTruncated => {
                if s <= 4.0 {
                    libm::exp(-0.5 * s * s)
                } else {
                    0.0
                }
            }
        }
    }
}

/// One quadrature node of the sampled kernel: integer offsets per axis and
/// the normalized weight (weights sum to one over the support).
#[derive(Debug, Clone, Copy)]
pub struct SupportNode {
    pub offsets: [isize; MAX_DIM],
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Mollifier {
    grid: Grid,
    family: KernelFamily,
    delta: f64,
    multiplier: Vec<f64>,
    support: Vec<SupportNode>,
}

impl Mollifier {
    pub fn new(family: KernelFamily, delta: f64, grid: &Grid) -> Result<Self, CoreError> {
        let h = grid.spacing();
        if !(delta.is_finite() && delta >= 2.0 * h) {
            return Err(CoreError::KernelUnderResolved { delta, h });
        }
        let radius = family.support_radius(delta);
        if radius >= 0.5 * grid.length() {
            return Err(CoreError::KernelTooWide {
                support: radius,
                len: grid.length(),
            });
        }

        let cells = libm::floor(radius / h) as isize;
        let mut support = Vec::new();
        let mut total = 0.0;
        let mut offs = [0isize; MAX_DIM];
        enumerate_offsets(grid.dim(), cells, &mut offs, 0, &mut |o| {
            let mut r2 = 0.0;
            for ax in 0..grid.dim() {
                let z = o[ax] as f64 * h;
                r2 += z * z;
            }
            let s = libm::sqrt(r2) / delta;
            let w = family.profile(s);
            if w > 0.0 {
                support.push(SupportNode {
                    offsets: *o,
                    weight: w,
                });
                total += w;
            }
        });
        for node in &mut support {
            node.weight /= total;
        }

        // Dense periodic kernel field rho[j] with sum rho * h^d = 1, then its
        // spectrum scaled by h^d is the convolution multiplier. The kernel is
        // even by construction, so the multiplier is real; the DC gain is
        // pinned to exactly one, which makes mean preservation exact.
        let vol = grid.cell_volume();
        let mut dense = vec![Complex64::default(); grid.num_nodes()];
        let n = grid.n() as isize;
        for node in &support {
            let mut m = [0usize; MAX_DIM];
            for ax in 0..grid.dim() {
                m[ax] = node.offsets[ax].rem_euclid(n) as usize;
            }
            dense[grid.flat_index(&m)] = Complex64::new(node.weight / vol, 0.0);
        }
        fft::fft_nd(grid, &mut dense, false);
        let mut multiplier: Vec<f64> = dense.iter().map(|c| c.re * vol).collect();
        debug_assert!(
            dense.iter().all(|c| c.im.abs() * vol < 1e-12),
            "kernel spectrum not real; sampled kernel lost evenness"
        );
        multiplier[0] = 1.0;
        Ok(Mollifier {
            grid: *grid,
            family,
            delta,
            multiplier,
            support,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Sampled kernel nodes (offsets within the support and unit-sum weights).
    pub fn support(&self) -> &[SupportNode] {
        &self.support
    }

    /// Convolve a scalar field with the kernel.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField, CoreError> {
        same_grid(&self.grid, f.grid(), "mollify")?;
        let mut spec = fft::forward(f);
        for (c, m) in spec.iter_mut().zip(&self.multiplier) {
            *c *= *m;
        }
        Ok(fft::inverse_real(&self.grid, spec))
    }

    pub fn apply_vector(&self, v: &VectorField) -> Result<VectorField, CoreError> {
        same_grid(&self.grid, v.grid(), "mollify vector")?;
        let comps: Result<Vec<ScalarField>, CoreError> = (0..self.grid.dim())
            .map(|c| self.apply(&v.comp_field(c)))
            .collect();
        VectorField::from_components(self.grid, comps?)
    }

    pub fn apply_matrix(&self, a: &MatrixField) -> Result<MatrixField, CoreError> {
        same_grid(&self.grid, a.grid(), "mollify matrix")?;
        let mut out = MatrixField::zeros(self.grid);
        for i in 0..self.grid.dim() {
            for j in 0..=i {
                let smoothed = self.apply(&a.comp_field(i, j))?;
                out.set_comp(i, j, &smoothed)?;
            }
        }
        Ok(out)
    }
}

fn enumerate_offsets(
    d: usize,
    cells: isize,
    offs: &mut [isize; MAX_DIM],
    axis: usize,
    visit: &mut impl FnMut(&[isize; MAX_DIM]),
) {
    if axis == d {
        visit(offs);
        return;
    }
    for o in -cells..=cells {
        offs[axis] = o;
        enumerate_offsets(d, cells, offs, axis + 1, visit);
    }
}

/// Free-function form of [`Mollifier::apply`].
pub fn mollify(f: &ScalarField, m: &Mollifier) -> Result<ScalarField, CoreError> {
    m.apply(f)
}
