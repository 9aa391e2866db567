//! Drift/diffusion coefficient sets of prescribed regularity, their derived
//! quantities (effective drift, ellipticity floor, negative-divergence
//! budget), and deterministic generators for each regularity class.
//!
//! Time dependence is a finite family of per-slice fields sampled at
//! uniformly spaced times on [0, T]; a single slice means time-independent
//! coefficients. All generators draw from a seeded stream in a fixed order
//! that does not depend on the grid resolution, so the same (class, params,
//! seed) triple describes the same continuum field on every grid.

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::calculus::{divergence, partial};
use crate::error::CoreError;
use crate::field::{same_grid, MatrixField, ScalarField, VectorField};
use crate::grid::{Grid, MAX_DIM};
use crate::mollify::{KernelFamily, Mollifier};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularityClass {
    /// Truncated Fourier series; every derivative bounded.
    Smooth,
    /// Piecewise-linear periodic profiles (triangle waves): bounded gradient,
    /// no second derivative along the kinks.
    Lipschitz,
    /// Windowed |x - x0|^gamma core plus band-limited dressing: gradient in
    /// L^p but not L^infinity.
    W1pSingular,
    /// Bounded random Fourier fields with a slowly decaying spectrum; no
    /// useful derivative control.
    BoundedRough,
    /// Drift from a stream function (d = 2 only): div b = 0 exactly.
    DivFree2d,
}

impl RegularityClass {
    pub fn label(&self) -> &'static str {
        match self {
            RegularityClass::Smooth => "smooth",
            RegularityClass::Lipschitz => "lipschitz",
            RegularityClass::W1pSingular => "w1p_singular",
            RegularityClass::BoundedRough => "bounded_rough",
            RegularityClass::DivFree2d => "divfree_2d",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "smooth" => Some(RegularityClass::Smooth),
            "lipschitz" => Some(RegularityClass::Lipschitz),
            "w1p_singular" => Some(RegularityClass::W1pSingular),
            "bounded_rough" => Some(RegularityClass::BoundedRough),
            "divfree_2d" => Some(RegularityClass::DivFree2d),
            _ => None,
        }
    }
}

/// Time-sliced drift and diffusion with their declared analytic metadata.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub grid: Grid,
    /// Drift slices, sampled at uniform times spanning [0, T].
    pub b: Vec<VectorField>,
    /// Diffusion slices (symmetric), same sampling.
    pub a: Vec<MatrixField>,
    /// Declared ellipticity floor: xi . a xi >= alpha |xi|^2.
    pub alpha: f64,
    pub class: RegularityClass,
    /// Spatial integrability exponent claimed for the rough parts.
    pub p: f64,
}

impl CoefficientSet {
    pub fn new(
        grid: Grid,
        b: Vec<VectorField>,
        a: Vec<MatrixField>,
        alpha: f64,
        class: RegularityClass,
        p: f64,
    ) -> Result<Self, CoreError> {
        if b.is_empty() || a.is_empty() || b.len() != a.len() {
            return Err(CoreError::BadDataLength {
                context: "coefficient time slices",
                got: b.len(),
                want: a.len().max(1),
            });
        }
        for f in &b {
            same_grid(&grid, f.grid(), "drift slice")?;
        }
        for f in &a {
            same_grid(&grid, f.grid(), "diffusion slice")?;
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(CoreError::BadBoxLength { len: alpha });
        }
        Ok(CoefficientSet {
            grid,
            b,
            a,
            alpha,
            class,
            p,
        })
    }

    pub fn time_independent(
        b: VectorField,
        a: MatrixField,
        alpha: f64,
        class: RegularityClass,
        p: f64,
    ) -> Result<Self, CoreError> {
        let grid = *b.grid();
        Self::new(grid, alloc::vec![b], alloc::vec![a], alpha, class, p)
    }

    pub fn slices(&self) -> usize {
        self.b.len()
    }

    /// Index of the sample nearest to time t in [0, horizon].
    pub fn slice_index(&self, t: f64, horizon: f64) -> usize {
        let m = self.slices();
        if m == 1 || horizon <= 0.0 {
            return 0;
        }
        let pos = (t / horizon).clamp(0.0, 1.0) * (m - 1) as f64;
        let k = libm::round(pos) as usize;
        k.min(m - 1)
    }

    pub fn b_at(&self, t: f64, horizon: f64) -> &VectorField {
        &self.b[self.slice_index(t, horizon)]
    }

    pub fn a_at(&self, t: f64, horizon: f64) -> &MatrixField {
        &self.a[self.slice_index(t, horizon)]
    }

    /// Minimum over slices and nodes of the smallest eigenvalue of a.
    pub fn ellipticity(&self) -> Result<f64, CoreError> {
        let mut min = f64::INFINITY;
        for slice in &self.a {
            min = min.min(ellipticity_check(slice)?);
        }
        Ok(min)
    }

    /// Largest |a_ij| over slices, components, nodes (boundedness of a).
    pub fn diffusion_sup(&self) -> f64 {
        let mut sup = 0.0f64;
        for slice in &self.a {
            for i in 0..self.grid.dim() {
                for j in 0..=i {
                    for v in slice.comp(i, j) {
                        sup = sup.max(v.abs());
                    }
                }
            }
        }
        sup
    }

    /// Largest |sum_j d_j a_ij| over slices, rows, nodes (boundedness of the
    /// diffusion's divergence).
    pub fn diffusion_divergence_sup(&self) -> Result<f64, CoreError> {
        let d = self.grid.dim();
        let mut sup = 0.0f64;
        for slice in &self.a {
            for i in 0..d {
                let mut row_div = ScalarField::zeros(self.grid);
                for j in 0..d {
                    let dj = partial(&slice.comp_field(i, j), j);
                    row_div.axpy(1.0, &dj)?;
                }
                sup = sup.max(row_div.max_abs());
            }
        }
        Ok(sup)
    }

    /// Largest |b_i| over slices, components, nodes.
    pub fn drift_sup(&self) -> f64 {
        self.b.iter().fold(0.0f64, |m, f| m.max(f.max_norm()))
    }
}

/// Effective drift of the divergence form: b_i - (1/2) sum_j d_j a_ij.
pub fn effective_drift(b: &VectorField, a: &MatrixField) -> Result<VectorField, CoreError> {
    same_grid(b.grid(), a.grid(), "effective drift")?;
    let grid = *b.grid();
    let d = grid.dim();
    let mut comps: Vec<ScalarField> = Vec::with_capacity(d);
    for i in 0..d {
        let mut out = b.comp_field(i);
        for j in 0..d {
            let dj = partial(&a.comp_field(i, j), j);
            out.axpy(-0.5, &dj)?;
        }
        comps.push(out);
    }
    VectorField::from_components(grid, comps)
}

/// Effective drift per time slice.
pub fn effective_drift_slices(c: &CoefficientSet) -> Result<Vec<VectorField>, CoreError> {
    c.b.iter()
        .zip(&c.a)
        .map(|(b, a)| effective_drift(b, a))
        .collect()
}

/// Minimum over nodes of the smallest eigenvalue of the symmetric matrix
/// field (closed forms for d <= 3).
pub fn ellipticity_check(a: &MatrixField) -> Result<f64, CoreError> {
    let grid = a.grid();
    let d = grid.dim();
    let mut min = f64::INFINITY;
    for idx in 0..grid.num_nodes() {
        let m = a.at_node(idx);
        let lam = match d {
            1 => m[0][0],
            2 => {
                let half_tr = 0.5 * (m[0][0] + m[1][1]);
                let det = m[0][0] * m[1][1] - m[0][1] * m[0][1];
                let disc = libm::sqrt((half_tr * half_tr - det).max(0.0));
                half_tr - disc
            }
            _ => min_eig_3x3(&m),
        };
        if !lam.is_finite() {
            return Err(CoreError::NonFinite {
                context: "eigenvalue of diffusion matrix",
                index: idx,
            });
        }
        min = min.min(lam);
    }
    Ok(min)
}

/// Smallest eigenvalue of a symmetric 3x3 matrix via the trigonometric
/// closed form.
fn min_eig_3x3(m: &[[f64; MAX_DIM]; MAX_DIM]) -> f64 {
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    if p1 == 0.0 {
        return m[0][0].min(m[1][1]).min(m[2][2]);
    }
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    let p2 = (m[0][0] - q) * (m[0][0] - q)
        + (m[1][1] - q) * (m[1][1] - q)
        + (m[2][2] - q) * (m[2][2] - q)
        + 2.0 * p1;
    let p = libm::sqrt(p2 / 6.0);
    let mut bmat = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let e = if i == j { m[i][j] - q } else { m[i][j] };
            bmat[i][j] = e / p;
        }
    }
    let det_b = bmat[0][0] * (bmat[1][1] * bmat[2][2] - bmat[1][2] * bmat[2][1])
        - bmat[0][1] * (bmat[1][0] * bmat[2][2] - bmat[1][2] * bmat[2][0])
        + bmat[0][2] * (bmat[1][0] * bmat[2][1] - bmat[1][1] * bmat[2][0]);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = libm::acos(r) / 3.0;
    // cos(phi + 2pi/3) is the smallest of the three branch values.
    q + 2.0 * p * libm::cos(phi + 2.0 * core::f64::consts::PI / 3.0)
}

/// Per-slice sup of the negative part of div(effective drift), and its time
/// integral over [0, horizon] (trapezoid over the sample times; a single
/// slice integrates as a constant).
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceBudget {
    pub sup_per_slice: Vec<f64>,
    pub integral: f64,
}

pub fn negative_divergence_budget(
    c: &CoefficientSet,
    horizon: f64,
) -> Result<DivergenceBudget, CoreError> {
    let mut sups = Vec::with_capacity(c.slices());
    for (b, a) in c.b.iter().zip(&c.a) {
        let bt = effective_drift(b, a)?;
        let div = divergence(&bt);
        let sup = div
            .values()
            .iter()
            .fold(0.0f64, |m, v| m.max((-v).max(0.0)));
        sups.push(sup);
    }
    let integral = if sups.len() == 1 {
        sups[0] * horizon
    } else {
        let dt = horizon / (sups.len() - 1) as f64;
        let mut acc = 0.0;
        for (k, s) in sups.iter().enumerate() {
            let w = if k == 0 || k == sups.len() - 1 { 0.5 } else { 1.0 };
            acc += w * s;
        }
        acc * dt
    };
    Ok(DivergenceBudget {
        sup_per_slice: sups,
        integral,
    })
}

/// Tunables for the coefficient generators. Defaults give order-one fields
/// on a 2-pi box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenParams {
    /// Ellipticity floor built into every generated diffusion.
    pub alpha: f64,
    /// Integrability exponent declared for the rough parts.
    pub p: f64,
    /// Singular-core exponent (w1p_singular only).
    pub gamma: f64,
    /// Number of time slices (1 = time-independent).
    pub slices: usize,
    pub drift_amp: f64,
    pub diff_amp: f64,
    /// Fourier cutoff for the smooth class.
    pub max_mode: usize,
    /// Fixed physical mode cutoff for rough dressing; must stay below the
    /// Nyquist mode of every grid in a refinement study.
    pub rough_cutoff: usize,
    /// Per-octave amplitude growth exponent of the rough dressing: octave m
    /// below the cutoff is weighted 2^(-growth * m).
    pub dressing_growth: f64,
    /// Amplitude of the rough dressing relative to drift_amp / diff_amp;
    /// zero disables the dressing and leaves the bare singular core.
    pub dressing_amp: f64,
    /// w1p_singular only: also give the drift an L^p-but-unbounded core
    /// (exponent gamma - 1). Meant for commutator studies, not solves.
    pub rough_drift: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            alpha: 1.0,
            p: f64::INFINITY,
            gamma: 0.9,
            slices: 1,
            drift_amp: 1.0,
            diff_amp: 1.0,
            max_mode: 3,
            rough_cutoff: 48,
            dressing_growth: 0.4,
            dressing_amp: 0.5,
            rough_drift: false,
        }
    }
}

/// A plane wave amp * cos(k . x + phase) with physical wavenumber k.
#[derive(Debug, Clone, Copy)]
struct Wave {
    k: [f64; MAX_DIM],
    amp: f64,
    phase: f64,
}

fn sample_waves(grid: Grid, waves: &[Wave]) -> ScalarField {
    let d = grid.dim();
    ScalarField::from_fn(grid, |x| {
        let mut acc = 0.0;
        for w in waves {
            let mut dot = w.phase;
            for ax in 0..d {
                dot += w.k[ax] * x[ax];
            }
            acc += w.amp * libm::cos(dot);
        }
        acc
    })
    .expect("cosine sums are finite")
}

fn sup_bound(waves: &[Wave]) -> f64 {
    waves.iter().map(|w| w.amp.abs()).sum()
}

fn rand_in(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Smooth random trig polynomial: `count` plane waves with integer mode
/// vectors bounded by `max_mode` and amplitudes decaying like 1/|m|^2.
fn draw_smooth_waves(
    rng: &mut ChaCha12Rng,
    d: usize,
    len: f64,
    max_mode: usize,
    count: usize,
    amp: f64,
) -> Vec<Wave> {
    let base = core::f64::consts::TAU / len;
    let mm = max_mode.max(1) as i64;
    let mut waves = Vec::with_capacity(count);
    for _ in 0..count {
        let mut m = [0i64; MAX_DIM];
        let mut norm2 = 0i64;
        while norm2 == 0 {
            for item in m.iter_mut().take(d) {
                *item = rng.random_range(-mm..=mm);
            }
            norm2 = m.iter().take(d).map(|v| v * v).sum();
        }
        let mut k = [0.0f64; MAX_DIM];
        for ax in 0..d {
            k[ax] = base * m[ax] as f64;
        }
        waves.push(Wave {
            k,
            amp: amp * rand_in(rng, 0.3, 1.0) / norm2 as f64,
            phase: rand_in(rng, 0.0, core::f64::consts::TAU),
        });
    }
    waves
}

/// Band-limited rough dressing: two waves per dyadic octave of mode numbers
/// up to `cutoff`, octave m weighted by 2^(-growth * (top - m)) so the top
/// octave carries weight `amp`.
fn draw_dressing_waves(
    rng: &mut ChaCha12Rng,
    d: usize,
    len: f64,
    cutoff: usize,
    growth: f64,
    amp: f64,
) -> Vec<Wave> {
    let base = core::f64::consts::TAU / len;
    let mut bands: Vec<(i64, i64)> = Vec::new();
    let mut lo = 1i64;
    while lo <= cutoff as i64 {
        let hi = (2 * lo - 1).min(cutoff as i64);
        bands.push((lo, hi));
        lo *= 2;
    }
    let top = bands.len().saturating_sub(1) as f64;
    let mut waves = Vec::new();
    for (bi, (blo, bhi)) in bands.iter().enumerate() {
        let weight = amp * libm::pow(2.0, -growth * (top - bi as f64));
        for _ in 0..2 {
            let mut m = [0i64; MAX_DIM];
            let axis = rng.random_range(0..d);
            let lead = rng.random_range(*blo..=*bhi);
            let sign = if rng.random::<f64>() < 0.5 { -1 } else { 1 };
            m[axis] = sign * lead;
            for (ax, item) in m.iter_mut().enumerate().take(d) {
                if ax != axis && *blo > 1 {
                    *item = rng.random_range(-(blo - 1)..=(blo - 1));
                }
            }
            let mut k = [0.0f64; MAX_DIM];
            for ax in 0..d {
                k[ax] = base * m[ax] as f64;
            }
            waves.push(Wave {
                k,
                amp: weight * rand_in(rng, 0.5, 1.0),
                phase: rand_in(rng, 0.0, core::f64::consts::TAU),
            });
        }
    }
    waves
}

/// Periodic triangle wave on [0, 1): piecewise linear, range [-1, 1], kinks
/// at t = 0 and t = 1/2.
fn triangle(t: f64) -> f64 {
    let frac = t - libm::floor(t);
    4.0 * (frac - 0.5).abs() - 1.0
}

/// Windowed singular core |x - x0|^gamma_eff, sampled on a 4x finer grid,
/// capped at half a fine cell, mollified at half a coarse cell, then
/// decimated back to `grid`. The cap and mollification scale shrink with h,
/// so refining the grid sharpens the same continuum singularity.
fn singular_core(
    grid: Grid,
    x0_frac: &[f64; MAX_DIM],
    gamma_eff: f64,
) -> Result<ScalarField, CoreError> {
    let d = grid.dim();
    let len = grid.length();
    let fine = Grid::new(d, 4 * grid.n(), len)?;
    let hf = fine.spacing();
    let window = 0.25 * len; // support radius; keeps the core off the seam
    let mut x0 = [0.0f64; MAX_DIM];
    for ax in 0..d {
        x0[ax] = x0_frac[ax] * len;
    }
    let cap = 0.5 * hf;
    let raw = ScalarField::from_fn(fine, |x| {
        let mut r2 = 0.0;
        for ax in 0..d {
            let dz = fine.wrap_dist(x0[ax], x[ax]);
            r2 += dz * dz;
        }
        let r = libm::sqrt(r2);
        if r >= window {
            return 0.0;
        }
        let w = libm::cos(core::f64::consts::PI * r / (2.0 * window));
        let profile = libm::pow(r.max(cap), gamma_eff);
        w * w * profile
    })?;
    let moll = Mollifier::new(KernelFamily::Bump, 2.0 * hf, &fine)?;
    let smooth = moll.apply(&raw)?;
    let mut coarse = ScalarField::zeros(grid);
    let nn = grid.num_nodes();
    let vals = coarse.values_mut();
    for idx in 0..nn {
        let mi = grid.multi_index(idx);
        let mut fi = [0usize; MAX_DIM];
        for ax in 0..d {
            fi[ax] = 4 * mi[ax];
        }
        vals[idx] = smooth.values()[fine.flat_index(&fi)];
    }
    Ok(coarse)
}

/// The fixed anisotropy factor used by generated diffusions: identity in
/// d = 1, identity plus half a rank-one in d >= 2 (eigenvalues 1 and 3/2).
fn anisotropy(d: usize, i: usize, j: usize) -> f64 {
    let delta = if i == j { 1.0 } else { 0.0 };
    if d == 1 {
        delta
    } else {
        delta + 0.5 / d as f64
    }
}

/// Build a = alpha I + g(x) P from a nonnegative scalar profile g and the
/// fixed unit-scale anisotropy P.
fn diffusion_from_profile(grid: Grid, alpha: f64, g: &ScalarField) -> MatrixField {
    let d = grid.dim();
    let mut a = MatrixField::scaled_identity(grid, alpha);
    for i in 0..d {
        for j in 0..=i {
            let pij = anisotropy(d, i, j);
            if pij == 0.0 {
                continue;
            }
            for (dst, src) in a.comp_mut(i, j).iter_mut().zip(g.values()) {
                *dst += pij * src;
            }
        }
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialKind {
    /// Positive periodic Gaussian bump at the box center, unit mass.
    Bump { width_frac: f64 },
    /// 1 + bounded random cosine mixture, strictly positive, unit mass.
    Trig { max_mode: usize },
    /// Windowed singular core of exponent gamma plus rough dressing; not
    /// normalized and not necessarily positive. gamma may be negative as
    /// long as the profile stays q-integrable: gamma > -d/q.
    Rough {
        gamma: f64,
        /// Per-octave growth of the dressing (see [`GenParams`]).
        dressing_growth: f64,
        dressing_amp: f64,
    },
}

/// Deterministic initial datum / test profile of the requested kind.
pub fn gen_initial(
    grid: Grid,
    kind: InitialKind,
    q: f64,
    seed: u64,
) -> Result<ScalarField, CoreError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x1d07_c0de);
    let d = grid.dim();
    let len = grid.length();
    match kind {
        InitialKind::Bump { width_frac } => {
            let w = width_frac * len;
            let c = 0.5 * len;
            let f = ScalarField::from_fn(grid, |x| {
                let mut acc = 0.0;
                for ax in 0..d {
                    let dz = grid.wrap_dist(c, x[ax]);
                    acc += dz * dz;
                }
                libm::exp(-acc / (2.0 * w * w))
            })?;
            let mass = f.integral();
            Ok(f.scaled(1.0 / mass))
        }
        InitialKind::Trig { max_mode } => {
            let waves = draw_smooth_waves(&mut rng, d, len, max_mode.max(1), 6, 1.0);
            let bound = sup_bound(&waves);
            let osc = sample_waves(grid, &waves);
            let mut out = ScalarField::constant(grid, 1.0);
            out.axpy(0.5 / bound.max(1e-300), &osc)?;
            let mass = out.integral();
            Ok(out.scaled(1.0 / mass))
        }
        InitialKind::Rough {
            gamma,
            dressing_growth,
            dressing_amp,
        } => {
            if q.is_finite() {
                let lo = -(d as f64) / q;
                if gamma <= lo || gamma >= 1.0 {
                    return Err(CoreError::GammaOutOfRange {
                        gamma,
                        lo,
                        hi: 1.0,
                    });
                }
            }
            let mut x0 = [0.0f64; MAX_DIM];
            for item in x0.iter_mut().take(d) {
                *item = rand_in(&mut rng, 0.35, 0.65);
            }
            let dress = draw_dressing_waves(&mut rng, d, len, 48, dressing_growth, dressing_amp);
            let core = singular_core(grid, &x0, gamma)?;
            let mut out = core;
            out.axpy(1.0, &sample_waves(grid, &dress))?;
            Ok(out)
        }
    }
}

/// Deterministic coefficient generator. Identical (class, grid-shape,
/// params, seed) inputs produce bit-identical fields; the random draws are
/// independent of the grid resolution.
pub fn gen_coefficients(
    class: RegularityClass,
    grid: Grid,
    params: &GenParams,
    seed: u64,
) -> Result<CoefficientSet, CoreError> {
    let d = grid.dim();
    let len = grid.length();
    if class == RegularityClass::DivFree2d && d != 2 {
        return Err(CoreError::ClassNeedsDim {
            class: "divfree_2d",
            needs: 2,
            d,
        });
    }
    if class == RegularityClass::W1pSingular {
        let lo = (1.0 - d as f64 / params.p).max(0.0);
        if params.gamma <= lo || params.gamma >= 1.0 {
            return Err(CoreError::GammaOutOfRange {
                gamma: params.gamma,
                lo,
                hi: 1.0,
            });
        }
    }
    let slices = params.slices.max(1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut b_slices = Vec::with_capacity(slices);
    let mut a_slices = Vec::with_capacity(slices);
    for _ in 0..slices {
        let (b, a) = match class {
            RegularityClass::Smooth => {
                let mut comps = Vec::with_capacity(d);
                for _ in 0..d {
                    let w = draw_smooth_waves(&mut rng, d, len, params.max_mode, 6, params.drift_amp);
                    comps.push(sample_waves(grid, &w));
                }
                let b = VectorField::from_components(grid, comps)?;
                let gw = draw_smooth_waves(&mut rng, d, len, params.max_mode, 6, params.diff_amp);
                let shift = sup_bound(&gw);
                let mut g = sample_waves(grid, &gw);
                let ones = ScalarField::constant(grid, shift);
                g.axpy(1.0, &ones)?;
                (b, diffusion_from_profile(grid, params.alpha, &g))
            }
            RegularityClass::Lipschitz => {
                let mut comps = Vec::with_capacity(d);
                for _ in 0..d {
                    let mut offs = [0.0f64; MAX_DIM];
                    let mut amps = [0.0f64; MAX_DIM];
                    for ax in 0..d {
                        offs[ax] = rand_in(&mut rng, 0.0, 1.0);
                        amps[ax] = params.drift_amp * rand_in(&mut rng, 0.3, 1.0);
                    }
                    comps.push(ScalarField::from_fn(grid, |x| {
                        let mut acc = 0.0;
                        for ax in 0..d {
                            acc += amps[ax] * triangle(x[ax] / len - offs[ax]);
                        }
                        acc
                    })?);
                }
                let b = VectorField::from_components(grid, comps)?;
                let mut offs = [0.0f64; MAX_DIM];
                let mut amps = [0.0f64; MAX_DIM];
                for ax in 0..d {
                    offs[ax] = rand_in(&mut rng, 0.0, 1.0);
                    amps[ax] = params.diff_amp * rand_in(&mut rng, 0.3, 1.0);
                }
                let g = ScalarField::from_fn(grid, |x| {
                    let mut acc = 0.0;
                    for ax in 0..d {
                        // (triangle + 1)/2 keeps each term nonnegative.
                        acc += amps[ax] * 0.5 * (triangle(x[ax] / len - offs[ax]) + 1.0);
                    }
                    acc
                })?;
                (b, diffusion_from_profile(grid, params.alpha, &g))
            }
            RegularityClass::W1pSingular => {
                let mut x0a = [0.0f64; MAX_DIM];
                for item in x0a.iter_mut().take(d) {
                    *item = rand_in(&mut rng, 0.35, 0.65);
                }
                let dress_a = draw_dressing_waves(
                    &mut rng,
                    d,
                    len,
                    params.rough_cutoff,
                    params.dressing_growth,
                    params.dressing_amp * params.diff_amp,
                );
                let b = if params.rough_drift {
                    let mut x0b = [0.0f64; MAX_DIM];
                    for item in x0b.iter_mut().take(d) {
                        *item = rand_in(&mut rng, 0.35, 0.65);
                    }
                    let mut comps = Vec::with_capacity(d);
                    for _ in 0..d {
                        let scale = params.drift_amp * rand_in(&mut rng, 0.5, 1.0);
                        let dress = draw_dressing_waves(
                            &mut rng,
                            d,
                            len,
                            params.rough_cutoff,
                            params.dressing_growth,
                            params.dressing_amp * params.drift_amp,
                        );
                        let mut comp = singular_core(grid, &x0b, params.gamma - 1.0)?;
                        // r^(gamma-1) reaches ~ (h/8)^(gamma-1); rescale so the
                        // bounded dressing still registers next to the spike.
                        let comp_scaled = comp.scaled(0.25 * scale);
                        comp = comp_scaled;
                        comp.axpy(1.0, &sample_waves(grid, &dress))?;
                        comps.push(comp);
                    }
                    VectorField::from_components(grid, comps)?
                } else {
                    let mut comps = Vec::with_capacity(d);
                    for _ in 0..d {
                        let w = draw_smooth_waves(
                            &mut rng,
                            d,
                            len,
                            params.max_mode,
                            6,
                            params.drift_amp,
                        );
                        comps.push(sample_waves(grid, &w));
                    }
                    VectorField::from_components(grid, comps)?
                };
                let dress_field = sample_waves(grid, &dress_a);
                let shift = sup_bound(&dress_a);
                let mut g = singular_core(grid, &x0a, params.gamma)?;
                let g_scaled = g.scaled(params.diff_amp);
                g = g_scaled;
                g.axpy(1.0, &dress_field)?;
                g.axpy(1.0, &ScalarField::constant(grid, shift))?;
                (b, diffusion_from_profile(grid, params.alpha, &g))
            }
            RegularityClass::BoundedRough => {
                let octaves = (usize::BITS - params.rough_cutoff.max(1).leading_zeros()) as f64;
                let flat_amp = |amp: f64| amp / octaves.max(1.0);
                let mut comps = Vec::with_capacity(d);
                for _ in 0..d {
                    let w = draw_dressing_waves(
                        &mut rng,
                        d,
                        len,
                        params.rough_cutoff,
                        0.0,
                        flat_amp(params.drift_amp),
                    );
                    comps.push(sample_waves(grid, &w));
                }
                let b = VectorField::from_components(grid, comps)?;
                // a = alpha I + sigma sigma^T with sigma a bounded rough
                // d x d field; the product is symmetric and nonnegative.
                let mut sigma: Vec<ScalarField> = Vec::with_capacity(d * d);
                for _ in 0..d * d {
                    let w = draw_dressing_waves(
                        &mut rng,
                        d,
                        len,
                        params.rough_cutoff,
                        0.0,
                        flat_amp(params.diff_amp),
                    );
                    sigma.push(sample_waves(grid, &w));
                }
                let nn = grid.num_nodes();
                let mut a = MatrixField::scaled_identity(grid, params.alpha);
                for i in 0..d {
                    for j in 0..=i {
                        let comp = a.comp_mut(i, j);
                        for idx in 0..nn {
                            let mut acc = 0.0;
                            for k in 0..d {
                                acc += sigma[i * d + k].values()[idx]
                                    * sigma[j * d + k].values()[idx];
                            }
                            comp[idx] += acc;
                        }
                    }
                }
                (b, a)
            }
            RegularityClass::DivFree2d => {
                let w = draw_smooth_waves(&mut rng, d, len, params.max_mode, 6, params.drift_amp);
                let psi = sample_waves(grid, &w);
                let dpsi_dx = partial(&psi, 0);
                let dpsi_dy = partial(&psi, 1);
                let b = VectorField::from_components(grid, alloc::vec![dpsi_dy.scaled(-1.0), dpsi_dx])?;
                let gw = draw_smooth_waves(&mut rng, d, len, params.max_mode, 6, params.diff_amp);
                let shift = sup_bound(&gw);
                let mut g = sample_waves(grid, &gw);
                g.axpy(1.0, &ScalarField::constant(grid, shift))?;
                (b, diffusion_from_profile(grid, params.alpha, &g))
            }
        };
        b_slices.push(b);
        a_slices.push(a);
    }
    let set = CoefficientSet::new(grid, b_slices, a_slices, params.alpha, class, params.p)?;
    debug_assert!(set.ellipticity()? >= params.alpha - 1e-12);
    Ok(set)
}

/// A labelled experiment: coefficients, initial datum, and the declared
/// integrability exponent q of the initial datum.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub label: String,
    pub coeffs: CoefficientSet,
    pub u0: ScalarField,
    pub q: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn validate_basic(&self) -> Result<(), CoreError> {
        same_grid(&self.coeffs.grid, self.u0.grid(), "scenario initial datum")?;
        if self.q.is_nan() || self.q < 1.0 {
            return Err(CoreError::BadExponent { p: self.q });
        }
        Ok(())
    }
}

/// Grid-free description of a scenario. Because the generators draw
/// independently of resolution, realizing the same recipe on two grids
/// samples the same continuum coefficients, which is what refinement
/// studies need.
#[derive(Debug, Clone)]
pub struct ScenarioRecipe {
    pub label: String,
    pub dim: usize,
    pub len: f64,
    pub class: RegularityClass,
    pub params: GenParams,
    pub initial: InitialKind,
    pub q: f64,
    pub seed: u64,
}

impl ScenarioRecipe {
    pub fn realize(&self, n: usize) -> Result<Scenario, CoreError> {
        let grid = Grid::new(self.dim, n, self.len)?;
        let coeffs = gen_coefficients(self.class, grid, &self.params, self.seed)?;
        let u0 = gen_initial(grid, self.initial, self.q, self.seed)?;
        let scen = Scenario {
            label: self.label.clone(),
            coeffs,
            u0,
            q: self.q,
            seed: self.seed,
        };
        scen.validate_basic()?;
        Ok(scen)
    }
}
