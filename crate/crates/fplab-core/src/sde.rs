//! Euler-Maruyama particle simulation of the diffusion process whose law
//! the product-form equation transports, plus the histogram comparison that
//! closes the loop against the grid solver. Drift and noise coefficients at
//! particle positions come from multilinear interpolation of the same grid
//! fields the solver consumes, so both sides discretize identical data.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::coeffs::CoefficientSet;
use crate::error::CoreError;
use crate::field::{same_grid, MatrixField, ScalarField};
use crate::grid::{Grid, MAX_DIM};
use crate::solver::Solution;

/// Particles per generator stream. Batches evolve on independent streams
/// derived from the master seed and merge in batch order, so results do not
/// depend on how the batches are scheduled.
const BATCH: usize = 8192;

/// Stream ids used while drawing initial positions; evolution uses the
/// plain batch index. Keeping the two spaces disjoint means placement and
/// Brownian increments never share random bytes.
const SAMPLE_STREAM_BASE: u64 = 1 << 63;

#[derive(Debug, Clone)]
pub struct SdeConfig {
    pub n_particles: usize,
    pub dt_sde: f64,
    pub seed: u64,
    /// Histogram resolution for exported densities; comparisons against a
    /// solved field always bin on that field's own grid.
    pub bins: usize,
}

impl SdeConfig {
    /// Default histogram resolution: one bin per grid cell.
    pub fn for_grid(n_particles: usize, dt_sde: f64, seed: u64, grid: &Grid) -> Self {
        SdeConfig {
            n_particles,
            dt_sde,
            seed,
            bins: grid.n(),
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.n_particles == 0 {
            return Err(CoreError::NoParticles);
        }
        if !(self.dt_sde > 0.0 && self.dt_sde.is_finite()) {
            return Err(CoreError::BadConfig {
                msg: format!("particle step {:e} must be positive", self.dt_sde),
            });
        }
        if self.bins < 16 {
            return Err(CoreError::BadConfig {
                msg: format!("{} histogram bins is too coarse (need at least 16)", self.bins),
            });
        }
        Ok(())
    }
}

/// A swarm of particle positions in the periodic box, flat-packed particle
/// by particle. Carries the master seed it was built from and the physical
/// time its empirical law represents.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    box_len: f64,
    time: f64,
    master_seed: u64,
    /// True when the initial density needed renormalization beyond 1e-6.
    renormalized: bool,
    positions: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn n_particles(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn box_len(&self) -> f64 {
        self.box_len
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn was_renormalized(&self) -> bool {
        self.renormalized
    }

    /// Flat positions, `dim` coordinates per particle.
    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Relabel the represented time, e.g. for an ensemble resampled from a
    /// terminal density.
    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }
}

fn wrap(x: f64, l: f64) -> f64 {
    let mut r = x % l;
    if r < 0.0 {
        r += l;
    }
    if r >= l {
        r = 0.0;
    }
    r
}

/// Periodic multilinear interpolation of nodal values at a wrapped position.
fn interp(grid: &Grid, vals: &[f64], pos: &[f64]) -> f64 {
    let n = grid.n();
    let h = grid.spacing();
    let d = grid.dim();
    let mut base = [0usize; MAX_DIM];
    let mut frac = [0.0f64; MAX_DIM];
    for ax in 0..d {
        let s = pos[ax] / h;
        let k = libm::floor(s);
        base[ax] = (k as i64).rem_euclid(n as i64) as usize;
        frac[ax] = s - k;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut w = 1.0;
        let mut m = [0usize; MAX_DIM];
        for ax in 0..d {
            if corner >> ax & 1 == 1 {
                w *= frac[ax];
                m[ax] = (base[ax] + 1) % n;
            } else {
                w *= 1.0 - frac[ax];
                m[ax] = base[ax];
            }
        }
        if w != 0.0 {
            acc += w * vals[grid.flat_index(&m)];
        }
    }
    acc
}

fn cholesky(m: [[f64; 3]; 3], d: usize) -> Result<[[f64; 3]; 3], f64> {
    let mut l = [[0.0f64; 3]; 3];
    for i in 0..d {
        for j in 0..=i {
            let mut s = m[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > 0.0) {
                    return Err(s);
                }
                l[i][i] = libm::sqrt(s);
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

/// Lower-triangular factor of the diffusion matrix at one node, so that the
/// factor times its transpose reconstructs the matrix.
pub fn sigma_from_a(a: &MatrixField, node: usize) -> Result<[[f64; 3]; 3], CoreError> {
    let d = a.grid().dim();
    cholesky(a.at_node(node), d).map_err(|pivot| CoreError::NotPositiveDefinite { node, pivot })
}

/// Nodal Cholesky factors of one diffusion slice, one flat array per
/// lower-triangle entry in row-major (i, j <= i) order.
fn sigma_table(a: &MatrixField) -> Result<Vec<Vec<f64>>, CoreError> {
    let grid = a.grid();
    let d = grid.dim();
    let nn = grid.num_nodes();
    let ntri = d * (d + 1) / 2;
    let mut table = vec![vec![0.0f64; nn]; ntri];
    for node in 0..nn {
        let l = sigma_from_a(a, node)?;
        let mut t = 0;
        for i in 0..d {
            for j in 0..=i {
                table[t][node] = l[i][j];
                t += 1;
            }
        }
    }
    Ok(table)
}

/// Draw particle positions with law proportional to the nonnegative part
/// of `u0`: inverse-CDF on the piecewise-linear density in one dimension,
/// rejection against the nodal maximum in higher dimensions. The draw is
/// reproducible for a fixed seed.
pub fn sample_initial(
    u0: &ScalarField,
    n_particles: usize,
    seed: u64,
) -> Result<ParticleEnsemble, CoreError> {
    if n_particles == 0 {
        return Err(CoreError::NoParticles);
    }
    let grid = *u0.grid();
    let d = grid.dim();
    let vol = grid.cell_volume();
    let mut pos_mass = 0.0;
    let mut neg_mass = 0.0;
    for &v in u0.values() {
        if v >= 0.0 {
            pos_mass += v;
        } else {
            neg_mass -= v;
        }
    }
    pos_mass *= vol;
    neg_mass *= vol;
    if pos_mass <= 0.0 {
        return Err(CoreError::BadConfig {
            msg: format!("initial density has no positive mass (integral {pos_mass:e})"),
        });
    }
    let fraction = neg_mass / pos_mass;
    if fraction > 1e-6 {
        return Err(CoreError::NegativeInitialMass { fraction });
    }
    // Sampling normalizes the clipped density implicitly; flag drifts a
    // caller may want to know about.
    let renormalized = (pos_mass - neg_mass - 1.0).abs() > 1e-6;
    let clipped: Vec<f64> = u0.values().iter().map(|v| v.max(0.0)).collect();

    let mut positions = vec![0.0f64; n_particles * d];
    if d == 1 {
        let n = grid.n();
        let h = grid.spacing();
        // Cumulative integrals of the periodic piecewise-linear density.
        let mut cum = vec![0.0f64; n + 1];
        for k in 0..n {
            let seg = 0.5 * h * (clipped[k] + clipped[(k + 1) % n]);
            cum[k + 1] = cum[k] + seg;
        }
        let total = cum[n];
        for batch_start in (0..n_particles).step_by(BATCH) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(SAMPLE_STREAM_BASE | (batch_start / BATCH) as u64);
            for p in batch_start..(batch_start + BATCH).min(n_particles) {
                let v = rng.random::<f64>() * total;
                // First segment whose cumulative integral exceeds v; zero
                // segments are skipped automatically.
                let mut lo = 0usize;
                let mut hi = n;
                while lo + 1 < hi {
                    let mid = (lo + hi) / 2;
                    if cum[mid] <= v {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let k = lo;
                let r = v - cum[k];
                let u_l = clipped[k];
                let slope = (clipped[(k + 1) % n] - u_l) / h;
                let t = if slope.abs() * h <= 1e-14 * u_l.max(1e-300) {
                    r / u_l.max(1e-300)
                } else {
                    let disc = (u_l * u_l + 2.0 * slope * r).max(0.0);
                    (libm::sqrt(disc) - u_l) / slope
                };
                positions[p] = wrap(k as f64 * h + t.clamp(0.0, h), grid.length());
            }
        }
    } else {
        let umax = clipped.iter().fold(0.0f64, |m, v| m.max(*v));
        for batch_start in (0..n_particles).step_by(BATCH) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(SAMPLE_STREAM_BASE | (batch_start / BATCH) as u64);
            for p in batch_start..(batch_start + BATCH).min(n_particles) {
                let slot = &mut positions[p * d..(p + 1) * d];
                loop {
                    for x in slot.iter_mut() {
                        *x = rng.random::<f64>() * grid.length();
                    }
                    // Multilinear interpolation never exceeds the nodal max,
                    // so the acceptance ratio is a genuine probability.
                    let w = interp(&grid, &clipped, slot) / umax;
                    if rng.random::<f64>() < w {
                        break;
                    }
                }
            }
        }
    }
    Ok(ParticleEnsemble {
        dim: d,
        box_len: grid.length(),
        time: 0.0,
        master_seed: seed,
        renormalized,
        positions,
    })
}

/// Evolve the ensemble by Euler-Maruyama over the horizon of `tg`:
/// position += drift * dt + sigma * sqrt(dt) * xi, with xi standard normal
/// and every coordinate wrapped back into the box after the step. The
/// particle step is `cfg.dt_sde` rounded down so the horizon divides evenly;
/// it must not exceed the grid solver's step.
pub fn simulate(
    c: &CoefficientSet,
    ens: &ParticleEnsemble,
    tg: crate::grid::TimeGrid,
    cfg: &SdeConfig,
) -> Result<ParticleEnsemble, CoreError> {
    cfg.validate()?;
    let grid = c.grid;
    let d = grid.dim();
    if ens.dim != d || (ens.box_len - grid.length()).abs() > 1e-12 * grid.length() {
        return Err(CoreError::GridMismatch {
            context: "particle ensemble vs coefficient grid",
        });
    }
    let ell = c.ellipticity()?;
    if !(c.alpha > 0.0) || ell < c.alpha - 1e-9 * c.alpha.max(1.0) {
        return Err(CoreError::BadConfig {
            msg: format!(
                "noise floor violated: diffusion ellipticity {ell:.6e} below declared {:.6e}",
                c.alpha
            ),
        });
    }
    if cfg.dt_sde > tg.dt() * (1.0 + 1e-12) {
        return Err(CoreError::BadConfig {
            msg: format!(
                "particle step {:e} exceeds the grid solver step {:e}",
                cfg.dt_sde,
                tg.dt()
            ),
        });
    }
    let horizon = tg.horizon();
    let steps = (libm::ceil(horizon / cfg.dt_sde - 1e-12) as usize).max(1);
    let dt = horizon / steps as f64;
    let sqrt_dt = libm::sqrt(dt);

    let sigmas: Vec<Vec<Vec<f64>>> = c
        .a
        .iter()
        .map(|a| sigma_table(a))
        .collect::<Result<_, _>>()?;

    let n_particles = ens.n_particles();
    let mut positions = ens.positions.clone();
    let l = grid.length();
    for batch_start in (0..n_particles).step_by(BATCH) {
        let batch_end = (batch_start + BATCH).min(n_particles);
        let mut rng = ChaCha12Rng::seed_from_u64(ens.master_seed);
        rng.set_stream((batch_start / BATCH) as u64);
        for step in 0..steps {
            let t = step as f64 * dt;
            let si = c.slice_index(t, horizon);
            let bf = &c.b[si];
            let sig = &sigmas[si];
            for p in batch_start..batch_end {
                let slot = &mut positions[p * d..(p + 1) * d];
                let mut xi = [0.0f64; MAX_DIM];
                for x in xi.iter_mut().take(d) {
                    *x = rng.sample(StandardNormal);
                }
                let mut dx = [0.0f64; MAX_DIM];
                let mut t_idx = 0;
                for i in 0..d {
                    dx[i] = interp(&grid, bf.comp(i), slot) * dt;
                    for j in 0..=i {
                        dx[i] += interp(&grid, &sig[t_idx], slot) * sqrt_dt * xi[j];
                        t_idx += 1;
                    }
                }
                for i in 0..d {
                    let x = wrap(slot[i] + dx[i], l);
                    if !x.is_finite() {
                        return Err(CoreError::NonFinite {
                            context: "particle position",
                            index: p,
                        });
                    }
                    slot[i] = x;
                }
            }
        }
    }
    Ok(ParticleEnsemble {
        dim: d,
        box_len: l,
        time: ens.time + horizon,
        master_seed: ens.master_seed,
        renormalized: ens.renormalized,
        positions,
    })
}

/// Histogram-versus-field comparison report.
#[derive(Debug, Clone)]
pub struct LawComparison {
    /// L^1 distance between the empirical density and the solved field.
    pub distance: f64,
    /// Monte-Carlo resolution limit, sqrt(bins / N): distances at or below
    /// this scale are statistical noise.
    pub floor: f64,
    pub bins: usize,
    pub n_particles: usize,
}

/// Bin the ensemble on the solution's own grid (one bin per cell, centered
/// on the nodes) and return the L^1 distance between the empirical density
/// and the terminal solved field, together with the statistical floor.
pub fn law_compare(
    sol: &Solution,
    ens: &ParticleEnsemble,
    grid: &Grid,
) -> Result<LawComparison, CoreError> {
    same_grid(grid, sol.grid(), "law comparison mesh")?;
    let d = grid.dim();
    if ens.dim != d || (ens.box_len - grid.length()).abs() > 1e-12 * grid.length() {
        return Err(CoreError::GridMismatch {
            context: "particle ensemble vs comparison mesh",
        });
    }
    let horizon = sol.horizon();
    if (ens.time - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(CoreError::BadConfig {
            msg: format!(
                "ensemble represents time {} but the field is at time {horizon}",
                ens.time
            ),
        });
    }
    let n = grid.n();
    let h = grid.spacing();
    let nn = grid.num_nodes();
    let mut counts = vec![0u64; nn];
    let n_particles = ens.n_particles();
    for p in 0..n_particles {
        let slot = ens.position(p);
        let mut m = [0usize; MAX_DIM];
        for ax in 0..d {
            m[ax] = (libm::round(slot[ax] / h) as usize) % n;
        }
        counts[grid.flat_index(&m)] += 1;
    }
    let vol = grid.cell_volume();
    let scale = 1.0 / (n_particles as f64 * vol);
    let u_t = sol.final_field().values();
    let mut distance = 0.0;
    for (cnt, u) in counts.iter().zip(u_t) {
        distance += (*cnt as f64 * scale - u).abs() * vol;
    }
    Ok(LawComparison {
        distance,
        floor: libm::sqrt(nn as f64 / n_particles as f64),
        bins: nn,
        n_particles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::RegularityClass;
    use crate::field::VectorField;
    use crate::grid::TimeGrid;
    use crate::solver::{solve_fp, SolverConfig};
    use approx::assert_relative_eq;
    use core::f64::consts::{PI, TAU};

    fn grid1(n: usize) -> Grid {
        Grid::new(1, n, TAU).unwrap()
    }

    #[test]
    fn cholesky_closed_forms() {
        let g = grid1(16);
        let a = MatrixField::scaled_identity(g, 4.0);
        let s = sigma_from_a(&a, 0).unwrap();
        assert_relative_eq!(s[0][0], 2.0);

        let g2 = Grid::new(2, 16, TAU).unwrap();
        let id = MatrixField::scaled_identity(g2, 1.0);
        let s = sigma_from_a(&id, 3).unwrap();
        assert_eq!((s[0][0], s[1][0], s[1][1]), (1.0, 0.0, 1.0));

        let a2 = MatrixField::from_lower_fn(g2, |i, j, _| if i == j { 2.0 } else { 1.0 }).unwrap();
        let s = sigma_from_a(&a2, 7).unwrap();
        assert_relative_eq!(s[0][0], libm::sqrt(2.0), max_relative = 1e-14);
        assert_relative_eq!(s[1][0], 1.0 / libm::sqrt(2.0), max_relative = 1e-14);
        assert_relative_eq!(s[1][1], libm::sqrt(1.5), max_relative = 1e-14);
        // Reconstruction: sigma sigma^T = a entrywise.
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += s[i][k] * s[j][k];
                }
                let want = if i == j { 2.0 } else { 1.0 };
                assert_relative_eq!(acc, want, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_reconstructs_generated_diffusion() {
        let mut params = crate::coeffs::GenParams::default();
        params.p = 8.0;
        let grid = Grid::new(2, 32, TAU).unwrap();
        let c = crate::coeffs::gen_coefficients(
            RegularityClass::W1pSingular,
            grid,
            &params,
            42,
        )
        .unwrap();
        let a = &c.a[0];
        let d = 2;
        let mut worst = 0.0f64;
        for node in (0..grid.num_nodes()).step_by(17) {
            let s = sigma_from_a(a, node).unwrap();
            let m = a.at_node(node);
            let mut norm = 0.0f64;
            let mut err = 0.0f64;
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += s[i][k] * s[j][k];
                    }
                    err = err.max((acc - m[i][j]).abs());
                    norm = norm.max(m[i][j].abs());
                }
            }
            worst = worst.max(err / norm);
        }
        assert!(worst <= 1e-12, "factor reconstruction error {worst:e}");
    }

    #[test]
    fn cholesky_rejects_indefinite_nodes() {
        let g2 = Grid::new(2, 16, TAU).unwrap();
        // Eigenvalues 3 and -1: positive trace, negative determinant.
        let a = MatrixField::from_lower_fn(g2, |i, j, _| if i == j { 1.0 } else { 2.0 }).unwrap();
        match sigma_from_a(&a, 5) {
            Err(CoreError::NotPositiveDefinite { node, pivot }) => {
                assert_eq!(node, 5);
                assert!(pivot <= 0.0, "failing pivot {pivot}");
            }
            other => panic!("expected indefinite-node error, got {other:?}"),
        }
    }

    #[test]
    fn uniform_sampling_passes_ks_test() {
        let grid = grid1(128);
        let u0 = ScalarField::constant(grid, 1.0 / TAU);
        let n = 20_000usize;
        let ens = sample_initial(&u0, n, 314).unwrap();
        let mut xs: Vec<f64> = ens.positions().to_vec();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut ks = 0.0f64;
        for (i, &x) in xs.iter().enumerate() {
            let f = x / TAU;
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            ks = ks.max((f - lo).abs()).max((f - hi).abs());
        }
        // 1% critical value of the Kolmogorov-Smirnov statistic.
        let crit = 1.63 / libm::sqrt(n as f64);
        assert!(ks <= crit, "KS distance {ks} above {crit}");
        assert!(!ens.was_renormalized());
    }

    fn bump_density(grid: Grid, center: f64, width: f64) -> ScalarField {
        let raw = ScalarField::from_fn(grid, |x| {
            let r = (x[0] - center).abs().min(TAU - (x[0] - center).abs());
            libm::exp(-0.5 * (r / width) * (r / width))
        })
        .unwrap();
        let mass = raw.integral();
        raw.scaled(1.0 / mass)
    }

    #[test]
    fn narrow_bump_sample_mean_hits_center() {
        let grid = grid1(256);
        let width = 0.1;
        let u0 = bump_density(grid, PI, width);
        let n = 10_000usize;
        let ens = sample_initial(&u0, n, 2024).unwrap();
        let mean: f64 = ens.positions().iter().sum::<f64>() / n as f64;
        let tol = 3.0 * width / libm::sqrt(n as f64);
        assert!(
            (mean - PI).abs() <= tol,
            "sample mean {mean} vs center {PI} (tol {tol})"
        );
    }

    #[test]
    fn rejection_sampling_matches_marginals_in_2d() {
        let grid = Grid::new(2, 64, TAU).unwrap();
        let raw = ScalarField::from_fn(grid, |x| {
            let dx = (x[0] - PI).abs().min(TAU - (x[0] - PI).abs());
            let dy = (x[1] - PI).abs().min(TAU - (x[1] - PI).abs());
            libm::exp(-0.5 * (dx * dx + dy * dy) / (0.25 * 0.25))
        })
        .unwrap();
        let u0 = raw.scaled(1.0 / raw.integral());
        let n = 8_000usize;
        let ens = sample_initial(&u0, n, 99).unwrap();
        for ax in 0..2 {
            let mean: f64 = (0..n).map(|p| ens.position(p)[ax]).sum::<f64>() / n as f64;
            let tol = 3.0 * 0.25 / libm::sqrt(n as f64);
            assert!((mean - PI).abs() <= tol, "axis {ax} mean {mean}");
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let grid = grid1(64);
        let u0 = bump_density(grid, 2.0, 0.5);
        let a = sample_initial(&u0, 5000, 7).unwrap();
        let b = sample_initial(&u0, 5000, 7).unwrap();
        assert_eq!(a.positions(), b.positions());
        let c = sample_initial(&u0, 5000, 8).unwrap();
        assert_ne!(a.positions(), c.positions());
    }

    #[test]
    fn negative_density_is_refused() {
        let grid = grid1(64);
        let u0 = ScalarField::from_fn(grid, |x| libm::sin(x[0])).unwrap();
        match sample_initial(&u0, 100, 1) {
            Err(CoreError::NegativeInitialMass { fraction }) => {
                assert_relative_eq!(fraction, 1.0, max_relative = 1e-10);
            }
            other => panic!("expected negative-mass error, got {other:?}"),
        }
        assert!(matches!(
            sample_initial(&u0, 0, 1),
            Err(CoreError::NoParticles)
        ));
    }

    fn heat_coefficients(grid: Grid, diff: f64) -> CoefficientSet {
        let b = VectorField::zeros(grid);
        let a = MatrixField::scaled_identity(grid, diff);
        CoefficientSet::time_independent(b, a, diff, RegularityClass::Smooth, f64::INFINITY)
            .unwrap()
    }

    #[test]
    fn variance_grows_at_the_diffusion_rate() {
        // Pure diffusion with a = 2I: per-axis variance grows by 2t exactly.
        // Fixed seed; the 3-standard-error window makes the check stable.
        let grid = grid1(256);
        let c = heat_coefficients(grid, 2.0);
        let u0 = bump_density(grid, PI, 0.05);
        let n = 100_000usize;
        let ens0 = sample_initial(&u0, n, 11).unwrap();
        let horizon = 0.25;
        let tg = TimeGrid::new(horizon, 50).unwrap();
        let cfg = SdeConfig::for_grid(n, tg.dt(), 11, &grid);
        let ens = simulate(&c, &ens0, tg, &cfg).unwrap();
        let var = |xs: &ParticleEnsemble| {
            let mean: f64 = xs.positions().iter().sum::<f64>() / n as f64;
            xs.positions()
                .iter()
                .map(|x| (x - mean) * (x - mean))
                .sum::<f64>()
                / (n - 1) as f64
        };
        let v0 = var(&ens0);
        let vt = var(&ens);
        let expected = v0 + 2.0 * horizon;
        // Standard error of a variance estimate ~ var * sqrt(2 / n).
        let se = expected * libm::sqrt(2.0 / n as f64);
        assert!(
            (vt - expected).abs() <= 3.0 * se,
            "variance {vt} vs {expected} (3se = {})",
            3.0 * se
        );
        assert_relative_eq!(ens.time(), horizon);
    }

    #[test]
    fn constant_drift_moves_the_mean() {
        let grid = grid1(128);
        let b = VectorField::from_fn(grid, |_, _| 0.8).unwrap();
        let a = MatrixField::scaled_identity(grid, 1.0);
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = bump_density(grid, PI, 0.05);
        let n = 20_000usize;
        let ens0 = sample_initial(&u0, n, 5).unwrap();
        let horizon = 0.5;
        let tg = TimeGrid::new(horizon, 100).unwrap();
        let cfg = SdeConfig::for_grid(n, tg.dt(), 5, &grid);
        let ens = simulate(&c, &ens0, tg, &cfg).unwrap();
        // Shortest signed displacement per particle sidesteps the wrap.
        let mut mean_disp = 0.0;
        for p in 0..n {
            mean_disp += grid.wrap_dist(ens0.position(p)[0], ens.position(p)[0]);
        }
        mean_disp /= n as f64;
        let se = libm::sqrt(1.0 * horizon / n as f64);
        assert!(
            (mean_disp - 0.8 * horizon).abs() <= 3.0 * se,
            "mean displacement {mean_disp} vs {}",
            0.8 * horizon
        );
    }

    #[test]
    fn simulation_preconditions() {
        let grid = grid1(64);
        let u0 = bump_density(grid, PI, 0.3);
        let ens = sample_initial(&u0, 100, 1).unwrap();
        let tg = TimeGrid::new(0.1, 10).unwrap();

        // Declared noise floor above what the field delivers.
        let b = VectorField::zeros(grid);
        let a = MatrixField::scaled_identity(grid, 1.0);
        let c =
            CoefficientSet::time_independent(b, a, 2.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let cfg = SdeConfig::for_grid(100, tg.dt(), 1, &grid);
        assert!(matches!(
            simulate(&c, &ens, tg, &cfg),
            Err(CoreError::BadConfig { .. })
        ));

        // Particle step coarser than the grid solver step.
        let c_ok = heat_coefficients(grid, 1.0);
        let cfg_coarse = SdeConfig::for_grid(100, 0.02, 1, &grid);
        assert!(matches!(
            simulate(&c_ok, &ens, tg, &cfg_coarse),
            Err(CoreError::BadConfig { .. })
        ));

        // Histogram resolution floor.
        let mut cfg_bins = SdeConfig::for_grid(100, tg.dt(), 1, &grid);
        cfg_bins.bins = 8;
        assert!(cfg_bins.validate().is_err());

        // Ensemble from a different box.
        let other = Grid::new(1, 64, 1.0).unwrap();
        let u_other = ScalarField::constant(other, 1.0);
        let ens_other = sample_initial(&u_other, 100, 1).unwrap();
        assert!(matches!(
            simulate(&c_ok, &ens_other, tg, &cfg),
            Err(CoreError::GridMismatch { .. })
        ));
    }

    #[test]
    fn positions_stay_wrapped() {
        let grid = grid1(64);
        let b = VectorField::from_fn(grid, |_, _| 3.0).unwrap();
        let a = MatrixField::scaled_identity(grid, 1.0);
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = bump_density(grid, TAU - 0.2, 0.1);
        let ens0 = sample_initial(&u0, 2000, 3).unwrap();
        let tg = TimeGrid::new(1.0, 100).unwrap();
        let cfg = SdeConfig::for_grid(2000, tg.dt(), 3, &grid);
        let ens = simulate(&c, &ens0, tg, &cfg).unwrap();
        for &x in ens.positions() {
            assert!((0.0..TAU).contains(&x), "position {x} escaped the box");
        }
    }

    #[test]
    fn simulation_is_reproducible() {
        let grid = grid1(64);
        let c = heat_coefficients(grid, 1.0);
        let u0 = bump_density(grid, PI, 0.3);
        let ens0 = sample_initial(&u0, 3000, 17).unwrap();
        let tg = TimeGrid::new(0.2, 40).unwrap();
        let cfg = SdeConfig::for_grid(3000, tg.dt(), 17, &grid);
        let a = simulate(&c, &ens0, tg, &cfg).unwrap();
        let b = simulate(&c, &ens0, tg, &cfg).unwrap();
        assert_eq!(a.positions(), b.positions());
    }

    #[test]
    fn histogram_self_test_sits_at_the_statistical_floor() {
        let grid = grid1(128);
        let c = heat_coefficients(grid, 2.0);
        let u0 = bump_density(grid, PI, 0.4);
        let horizon = 0.25;
        let tg = TimeGrid::new(horizon, 250).unwrap();
        let mut scfg = SolverConfig::default();
        scfg.snapshot_every = 0;
        let sol = solve_fp(&c, &u0, tg, &scfg).unwrap();
        // Resample the terminal density itself: any residual distance is
        // pure Monte-Carlo noise.
        let n = 200_000usize;
        let ens = sample_initial(sol.final_field(), n, 400)
            .unwrap()
            .with_time(horizon);
        let cmp = law_compare(&sol, &ens, &grid).unwrap();
        assert!(
            cmp.distance <= 2.0 * cmp.floor,
            "self distance {} vs floor {}",
            cmp.distance,
            cmp.floor
        );
    }

    #[test]
    fn particle_law_matches_solved_heat_density() {
        let grid = grid1(128);
        let c = heat_coefficients(grid, 2.0);
        let u0 = bump_density(grid, PI, 0.4);
        let horizon = 0.5;
        let tg = TimeGrid::new(horizon, 250).unwrap();
        let mut scfg = SolverConfig::default();
        scfg.snapshot_every = 0;
        let sol = solve_fp(&c, &u0, tg, &scfg).unwrap();
        let n = 200_000usize;
        let ens0 = sample_initial(&u0, n, 1234).unwrap();
        let cfg = SdeConfig::for_grid(n, tg.dt(), 1234, &grid);
        let ens = simulate(&c, &ens0, tg, &cfg).unwrap();
        let cmp = law_compare(&sol, &ens, &grid).unwrap();
        assert!(
            cmp.distance <= 0.05,
            "law distance {} (floor {})",
            cmp.distance,
            cmp.floor
        );
    }

    #[test]
    fn law_distance_shrinks_as_particles_double() {
        let grid = grid1(64);
        let c = heat_coefficients(grid, 2.0);
        let u0 = bump_density(grid, PI, 0.4);
        let horizon = 0.25;
        let tg = TimeGrid::new(horizon, 125).unwrap();
        let mut scfg = SolverConfig::default();
        scfg.snapshot_every = 0;
        let sol = solve_fp(&c, &u0, tg, &scfg).unwrap();
        let mut last = f64::INFINITY;
        for (i, n) in [5_000usize, 10_000, 20_000, 40_000].iter().enumerate() {
            let ens0 = sample_initial(&u0, *n, 60 + i as u64).unwrap();
            let cfg = SdeConfig::for_grid(*n, tg.dt(), 60 + i as u64, &grid);
            let ens = simulate(&c, &ens0, tg, &cfg).unwrap();
            let cmp = law_compare(&sol, &ens, &grid).unwrap();
            assert!(
                cmp.distance < last,
                "distance {} did not improve on {last} at N = {n}",
                cmp.distance
            );
            last = cmp.distance;
        }
    }

    #[test]
    fn law_compare_demands_matching_times() {
        let grid = grid1(64);
        let c = heat_coefficients(grid, 1.0);
        let u0 = bump_density(grid, PI, 0.4);
        let tg = TimeGrid::new(0.5, 100).unwrap();
        let sol = solve_fp(&c, &u0, tg, &SolverConfig::default()).unwrap();
        let ens = sample_initial(&u0, 1000, 2).unwrap();
        assert!(matches!(
            law_compare(&sol, &ens, &grid),
            Err(CoreError::BadConfig { .. })
        ));
    }
}
