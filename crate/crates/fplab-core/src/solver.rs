//! IMEX time stepping for both forms of the transport-diffusion equation:
//! explicit conservative advective fluxes, implicit backward-Euler
//! diffusion solved matrix-free (conjugate gradient for the symmetric
//! divergence-form operator, BiCGStab for the product-form one). The
//! splitting keeps the discrete dissipation inequality unconditional, so a
//! failed energy audit indicts the advection step only. On top of the
//! stepper: per-exponent norm audits, gradient-budget audits, refinement
//! and coefficient-mollification studies, and a bounded renormalization
//! diagnostic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::coeffs::{
    effective_drift_slices, negative_divergence_budget, CoefficientSet, Scenario, ScenarioRecipe,
};
use crate::error::CoreError;
use crate::fft;
use crate::field::{same_grid, MatrixField, ScalarField, VectorField};
use crate::grid::{Grid, TimeGrid};
use crate::mollify::{KernelFamily, Mollifier};
use crate::norms::NormReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquationForm {
    /// Second derivatives act on the products a_ij u.
    Fp,
    /// The diffusion is div(a grad u) with the drift corrected accordingly.
    FpDiv,
}

impl EquationForm {
    pub fn label(&self) -> &'static str {
        match self {
            EquationForm::Fp => "fp",
            EquationForm::FpDiv => "fp_div",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fp" => Some(EquationForm::Fp),
            "fp_div" => Some(EquationForm::FpDiv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvectionScheme {
    /// Face-averaged centered flux: second order, not monotone.
    CenteredFlux,
    /// First-order upwind flux: monotone, keeps nonnegative data nonnegative
    /// under the advective CFL bound.
    UpwindFlux,
}

impl AdvectionScheme {
    pub fn label(&self) -> &'static str {
        match self {
            AdvectionScheme::CenteredFlux => "centered_flux",
            AdvectionScheme::UpwindFlux => "upwind_flux",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "centered_flux" => Some(AdvectionScheme::CenteredFlux),
            "upwind_flux" => Some(AdvectionScheme::UpwindFlux),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub form: EquationForm,
    pub scheme: AdvectionScheme,
    /// Relative residual target of the implicit diffusion solve.
    pub lin_tol: f64,
    pub max_iters: usize,
    /// Exponents whose norms are recorded at every step.
    pub q_list: Vec<f64>,
    /// Keep every k-th field in memory (0 = endpoints only).
    pub snapshot_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            form: EquationForm::FpDiv,
            scheme: AdvectionScheme::CenteredFlux,
            lin_tol: 1e-10,
            max_iters: 500,
            q_list: vec![2.0],
            snapshot_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !(self.lin_tol > 0.0 && self.lin_tol <= 1e-6) {
            return Err(CoreError::BadConfig {
                msg: format!("linear tolerance {:e} outside (0, 1e-6]", self.lin_tol),
            });
        }
        if self.max_iters == 0 {
            return Err(CoreError::BadConfig {
                msg: String::from("max_iters must be positive"),
            });
        }
        for &q in &self.q_list {
            if q.is_nan() || q < 1.0 {
                return Err(CoreError::BadExponent { p: q });
            }
        }
        Ok(())
    }
}

/// Time-stepped solution with per-step diagnostics. Diagnostics cover every
/// step; snapshots may be sparser (see [`SolverConfig::snapshot_every`]).
#[derive(Debug, Clone)]
pub struct Solution {
    grid: Grid,
    tg: TimeGrid,
    q_list: Vec<f64>,
    snapshots: Vec<ScalarField>,
    snapshot_steps: Vec<usize>,
    mass: Vec<f64>,
    lq: Vec<Vec<f64>>,
    grad_sq: Vec<f64>,
    min_u: Vec<f64>,
    iters: Vec<usize>,
}

impl Solution {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time_grid(&self) -> TimeGrid {
        self.tg
    }

    pub fn horizon(&self) -> f64 {
        self.tg.horizon()
    }

    pub fn steps(&self) -> usize {
        self.tg.steps()
    }

    pub fn step_times(&self) -> Vec<f64> {
        (0..=self.tg.steps()).map(|k| self.tg.time(k)).collect()
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    /// Largest deviation of the mass integral from its initial value.
    pub fn mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass
            .iter()
            .fold(0.0f64, |w, m| w.max((m - m0).abs()))
    }

    pub fn q_list(&self) -> &[f64] {
        &self.q_list
    }

    /// Per-step L^q norms, if q was in the configured list.
    pub fn lq_series(&self, q: f64) -> Option<&[f64]> {
        let qi = self
            .q_list
            .iter()
            .position(|&x| (x - q).abs() <= 1e-12 * x.abs().max(1.0) || (x == q))?;
        Some(&self.lq[qi])
    }

    /// Per-step squared L^2 norm of the gradient (spectral).
    pub fn grad_sq_series(&self) -> &[f64] {
        &self.grad_sq
    }

    /// Time integral of the squared gradient norm over the whole run.
    pub fn gradient_budget(&self) -> f64 {
        let cum = cumtrapz(&self.grad_sq, self.tg.dt());
        *cum.last().expect("diagnostics cover every step")
    }

    pub fn min_series(&self) -> &[f64] {
        &self.min_u
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iters
    }

    pub fn snapshots(&self) -> &[ScalarField] {
        &self.snapshots
    }

    pub fn snapshot_steps(&self) -> &[usize] {
        &self.snapshot_steps
    }

    pub fn snapshot_time(&self, i: usize) -> f64 {
        self.tg.time(self.snapshot_steps[i])
    }

    pub fn final_field(&self) -> &ScalarField {
        self.snapshots.last().expect("endpoints are always kept")
    }
}

/// Periodic neighbor tables per axis; the hot loops index these instead of
/// recomputing wrapped multi-indices.
struct Neighbors {
    plus: Vec<Vec<u32>>,
    minus: Vec<Vec<u32>>,
}

fn build_neighbors(grid: &Grid) -> Neighbors {
    let nn = grid.num_nodes();
    let d = grid.dim();
    let mut plus = Vec::with_capacity(d);
    let mut minus = Vec::with_capacity(d);
    for ax in 0..d {
        let mut vp = vec![0u32; nn];
        let mut vm = vec![0u32; nn];
        for idx in 0..nn {
            vp[idx] = grid.neighbor(idx, ax, 1) as u32;
            vm[idx] = grid.neighbor(idx, ax, -1) as u32;
        }
        plus.push(vp);
        minus.push(vm);
    }
    Neighbors { plus, minus }
}

/// out = div of the advective flux of u with velocity v. Fluxes telescope
/// around the torus, so the total mass of `out` vanishes to roundoff.
fn advective_divergence(
    grid: &Grid,
    nbr: &Neighbors,
    v: &VectorField,
    u: &[f64],
    scheme: AdvectionScheme,
    flux: &mut [f64],
    out: &mut [f64],
) {
    let d = grid.dim();
    let inv_h = 1.0 / grid.spacing();
    out.fill(0.0);
    for ax in 0..d {
        let vc = v.comp(ax);
        let np = &nbr.plus[ax];
        let nm = &nbr.minus[ax];
        match scheme {
            AdvectionScheme::CenteredFlux => {
                for idx in 0..u.len() {
                    let p = np[idx] as usize;
                    let vf = 0.5 * (vc[idx] + vc[p]);
                    flux[idx] = vf * 0.5 * (u[idx] + u[p]);
                }
            }
            AdvectionScheme::UpwindFlux => {
                for idx in 0..u.len() {
                    let p = np[idx] as usize;
                    let vf = 0.5 * (vc[idx] + vc[p]);
                    flux[idx] = if vf >= 0.0 { vf * u[idx] } else { vf * u[p] };
                }
            }
        }
        for idx in 0..u.len() {
            out[idx] += (flux[idx] - flux[nm[idx] as usize]) * inv_h;
        }
    }
}

/// out = (I + dt * D) x with D = -1/2 sum_ij d_i(a_ij d_j .): face-averaged
/// second differences on the diagonal, nested centered differences off it.
/// Symmetric, so the implicit step is a conjugate-gradient solve.
fn apply_divergence_form(
    grid: &Grid,
    nbr: &Neighbors,
    a: &MatrixField,
    dt: f64,
    x: &[f64],
    out: &mut [f64],
    g: &mut [f64],
    pw: &mut [f64],
) {
    let d = grid.dim();
    let h = grid.spacing();
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let half_dt = 0.5 * dt;
    out.copy_from_slice(x);
    for ax in 0..d {
        let aii = a.comp(ax, ax);
        let np = &nbr.plus[ax];
        let nm = &nbr.minus[ax];
        for idx in 0..x.len() {
            let p = np[idx] as usize;
            let m = nm[idx] as usize;
            let af_p = 0.5 * (aii[idx] + aii[p]);
            let af_m = 0.5 * (aii[idx] + aii[m]);
            let term = (af_p * (x[p] - x[idx]) - af_m * (x[idx] - x[m])) * inv_h2;
            out[idx] -= half_dt * term;
        }
    }
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let aij = a.comp(i, j);
            let npj = &nbr.plus[j];
            let nmj = &nbr.minus[j];
            for idx in 0..x.len() {
                g[idx] = (x[npj[idx] as usize] - x[nmj[idx] as usize]) * inv_2h;
            }
            for idx in 0..x.len() {
                pw[idx] = aij[idx] * g[idx];
            }
            let npi = &nbr.plus[i];
            let nmi = &nbr.minus[i];
            for idx in 0..x.len() {
                let term = (pw[npi[idx] as usize] - pw[nmi[idx] as usize]) * inv_2h;
                out[idx] -= half_dt * term;
            }
        }
    }
}

/// out = (I + dt * D) x with D = -1/2 sum_ij d_i d_j (a_ij x). Differences
/// of products: not symmetric for variable a, hence BiCGStab. For constant
/// a the stencils coincide with the divergence form node for node.
fn apply_product_form(
    grid: &Grid,
    nbr: &Neighbors,
    a: &MatrixField,
    dt: f64,
    x: &[f64],
    out: &mut [f64],
    g: &mut [f64],
    pw: &mut [f64],
) {
    let d = grid.dim();
    let h = grid.spacing();
    let inv_h2 = 1.0 / (h * h);
    let inv_2h = 0.5 / h;
    let half_dt = 0.5 * dt;
    out.copy_from_slice(x);
    for ax in 0..d {
        let aii = a.comp(ax, ax);
        for idx in 0..x.len() {
            pw[idx] = aii[idx] * x[idx];
        }
        let np = &nbr.plus[ax];
        let nm = &nbr.minus[ax];
        for idx in 0..x.len() {
            let term =
                (pw[np[idx] as usize] - 2.0 * pw[idx] + pw[nm[idx] as usize]) * inv_h2;
            out[idx] -= half_dt * term;
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let aij = a.comp(i, j);
            for idx in 0..x.len() {
                pw[idx] = aij[idx] * x[idx];
            }
            let npj = &nbr.plus[j];
            let nmj = &nbr.minus[j];
            for idx in 0..x.len() {
                g[idx] = (pw[npj[idx] as usize] - pw[nmj[idx] as usize]) * inv_2h;
            }
            let npi = &nbr.plus[i];
            let nmi = &nbr.minus[i];
            // d_ij and d_ji contribute equally, hence the factor 2.
            for idx in 0..x.len() {
                let term = (g[npi[idx] as usize] - g[nmi[idx] as usize]) * inv_2h;
                out[idx] -= dt * term;
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conjugate gradient with a caller-supplied operator. Starts from the
/// warm guess already in `x`; the Krylov corrections are built from the
/// initial residual, so any mean component of `x` survives untouched when
/// the operator is mean-preserving (both diffusion forms are).
fn cg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> Result<usize, CoreError> {
    let n = b.len();
    let bnorm = libm::sqrt(dot(b, b));
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let mut r = vec![0.0f64; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rr = dot(&r, &r);
    if libm::sqrt(rr) <= tol * bnorm {
        return Ok(0);
    }
    let mut p = r.clone();
    let mut ap = vec![0.0f64; n];
    for it in 1..=max_iters {
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if libm::sqrt(rr_next) <= tol * bnorm {
            return Ok(it);
        }
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(CoreError::LinearSolveFailed {
        iters: max_iters,
        residual: libm::sqrt(rr) / bnorm,
    })
}

/// BiCGStab for the non-symmetric product-form operator. Same warm-start
/// and mean-preservation properties as [`cg`].
fn bicgstab(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iters: usize,
) -> Result<usize, CoreError> {
    let n = b.len();
    let bnorm = libm::sqrt(dot(b, b));
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(0);
    }
    let mut r = vec![0.0f64; n];
    apply(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if libm::sqrt(dot(&r, &r)) <= tol * bnorm {
        return Ok(0);
    }
    let r0 = r.clone();
    let mut rho = 1.0f64;
    let mut alpha = 1.0f64;
    let mut omega = 1.0f64;
    let mut v = vec![0.0f64; n];
    let mut p = vec![0.0f64; n];
    let mut s = vec![0.0f64; n];
    let mut t = vec![0.0f64; n];
    for it in 1..=max_iters {
        let rho_next = dot(&r0, &r);
        if rho_next.abs() < 1e-300 {
            return Err(CoreError::LinearSolveFailed {
                iters: it,
                residual: libm::sqrt(dot(&r, &r)) / bnorm,
            });
        }
        let beta = (rho_next / rho) * (alpha / omega);
        rho = rho_next;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply(&p, &mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if libm::sqrt(dot(&s, &s)) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * p[i];
            }
            return Ok(it);
        }
        apply(&s, &mut t);
        let tt = dot(&t, &t);
        if tt < 1e-300 {
            return Err(CoreError::LinearSolveFailed {
                iters: it,
                residual: libm::sqrt(dot(&s, &s)) / bnorm,
            });
        }
        omega = dot(&t, &s) / tt;
        for i in 0..n {
            x[i] += alpha * p[i] + omega * s[i];
            r[i] = s[i] - omega * t[i];
        }
        if libm::sqrt(dot(&r, &r)) <= tol * bnorm {
            return Ok(it);
        }
    }
    Err(CoreError::LinearSolveFailed {
        iters: max_iters,
        residual: libm::sqrt(dot(&r, &r)) / bnorm,
    })
}

/// Squared L^2 norm of the spectral gradient (Nyquist column excluded, like
/// the centered spectral derivative itself).
fn grad_sq_spectral(f: &ScalarField) -> f64 {
    let grid = f.grid();
    let spec = fft::forward(f);
    let nn = grid.num_nodes() as f64;
    let scale = libm::pow(grid.length(), grid.dim() as f64) / (nn * nn);
    let n = grid.n();
    let mut acc = 0.0;
    for (idx, c) in spec.iter().enumerate() {
        let mut xi2 = 0.0;
        let mut rem = idx;
        for _ax in 0..grid.dim() {
            let m = rem % n;
            rem /= n;
            let xi = fft::deriv_wavenumber(grid, m);
            xi2 += xi * xi;
        }
        acc += xi2 * c.norm_sqr();
    }
    acc * scale
}

fn lq_of(values: &[f64], vol: f64, q: f64) -> f64 {
    if q == f64::INFINITY {
        return values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    if q == 2.0 {
        let s: f64 = values.iter().map(|v| v * v).sum();
        return libm::sqrt(s * vol);
    }
    if q == 1.0 {
        let s: f64 = values.iter().map(|v| v.abs()).sum();
        return s * vol;
    }
    let s: f64 = values.iter().map(|v| libm::pow(v.abs(), q)).sum();
    libm::pow(s * vol, 1.0 / q)
}

fn cumtrapz(values: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..values.len() {
        acc += 0.5 * (values[k - 1] + values[k]) * dt;
        out.push(acc);
    }
    out
}

/// Solve the divergence form: velocity = drift minus half the diffusion's
/// divergence, diffusion = div(a grad u). Overrides `cfg.form`.
pub fn solve_fp_div(
    c: &CoefficientSet,
    u0: &ScalarField,
    tg: TimeGrid,
    cfg: &SolverConfig,
) -> Result<Solution, CoreError> {
    let mut cfg = cfg.clone();
    cfg.form = EquationForm::FpDiv;
    solve_forced(c, u0, tg, &cfg, None)
}

/// Solve the product form: velocity = the drift itself, diffusion = second
/// differences of the products a_ij u. Overrides `cfg.form`.
pub fn solve_fp(
    c: &CoefficientSet,
    u0: &ScalarField,
    tg: TimeGrid,
    cfg: &SolverConfig,
) -> Result<Solution, CoreError> {
    let mut cfg = cfg.clone();
    cfg.form = EquationForm::Fp;
    solve_forced(c, u0, tg, &cfg, None)
}

/// Solve with the form taken from `cfg`.
pub fn solve(
    c: &CoefficientSet,
    u0: &ScalarField,
    tg: TimeGrid,
    cfg: &SolverConfig,
) -> Result<Solution, CoreError> {
    solve_forced(c, u0, tg, cfg, None)
}

/// Full entry point with an optional source term f(t, x), used by
/// manufactured-solution tests. Coefficients are frozen per step at the
/// midpoint time; the forcing is sampled there too.
pub fn solve_forced(
    c: &CoefficientSet,
    u0: &ScalarField,
    tg: TimeGrid,
    cfg: &SolverConfig,
    forcing: Option<&dyn Fn(f64, &[f64]) -> f64>,
) -> Result<Solution, CoreError> {
    cfg.validate()?;
    same_grid(&c.grid, u0.grid(), "solver initial datum")?;
    let grid = c.grid;
    let d = grid.dim();
    let nn = grid.num_nodes();
    let vol = grid.cell_volume();
    let ell = c.ellipticity()?;
    if !(c.alpha > 0.0) || ell < c.alpha - 1e-9 * c.alpha.max(1.0) {
        return Err(CoreError::BadConfig {
            msg: format!(
                "diffusion ellipticity {ell:.6e} is below the declared floor {:.6e}",
                c.alpha
            ),
        });
    }
    let tilde = effective_drift_slices(c)?;
    let vel: &[VectorField] = match cfg.form {
        EquationForm::FpDiv => &tilde,
        EquationForm::Fp => &c.b,
    };
    let vmax = vel.iter().fold(0.0f64, |m, f| m.max(f.max_norm()));
    let dt = tg.dt();
    if vmax > 0.0 {
        let dt_max = grid.spacing() / (2.0 * d as f64 * vmax);
        if dt > dt_max * (1.0 + 1e-9) {
            return Err(CoreError::CflViolation { dt, dt_max });
        }
    }

    let nbr = build_neighbors(&grid);
    let mut u = u0.values().to_vec();
    let mut adv = vec![0.0f64; nn];
    let mut flux = vec![0.0f64; nn];
    let mut rhs = vec![0.0f64; nn];
    let mut g = vec![0.0f64; nn];
    let mut pw = vec![0.0f64; nn];

    let steps = tg.steps();
    let mut sol = Solution {
        grid,
        tg,
        q_list: cfg.q_list.clone(),
        snapshots: Vec::new(),
        snapshot_steps: Vec::new(),
        mass: Vec::with_capacity(steps + 1),
        lq: vec![Vec::with_capacity(steps + 1); cfg.q_list.len()],
        grad_sq: Vec::with_capacity(steps + 1),
        min_u: Vec::with_capacity(steps + 1),
        iters: Vec::with_capacity(steps),
    };

    let record = |sol: &mut Solution, step: usize, u: &[f64]| -> Result<(), CoreError> {
        for (i, v) in u.iter().enumerate() {
            if !v.is_finite() {
                return Err(CoreError::NonFinite {
                    context: "solution field",
                    index: i,
                });
            }
        }
        sol.mass.push(u.iter().sum::<f64>() * vol);
        for qi in 0..sol.q_list.len() {
            let q = sol.q_list[qi];
            sol.lq[qi].push(lq_of(u, vol, q));
        }
        let uf = ScalarField::from_data(grid, u.to_vec())?;
        sol.grad_sq.push(grad_sq_spectral(&uf));
        sol.min_u
            .push(u.iter().fold(f64::INFINITY, |m, v| m.min(*v)));
        let keep = step == 0
            || step == steps
            || (cfg.snapshot_every != 0 && step % cfg.snapshot_every == 0);
        if keep {
            sol.snapshots.push(uf);
            sol.snapshot_steps.push(step);
        }
        Ok(())
    };

    record(&mut sol, 0, &u)?;
    for k in 0..steps {
        let t_half = (k as f64 + 0.5) * dt;
        let si = c.slice_index(t_half, tg.horizon());
        advective_divergence(&grid, &nbr, &vel[si], &u, cfg.scheme, &mut flux, &mut adv);
        for idx in 0..nn {
            rhs[idx] = u[idx] - dt * adv[idx];
        }
        if let Some(f) = forcing {
            for (idx, r) in rhs.iter_mut().enumerate() {
                let x = grid.coords(idx);
                *r += dt * f(t_half, &x[..d]);
            }
        }
        let a = &c.a[si];
        u.copy_from_slice(&rhs);
        let iters = match cfg.form {
            EquationForm::FpDiv => cg(
                |x, out| apply_divergence_form(&grid, &nbr, a, dt, x, out, &mut g, &mut pw),
                &rhs,
                &mut u,
                cfg.lin_tol,
                cfg.max_iters,
            )?,
            EquationForm::Fp => bicgstab(
                |x, out| apply_product_form(&grid, &nbr, a, dt, x, out, &mut g, &mut pw),
                &rhs,
                &mut u,
                cfg.lin_tol,
                cfg.max_iters,
            )?,
        };
        sol.iters.push(iters);
        record(&mut sol, k + 1, &u)?;
    }
    Ok(sol)
}

fn capped_exp(x: f64) -> f64 {
    if x > 700.0 {
        f64::MAX
    } else {
        libm::exp(x)
    }
}

/// Piecewise-linear value of the per-slice sups at time t.
fn slice_value_at(sups: &[f64], horizon: f64, t: f64) -> f64 {
    let m = sups.len();
    if m == 1 || horizon <= 0.0 {
        return sups[0];
    }
    let ds = horizon / (m - 1) as f64;
    let pos = (t / ds).clamp(0.0, (m - 1) as f64);
    let k = pos as usize;
    if k + 1 >= m {
        return sups[m - 1];
    }
    let frac = pos - k as f64;
    sups[k] * (1.0 - frac) + sups[k + 1] * frac
}

/// Norm-growth audit record: per-step ratios of the measured L^q norm to
/// its drift-divergence bound.
#[derive(Debug, Clone)]
pub struct EnergyAudit {
    pub q: f64,
    /// Exponent weight (q-1)/q multiplying the divergence budget.
    pub c_q: f64,
    pub tol: f64,
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Steps whose ratio exceeded 1 + tol.
    pub flagged: Vec<usize>,
    pub pass: bool,
}

/// Check ||u(t)||_q against ||u0||_q * exp(C(q) * int_0^t sup (div v)^-)
/// with C(q) = (q-1)/q and v the divergence-form velocity. The exponential
/// saturates at f64::MAX rather than overflowing.
pub fn energy_audit(
    sol: &Solution,
    c: &CoefficientSet,
    q: f64,
    tol: f64,
) -> Result<EnergyAudit, CoreError> {
    if q.is_nan() || q <= 1.0 || q == f64::INFINITY {
        return Err(CoreError::BadExponent { p: q });
    }
    let series = sol.lq_series(q).ok_or(CoreError::BadReport {
        msg: "requested exponent was not recorded by the solve",
    })?;
    let budget = negative_divergence_budget(c, sol.horizon())?;
    let times = sol.step_times();
    let g: Vec<f64> = times
        .iter()
        .map(|&t| slice_value_at(&budget.sup_per_slice, sol.horizon(), t))
        .collect();
    let cum = cumtrapz(&g, sol.time_grid().dt());
    let c_q = (q - 1.0) / q;
    let u0q = series[0];
    let mut ratios = Vec::with_capacity(series.len());
    let mut flagged = Vec::new();
    let mut max_ratio = 0.0f64;
    for (k, &v) in series.iter().enumerate() {
        let ratio = if u0q == 0.0 {
            if v == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            v / (u0q * capped_exp(c_q * cum[k]))
        };
        if ratio > 1.0 + tol {
            flagged.push(k);
        }
        max_ratio = max_ratio.max(ratio);
        ratios.push(ratio);
    }
    Ok(EnergyAudit {
        q,
        c_q,
        tol,
        ratios,
        max_ratio,
        pass: flagged.is_empty(),
        flagged,
    })
}

/// Gradient-budget audit record.
#[derive(Debug, Clone)]
pub struct ParabolicBudget {
    /// int_0^T ||grad u||_2^2 dt over the whole run.
    pub gradient_budget: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// Largest relative excess of lhs over rhs (negative = satisfied with
    /// margin everywhere).
    pub max_excess: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Check the dissipation inequality
/// ||u(t)||_2^2 + alpha int_0^t ||grad u||_2^2 <= ||u0||_2^2
///   + int_0^t sup (div v)^- ||u||_2^2
/// step by step, with a relative slack for discretization error.
pub fn parabolic_budget(
    sol: &Solution,
    c: &CoefficientSet,
    slack: f64,
) -> Result<ParabolicBudget, CoreError> {
    let l2 = sol.lq_series(2.0).ok_or(CoreError::BadReport {
        msg: "budget audit needs the L2 norm in the diagnostics",
    })?;
    let dt = sol.time_grid().dt();
    let cum_grad = cumtrapz(sol.grad_sq_series(), dt);
    let budget = negative_divergence_budget(c, sol.horizon())?;
    let times = sol.step_times();
    let drive: Vec<f64> = times
        .iter()
        .zip(l2)
        .map(|(&t, &v)| slice_value_at(&budget.sup_per_slice, sol.horizon(), t) * v * v)
        .collect();
    let cum_drive = cumtrapz(&drive, dt);
    let mut lhs = Vec::with_capacity(l2.len());
    let mut rhs = Vec::with_capacity(l2.len());
    let mut max_excess = f64::NEG_INFINITY;
    for k in 0..l2.len() {
        let left = l2[k] * l2[k] + c.alpha * cum_grad[k];
        let right = l2[0] * l2[0] + cum_drive[k];
        max_excess = max_excess.max((left - right) / right.abs().max(1e-300));
        lhs.push(left);
        rhs.push(right);
    }
    Ok(ParabolicBudget {
        gradient_budget: *cum_grad.last().expect("diagnostics cover every step"),
        lhs,
        rhs,
        max_excess,
        slack,
        pass: max_excess <= slack,
    })
}

/// Successive-ratio limit for uniform-boundedness verdicts in refinement
/// studies.
pub const REGULARITY_RATIO_LIMIT: f64 = 1.1;

#[derive(Debug, Clone)]
pub struct RegularityStudy {
    /// Time-integrated gradient norms, one per grid spacing.
    pub report: NormReport,
    /// Successive value ratios (finer / coarser).
    pub ratios: Vec<f64>,
    pub uniformly_bounded: bool,
}

/// Solve the same recipe on each grid of the ladder and report the
/// space-time gradient norm ||grad u||_{L2 L2} per spacing. The integrability
/// hypothesis 1/p + 1/q <= 1/2 is enforced up front; the verdict asks the
/// budgets to stay uniformly bounded under refinement (ratios <= 1.1).
pub fn regularity_study(
    recipe: &ScenarioRecipe,
    ladder: &[usize],
    horizon: f64,
    cfg: &SolverConfig,
) -> Result<RegularityStudy, CoreError> {
    let inv = |x: f64| if x.is_finite() { 1.0 / x } else { 0.0 };
    let sum = inv(recipe.params.p) + inv(recipe.q);
    if sum > 0.5 + 1e-12 {
        return Err(CoreError::HypothesisViolation { sum, limit: 0.5 });
    }
    if ladder.len() < 2 {
        return Err(CoreError::TooFewPoints { got: ladder.len() });
    }
    for w in ladder.windows(2) {
        if w[1] <= w[0] {
            return Err(CoreError::BadConfig {
                msg: String::from("refinement ladder must increase strictly"),
            });
        }
    }
    let mut absc = Vec::with_capacity(ladder.len());
    let mut vals = Vec::with_capacity(ladder.len());
    for &n in ladder {
        let scen = recipe.realize(n)?;
        let grid = scen.coeffs.grid;
        let vmax = match cfg.form {
            EquationForm::FpDiv => effective_drift_slices(&scen.coeffs)?
                .iter()
                .fold(0.0f64, |m, f| m.max(f.max_norm())),
            EquationForm::Fp => scen.coeffs.drift_sup(),
        };
        let steps = cfl_steps(horizon, &grid, vmax, 64);
        let tg = TimeGrid::new(horizon, steps)?;
        let mut run_cfg = cfg.clone();
        run_cfg.snapshot_every = 0;
        if !run_cfg.q_list.contains(&2.0) {
            run_cfg.q_list.push(2.0);
        }
        let sol = solve(&scen.coeffs, &scen.u0, tg, &run_cfg)?;
        absc.push(grid.spacing());
        vals.push(libm::sqrt(sol.gradient_budget()));
    }
    let mut ratios = Vec::with_capacity(vals.len().saturating_sub(1));
    for w in vals.windows(2) {
        ratios.push(if w[0] == 0.0 {
            if w[1] == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            w[1] / w[0]
        });
    }
    let uniformly_bounded = ratios
        .iter()
        .all(|r| *r <= REGULARITY_RATIO_LIMIT + 1e-12);
    let report = NormReport::new(
        format!("{}: time-integrated gradient by resolution", recipe.label),
        absc,
        vals,
    )?;
    Ok(RegularityStudy {
        report,
        ratios,
        uniformly_bounded,
    })
}

/// Steps needed to satisfy the advective CFL bound with a 0.9 safety
/// factor, floored for basic time resolution.
fn cfl_steps(horizon: f64, grid: &Grid, vmax: f64, floor_steps: usize) -> usize {
    let mut steps = floor_steps.max(1);
    if vmax > 0.0 {
        let dt_max = grid.spacing() / (2.0 * grid.dim() as f64 * vmax);
        let need = libm::ceil(horizon / (0.9 * dt_max)) as usize;
        steps = steps.max(need);
    }
    steps
}

/// The same coefficient set with every slice mollified at scale delta.
/// Nodewise ellipticity survives averaging against a nonnegative kernel,
/// so the declared floor is kept.
pub fn mollified_coefficients(
    c: &CoefficientSet,
    family: KernelFamily,
    delta: f64,
) -> Result<CoefficientSet, CoreError> {
    let m = Mollifier::new(family, delta, &c.grid)?;
    let b = c
        .b
        .iter()
        .map(|f| m.apply_vector(f))
        .collect::<Result<Vec<_>, _>>()?;
    let a = c
        .a
        .iter()
        .map(|f| m.apply_matrix(f))
        .collect::<Result<Vec<_>, _>>()?;
    CoefficientSet::new(c.grid, b, a, c.alpha, c.class, c.p)
}

#[derive(Debug, Clone)]
pub struct StabilityStudy {
    /// abscissa: the coarser delta of each consecutive pair; value: the
    /// L^infinity-in-time L^2 distance between the two runs.
    pub report: NormReport,
    pub monotone: bool,
}

/// Solve with coefficients mollified at each delta of the ladder and
/// measure how fast successive solutions approach each other. A decreasing
/// sequence is the desk-scale signature of a unique rough-coefficient
/// limit; it is evidence, not a proof.
pub fn stability_study(
    scen: &Scenario,
    tg: TimeGrid,
    cfg: &SolverConfig,
    family: KernelFamily,
    deltas: &[f64],
) -> Result<StabilityStudy, CoreError> {
    if deltas.len() < 2 {
        return Err(CoreError::TooFewPoints { got: deltas.len() });
    }
    scen.validate_basic()?;
    let vol = scen.coeffs.grid.cell_volume();
    let mut run_cfg = cfg.clone();
    run_cfg.snapshot_every = 1;
    let mut prev: Option<Solution> = None;
    let mut absc = Vec::with_capacity(deltas.len() - 1);
    let mut vals = Vec::with_capacity(deltas.len() - 1);
    for (k, &delta) in deltas.iter().enumerate() {
        let cd = mollified_coefficients(&scen.coeffs, family, delta)?;
        let sol = solve(&cd, &scen.u0, tg, &run_cfg)?;
        if let Some(ps) = &prev {
            let mut worst = 0.0f64;
            for (ua, ub) in ps.snapshots().iter().zip(sol.snapshots()) {
                let mut acc = 0.0;
                for (x, y) in ua.values().iter().zip(ub.values()) {
                    let dxy = x - y;
                    acc += dxy * dxy;
                }
                worst = worst.max(libm::sqrt(acc * vol));
            }
            absc.push(deltas[k - 1]);
            vals.push(worst);
        }
        prev = Some(sol);
    }
    let monotone = vals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let report = NormReport::new(
        format!("{}: gap between successive coefficient mollifications", scen.label),
        absc,
        vals,
    )?;
    Ok(StabilityStudy { report, monotone })
}

/// Even C^2 profile that equals z^2 up to |z| = M and saturates smoothly
/// below (1 + eps) M^2 beyond. The exponential tail matches value, slope
/// and curvature at the junction for every eps in (0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenormFunction {
    m: f64,
    eps: f64,
}

impl RenormFunction {
    pub fn new(m: f64, eps: f64) -> Result<Self, CoreError> {
        if !(m.is_finite() && m > 0.0) || !(eps > 0.0 && eps <= 1.0) {
            return Err(CoreError::BadRenormParams { m, eps });
        }
        Ok(RenormFunction { m, eps })
    }

    pub fn truncation(&self) -> f64 {
        self.m
    }

    pub fn smoothing(&self) -> f64 {
        self.eps
    }

    /// Supremum of the profile: (1 + eps) M^2 <= 2 M^2.
    pub fn cap(&self) -> f64 {
        (1.0 + self.eps) * self.m * self.m
    }

    pub fn eval(&self, z: f64) -> f64 {
        let az = z.abs();
        if az <= self.m {
            return z * z;
        }
        let u = (az - self.m) / self.m;
        let p = self.cap();
        let m2 = self.m * self.m;
        let a = 2.0 / self.eps;
        let b = (self.eps + 2.0) / (self.eps * self.eps);
        p - (p - m2) * libm::exp(-(a * u + b * u * u))
    }

    pub fn deriv(&self, z: f64) -> f64 {
        let az = z.abs();
        if az <= self.m {
            return 2.0 * z;
        }
        let u = (az - self.m) / self.m;
        let p = self.cap();
        let m2 = self.m * self.m;
        let a = 2.0 / self.eps;
        let b = (self.eps + 2.0) / (self.eps * self.eps);
        let mag = (p - m2) * (a + 2.0 * b * u) * libm::exp(-(a * u + b * u * u)) / self.m;
        if z >= 0.0 {
            mag
        } else {
            -mag
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenormTrace {
    pub times: Vec<f64>,
    /// Integral of the profile over the box, per snapshot.
    pub trace: Vec<f64>,
    /// trace(0) * exp(budget(t)) + floor, per snapshot.
    pub bound: Vec<f64>,
    pub floor: f64,
    pub within: bool,
}

/// Trace of the truncated square integral along the run, checked against
/// its exponential drift-divergence bound. The bound mirrors the q = 2
/// growth estimate in the regime where the profile is exactly quadratic
/// (M >= sup |u|); deep in saturation the trace can legitimately cross it,
/// so the flag reports rather than errors.
pub fn renorm_diagnostic(
    sol: &Solution,
    c: &CoefficientSet,
    rf: &RenormFunction,
    floor: f64,
) -> Result<RenormTrace, CoreError> {
    let vol = sol.grid().cell_volume();
    let budget = negative_divergence_budget(c, sol.horizon())?;
    let times_all = sol.step_times();
    let g: Vec<f64> = times_all
        .iter()
        .map(|&t| slice_value_at(&budget.sup_per_slice, sol.horizon(), t))
        .collect();
    let cum = cumtrapz(&g, sol.time_grid().dt());
    let mut times = Vec::with_capacity(sol.snapshots().len());
    let mut trace = Vec::with_capacity(sol.snapshots().len());
    let mut bound = Vec::with_capacity(sol.snapshots().len());
    for (i, snap) in sol.snapshots().iter().enumerate() {
        let step = sol.snapshot_steps()[i];
        let tr: f64 = snap.values().iter().map(|&z| rf.eval(z)).sum::<f64>() * vol;
        times.push(sol.snapshot_time(i));
        trace.push(tr);
        bound.push(trace[0] * capped_exp(cum[step]) + floor);
    }
    let within = trace.iter().zip(&bound).all(|(t, b)| t <= b);
    Ok(RenormTrace {
        times,
        trace,
        bound,
        floor,
        within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{GenParams, InitialKind, RegularityClass};
    use crate::norms::{lp_norm, rate_fit};
    use approx::assert_relative_eq;
    use core::f64::consts::{PI, TAU};

    fn grid1(n: usize) -> Grid {
        Grid::new(1, n, TAU).unwrap()
    }

    fn const_diag(grid: Grid, val: f64) -> MatrixField {
        MatrixField::scaled_identity(grid, val)
    }

    fn heat_setup(n: usize) -> (CoefficientSet, ScalarField) {
        let grid = grid1(n);
        let b = VectorField::zeros(grid);
        let a = const_diag(grid, 2.0);
        let c =
            CoefficientSet::time_independent(b, a, 2.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::from_fn(grid, |x| libm::sin(x[0])).unwrap();
        (c, u0)
    }

    #[test]
    fn config_validation() {
        let mut cfg = SolverConfig::default();
        cfg.lin_tol = 1e-5;
        assert!(matches!(cfg.validate(), Err(CoreError::BadConfig { .. })));
        cfg.lin_tol = 0.0;
        assert!(cfg.validate().is_err());
        cfg.lin_tol = 1e-10;
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
        cfg.max_iters = 100;
        cfg.q_list = vec![0.5];
        assert!(matches!(cfg.validate(), Err(CoreError::BadExponent { .. })));
    }

    #[test]
    fn cfl_violation_reports_admissible_dt() {
        let grid = grid1(64);
        let b = VectorField::from_fn(grid, |_, _| 1.0).unwrap();
        let a = const_diag(grid, 1.0);
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::constant(grid, 1.0);
        let tg = TimeGrid::new(1.0, 4).unwrap();
        match solve_fp_div(&c, &u0, tg, &SolverConfig::default()) {
            Err(CoreError::CflViolation { dt, dt_max }) => {
                assert_relative_eq!(dt, 0.25);
                assert_relative_eq!(dt_max, grid.spacing() / 2.0, max_relative = 1e-12);
            }
            other => panic!("expected CFL violation, got {other:?}"),
        }
    }

    #[test]
    fn ellipticity_below_declared_floor_rejected() {
        let grid = grid1(64);
        let b = VectorField::zeros(grid);
        let a = const_diag(grid, 1.0);
        // Claim alpha = 2 while the field only delivers 1.
        let c =
            CoefficientSet::time_independent(b, a, 2.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::constant(grid, 1.0);
        let tg = TimeGrid::new(0.1, 10).unwrap();
        assert!(matches!(
            solve_fp_div(&c, &u0, tg, &SolverConfig::default()),
            Err(CoreError::BadConfig { .. })
        ));
    }

    #[test]
    fn heat_mode_decays_exactly() {
        let (c, u0) = heat_setup(256);
        let tg = TimeGrid::new(1.0, 1000).unwrap();
        let sol = solve_fp_div(&c, &u0, tg, &SolverConfig::default()).unwrap();
        let grid = *u0.grid();
        let exact = ScalarField::from_fn(grid, |x| libm::exp(-1.0) * libm::sin(x[0])).unwrap();
        let err = sol.final_field().sub(&exact).unwrap().max_abs();
        assert!(err <= 1e-3, "heat L^inf error {err}");
        // The L^2 norm must fall strictly step by step.
        let l2 = sol.lq_series(2.0).unwrap();
        for w in l2.windows(2) {
            assert!(w[1] < w[0]);
        }
        // Zero-mass datum: the integral stays at zero.
        assert!(sol.mass_drift() <= 1e-8, "mass drift {}", sol.mass_drift());
    }

    #[test]
    fn advected_mode_tracks_closed_form() {
        let grid = grid1(256);
        let b = VectorField::from_fn(grid, |_, _| 1.0).unwrap();
        let a = const_diag(grid, 0.5);
        let c =
            CoefficientSet::time_independent(b, a, 0.5, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::from_fn(grid, |x| libm::sin(2.0 * x[0])).unwrap();
        let tg = TimeGrid::new(1.0, 2000).unwrap();
        let sol = solve_fp_div(&c, &u0, tg, &SolverConfig::default()).unwrap();
        // u(t, x) = e^{-alpha k^2 t / 2} sin(k (x - c t)), k = 2, c = 1.
        let exact = ScalarField::from_fn(grid, |x| {
            libm::exp(-1.0) * libm::sin(2.0 * (x[0] - 1.0))
        })
        .unwrap();
        let err = sol.final_field().sub(&exact).unwrap().max_abs();
        assert!(err <= 5e-3, "advection-diffusion L^inf error {err}");
    }

    // Manufactured solution u = e^{-t} sin x for a = 2 + cos x and
    // b = (1/2) sin x (so the effective velocity is sin x):
    // forcing f = (3/2) e^{-t} sin 2x, derived from the closed forms.
    fn mms_error(n: usize) -> f64 {
        let grid = grid1(n);
        let b = VectorField::from_fn(grid, |_, x| 0.5 * libm::sin(x[0])).unwrap();
        let a = MatrixField::from_lower_fn(grid, |_, _, x| 2.0 + libm::cos(x[0])).unwrap();
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::from_fn(grid, |x| libm::sin(x[0])).unwrap();
        let horizon = 0.25;
        // dt ~ h^2 keeps the first-order time error below the spatial one.
        let steps = n * n / 16;
        let tg = TimeGrid::new(horizon, steps).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.snapshot_every = 0;
        let forcing = |t: f64, x: &[f64]| 1.5 * libm::exp(-t) * libm::sin(2.0 * x[0]);
        let sol = solve_forced(&c, &u0, tg, &cfg, Some(&forcing)).unwrap();
        let exact =
            ScalarField::from_fn(grid, |x| libm::exp(-horizon) * libm::sin(x[0])).unwrap();
        lp_norm(&sol.final_field().sub(&exact).unwrap(), 2.0).unwrap()
    }

    #[test]
    fn manufactured_solution_converges_at_second_order() {
        let ns = [64usize, 128, 256];
        let hs: Vec<f64> = ns.iter().map(|&n| TAU / n as f64).collect();
        let errs: Vec<f64> = ns.iter().map(|&n| mms_error(n)).collect();
        let fit = rate_fit(&hs, &errs).unwrap();
        assert!(
            fit.rate >= 1.8,
            "manufactured-solution order {} from errors {errs:?}",
            fit.rate
        );
    }

    #[test]
    fn forms_agree_for_constant_diffusion() {
        let grid = grid1(128);
        let b = VectorField::from_fn(grid, |_, x| libm::sin(x[0])).unwrap();
        let a = const_diag(grid, 2.0);
        let c =
            CoefficientSet::time_independent(b, a, 2.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * libm::sin(x[0])).unwrap();
        let tg = TimeGrid::new(0.5, 500).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.lin_tol = 1e-12;
        cfg.snapshot_every = 0;
        let sol_div = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        let sol_fp = solve_fp(&c, &u0, tg, &cfg).unwrap();
        let gap = lp_norm(
            &sol_div.final_field().sub(sol_fp.final_field()).unwrap(),
            2.0,
        )
        .unwrap();
        assert!(gap <= 1e-8, "constant-coefficient form gap {gap}");
    }

    fn form_gap(n: usize) -> f64 {
        let grid = grid1(n);
        let b = VectorField::zeros(grid);
        let a = MatrixField::from_lower_fn(grid, |_, _, x| 2.0 + libm::cos(x[0])).unwrap();
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::from_fn(grid, |x| libm::sin(x[0])).unwrap();
        let steps = n * n / 16;
        let tg = TimeGrid::new(0.25, steps).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.snapshot_every = 0;
        let sol_div = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        let sol_fp = solve_fp(&c, &u0, tg, &cfg).unwrap();
        lp_norm(
            &sol_div.final_field().sub(sol_fp.final_field()).unwrap(),
            2.0,
        )
        .unwrap()
    }

    #[test]
    fn forms_converge_to_each_other_for_smooth_variable_diffusion() {
        let ns = [64usize, 128, 256];
        let hs: Vec<f64> = ns.iter().map(|&n| TAU / n as f64).collect();
        let gaps: Vec<f64> = ns.iter().map(|&n| form_gap(n)).collect();
        let fit = rate_fit(&hs, &gaps).unwrap();
        assert!(
            fit.rate >= 1.0,
            "form gap shrinks at rate {} from {gaps:?}",
            fit.rate
        );
    }

    #[test]
    fn mass_is_conserved_by_both_forms() {
        let grid = grid1(128);
        let b = VectorField::from_fn(grid, |_, x| libm::sin(x[0])).unwrap();
        let a = MatrixField::from_lower_fn(grid, |_, _, x| 2.0 + libm::cos(x[0])).unwrap();
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::from_fn(grid, |x| 1.0 + 0.5 * libm::sin(x[0])).unwrap();
        let tg = TimeGrid::new(0.5, 500).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.snapshot_every = 0;
        let mass0 = u0.integral();
        for form in [EquationForm::FpDiv, EquationForm::Fp] {
            cfg.form = form;
            let sol = solve(&c, &u0, tg, &cfg).unwrap();
            let drift = sol.mass_drift() / mass0;
            assert!(
                drift <= 1e-10,
                "{} relative mass drift {drift:e}",
                form.label()
            );
        }
    }

    #[test]
    fn upwind_keeps_nonnegative_data_nonnegative() {
        let grid = grid1(128);
        let b = VectorField::from_fn(grid, |_, x| libm::sin(x[0])).unwrap();
        let a = MatrixField::from_lower_fn(grid, |_, _, x| 1.0 + 0.5 * libm::cos(x[0])).unwrap();
        let c =
            CoefficientSet::time_independent(b, a, 0.5, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = crate::coeffs::gen_initial(
            grid,
            InitialKind::Bump { width_frac: 0.05 },
            2.0,
            7,
        )
        .unwrap();
        let tg = TimeGrid::new(0.5, 200).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.scheme = AdvectionScheme::UpwindFlux;
        let sol = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        let worst = sol.min_series().iter().cloned().fold(f64::INFINITY, f64::min);
        // The exact upwind/implicit step is monotone under the CFL bound;
        // what survives is the accumulated linear-solver residual.
        let tol = tg.steps() as f64 * cfg.lin_tol * u0.max_abs();
        assert!(worst >= -tol, "upwind minimum {worst} below -{tol:e}");
    }

    #[test]
    fn snapshots_respect_stride() {
        let (c, u0) = heat_setup(64);
        let tg = TimeGrid::new(0.1, 10).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.snapshot_every = 0;
        let sol = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        assert_eq!(sol.snapshot_steps(), &[0, 10]);
        cfg.snapshot_every = 4;
        let sol = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        assert_eq!(sol.snapshot_steps(), &[0, 4, 8, 10]);
        assert_eq!(sol.masses().len(), 11);
        assert_eq!(sol.iterations().len(), 10);
    }

    #[test]
    fn energy_audit_heat_and_validation() {
        let (c, u0) = heat_setup(128);
        let tg = TimeGrid::new(0.5, 200).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.q_list = vec![2.0, 4.0];
        cfg.snapshot_every = 0;
        let sol = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        for q in [2.0, 4.0] {
            let audit = energy_audit(&sol, &c, q, 1e-3).unwrap();
            assert!(audit.pass, "q = {q} ratios up to {}", audit.max_ratio);
            assert_relative_eq!(audit.c_q, (q - 1.0) / q);
        }
        assert!(matches!(
            energy_audit(&sol, &c, 3.0, 1e-3),
            Err(CoreError::BadReport { .. })
        ));
        assert!(matches!(
            energy_audit(&sol, &c, 1.0, 1e-3),
            Err(CoreError::BadExponent { .. })
        ));
        assert!(matches!(
            energy_audit(&sol, &c, f64::INFINITY, 1e-3),
            Err(CoreError::BadExponent { .. })
        ));
    }

    #[test]
    fn energy_audit_zero_datum_passes() {
        let (c, _) = heat_setup(64);
        let grid = grid1(64);
        let u0 = ScalarField::zeros(grid);
        let tg = TimeGrid::new(0.1, 20).unwrap();
        let sol = solve_fp_div(&c, &u0, tg, &SolverConfig::default()).unwrap();
        let audit = energy_audit(&sol, &c, 2.0, 1e-3).unwrap();
        assert!(audit.pass);
        assert_eq!(audit.max_ratio, 0.0);
    }

    #[test]
    fn exponential_guard_saturates() {
        assert_eq!(capped_exp(701.0), f64::MAX);
        assert_relative_eq!(capped_exp(1.0), libm::exp(1.0));
    }

    #[test]
    fn divergence_free_velocity_gives_nonincreasing_norms() {
        // b = rot of a stream function (2d), a = alpha I: zero divergence
        // budget, so the audit demands plain non-increase.
        let grid = Grid::new(2, 64, TAU).unwrap();
        let psi = ScalarField::from_fn(grid, |x| {
            libm::sin(x[0]) * libm::cos(x[1]) + 0.3 * libm::cos(2.0 * x[0] + x[1])
        })
        .unwrap();
        let dx = crate::calculus::partial(&psi, 0);
        let dy = crate::calculus::partial(&psi, 1);
        let b = VectorField::from_components(grid, vec![dy.scaled(-1.0), dx]).unwrap();
        let a = const_diag(grid, 1.0);
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::DivFree2d, f64::INFINITY)
                .unwrap();
        let u0 = crate::coeffs::gen_initial(grid, InitialKind::Trig { max_mode: 2 }, 2.0, 11)
            .unwrap();
        let vmax = effective_drift_slices(&c)
            .unwrap()
            .iter()
            .fold(0.0f64, |m, f| m.max(f.max_norm()));
        let steps = cfl_steps(0.25, &grid, vmax, 100);
        let tg = TimeGrid::new(0.25, steps).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.snapshot_every = 0;
        let sol = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        let audit = energy_audit(&sol, &c, 2.0, 1e-3).unwrap();
        assert!(audit.pass, "max ratio {}", audit.max_ratio);
    }

    #[test]
    fn gradient_budget_matches_heat_closed_form() {
        let (c, u0) = heat_setup(256);
        let tg = TimeGrid::new(1.0, 1000).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.snapshot_every = 0;
        let sol = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        let audit = parabolic_budget(&sol, &c, 0.01).unwrap();
        assert!(audit.pass, "max excess {}", audit.max_excess);
        // int_0^1 ||grad u||^2 dt = ||u0||^2 (1 - e^{-2}) / 2 for u0 = sin x.
        let expected = PI * (1.0 - libm::exp(-2.0)) / 2.0;
        assert_relative_eq!(audit.gradient_budget, expected, max_relative = 0.01);
        // Dissipation makes the inequality strict: equality within 1%.
        let last = audit.lhs.len() - 1;
        assert_relative_eq!(audit.lhs[last], audit.rhs[last], max_relative = 0.01);
    }

    #[test]
    fn budgets_vanish_for_zero_datum() {
        let (c, _) = heat_setup(64);
        let u0 = ScalarField::zeros(grid1(64));
        let tg = TimeGrid::new(0.1, 20).unwrap();
        let sol = solve_fp_div(&c, &u0, tg, &SolverConfig::default()).unwrap();
        let audit = parabolic_budget(&sol, &c, 0.05).unwrap();
        assert_eq!(audit.gradient_budget, 0.0);
        assert!(audit.pass);
    }

    #[test]
    fn rough_divergence_free_drift_keeps_budget_inequality() {
        // Divergence-free velocity built from a rough (band-limited, slowly
        // decaying) stream function; constant diffusion. Budget: zero.
        let grid = Grid::new(2, 64, TAU).unwrap();
        let mut psi = ScalarField::zeros(grid);
        // Flat-amplitude octaves up to mode 16: bounded but wiggly.
        for (m, amp, ph) in [
            (1i32, 0.5, 0.3),
            (2, 0.35, 1.1),
            (5, 0.25, 2.0),
            (9, 0.18, 0.7),
            (16, 0.12, 1.9),
        ] {
            let w = ScalarField::from_fn(grid, |x| {
                amp * libm::sin(m as f64 * x[0] + ph) * libm::cos(m as f64 * x[1] - ph)
            })
            .unwrap();
            psi.axpy(1.0, &w).unwrap();
        }
        let dx = crate::calculus::partial(&psi, 0);
        let dy = crate::calculus::partial(&psi, 1);
        let b = VectorField::from_components(grid, vec![dy.scaled(-1.0), dx]).unwrap();
        let a = const_diag(grid, 1.0);
        let c = CoefficientSet::time_independent(
            b,
            a,
            1.0,
            RegularityClass::BoundedRough,
            f64::INFINITY,
        )
        .unwrap();
        let u0 =
            crate::coeffs::gen_initial(grid, InitialKind::Trig { max_mode: 3 }, 2.0, 23).unwrap();
        let vmax = effective_drift_slices(&c)
            .unwrap()
            .iter()
            .fold(0.0f64, |m, f| m.max(f.max_norm()));
        let steps = cfl_steps(0.25, &grid, vmax, 100);
        let tg = TimeGrid::new(0.25, steps).unwrap();
        let mut cfg = SolverConfig::default();
        cfg.snapshot_every = 0;
        let sol = solve_fp_div(&c, &u0, tg, &cfg).unwrap();
        let audit = parabolic_budget(&sol, &c, 0.05).unwrap();
        assert!(audit.pass, "max excess {}", audit.max_excess);
    }

    fn w1p_recipe() -> ScenarioRecipe {
        let mut params = GenParams::default();
        params.p = 8.0;
        params.gamma = 0.9;
        // Gradient-flat dressing: octave weights that keep |grad a| spread
        // evenly across scales instead of piling up at the cutoff.
        params.dressing_growth = -1.0;
        ScenarioRecipe {
            label: String::from("singular-gradient refinement"),
            dim: 1,
            len: TAU,
            class: RegularityClass::W1pSingular,
            params,
            initial: InitialKind::Bump { width_frac: 0.08 },
            q: 8.0,
            seed: 5,
        }
    }

    #[test]
    fn regularity_hypothesis_violation_refused() {
        let mut recipe = w1p_recipe();
        recipe.params.p = 3.0;
        recipe.params.gamma = 0.95;
        recipe.q = 3.0;
        match regularity_study(&recipe, &[64, 128, 256], 0.25, &SolverConfig::default()) {
            Err(CoreError::HypothesisViolation { sum, limit }) => {
                assert_relative_eq!(sum, 2.0 / 3.0, max_relative = 1e-12);
                assert_relative_eq!(limit, 0.5);
            }
            other => panic!("expected hypothesis violation, got {other:?}"),
        }
    }

    #[test]
    fn regularity_budgets_stay_bounded_for_singular_class() {
        let recipe = w1p_recipe();
        let study =
            regularity_study(&recipe, &[128, 256, 512], 0.25, &SolverConfig::default()).unwrap();
        assert!(
            study.uniformly_bounded,
            "gradient budget ratios {:?}",
            study.ratios
        );
    }

    #[test]
    fn regularity_budgets_converge_for_smooth_class() {
        let recipe = ScenarioRecipe {
            label: String::from("smooth refinement"),
            dim: 1,
            len: TAU,
            class: RegularityClass::Smooth,
            params: GenParams::default(),
            initial: InitialKind::Trig { max_mode: 3 },
            q: 2.0,
            seed: 3,
        };
        let study =
            regularity_study(&recipe, &[64, 128, 256], 0.25, &SolverConfig::default()).unwrap();
        assert!(study.uniformly_bounded);
        let last = study.ratios.last().unwrap();
        assert!(
            (last - 1.0).abs() <= 0.02,
            "smooth budgets should converge, ratios {:?}",
            study.ratios
        );
    }

    #[test]
    fn stability_study_rejects_short_ladders() {
        let recipe = w1p_recipe();
        let scen = recipe.realize(64).unwrap();
        let tg = TimeGrid::new(0.1, 16).unwrap();
        assert!(matches!(
            stability_study(
                &scen,
                tg,
                &SolverConfig::default(),
                KernelFamily::Bump,
                &[0.5]
            ),
            Err(CoreError::TooFewPoints { got: 1 })
        ));
    }

    #[test]
    fn stability_gaps_vanish_for_constant_coefficients() {
        let grid = grid1(64);
        let b = VectorField::from_fn(grid, |_, _| 0.5).unwrap();
        let a = const_diag(grid, 1.0);
        let c =
            CoefficientSet::time_independent(b, a, 1.0, RegularityClass::Smooth, f64::INFINITY)
                .unwrap();
        let u0 = ScalarField::from_fn(grid, |x| 1.0 + 0.3 * libm::cos(x[0])).unwrap();
        let scen = Scenario {
            label: String::from("constant"),
            coeffs: c,
            u0,
            q: 2.0,
            seed: 0,
        };
        let h = grid.spacing();
        let tg = TimeGrid::new(0.2, 64).unwrap();
        let study = stability_study(
            &scen,
            tg,
            &SolverConfig::default(),
            KernelFamily::Bump,
            &[16.0 * h, 8.0 * h, 4.0 * h],
        )
        .unwrap();
        for v in &study.report.values {
            assert!(*v <= 1e-12, "constant coefficients should be exact, gap {v}");
        }
    }

    #[test]
    fn identical_mollification_scales_give_identical_runs() {
        let recipe = w1p_recipe();
        let scen = recipe.realize(128).unwrap();
        let h = scen.coeffs.grid.spacing();
        let tg = TimeGrid::new(0.1, 128).unwrap();
        let study = stability_study(
            &scen,
            tg,
            &SolverConfig::default(),
            KernelFamily::Bump,
            &[8.0 * h, 8.0 * h],
        )
        .unwrap();
        assert_eq!(study.report.values, vec![0.0]);
    }

    #[test]
    fn rough_coefficient_gaps_shrink_monotonically() {
        let mut params = GenParams::default();
        params.drift_amp = 0.8;
        params.diff_amp = 0.8;
        let recipe = ScenarioRecipe {
            label: String::from("bounded-rough mollification ladder"),
            dim: 1,
            len: TAU,
            class: RegularityClass::BoundedRough,
            params,
            initial: InitialKind::Bump { width_frac: 0.08 },
            q: 2.0,
            seed: 9,
        };
        let scen = recipe.realize(256).unwrap();
        let h = scen.coeffs.grid.spacing();
        let deltas: Vec<f64> = [32.0, 16.0, 8.0, 4.0, 2.0].iter().map(|k| k * h).collect();
        let tg = TimeGrid::new(0.5, 256).unwrap();
        let study = stability_study(
            &scen,
            tg,
            &SolverConfig::default(),
            KernelFamily::Bump,
            &deltas,
        )
        .unwrap();
        assert!(
            study.monotone,
            "mollification gaps {:?}",
            study.report.values
        );
    }

    #[test]
    fn renorm_profile_shape() {
        assert!(matches!(
            RenormFunction::new(0.0, 0.5),
            Err(CoreError::BadRenormParams { .. })
        ));
        assert!(RenormFunction::new(1.0, 1.5).is_err());
        assert!(RenormFunction::new(1.0, 0.0).is_err());
        for eps in [0.25, 0.5, 1.0] {
            let rf = RenormFunction::new(2.0, eps).unwrap();
            // Quadratic inside, capped outside, even, vanishing only at 0.
            assert_eq!(rf.eval(1.5), 2.25);
            assert_eq!(rf.eval(0.0), 0.0);
            let mut z = -10.0;
            while z <= 10.0 {
                let v = rf.eval(z);
                assert!(v >= 0.0 && v <= 2.0 * 4.0 + 1e-12);
                assert!(v <= z * z + 1e-12, "profile exceeds z^2 at {z}");
                assert_relative_eq!(v, rf.eval(-z), max_relative = 1e-14);
                if z != 0.0 {
                    assert!(v > 0.0);
                }
                z += 0.37;
            }
            // C^2 junction: value, slope, curvature agree across |z| = M.
            let m = 2.0;
            let dz = 1e-6;
            assert_relative_eq!(rf.eval(m + 1e-12), m * m, max_relative = 1e-9);
            assert_relative_eq!(rf.deriv(m + 1e-12), 2.0 * m, max_relative = 1e-9);
            let curv_out = (rf.deriv(m + dz) - rf.deriv(m)) / dz;
            assert_relative_eq!(curv_out, 2.0, max_relative = 1e-4);
        }
    }

    #[test]
    fn renorm_trace_tracks_squared_norm_when_unsaturated() {
        let (c, u0) = heat_setup(128);
        let tg = TimeGrid::new(0.5, 100).unwrap();
        let sol = solve_fp_div(&c, &u0, tg, &SolverConfig::default()).unwrap();
        // sup |u| <= 1, so M = 2 never saturates: trace == squared L^2 norm.
        let rf = RenormFunction::new(2.0, 1.0).unwrap();
        let diag = renorm_diagnostic(&sol, &c, &rf, 1e-12).unwrap();
        let l2 = sol.lq_series(2.0).unwrap();
        for (tr, l) in diag.trace.iter().zip(l2) {
            assert_relative_eq!(*tr, l * l, max_relative = 1e-12);
        }
        assert!(diag.within, "zero-budget heat trace must not grow");
        // A saturating profile can only lower the trace.
        let rf_half = RenormFunction::new(0.5, 1.0).unwrap();
        let diag_half = renorm_diagnostic(&sol, &c, &rf_half, 1e-12).unwrap();
        for (tr, l) in diag_half.trace.iter().zip(l2) {
            assert!(*tr <= l * l + 1e-12);
        }
    }

    #[test]
    fn renorm_trace_of_zero_datum_stays_at_floor() {
        let (c, _) = heat_setup(64);
        let u0 = ScalarField::zeros(grid1(64));
        let tg = TimeGrid::new(0.1, 20).unwrap();
        let sol = solve_fp_div(&c, &u0, tg, &SolverConfig::default()).unwrap();
        let rf = RenormFunction::new(1.0, 1.0).unwrap();
        let diag = renorm_diagnostic(&sol, &c, &rf, 1e-12).unwrap();
        assert!(diag.within);
        for tr in &diag.trace {
            assert_eq!(*tr, 0.0);
        }
    }

    #[test]
    fn solve_rejects_mismatched_grids() {
        let (c, _) = heat_setup(64);
        let u0 = ScalarField::zeros(grid1(128));
        let tg = TimeGrid::new(0.1, 10).unwrap();
        assert!(matches!(
            solve_fp_div(&c, &u0, tg, &SolverConfig::default()),
            Err(CoreError::GridMismatch { .. })
        ));
    }
}
