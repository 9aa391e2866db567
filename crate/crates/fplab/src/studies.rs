//! Study runner: maps each CLI subcommand to library operations, collects
//! CSV outputs and verdicts, and writes a hashed run manifest. Verdicts are
//! computed here, in code, so one command reruns the whole battery.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};

use fplab_core::commutators::{diffusion_commutator, flux_commutator, transport_commutator};
use fplab_core::field::{MatrixField, VectorField};
use fplab_core::grid::TimeGrid;
use fplab_core::mollify::{KernelFamily, Mollifier};
use fplab_core::norms::{bochner_norm, h_minus1_norm, lp_norm, rate_fit};
use fplab_core::sde::{law_compare, sample_initial, simulate, SdeConfig};
use fplab_core::solver::{
    energy_audit, parabolic_budget, regularity_study, solve_fp, solve_fp_div, stability_study,
    EquationForm, SolverConfig,
};

use crate::csvout::{csv_bytes, diagnostics_csv, field_csv};
use crate::manifest::{content_hash, RunManifest, Verdict};
use crate::scenario::{auto_steps, validate_scenario, ScenarioFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Solve,
    Commutator,
    Regularity,
    Stability,
    EnergyAudit,
    Equivalence,
    SdeCompare,
}

impl StudyKind {
    pub fn label(&self) -> &'static str {
        match self {
            StudyKind::Solve => "solve",
            StudyKind::Commutator => "commutator",
            StudyKind::Regularity => "regularity",
            StudyKind::Stability => "stability",
            StudyKind::EnergyAudit => "energy_audit",
            StudyKind::Equivalence => "equivalence",
            StudyKind::SdeCompare => "sde_compare",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub scenario: PathBuf,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    /// Meaning depends on the study: mollification scales in units of the
    /// grid spacing (commutator, stability; decreasing), grid sizes
    /// (regularity, equivalence; increasing), or particle counts
    /// (sde-compare; increasing).
    pub ladder: Option<Vec<f64>>,
    pub grid: Option<usize>,
}

pub struct StudyOutcome {
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

/// Keeps particle draws and coefficient generation on unrelated generator
/// streams even though both descend from the scenario seed.
const SDE_SEED_SALT: u64 = 0x0dd5_eed5;

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn resolved_config(spec: &StudySpec, file: &ScenarioFile) -> anyhow::Result<serde_json::Value> {
    Ok(serde_json::json!({
        "study": spec.kind.label(),
        "scenario": serde_json::to_value(file)?,
        "seed_override": spec.seed,
        "grid_override": spec.grid,
        "ladder": spec.ladder,
    }))
}

fn ladder_or(spec: &StudySpec, default: &[f64], decreasing: bool) -> anyhow::Result<Vec<f64>> {
    let ladder = spec
        .ladder
        .clone()
        .unwrap_or_else(|| default.to_vec());
    if ladder.is_empty() {
        bail!("ladder must be non-empty");
    }
    let ok = ladder.windows(2).all(|w| {
        if decreasing {
            w[1] < w[0]
        } else {
            w[1] > w[0]
        }
    });
    if !ok {
        bail!(
            "ladder must be strictly {}",
            if decreasing { "decreasing" } else { "increasing" }
        );
    }
    Ok(ladder)
}

fn is_constant(vals: &[f64]) -> bool {
    vals.iter().all(|v| *v == vals[0])
}

fn drift_is_constant(b: &[VectorField]) -> bool {
    b.iter()
        .all(|f| (0..f.grid().dim()).all(|c| is_constant(f.comp(c))))
}

fn diffusion_is_constant(a: &[MatrixField]) -> bool {
    a.iter().all(|f| {
        let d = f.grid().dim();
        (0..d).all(|i| (0..=i).all(|j| is_constant(f.comp(i, j))))
    })
}

pub fn run_study(spec: &StudySpec) -> anyhow::Result<StudyOutcome> {
    let start = Instant::now();
    let file = ScenarioFile::load(&spec.scenario)?;
    let report = validate_scenario(&file);
    if !report.ok {
        bail!(
            "scenario failed validation:\n{}",
            serde_json::to_string_pretty(&report)?
        );
    }
    let config = resolved_config(spec, &file)?;
    let seed = spec.seed.unwrap_or(file.seed);

    let result = dispatch(spec, &file, seed);
    let (outputs, verdicts, incomplete, exec_err) = match result {
        Ok((outputs, verdicts)) => (outputs, verdicts, false, None),
        Err(e) => (
            Vec::new(),
            vec![Verdict::new("execution", false, format!("{e:#}"))],
            true,
            Some(e),
        ),
    };

    let hash = content_hash(spec.kind.label(), &config, &[seed], &verdicts, &outputs);
    let run_dir = spec
        .out_dir
        .join(format!("{}-{}", spec.kind.label(), &hash[..12]));
    fs::create_dir_all(&run_dir)
        .with_context(|| format!("creating run directory {}", run_dir.display()))?;
    for (name, bytes) in &outputs {
        fs::write(run_dir.join(name), bytes)
            .with_context(|| format!("writing {name} in {}", run_dir.display()))?;
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        study: spec.kind.label().to_string(),
        config,
        seeds: vec![seed],
        wall_ms: start.elapsed().as_millis() as u64,
        verdicts,
        outputs: outputs.iter().map(|(n, _)| n.clone()).collect(),
        content_hash: hash,
        incomplete,
    };
    fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    if let Some(e) = exec_err {
        return Err(e.context(format!(
            "study aborted; incomplete manifest at {}",
            run_dir.display()
        )));
    }
    Ok(StudyOutcome { run_dir, manifest })
}

type StudyOutputs = (Vec<(String, Vec<u8>)>, Vec<Verdict>);

fn dispatch(spec: &StudySpec, file: &ScenarioFile, seed: u64) -> anyhow::Result<StudyOutputs> {
    match spec.kind {
        StudyKind::Solve => solve_study(spec, file, seed),
        StudyKind::Commutator => commutator_study(spec, file, seed),
        StudyKind::Regularity => regularity_cli(spec, file, seed),
        StudyKind::Stability => stability_cli(spec, file, seed),
        StudyKind::EnergyAudit => energy_cli(spec, file, seed),
        StudyKind::Equivalence => equivalence_cli(spec, file, seed),
        StudyKind::SdeCompare => sde_cli(spec, file, seed),
    }
}

fn solve_study(spec: &StudySpec, file: &ScenarioFile, seed: u64) -> anyhow::Result<StudyOutputs> {
    let (scen, tg) = file.build(spec.grid, Some(seed), EquationForm::FpDiv)?;
    let mut cfg = SolverConfig::default();
    cfg.snapshot_every = 0;
    if file.q.0.is_finite() && file.q.0 > 1.0 && !cfg.q_list.contains(&file.q.0) {
        cfg.q_list.push(file.q.0);
    }
    let sol = solve_fp_div(&scen.coeffs, &scen.u0, tg, &cfg)?;
    let mass0 = sol.masses()[0].abs().max(1e-300);
    let rel_drift = sol.mass_drift() / mass0;
    let verdicts = vec![Verdict::new(
        "mass conserved",
        rel_drift <= 1e-8,
        format!("relative drift {rel_drift:.3e} (limit 1e-8)"),
    )];
    let outputs = vec![
        ("diagnostics.csv".to_string(), diagnostics_csv(&sol)),
        ("final_field.csv".to_string(), field_csv(sol.final_field())),
    ];
    Ok((outputs, verdicts))
}

fn commutator_study(
    spec: &StudySpec,
    file: &ScenarioFile,
    seed: u64,
) -> anyhow::Result<StudyOutputs> {
    let recipe = file.recipe(Some(seed))?;
    let scen = recipe.realize(spec.grid.unwrap_or(file.grid_n))?;
    let grid = scen.coeffs.grid;
    let h = grid.spacing();
    let mults = ladder_or(spec, &[16.0, 8.0, 4.0], true)?;
    let w = &scen.u0;
    let horizon = file.horizon;

    // Per scale: L^1 in space (sup over coefficient slices) and the
    // dual-norm ladder L^2 in time of the spectral H^-1 norm.
    let mut rows = Vec::new();
    let mut series: [Vec<f64>; 6] = Default::default();
    for mult in &mults {
        let m = Mollifier::new(KernelFamily::Bump, mult * h, &grid)?;
        let mut l1 = [0.0f64; 3];
        let mut hm1: [Vec<f64>; 3] = Default::default();
        for si in 0..scen.coeffs.b.len() {
            let r = transport_commutator(&scen.coeffs.b[si], w, &m)?;
            let s = diffusion_commutator(&scen.coeffs.a[si], w, &m)?;
            let s1 = flux_commutator(&scen.coeffs.a[si], w, &m)?;
            for (k, f) in [&r.total, &s, &s1].into_iter().enumerate() {
                l1[k] = l1[k].max(lp_norm(f, 1.0)?);
                hm1[k].push(h_minus1_norm(f));
            }
        }
        let hm1_t: Vec<f64> = hm1
            .iter()
            .map(|slices| bochner_norm(slices, horizon, 2.0))
            .collect::<Result<_, _>>()?;
        rows.push(vec![
            mult * h,
            l1[0],
            hm1_t[0],
            l1[1],
            hm1_t[1],
            l1[2],
            hm1_t[2],
        ]);
        for k in 0..3 {
            series[2 * k].push(l1[k]);
            series[2 * k + 1].push(hm1_t[k]);
        }
    }
    let outputs = vec![(
        "commutators.csv".to_string(),
        csv_bytes(
            &[
                "delta", "r_l1", "r_h_minus1", "s_l1", "s_h_minus1", "s1_l1", "s1_h_minus1",
            ],
            &rows,
        ),
    )];

    let mut verdicts = Vec::new();
    let vol = grid.length().powi(grid.dim() as i32);
    let floor = 1e-12 * fplab_core::norms::h1_norm(w) * vol.sqrt();
    let b_const = drift_is_constant(&scen.coeffs.b);
    let a_const = diffusion_is_constant(&scen.coeffs.a);
    if b_const {
        let worst = series[0].iter().fold(0.0f64, |m, v| m.max(*v));
        verdicts.push(Verdict::new(
            "transport commutator at machine floor for constant drift",
            worst <= floor,
            format!("max L1 {worst:.3e} vs floor {floor:.3e}"),
        ));
    }
    if a_const {
        let worst = series[2]
            .iter()
            .chain(&series[4])
            .fold(0.0f64, |m, v| m.max(*v));
        verdicts.push(Verdict::new(
            "diffusion commutators at machine floor for constant diffusion",
            worst <= floor,
            format!("max L1 {worst:.3e} vs floor {floor:.3e}"),
        ));
    }
    use fplab_core::coeffs::RegularityClass as Class;
    // The singular class halves its dual norm over a factor-4 ladder; the
    // flat-spectrum bounded_rough class decays strictly but more slowly.
    let cut = if scen.coeffs.class == Class::W1pSingular {
        0.5
    } else {
        1.0
    };
    let dual_decay = |hm1: &[f64]| {
        let mono = hm1.windows(2).all(|w| w[1] < w[0]);
        let ratio = hm1.last().unwrap() / hm1[0];
        (mono && ratio < cut, ratio, mono)
    };
    match scen.coeffs.class {
        // Rough diffusion: the flux commutator collapses in the dual norm
        // but keeps its mass norm; that separation is the whole point.
        Class::W1pSingular | Class::BoundedRough => {
            if !a_const {
                let (ok, ratio, mono) = dual_decay(&series[5]);
                verdicts.push(Verdict::new(
                    "dual-norm decay of the flux commutator",
                    ok,
                    format!("H^-1 final/initial {ratio:.3} (monotone: {mono})"),
                ));
                let l1_ratio = series[4].last().unwrap() / series[4][0];
                verdicts.push(Verdict::new(
                    "mass-norm persistence of the flux commutator",
                    l1_ratio > 0.8,
                    format!("L1 final/initial {l1_ratio:.3}"),
                ));
            }
            if !b_const {
                let (ok, ratio, mono) = dual_decay(&series[1]);
                verdicts.push(Verdict::new(
                    "dual-norm decay of the transport commutator",
                    ok,
                    format!("H^-1 final/initial {ratio:.3} (monotone: {mono})"),
                ));
            }
        }
        // Kinked (Lipschitz) diffusion concentrates its curvature at the
        // kinks, so the second-order commutator shows the same separation,
        // while the Lipschitz drift commutator still vanishes outright.
        Class::Lipschitz => {
            if !b_const && series[0][0] > floor {
                let ratio = series[0].last().unwrap() / series[0][0];
                verdicts.push(Verdict::new(
                    "transport commutator vanishes with the scale",
                    ratio < 0.5,
                    format!("L1 final/initial {ratio:.3}"),
                ));
            }
            if !a_const {
                let (ok, ratio, mono) = dual_decay(&series[3]);
                verdicts.push(Verdict::new(
                    "dual-norm decay of the diffusion commutator",
                    ok,
                    format!("H^-1 final/initial {ratio:.3} (monotone: {mono})"),
                ));
                let l1_ratio = series[2].last().unwrap() / series[2][0];
                verdicts.push(Verdict::new(
                    "mass-norm persistence of the diffusion commutator",
                    l1_ratio > 0.8,
                    format!("L1 final/initial {l1_ratio:.3}"),
                ));
            }
        }
        // Smooth coefficients and data: every commutator vanishes.
        Class::Smooth | Class::DivFree2d => {
            if !b_const || !a_const {
                let mut vanish = true;
                let mut detail = Vec::new();
                for (k, label) in [(0usize, "r"), (2, "s"), (4, "s1")] {
                    let s = &series[k];
                    if s[0] > floor {
                        let ratio = s.last().unwrap() / s[0];
                        vanish &= ratio < 0.5;
                        detail.push(format!("{label} final/initial {ratio:.3}"));
                    }
                }
                verdicts.push(Verdict::new(
                    "commutators vanish with the mollification scale",
                    vanish,
                    detail.join(", "),
                ));
            }
        }
    }
    Ok((outputs, verdicts))
}

fn regularity_cli(
    spec: &StudySpec,
    file: &ScenarioFile,
    seed: u64,
) -> anyhow::Result<StudyOutputs> {
    let ladder_f = ladder_or(spec, &[128.0, 256.0, 512.0], false)?;
    let ladder: Vec<usize> = ladder_f.iter().map(|v| *v as usize).collect();
    let recipe = file.recipe(Some(seed))?;
    let cfg = SolverConfig::default();
    let study = regularity_study(&recipe, &ladder, file.horizon, &cfg)?;
    let rows: Vec<Vec<f64>> = study
        .report
        .abscissae
        .iter()
        .zip(&study.report.values)
        .map(|(h, v)| vec![*h, *v])
        .collect();
    let ratio_rows: Vec<Vec<f64>> = study
        .ratios
        .iter()
        .enumerate()
        .map(|(i, r)| vec![study.report.abscissae[i], *r])
        .collect();
    let outputs = vec![
        (
            "gradient_budget.csv".to_string(),
            csv_bytes(&["h", "grad_l2l2"], &rows),
        ),
        (
            "ratios.csv".to_string(),
            csv_bytes(&["h_coarse", "ratio"], &ratio_rows),
        ),
    ];
    let verdicts = vec![Verdict::new(
        "gradient budget uniformly bounded under refinement",
        study.uniformly_bounded,
        format!("successive ratios {:?} (limit 1.1)", study.ratios),
    )];
    Ok((outputs, verdicts))
}

fn stability_cli(
    spec: &StudySpec,
    file: &ScenarioFile,
    seed: u64,
) -> anyhow::Result<StudyOutputs> {
    let (scen, tg) = file.build(spec.grid, Some(seed), EquationForm::FpDiv)?;
    let h = scen.coeffs.grid.spacing();
    let mults = ladder_or(spec, &[32.0, 16.0, 8.0, 4.0, 2.0], true)?;
    let deltas: Vec<f64> = mults.iter().map(|m| m * h).collect();
    let cfg = SolverConfig::default();
    let study = stability_study(&scen, tg, &cfg, KernelFamily::Bump, &deltas)?;
    let rows: Vec<Vec<f64>> = study
        .report
        .abscissae
        .iter()
        .zip(&study.report.values)
        .map(|(d, v)| vec![*d, *v])
        .collect();
    let outputs = vec![(
        "mollification_gaps.csv".to_string(),
        csv_bytes(&["delta_coarse", "max_l2_gap"], &rows),
    )];
    let verdicts = vec![Verdict::new(
        "mollified-coefficient runs converge monotonically",
        study.monotone,
        format!("gaps {:?}", study.report.values),
    )];
    Ok((outputs, verdicts))
}

fn energy_cli(spec: &StudySpec, file: &ScenarioFile, seed: u64) -> anyhow::Result<StudyOutputs> {
    let (scen, tg) = file.build(spec.grid, Some(seed), EquationForm::FpDiv)?;
    let mut cfg = SolverConfig::default();
    cfg.snapshot_every = 0;
    cfg.q_list = vec![2.0, 4.0];
    let sol = solve_fp_div(&scen.coeffs, &scen.u0, tg, &cfg)?;
    let times = sol.step_times();
    let mut outputs = vec![("diagnostics.csv".to_string(), diagnostics_csv(&sol))];
    let mut verdicts = Vec::new();
    for q in [2.0f64, 4.0] {
        let audit = energy_audit(&sol, &scen.coeffs, q, 0.05)?;
        let rows: Vec<Vec<f64>> = times
            .iter()
            .zip(&audit.ratios)
            .map(|(t, r)| vec![*t, *r])
            .collect();
        outputs.push((
            format!("growth_ratios_q{q}.csv"),
            csv_bytes(&["time", "ratio"], &rows),
        ));
        verdicts.push(Verdict::new(
            &format!("norm growth within the drift-divergence budget (q = {q})"),
            audit.pass,
            format!("max ratio {:.4} (limit 1.05)", audit.max_ratio),
        ));
    }
    let budget = parabolic_budget(&sol, &scen.coeffs, 0.05)?;
    let rows: Vec<Vec<f64>> = times
        .iter()
        .enumerate()
        .map(|(k, t)| vec![*t, budget.lhs[k], budget.rhs[k]])
        .collect();
    outputs.push((
        "dissipation_budget.csv".to_string(),
        csv_bytes(&["time", "lhs", "rhs"], &rows),
    ));
    verdicts.push(Verdict::new(
        "dissipation budget within 5% slack",
        budget.pass,
        format!("max relative excess {:.3e}", budget.max_excess),
    ));
    Ok((outputs, verdicts))
}

fn equivalence_cli(
    spec: &StudySpec,
    file: &ScenarioFile,
    seed: u64,
) -> anyhow::Result<StudyOutputs> {
    let recipe = file.recipe(Some(seed))?;
    let probe = recipe.realize(file.grid_n)?;
    let a_const = diffusion_is_constant(&probe.coeffs.a);
    let mut cfg = SolverConfig::default();
    cfg.lin_tol = 1e-12;
    cfg.snapshot_every = 0;

    let gap_at = |n: usize| -> anyhow::Result<(f64, f64)> {
        let scen = recipe.realize(n)?;
        let auto = auto_steps(&scen, file.horizon, EquationForm::Fp)?;
        // dt ~ h^2 so the step splitting never hides the spatial gap.
        let steps = auto.max((file.horizon * (n * n) as f64 / 4.0).ceil() as usize);
        let tg = TimeGrid::new(file.horizon, steps)?;
        let sol_div = solve_fp_div(&scen.coeffs, &scen.u0, tg, &cfg)?;
        let sol_fp = solve_fp(&scen.coeffs, &scen.u0, tg, &cfg)?;
        let gap = lp_norm(
            &sol_div.final_field().sub(sol_fp.final_field())?,
            2.0,
        )?;
        Ok((scen.coeffs.grid.spacing(), gap))
    };

    if a_const {
        let (h, gap) = gap_at(spec.grid.unwrap_or(file.grid_n))?;
        let outputs = vec![(
            "form_gap.csv".to_string(),
            csv_bytes(&["h", "l2_gap"], &[vec![h, gap]]),
        )];
        let verdicts = vec![Verdict::new(
            "form agreement at machine tolerance for constant diffusion",
            gap <= 1e-8,
            format!("L2 gap {gap:.3e} (limit 1e-8)"),
        )];
        return Ok((outputs, verdicts));
    }

    let ladder_f = ladder_or(spec, &[64.0, 128.0, 256.0], false)?;
    if ladder_f.len() < 3 {
        bail!("equivalence rate fit needs at least 3 grids");
    }
    let mut hs = Vec::new();
    let mut gaps = Vec::new();
    let mut rows = Vec::new();
    for nf in &ladder_f {
        let (h, gap) = gap_at(*nf as usize)?;
        hs.push(h);
        gaps.push(gap);
        rows.push(vec![h, gap]);
    }
    let fit = rate_fit(&hs, &gaps)?;
    let outputs = vec![(
        "form_gap.csv".to_string(),
        csv_bytes(&["h", "l2_gap"], &rows),
    )];
    let verdicts = vec![Verdict::new(
        "form gap shrinks at first order",
        fit.rate >= 1.0,
        format!("fitted rate {:.2} from gaps {gaps:?}", fit.rate),
    )];
    Ok((outputs, verdicts))
}

fn sde_cli(spec: &StudySpec, file: &ScenarioFile, seed: u64) -> anyhow::Result<StudyOutputs> {
    let (scen, tg) = file.build(spec.grid, Some(seed), EquationForm::Fp)?;
    let grid = scen.coeffs.grid;
    let mut cfg = SolverConfig::default();
    cfg.snapshot_every = 0;
    // Particles realize the process whose density the product form evolves.
    let sol = solve_fp(&scen.coeffs, &scen.u0, tg, &cfg)?;
    let ladder = ladder_or(spec, &[200_000.0], false)?;
    let master = seed ^ SDE_SEED_SALT;

    let mut rows = Vec::new();
    let mut last_cmp = None;
    for nf in &ladder {
        let n_particles = *nf as usize;
        let sde_cfg = SdeConfig::for_grid(n_particles, tg.dt(), master, &grid);
        sde_cfg.validate()?;
        let ens0 = sample_initial(&scen.u0, n_particles, master)?;
        let ens = simulate(&scen.coeffs, &ens0, tg, &sde_cfg)?;
        let cmp = law_compare(&sol, &ens, &grid)?;
        rows.push(vec![n_particles as f64, cmp.distance, cmp.floor]);
        last_cmp = Some((cmp, ens));
    }
    let (cmp, ens) = last_cmp.expect("ladder is non-empty");

    let mut outputs = vec![(
        "law_distance.csv".to_string(),
        csv_bytes(&["n_particles", "l1_distance", "statistical_floor"], &rows),
    )];
    // Histogram of the largest run next to the solved field.
    let mut counts = vec![0.0f64; grid.num_nodes()];
    let h = grid.spacing();
    for p in 0..ens.n_particles() {
        let x = ens.position(p);
        let mut m = [0usize; fplab_core::grid::MAX_DIM];
        for ax in 0..grid.dim() {
            m[ax] = ((x[ax] / h).round() as usize) % grid.n();
        }
        counts[grid.flat_index(&m)] += 1.0;
    }
    let scale = 1.0 / (ens.n_particles() as f64 * grid.cell_volume());
    let hist_rows: Vec<Vec<f64>> = sol
        .final_field()
        .values()
        .iter()
        .enumerate()
        .map(|(idx, u)| {
            let x = grid.coords(idx);
            let mut row = vec![idx as f64];
            row.extend(&x[..grid.dim()]);
            row.push(counts[idx] * scale);
            row.push(*u);
            row
        })
        .collect();
    let mut hist_header = vec!["node"];
    hist_header.extend(["x0", "x1", "x2"].iter().take(grid.dim()));
    hist_header.push("empirical");
    hist_header.push("solved");
    outputs.push((
        "histogram.csv".to_string(),
        csv_bytes(&hist_header, &hist_rows),
    ));

    let mut verdicts = vec![Verdict::new(
        "particle law matches the solved density",
        cmp.distance <= 2.0 * cmp.floor,
        format!(
            "L1 distance {:.4} vs statistical floor {:.4}",
            cmp.distance, cmp.floor
        ),
    )];
    if rows.len() > 1 {
        let mono = rows.windows(2).all(|w| w[1][1] < w[0][1]);
        verdicts.push(Verdict::new(
            "distance shrinks as the ensemble grows",
            mono,
            format!(
                "distances {:?}",
                rows.iter().map(|r| r[1]).collect::<Vec<_>>()
            ),
        ));
    }
    Ok((outputs, verdicts))
}

/// Shared by `run_study` callers that need the validation report without
/// running anything (the `validate` subcommand).
pub fn load_and_validate(
    path: &Path,
) -> anyhow::Result<(ScenarioFile, crate::scenario::ValidationReport)> {
    let file = ScenarioFile::load(path)?;
    let report = validate_scenario(&file);
    Ok((file, report))
}
