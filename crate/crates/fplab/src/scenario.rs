//! Scenario files: a JSON description of a coefficient/data recipe plus a
//! time horizon, and the validation report that decides whether the recipe
//! satisfies the standing assumptions before any study runs.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use fplab_core::coeffs::{
    negative_divergence_budget, GenParams, InitialKind, RegularityClass, Scenario, ScenarioRecipe,
};
use fplab_core::grid::TimeGrid;
use fplab_core::solver::EquationForm;
use fplab_core::CoreError;

/// Integrability exponent that may be a number or the string "inf".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponent(pub f64);

impl Serialize for Exponent {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Exponent(v)),
            Raw::Word(w) if w.eq_ignore_ascii_case("inf") || w.eq_ignore_ascii_case("infinity") => {
                Ok(Exponent(f64::INFINITY))
            }
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "exponent must be a number or \"inf\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Bump { width_frac: f64 },
    Trig { max_mode: usize },
    Rough {
        gamma: f64,
        dressing_growth: f64,
        dressing_amp: f64,
    },
}

impl InitialSpec {
    fn to_kind(&self) -> InitialKind {
        match *self {
            InitialSpec::Bump { width_frac } => InitialKind::Bump { width_frac },
            InitialSpec::Trig { max_mode } => InitialKind::Trig { max_mode },
            InitialSpec::Rough {
                gamma,
                dressing_growth,
                dressing_amp,
            } => InitialKind::Rough {
                gamma,
                dressing_growth,
                dressing_amp,
            },
        }
    }
}

/// Optional generator overrides; anything omitted keeps the library default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenOverrides {
    pub gamma: Option<f64>,
    pub slices: Option<usize>,
    pub drift_amp: Option<f64>,
    pub diff_amp: Option<f64>,
    pub max_mode: Option<usize>,
    pub rough_cutoff: Option<usize>,
    pub dressing_growth: Option<f64>,
    pub dressing_amp: Option<f64>,
    pub rough_drift: Option<bool>,
}

fn default_length() -> f64 {
    std::f64::consts::TAU
}

fn default_q() -> Exponent {
    Exponent(2.0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub label: String,
    pub dim: usize,
    pub grid_n: usize,
    #[serde(default = "default_length")]
    pub length: f64,
    pub class: String,
    pub alpha: f64,
    pub p: Exponent,
    #[serde(default = "default_q")]
    pub q: Exponent,
    pub seed: u64,
    pub horizon: f64,
    /// Time steps; derived from the advective stability bound when absent.
    #[serde(default)]
    pub steps: Option<usize>,
    pub initial: InitialSpec,
    #[serde(default)]
    pub gen: GenOverrides,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading scenario file {}", path.display()))?;
        let file: ScenarioFile = serde_json::from_str(&text)
            .with_context(|| format!("parsing scenario file {}", path.display()))?;
        Ok(file)
    }

    pub fn class_enum(&self) -> Option<RegularityClass> {
        match self.class.as_str() {
            "smooth" => Some(RegularityClass::Smooth),
            "lipschitz" => Some(RegularityClass::Lipschitz),
            "w1p_singular" => Some(RegularityClass::W1pSingular),
            "bounded_rough" => Some(RegularityClass::BoundedRough),
            "divfree_2d" => Some(RegularityClass::DivFree2d),
            _ => None,
        }
    }

    pub fn gen_params(&self) -> GenParams {
        let mut params = GenParams::default();
        params.alpha = self.alpha;
        params.p = self.p.0;
        let g = &self.gen;
        if let Some(v) = g.gamma {
            params.gamma = v;
        }
        if let Some(v) = g.slices {
            params.slices = v;
        }
        if let Some(v) = g.drift_amp {
            params.drift_amp = v;
        }
        if let Some(v) = g.diff_amp {
            params.diff_amp = v;
        }
        if let Some(v) = g.max_mode {
            params.max_mode = v;
        }
        if let Some(v) = g.rough_cutoff {
            params.rough_cutoff = v;
        }
        if let Some(v) = g.dressing_growth {
            params.dressing_growth = v;
        }
        if let Some(v) = g.dressing_amp {
            params.dressing_amp = v;
        }
        if let Some(v) = g.rough_drift {
            params.rough_drift = v;
        }
        params
    }

    pub fn recipe(&self, seed_override: Option<u64>) -> Result<ScenarioRecipe, CoreError> {
        let class = self.class_enum().ok_or(CoreError::BadConfig {
            msg: format!("unknown coefficient class \"{}\"", self.class),
        })?;
        Ok(ScenarioRecipe {
            label: self.label.clone(),
            dim: self.dim,
            len: self.length,
            class,
            params: self.gen_params(),
            initial: self.initial.to_kind(),
            q: self.q.0,
            seed: seed_override.unwrap_or(self.seed),
        })
    }

    /// Realize the recipe and pick a time grid: the configured step count,
    /// or one derived from the advective stability bound of the requested
    /// equation form.
    pub fn build(
        &self,
        grid_override: Option<usize>,
        seed_override: Option<u64>,
        form: EquationForm,
    ) -> Result<(Scenario, TimeGrid), CoreError> {
        let recipe = self.recipe(seed_override)?;
        let n = grid_override.unwrap_or(self.grid_n);
        let scen = recipe.realize(n)?;
        let tg = match self.steps {
            Some(steps) => TimeGrid::new(self.horizon, steps)?,
            None => {
                let steps = auto_steps(&scen, self.horizon, form)?;
                TimeGrid::new(self.horizon, steps)?
            }
        };
        Ok((scen, tg))
    }
}

/// Step count satisfying dt <= h / (2 d vmax) with a 0.9 safety factor and
/// a floor of 64 steps, for the velocity the chosen form advects.
pub fn auto_steps(
    scen: &Scenario,
    horizon: f64,
    form: EquationForm,
) -> Result<usize, CoreError> {
    let grid = scen.coeffs.grid;
    let vmax = match form {
        EquationForm::FpDiv => fplab_core::coeffs::effective_drift_slices(&scen.coeffs)?
            .iter()
            .fold(0.0f64, |m, f| m.max(f.max_norm())),
        EquationForm::Fp => scen.coeffs.drift_sup(),
    };
    let mut steps = 64usize;
    if vmax > 0.0 {
        let dt_max = grid.spacing() / (2.0 * grid.dim() as f64 * vmax);
        steps = steps.max((horizon / (0.9 * dt_max)).ceil() as usize);
    }
    Ok(steps)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    /// Bound the value is held against, when the check is quantitative.
    pub limit: Option<f64>,
    pub ok: bool,
}

/// Everything `validate` reports: schema/semantic violations (exhaustive,
/// not first-failure), quantitative assumption checks, and the descriptive
/// estimate regimes the scenario's hypotheses activate.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub label: String,
    pub violations: Vec<String>,
    pub checks: Vec<CheckLine>,
    pub regimes: Vec<String>,
    pub ok: bool,
}

impl ValidationReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("scenario: {}\n", self.label));
        for v in &self.violations {
            out.push_str(&format!("  violation: {v}\n"));
        }
        for c in &self.checks {
            let verdict = if c.ok { "ok" } else { "FAIL" };
            match c.limit {
                Some(l) => out.push_str(&format!(
                    "  {}: {} = {:.6e} (limit {:.6e})\n",
                    verdict, c.name, c.value, l
                )),
                None => out.push_str(&format!("  {}: {} = {:.6e}\n", verdict, c.name, c.value)),
            }
        }
        for r in &self.regimes {
            out.push_str(&format!("  regime: {r}\n"));
        }
        out.push_str(if self.ok { "VALID\n" } else { "INVALID\n" });
        out
    }
}

/// Check the standing assumptions on the realized coefficients: bounded
/// diffusion, bounded diffusion divergence, a finite negative-divergence
/// budget for the effective drift, uniform ellipticity, and the exponent
/// pairing. Violations accumulate; nothing short-circuits.
pub fn validate_scenario(file: &ScenarioFile) -> ValidationReport {
    let mut violations = Vec::new();
    let mut checks = Vec::new();
    let mut regimes = Vec::new();

    if !(1..=3).contains(&file.dim) {
        violations.push(format!("dim {} outside 1..=3", file.dim));
    }
    if !file.grid_n.is_power_of_two() || file.grid_n < 8 {
        violations.push(format!(
            "grid_n {} must be a power of two at least 8",
            file.grid_n
        ));
    }
    if !(file.length > 0.0 && file.length.is_finite()) {
        violations.push(format!("length {} must be positive", file.length));
    }
    if !(file.horizon > 0.0 && file.horizon.is_finite()) {
        violations.push(format!("horizon {} must be positive", file.horizon));
    }
    if file.steps == Some(0) {
        violations.push("steps given as 0".into());
    }
    if !(file.alpha > 0.0) {
        violations.push(format!("alpha {} must be positive", file.alpha));
    }
    if file.p.0 < 1.0 {
        violations.push(format!("p = {} below 1", file.p.0));
    }
    if file.q.0 < 1.0 {
        violations.push(format!("q = {} below 1", file.q.0));
    }
    if file.class_enum().is_none() {
        violations.push(format!(
            "unknown class \"{}\" (smooth, lipschitz, w1p_singular, bounded_rough, divfree_2d)",
            file.class
        ));
    }
    if file.class_enum() == Some(RegularityClass::DivFree2d) && file.dim != 2 {
        violations.push("divfree_2d requires dim = 2".into());
    }

    // Realization can fail for reasons the shallow checks miss (exponent
    // ranges, slice counts); surface those too instead of crashing later.
    let realized = if violations.is_empty() {
        match file
            .recipe(None)
            .and_then(|r| r.realize(file.grid_n))
        {
            Ok(s) => Some(s),
            Err(e) => {
                violations.push(format!("realization failed: {e}"));
                None
            }
        }
    } else {
        None
    };

    if let Some(scen) = &realized {
        let c = &scen.coeffs;
        let sup_a = c.diffusion_sup();
        checks.push(CheckLine {
            name: "bounded diffusion (sup |a|)".into(),
            value: sup_a,
            limit: None,
            ok: sup_a.is_finite(),
        });
        match c.diffusion_divergence_sup() {
            Ok(sup_diva) => checks.push(CheckLine {
                name: "bounded diffusion divergence (sup |div a|)".into(),
                value: sup_diva,
                limit: None,
                ok: sup_diva.is_finite(),
            }),
            Err(e) => violations.push(format!("diffusion divergence check failed: {e}")),
        }
        let budget = negative_divergence_budget(c, file.horizon);
        match budget {
            Ok(b) => checks.push(CheckLine {
                name: "negative effective-drift divergence budget".into(),
                value: b.integral,
                limit: None,
                ok: b.integral.is_finite(),
            }),
            Err(e) => violations.push(format!("divergence budget failed: {e}")),
        }
        match c.ellipticity() {
            Ok(ell) => {
                let ok = ell >= c.alpha - 1e-9 * c.alpha.max(1.0);
                checks.push(CheckLine {
                    name: "uniform ellipticity (min eigenvalue vs declared floor)".into(),
                    value: ell,
                    limit: Some(c.alpha),
                    ok,
                });
            }
            Err(e) => violations.push(format!("ellipticity check failed: {e}")),
        }

        let inv = |x: f64| if x.is_finite() { 1.0 / x } else { 0.0 };
        let pairing = inv(file.p.0) + inv(file.q.0);
        let pairing_ok = pairing <= 0.5 + 1e-12;
        checks.push(CheckLine {
            name: "integrability pairing 1/p + 1/q".into(),
            value: pairing,
            limit: Some(0.5),
            ok: pairing_ok,
        });

        // Descriptive regime summary: which estimates the hypotheses turn on.
        if file.p.0.is_infinite() {
            regimes.push(
                "bounded-drift regime: exponential norm control by the drift-divergence budget"
                    .into(),
            );
        }
        if pairing_ok {
            let endpoint = (pairing - 0.5).abs() <= 1e-12;
            regimes.push(if endpoint {
                "integrability pairing at the endpoint 1/p + 1/q = 1/2: square-integrable gradient bound applies"
                    .into()
            } else {
                "integrability pairing strict: square-integrable gradient bound applies with margin"
                    .into()
            });
        } else {
            regimes.push(
                "pairing above 1/2: refinement studies outside the catalogued estimates".into(),
            );
        }
        if file.class_enum() == Some(RegularityClass::DivFree2d) {
            regimes.push("divergence-free drift: every L^q norm is non-increasing".into());
        }
        if let Some(steps) = file.steps {
            if let Ok(tg) = TimeGrid::new(file.horizon.max(f64::MIN_POSITIVE), steps) {
                let vmax = match fplab_core::coeffs::effective_drift_slices(c) {
                    Ok(v) => v.iter().fold(0.0f64, |m, f| m.max(f.max_norm())),
                    Err(_) => f64::INFINITY,
                };
                if vmax > 0.0 {
                    let dt_max = c.grid.spacing() / (2.0 * c.grid.dim() as f64 * vmax);
                    if tg.dt() > dt_max * (1.0 + 1e-9) {
                        violations.push(format!(
                            "configured dt {:.3e} violates the advective stability bound {:.3e}",
                            tg.dt(),
                            dt_max
                        ));
                    }
                }
            }
        }
    }

    let ok = violations.is_empty() && checks.iter().all(|c| c.ok);
    ValidationReport {
        label: file.label.clone(),
        violations,
        checks,
        regimes,
        ok,
    }
}
