//! Run configuration: a TOML file with the sections `[domain]`,
//! `[integrator]`, `[forcing]`, `[initial]`, `[output]`, `[periodic]` and
//! `[verify]`. Every key is optional. Relative paths resolve against the
//! directory holding the config file.

use std::f64::consts::E;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use crate::basis::{DomainSpec, SpectralBasis};
use crate::diagnostics::{DiagnosticsConfig, Q_COLUMNS};
use crate::dynamics::{ForcingSpec, IntegratorConfig, Scheme};
use crate::error::Result;
use crate::field::RawField;
use crate::periodic::PeriodicSolveConfig;
use crate::profiles::{random_raw, single_mode_raw, Profile};

use super::CliError;

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DomainSection {
    pub h: f64,
    pub lx: f64,
    pub ly: f64,
    pub mx: usize,
    pub my: usize,
    pub k: usize,
    pub nq_x: Option<usize>,
    pub nq_y: Option<usize>,
    pub nq_z: Option<usize>,
}

impl Default for DomainSection {
    fn default() -> Self {
        Self {
            h: 1.0,
            lx: 1.0,
            ly: 1.0,
            mx: 8,
            my: 8,
            k: 8,
            nq_x: None,
            nq_y: None,
            nq_z: None,
        }
    }
}

impl DomainSection {
    pub fn spec(&self) -> DomainSpec {
        let mut s = DomainSpec::new(self.h, self.lx, self.ly, self.mx, self.my, self.k);
        s.nq_x = self.nq_x.unwrap_or(s.nq_x);
        s.nq_y = self.nq_y.unwrap_or(s.nq_y);
        s.nq_z = self.nq_z.unwrap_or(s.nq_z);
        s
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSection {
    pub dt: f64,
    pub scheme: Scheme,
    pub t_end: f64,
    pub diag_every: usize,
    pub checkpoint_every: Option<usize>,
    pub nonlinear: bool,
    pub blowup_ceiling: f64,
    pub cfl: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let d = IntegratorConfig::default();
        Self {
            dt: d.dt,
            scheme: d.scheme,
            t_end: d.t_end,
            diag_every: d.diag_every,
            checkpoint_every: d.checkpoint_every,
            nonlinear: d.nonlinear,
            blowup_ceiling: d.blowup_ceiling,
            cfl: d.cfl,
        }
    }
}

impl IntegratorSection {
    pub fn config(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.dt,
            scheme: self.scheme,
            t_end: self.t_end,
            diag_every: self.diag_every,
            checkpoint_every: self.checkpoint_every,
            nonlinear: self.nonlinear,
            blowup_ceiling: self.blowup_ceiling,
            cfl: self.cfl,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    #[default]
    Zero,
    Steady,
    Periodic,
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingShape {
    /// One raw mode `[c, k, m, n]`.
    #[default]
    Mode,
    Random,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingSection {
    pub kind: ForcingKind,
    pub shape: ForcingShape,
    /// `[c, k, m, n]` with 1-based `c, m, n`.
    pub mode: [usize; 4],
    pub amplitude: f64,
    pub period: f64,
    /// Phase shift θ in `cos(2πt/T − θ)`, shared by all coefficients.
    pub phase: f64,
    pub seed: u64,
}

impl Default for ForcingSection {
    fn default() -> Self {
        Self {
            kind: ForcingKind::Zero,
            shape: ForcingShape::Mode,
            mode: [1, 1, 1, 1],
            amplitude: 0.0,
            period: 1.0,
            phase: 0.0,
            seed: 0,
        }
    }
}

impl ForcingSection {
    fn violations(&self, spec: &DomainSpec) -> Vec<String> {
        let mut out = Vec::new();
        if !self.amplitude.is_finite() {
            out.push(format!("forcing.amplitude must be finite (got {})", self.amplitude));
        }
        if !self.phase.is_finite() {
            out.push(format!("forcing.phase must be finite (got {})", self.phase));
        }
        if self.kind == ForcingKind::Periodic && !(self.period.is_finite() && self.period > 0.0) {
            out.push(format!("forcing.period must be positive (got {})", self.period));
        }
        if self.kind != ForcingKind::Zero && self.shape == ForcingShape::Mode {
            let [c, k, m, n] = self.mode;
            if !(1..=2).contains(&c) || k > spec.k || !(1..=spec.mx).contains(&m) || !(1..=spec.my).contains(&n) {
                out.push(format!(
                    "forcing.mode = [{c}, {k}, {m}, {n}] lies outside c in 1..=2, k <= {}, m <= {}, n <= {}",
                    spec.k, spec.mx, spec.my
                ));
            }
        }
        out
    }

    pub fn spec(&self, basis: &SpectralBasis) -> Result<ForcingSpec> {
        if self.kind == ForcingKind::Zero {
            return Ok(ForcingSpec::Zero);
        }
        let raw = match self.shape {
            ForcingShape::Mode => {
                let [c, k, m, n] = self.mode;
                single_mode_raw(basis, c, k, m, n, self.amplitude)?
            }
            ForcingShape::Random => random_raw(basis, self.amplitude, self.seed),
        };
        Ok(match self.kind {
            ForcingKind::Zero => unreachable!(),
            ForcingKind::Steady => ForcingSpec::Steady(raw),
            ForcingKind::Periodic => {
                let mut phase = RawField::zeros(basis.spec());
                phase.coeffs_mut().fill(self.phase);
                ForcingSpec::Periodic {
                    amplitude: raw,
                    period: self.period,
                    phase,
                }
            }
        })
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Regularity {
    #[default]
    Strong,
    /// Skips the finiteness check on `‖∇_H v₀‖`.
    ZWeak,
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub profile: String,
    pub amplitude: f64,
    pub seed: u64,
    /// Takes precedence over `profile`.
    pub checkpoint: Option<PathBuf>,
    pub regularity: Regularity,
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            profile: "zero".into(),
            amplitude: 0.1,
            seed: 0,
            checkpoint: None,
            regularity: Regularity::Strong,
        }
    }
}

impl InitialSection {
    pub fn profile(&self) -> Result<Profile> {
        self.profile.parse()
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub csv: PathBuf,
    /// Periodic checkpoints are `<prefix>_<step>.pehv`.
    pub checkpoint_prefix: String,
    pub final_checkpoint: PathBuf,
    pub periodic_checkpoint: PathBuf,
    pub q_list: Vec<f64>,
    pub eta: f64,
    pub e: f64,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "output".into(),
            csv: "diagnostics.csv".into(),
            checkpoint_prefix: "checkpoint".into(),
            final_checkpoint: "final.pehv".into(),
            periodic_checkpoint: "periodic_v0.pehv".into(),
            q_list: Q_COLUMNS.to_vec(),
            eta: 2.0,
            e: E,
        }
    }
}

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodicSection {
    /// Defaults to the forcing period.
    pub period: Option<f64>,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub anderson: Option<usize>,
    pub ensemble: usize,
    pub delta: Option<f64>,
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for PeriodicSection {
    fn default() -> Self {
        let d = PeriodicSolveConfig::default();
        Self {
            period: None,
            damping: d.damping,
            tol: d.tol,
            max_iter: d.max_iter,
            anderson: d.anderson,
            ensemble: d.ensemble,
            delta: d.delta,
            power_iterations: d.power_iterations,
            seed: d.seed,
        }
    }
}

/// Names accepted by `verify`.
pub const CHECKS: [&str; 10] = [
    "energy",
    "cancellation",
    "kinematics",
    "pressure",
    "lq",
    "apriori",
    "barotropic",
    "sqrt-q",
    "gronwall",
    "checkpoint",
];

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub checks: Vec<String>,
    pub energy_tol: f64,
    pub cancellation_tol: f64,
    pub kinematics_tol: f64,
    pub pressure_tol: f64,
    /// Ceiling on the fitted pressure-bound constant.
    pub pressure_bound: f64,
    pub lq_q: f64,
    pub gronwall_tol: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            checks: CHECKS.iter().map(|s| s.to_string()).collect(),
            energy_tol: 1e-6,
            cancellation_tol: 1e-10,
            kinematics_tol: 1e-10,
            pressure_tol: 1e-10,
            pressure_bound: 1.0 + 1e-8,
            lq_q: 4.0,
            gronwall_tol: 1e-10,
        }
    }
}

impl VerifySection {
    pub fn check_violations(checks: &[String]) -> Vec<String> {
        checks
            .iter()
            .filter(|c| !CHECKS.contains(&c.as_str()))
            .map(|c| format!("unknown verify check {c:?} (known: {})", CHECKS.join(", ")))
            .collect()
    }
}

#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
struct Sections {
    domain: DomainSection,
    integrator: IntegratorSection,
    forcing: ForcingSection,
    initial: InitialSection,
    output: OutputSection,
    periodic: PeriodicSection,
    verify: VerifySection,
}

/// Fully validated configuration with resolved paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Directory of the config file; relative paths are resolved against it.
    pub base_dir: PathBuf,
    pub domain: DomainSection,
    pub integrator: IntegratorSection,
    pub forcing: ForcingSection,
    pub initial: InitialSection,
    pub output: OutputSection,
    pub periodic: PeriodicSection,
    pub verify: VerifySection,
}

const KNOWN_KEYS: [(&str, &[&str]); 7] = [
    ("domain", &["h", "lx", "ly", "mx", "my", "k", "nq_x", "nq_y", "nq_z"]),
    (
        "integrator",
        &["dt", "scheme", "t_end", "diag_every", "checkpoint_every", "nonlinear", "blowup_ceiling", "cfl"],
    ),
    ("forcing", &["kind", "shape", "mode", "amplitude", "period", "phase", "seed"]),
    ("initial", &["profile", "amplitude", "seed", "checkpoint", "regularity"]),
    (
        "output",
        &["dir", "csv", "checkpoint_prefix", "final_checkpoint", "periodic_checkpoint", "q_list", "eta", "e"],
    ),
    (
        "periodic",
        &["period", "damping", "tol", "max_iter", "anderson", "ensemble", "delta", "power_iterations", "seed"],
    ),
    (
        "verify",
        &[
            "checks",
            "energy_tol",
            "cancellation_tol",
            "kinematics_tol",
            "pressure_tol",
            "pressure_bound",
            "lq_q",
            "gronwall_tol",
        ],
    ),
];

/// Removes unknown sections and keys, returning one message per removal.
fn strip_unknown(table: &mut toml::Table) -> Vec<String> {
    let mut out = Vec::new();
    let names: Vec<String> = table.keys().cloned().collect();
    for name in names {
        let Some((_, keys)) = KNOWN_KEYS.iter().find(|(s, _)| *s == name) else {
            out.push(format!("unknown section [{name}]"));
            table.remove(&name);
            continue;
        };
        match table.get_mut(&name) {
            Some(toml::Value::Table(section)) => {
                let unknown: Vec<String> = section.keys().filter(|k| !keys.contains(&k.as_str())).cloned().collect();
                for key in unknown {
                    out.push(format!("unknown key {name}.{key}"));
                    section.remove(&key);
                }
            }
            _ => {
                out.push(format!("[{name}] must be a table"));
                table.remove(&name);
            }
        }
    }
    out
}

impl RunConfig {
    /// Defaults everywhere, rooted at `base_dir`.
    pub fn defaults(base_dir: impl Into<PathBuf>) -> Self {
        Self::from_sections(Sections::default(), base_dir.into())
    }

    fn from_sections(s: Sections, base_dir: PathBuf) -> Self {
        Self {
            base_dir,
            domain: s.domain,
            integrator: s.integrator,
            forcing: s.forcing,
            initial: s.initial,
            output: s.output,
            periodic: s.periodic,
            verify: s.verify,
        }
    }

    /// Parses and validates TOML text.
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> std::result::Result<Self, CliError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
        let mut violations = strip_unknown(&mut table);
        let sections: Sections = table.try_into().map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
        let cfg = Self::from_sections(sections, base_dir.into());
        violations.extend(cfg.violations());
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Invalid(violations))
        }
    }

    /// Every violated constraint; checked before anything is allocated.
    pub fn violations(&self) -> Vec<String> {
        let spec = self.domain.spec();
        let mut out = spec.violations();
        out.extend(self.integrator.config().violations());
        out.extend(self.forcing.violations(&spec));
        if let Err(e) = self.initial.profile() {
            out.push(e.to_string());
        }
        if !self.initial.amplitude.is_finite() {
            out.push(format!("initial.amplitude must be finite (got {})", self.initial.amplitude));
        }
        out.extend(self.diagnostics().violations());
        if self.output.checkpoint_prefix.is_empty() {
            out.push("output.checkpoint_prefix must not be empty".into());
        }
        out.extend(self.periodic_config().violations());
        if let (Some(p), ForcingKind::Periodic) = (self.periodic.period, self.forcing.kind) {
            let ratio = p / self.forcing.period;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
                out.push(format!(
                    "periodic.period = {p} is not a multiple of forcing.period = {}",
                    self.forcing.period
                ));
            }
        }
        out.extend(VerifySection::check_violations(&self.verify.checks));
        let v = &self.verify;
        for (name, tol) in [
            ("energy_tol", v.energy_tol),
            ("cancellation_tol", v.cancellation_tol),
            ("kinematics_tol", v.kinematics_tol),
            ("pressure_tol", v.pressure_tol),
            ("pressure_bound", v.pressure_bound),
            ("gronwall_tol", v.gronwall_tol),
        ] {
            if !(tol.is_finite() && tol > 0.0) {
                out.push(format!("verify.{name} must be positive (got {tol})"));
            }
        }
        if !(v.lq_q > 2.0 && Q_COLUMNS.contains(&v.lq_q)) {
            out.push(format!("verify.lq_q must be one of 3, 4, 6, 8 (got {})", v.lq_q));
        }
        out
    }

    pub fn spec(&self) -> DomainSpec {
        self.domain.spec()
    }

    pub fn diagnostics(&self) -> DiagnosticsConfig {
        DiagnosticsConfig {
            q_list: self.output.q_list.clone(),
            eta: self.output.eta,
            e: self.output.e,
            nonlinear: self.integrator.nonlinear,
        }
    }

    pub fn forcing_spec(&self, basis: &Arc<SpectralBasis>) -> Result<ForcingSpec> {
        self.forcing.spec(basis)
    }

    pub fn periodic_config(&self) -> PeriodicSolveConfig {
        let p = &self.periodic;
        PeriodicSolveConfig {
            period: p.period.unwrap_or(self.forcing.period),
            damping: p.damping,
            tol: p.tol,
            max_iter: p.max_iter,
            anderson: p.anderson,
            integrator: self.integrator.config(),
            ensemble: p.ensemble,
            delta: p.delta,
            power_iterations: p.power_iterations,
            seed: p.seed,
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output.dir)
    }

    fn in_output(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.output_dir().join(p)
        }
    }

    pub fn csv_path(&self) -> PathBuf {
        self.in_output(&self.output.csv)
    }

    pub fn final_checkpoint_path(&self) -> PathBuf {
        self.in_output(&self.output.final_checkpoint)
    }

    pub fn periodic_checkpoint_path(&self) -> PathBuf {
        self.in_output(&self.output.periodic_checkpoint)
    }

    pub fn checkpoint_path(&self, step: usize) -> PathBuf {
        self.output_dir()
            .join(format!("{}_{step:08}.pehv", self.output.checkpoint_prefix))
    }

    pub fn initial_checkpoint(&self) -> Option<PathBuf> {
        self.initial.checkpoint.as_deref().map(|p| self.resolve(p))
    }
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: &Path) -> std::result::Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::MissingFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    RunConfig::from_toml(&text, base)
}
