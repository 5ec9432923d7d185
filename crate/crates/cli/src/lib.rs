//! Scenario runner: parses a scenario file, runs one subcommand against it and
//! writes a JSON report plus CSV tables.

pub mod scenario;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Parser;
use kfp_core::besov::{besov_seminorm_on, BesovGrid};
use kfp_core::dimension::{classify_regime, log_grid, volume_table, DimensionProfile, Regime};
use kfp_core::embedding::{
    check_blowup, check_coarea, check_embedding_mixed, check_embedding_uniform, level_profile, sigma_grid_for,
};
use kfp_core::kernel::{apply_semigroup, x_normalization, y_normalization, Method};
use kfp_core::nonlocal::{fractional_power, perimeter};
use kfp_core::report::{Num, VerificationReport};
use kfp_core::{EmbeddingReport, KfpError, SamplerState, ScalarField};
use serde::{Deserialize, Serialize};

pub use scenario::{load_config, parse_config, Scenario};

/// Version tag of the JSON report layout.
pub const SCHEMA: &str = "kfp-report/1";

pub const COMMANDS: [&str; 9] = ["check", "volume", "dims", "kernel", "apply", "fracpow", "perimeter", "besov", "verify"];
pub const TARGETS: [&str; 5] = ["coarea", "blowup", "isoperimetric", "embedding", "embedding-mixed"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error in {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("unknown subcommand `{0}` (expected one of: {list})", list = COMMANDS.join(", "))]
    UnknownSubcommand(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] KfpError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Input and module errors all map to exit code 2.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

/// A named numeric table; informational, always passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Num>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|v| Num(*v)).collect());
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Report {
    Verification(VerificationReport),
    Embedding(EmbeddingReport),
    Dimension(DimensionProfile),
    Table(Table),
}

impl Report {
    pub fn name(&self) -> &str {
        match self {
            Report::Verification(r) => &r.name,
            Report::Embedding(r) => &r.name,
            Report::Dimension(_) => "dimension_profile",
            Report::Table(t) => &t.name,
        }
    }

    pub fn pass(&self) -> bool {
        match self {
            Report::Verification(r) => r.pass,
            Report::Embedding(r) => r.pass,
            Report::Dimension(d) => !matches!(d.regime, Regime::Unsupported),
            Report::Table(_) => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub schema: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    /// The scenario with every default filled in.
    pub scenario: Scenario,
    pub reports: Vec<Report>,
    /// CSV file names relative to the output directory.
    pub csv_paths: Vec<String>,
    pub exit_code: i32,
}

impl RunArtifact {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization")
    }
}

#[derive(Debug, Parser)]
#[command(name = "kfp", about = "Checks for constant-coefficient Kolmogorov-Fokker-Planck operators")]
struct Args {
    /// One of check, volume, dims, kernel, apply, fracpow, perimeter, besov, verify.
    command: String,
    #[arg(long)]
    config: PathBuf,
    /// Directory for the JSON report and CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// For `verify`: coarea, blowup, isoperimetric, embedding or embedding-mixed.
    #[arg(long)]
    target: Option<String>,
}

/// Parses `argv` (program name first), runs the command and, with `--out`,
/// writes the report files.
pub fn run_command<S: AsRef<str>>(argv: &[S]) -> Result<RunArtifact, CliError> {
    let args = Args::try_parse_from(argv.iter().map(|s| s.as_ref())).map_err(|e| CliError::Usage(e.to_string()))?;
    if !COMMANDS.contains(&args.command.as_str()) {
        return Err(CliError::UnknownSubcommand(args.command));
    }
    let scenario = load_config(&args.config)?;
    let mut artifact = run_scenario(&scenario, &args.command, args.target.as_deref())?;
    if let Some(dir) = &args.out {
        emit_report(&mut artifact, dir)?;
    }
    Ok(artifact)
}

pub fn run_scenario(scenario: &Scenario, command: &str, target: Option<&str>) -> Result<RunArtifact, CliError> {
    let reports = match command {
        "check" => check(scenario)?,
        "volume" => volume(scenario)?,
        "dims" => dims(scenario)?,
        "kernel" => kernel(scenario)?,
        "apply" => apply(scenario)?,
        "fracpow" => fracpow(scenario)?,
        "perimeter" => perimeters(scenario)?,
        "besov" => besov(scenario)?,
        "verify" => {
            let t = target.ok_or_else(|| CliError::Usage(format!("verify needs --target ({})", TARGETS.join("|"))))?;
            verify(scenario, t)?
        }
        other => return Err(CliError::UnknownSubcommand(other.to_string())),
    };
    let exit_code = if reports.iter().all(Report::pass) { 0 } else { 1 };
    Ok(RunArtifact {
        schema: SCHEMA.to_string(),
        command: command.to_string(),
        target: if command == "verify" { target.map(str::to_string) } else { None },
        scenario: scenario.clone(),
        reports,
        csv_paths: Vec::new(),
        exit_code,
    })
}

fn t_grid(sc: &Scenario) -> Vec<f64> {
    log_grid(sc.grids.t_min, sc.grids.t_max, sc.grids.t_points)
}

fn check(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let mut rep = r.spec.hormander_grid_check(&t_grid(sc));
    rep.note("trace_b", r.spec.trace_b());
    Ok(vec![Report::Verification(rep)])
}

fn volume(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let mut t = Table::new("volume", &["t", "V", "local_slope"]);
    for (a, v, s) in volume_table(&r.spec, &t_grid(sc)) {
        t.push(&[a, v, s]);
    }
    Ok(vec![Report::Table(t)])
}

fn dims(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let profile = classify_regime(&r.spec, sc.grids.d)?;
    let mut rep = VerificationReport::new("dimension_expectations");
    rep.pass = true;
    let mut cmp = |key: &str, got: f64, want: Option<f64>| {
        if let Some(w) = want {
            let ok = (got - w).abs() <= sc.tolerance(key) * w.abs();
            rep.push_cmp(w, got, w, ok);
            rep.pass &= ok;
        }
    };
    cmp("d_zero", profile.zero_fit.estimate, sc.expect.d_zero);
    cmp("d_infinity", profile.infinity.estimate, sc.expect.d_infinity);
    if let Some(unbounded) = sc.expect.d_infinity_unbounded {
        let ok = profile.d_infinity.is_infinite() == unbounded;
        rep.push_row(f64::INFINITY, profile.d_infinity, ok);
        rep.pass &= ok;
    }
    Ok(vec![Report::Dimension(profile), Report::Verification(rep)])
}

fn kernel(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    if r.spec.dim() != 2 {
        return Err(CliError::Validation("kernel normalization checks are planar".into()));
    }
    let trb = r.spec.trace_b();
    let mut ys = VerificationReport::new("kernel_y_mass");
    let mut xs = VerificationReport::new("kernel_x_mass");
    ys.pass = true;
    xs.pass = true;
    ys.tolerance = 1e-6;
    xs.tolerance = 1e-4;
    for &t in &sc.grids.times {
        let params = r.spec.gramian(t)?;
        for p in &sc.grids.probes {
            let y = y_normalization(&r.spec, &params, p)?;
            let ok = (y - 1.0).abs() < ys.tolerance;
            ys.push_cmp(t, y, 1.0, ok);
            ys.pass &= ok;
            let want = (-t * trb).exp();
            let x = x_normalization(&r.spec, &params, p)?;
            let ok = (x - want).abs() < xs.tolerance * want.max(1.0);
            xs.push_cmp(t, x, want, ok);
            xs.pass &= ok;
        }
    }
    Ok(vec![Report::Verification(ys), Report::Verification(xs)])
}

fn apply(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let mut state = SamplerState::new(sc.seed);
    let mut t = Table::new("apply", &["field", "t", "probe", "value", "ci"]);
    for (i, (_, f)) in r.fields.iter().enumerate() {
        let method = if matches!(f, ScalarField::Mixture(_)) {
            Method::Analytic
        } else {
            Method::Quadrature
        };
        for &time in &sc.grids.times {
            let params = r.spec.gramian(time)?;
            for (k, p) in sc.grids.probes.iter().enumerate() {
                let a = apply_semigroup(&r.spec, &params, f, p, method, &mut state)?;
                t.push(&[i as f64, time, k as f64, a.value, a.ci.unwrap_or(0.0)]);
            }
        }
    }
    Ok(vec![Report::Table(t)])
}

fn fracpow(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let mut state = SamplerState::new(sc.seed);
    let mut t = Table::new("fracpow", &["field", "probe", "value", "error"]);
    for (i, (_, f)) in r.fields.iter().enumerate() {
        for (k, p) in sc.grids.probes.iter().enumerate() {
            let v = fractional_power(&r.spec, &r.fractional, f, p, &mut state)?;
            t.push(&[i as f64, k as f64, v.value, v.uncertainty()]);
        }
    }
    Ok(vec![Report::Table(t)])
}

fn perimeters(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let mut state = SamplerState::new(sc.seed);
    let mut t = Table::new("perimeter", &["set", "measure", "value", "error", "ci"]);
    for (i, (_, set)) in r.sets.iter().enumerate() {
        let p = perimeter(&r.spec, &r.fractional, set, &mut state)?;
        t.push(&[i as f64, set.volume(), p.value, p.error, p.ci.unwrap_or(0.0)]);
    }
    Ok(vec![Report::Table(t)])
}

fn besov(sc: &Scenario) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let mut state = SamplerState::new(sc.seed);
    let grid = BesovGrid {
        samples: sc.grids.besov_samples,
        ..BesovGrid::default()
    };
    let mut t = Table::new("besov", &["field", "value", "error", "ci"]);
    for (i, (_, f)) in r.fields.iter().enumerate() {
        let b = besov_seminorm_on(&r.spec, &r.fractional, f, &grid, &mut state)?;
        t.push(&[i as f64, b.value, b.error, b.ci]);
    }
    Ok(vec![Report::Table(t)])
}

fn profile_table(name: &str, f: &ScalarField, n: usize) -> Result<Table, CliError> {
    let sigmas = sigma_grid_for(f, n)?;
    let prof = level_profile(f, &sigmas)?;
    let mut t = Table::new(&format!("profile_{name}"), &["sigma", "G"]);
    for (s, g) in prof.sigmas.iter().zip(&prof.g) {
        t.push(&[*s, *g]);
    }
    Ok(t)
}

fn spread_pass(rep: &mut EmbeddingReport, tol: f64) {
    rep.tolerance = tol;
    rep.pass = rep.rows.iter().all(|r| r.pass) && rep.spread.is_finite() && rep.spread < tol;
}

fn verify(sc: &Scenario, target: &str) -> Result<Vec<Report>, CliError> {
    let r = sc.resolve()?;
    let mut state = SamplerState::new(sc.seed);
    let need = |what: &str| CliError::Validation(format!("verify {target} needs `verify.{what}`"));
    match target {
        "coarea" => {
            let name = sc.verify.coarea_field.as_deref().ok_or_else(|| need("coarea_field"))?;
            let ScalarField::Grid(g) = r.field(name)? else {
                return Err(CliError::Validation(format!("coarea field `{name}` must be a grid field")));
            };
            let mut rep = check_coarea(&r.spec, &r.fractional, g, &mut state)?;
            let tol = sc.tolerance("coarea");
            rep.tolerance = tol;
            rep.pass = rep.diag("relative_gap").is_some_and(|g| g < tol);
            let profile = profile_table(name, r.field(name)?, sc.grids.sigma_points)?;
            Ok(vec![Report::Verification(rep), Report::Table(profile)])
        }
        "blowup" => {
            let name = sc.verify.blowup_set.as_deref().ok_or_else(|| need("blowup_set"))?;
            let rep = check_blowup(&r.spec, r.set(name)?, &sc.verify.blowup_times)?;
            Ok(vec![Report::Verification(rep)])
        }
        "isoperimetric" => {
            if sc.verify.iso_sets.is_empty() {
                return Err(need("iso_sets"));
            }
            let family = sc
                .verify
                .iso_sets
                .iter()
                .map(|n| r.set(n).map(|s| ScalarField::Indicator(s.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            let profile = classify_regime(&r.spec, sc.grids.d)?;
            let mut rep = match profile.regime {
                Regime::MixedGrowth { .. } => {
                    let mut rep = check_embedding_mixed(&r.spec, &r.fractional, &family, &mut state)?;
                    spread_pass(&mut rep, sc.tolerance("mixed_spread"));
                    rep
                }
                _ => {
                    let d = sc.grids.d.unwrap_or(profile.d_zero);
                    let mut rep = check_embedding_uniform(&r.spec, &r.fractional, &family, d, &mut state)?;
                    spread_pass(&mut rep, sc.tolerance("embedding_spread"));
                    rep
                }
            };
            rep.name = "isoperimetric".into();
            Ok(vec![Report::Embedding(rep)])
        }
        "embedding" | "embedding-mixed" => {
            if sc.verify.family.is_empty() {
                return Err(need("family"));
            }
            let family = sc
                .verify
                .family
                .iter()
                .map(|n| r.field(n).cloned())
                .collect::<Result<Vec<_>, _>>()?;
            let mut rep = if target == "embedding" {
                let d = match sc.grids.d {
                    Some(d) => d,
                    None => classify_regime(&r.spec, None)?.d_zero,
                };
                let mut rep = check_embedding_uniform(&r.spec, &r.fractional, &family, d, &mut state)?;
                spread_pass(&mut rep, sc.tolerance("embedding_spread"));
                rep
            } else {
                let mut rep = check_embedding_mixed(&r.spec, &r.fractional, &family, &mut state)?;
                spread_pass(&mut rep, sc.tolerance("mixed_spread"));
                rep
            };
            rep.name = target.to_string();
            let mut out = vec![Report::Embedding(rep)];
            for n in &sc.verify.family {
                if let Ok(t) = profile_table(n, r.field(n)?, sc.grids.sigma_points) {
                    out.push(Report::Table(t));
                }
            }
            Ok(out)
        }
        other => Err(CliError::Usage(format!("unknown verify target `{other}` ({})", TARGETS.join("|")))),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn csv_rows(columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = columns.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.join(","));
    }
    s
}

/// CSV text for one report, `None` for reports without a table.
///
/// Columns: tables use their own (`t,V,local_slope` for volume, `sigma,G` for
/// profiles); checks use `lhs,rhs,ratio,pass`, one row per family member or
/// time.
pub fn report_csv(report: &Report) -> Option<String> {
    let check_rows = |rows: &[kfp_core::report::ReportRow]| {
        csv_rows(
            &["lhs", "rhs", "ratio", "pass"],
            rows.iter()
                .map(|r| vec![r.lhs.to_string(), r.rhs.to_string(), r.ratio.to_string(), r.pass.to_string()]),
        )
    };
    match report {
        Report::Table(t) => {
            let cols: Vec<&str> = t.columns.iter().map(String::as_str).collect();
            Some(csv_rows(&cols, t.rows.iter().map(|r| r.iter().map(|v| v.0.to_string()).collect())))
        }
        Report::Verification(r) => Some(check_rows(&r.rows)),
        Report::Embedding(r) => Some(check_rows(&r.rows)),
        Report::Dimension(_) => None,
    }
}

/// Writes `<command>[-<target>].json` and one CSV per tabular report into
/// `dir`, recording the CSV names in the artifact first.
pub fn emit_report(artifact: &mut RunArtifact, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let mut names = Vec::new();
    for report in &artifact.reports {
        if let Some(text) = report_csv(report) {
            let name = format!("{}.csv", report.name());
            let path = dir.join(&name);
            write(&path, &text)?;
            names.push(name);
            written.push(path);
        }
    }
    artifact.csv_paths = names;
    let stem = match &artifact.target {
        Some(t) => format!("{}-{t}", artifact.command),
        None => artifact.command.clone(),
    };
    let path = dir.join(format!("{stem}.json"));
    write(&path, &artifact.to_json())?;
    written.push(path);
    Ok(written)
}
