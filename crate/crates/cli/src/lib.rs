//! Command implementations behind the `dds` binary.
//!
//! Each `cmd_*` function does the work of one subcommand and returns a
//! report; the binary only parses arguments and prints. Everything written to
//! disk is a pure function of the inputs, the config and the seed. Wall-clock
//! times are reported on stdout only.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use rayon::prelude::*;

use dds_core::cat::{compare_runs, run_scheme_timed, ComparisonRow, MetricKind, RunResult, SUMMARY_HEADER};
use dds_core::config::RunConfig;
use dds_core::dds::{self, DdsModel, ValidationReport};
use dds_core::forest::{cross_validate, export_conditional_code, verify_export, CvReport};
use dds_core::metrics::{timed, SummaryStats};
use dds_core::seed::{derive_seed, stream};
use dds_core::trace::{load_dataset, load_trace, FEATURE_COUNT, FEATURE_NAMES};

/// Random inputs checked after every export.
pub const EXPORT_CHECKS: usize = 1000;

/// Loads the config at `path` (defaults when absent) and applies a seed
/// override.
pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Picks the explicit path, else the one from the config.
pub fn resolve(explicit: Option<PathBuf>, configured: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    explicit
        .or_else(|| configured.clone())
        .with_context(|| format!("no {what} given (pass it as an argument or set path.{what} in the config)"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: usize,
    pub folds: usize,
    pub cv: CvReport,
    pub importances: Vec<f64>,
    pub leaf_count: usize,
    pub train_secs: f64,
}

/// Cross-validates, then trains the full model and saves the bundle to `out`.
pub fn cmd_train(dataset: &Path, cfg: &RunConfig, out: &Path) -> Result<TrainReport> {
    let d = load_dataset(dataset)?;
    let cv = cross_validate(&d, &cfg.forest_config(), cfg.cv_folds, cfg.fold_seed())?;
    let (model, train_secs) = timed(|| DdsModel::build(&d, &cfg.dds_config()));
    let model = model?;
    model.save(out)?;
    Ok(TrainReport {
        records: d.len(),
        folds: cfg.cv_folds,
        cv,
        importances: model.forest().feature_importance(),
        leaf_count: model.forest().leaf_count(),
        train_secs,
    })
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records: {}", self.records)?;
        writeln!(f, "{}-fold CV R²: {:.4}", self.folds, self.cv.pooled_r2)?;
        let folds: Vec<String> = self.cv.fold_r2.iter().map(|r| format!("{r:.3}")).collect();
        writeln!(f, "per-fold R²: {}", folds.join(" "))?;
        writeln!(f, "feature importance (MDI):")?;
        let mut ranked: Vec<(usize, f64)> = self.importances.iter().copied().enumerate().collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (i, v) in ranked {
            let name = if self.importances.len() == FEATURE_COUNT {
                FEATURE_NAMES[i].to_string()
            } else {
                format!("x{i}")
            };
            writeln!(f, "  {name:<10} {v:.4}")?;
        }
        writeln!(f, "leaves: {}", self.leaf_count)?;
        write!(f, "training time: {:.3} s", self.train_secs)
    }
}

/// Replays `dataset` through the bundle at `model`; writes
/// `validation_summary.csv` and `validation_samples.csv` under `out` when
/// given.
pub fn cmd_validate(model: &Path, dataset: &Path, cfg: &RunConfig, out: Option<&Path>) -> Result<ValidationReport> {
    let m = DdsModel::load(model)?;
    ensure!(
        m.forest().n_features() == FEATURE_COUNT,
        "model {} expects {} features, datasets carry {FEATURE_COUNT}",
        model.display(),
        m.forest().n_features()
    );
    let d = load_dataset(dataset)?;
    let report = dds::validate(&m, &d, cfg.repeats, cfg.seed)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        write(&dir.join("validation_summary.csv"), &validation_summary_csv(&report))?;
        write(&dir.join("validation_samples.csv"), &validation_samples_csv(&report))?;
    }
    Ok(report)
}

fn columns(r: &ValidationReport) -> [(&'static str, &SummaryStats); 4] {
    [
        ("measured", &r.measured),
        ("rf_only", &r.rf_only),
        ("raw_gpr", &r.raw_gpr),
        ("dds", &r.dds),
    ]
}

/// One row per column, then the congruency metrics as trailing columns of
/// the `dds` row.
pub fn validation_summary_csv(r: &ValidationReport) -> String {
    let mut out = String::from("column,n,mean,std,min,q1,median,q3,max,quantile_r,out_of_range\n");
    for (name, s) in columns(r) {
        let (qr, oor) = match name {
            "dds" => (r.quantile_r.to_string(), "0".to_string()),
            "raw_gpr" => (String::new(), r.raw_out_of_range.to_string()),
            _ => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{},{},{qr},{oor}\n",
            s.n, s.mean, s.std, s.min, s.q1, s.median, s.q3, s.max
        ));
    }
    out
}

pub fn validation_samples_csv(r: &ValidationReport) -> String {
    let s = &r.samples;
    let mut out = String::from("measured,rf_only,raw_gpr,dds\n");
    for i in 0..s.measured.len() {
        out.push_str(&format!("{},{},{},{}\n", s.measured[i], s.rf_only[i], s.raw_gpr[i], s.dds[i]));
    }
    out
}

pub fn format_validation(r: &ValidationReport) -> String {
    let mut out = format!(
        "{:<10}{:>7}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
        "column", "n", "mean", "std", "min", "q1", "median", "q3", "max"
    );
    for (name, s) in columns(r) {
        out.push_str(&format!(
            "{name:<10}{:>7}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}\n",
            s.n, s.mean, s.std, s.min, s.q1, s.median, s.q3, s.max
        ));
    }
    out.push_str(&format!("sorted-quantile r (measured vs dds): {:.5}\n", r.quantile_r));
    out.push_str(&format!("raw GP samples outside the label range: {}", r.raw_out_of_range));
    out
}

#[derive(Debug, Clone)]
pub struct SimulateReport {
    /// Runs in scheme order, each with its wall-clock seconds.
    pub runs: Vec<(RunResult, f64)>,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// Baseline for uplift: `periodic` when configured, else the first scheme.
fn baseline_label(schemes: &[MetricKind]) -> &'static str {
    if schemes.contains(&MetricKind::Periodic) {
        MetricKind::Periodic.label()
    } else {
        schemes[0].label()
    }
}

/// Runs every configured scheme over the trace (in parallel) and writes
/// `events_<label>.csv` plus `summary.csv` under `out`.
pub fn cmd_simulate(model: &Path, trace: &Path, cfg: &RunConfig, out: &Path) -> Result<SimulateReport> {
    let m = DdsModel::load(model)?;
    let t = load_trace(trace)?;
    let mut seen = Vec::new();
    for kind in &cfg.schemes {
        ensure!(!seen.contains(kind), "scheme `{kind}` listed twice");
        seen.push(*kind);
    }
    let runs = cfg
        .schemes
        .par_iter()
        .enumerate()
        .map(|(i, &kind)| run_scheme_timed(&t, &cfg.cat_config(kind, i), &m))
        .collect::<dds_core::Result<Vec<_>>>()?;

    let baseline = baseline_label(&cfg.schemes).to_string();
    let results: Vec<RunResult> = runs.iter().map(|(r, _)| r.clone()).collect();
    let rows = if results.len() == 1 {
        // A lone run is its own baseline.
        let twice = [results[0].clone(), results[0].clone()];
        compare_runs(&twice, &baseline)?.into_iter().take(1).collect()
    } else {
        compare_runs(&results, &baseline)?
    };

    create_dir(out)?;
    for (r, _) in &runs {
        write(&out.join(format!("events_{}.csv", r.label)), &r.events_csv())?;
    }
    let mut summary = format!("{SUMMARY_HEADER}\n");
    for row in &rows {
        summary.push_str(&row.csv_row());
        summary.push('\n');
    }
    write(&out.join("summary.csv"), &summary)?;
    Ok(SimulateReport { runs, baseline, rows })
}

impl fmt::Display for SimulateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10}{:>8}{:>11}{:>11}{:>12}{:>12}{:>10}",
            "scheme", "events", "mean Mb/s", "delay s", "uplift %", "bytes", "wall s"
        )?;
        for (row, (run, secs)) in self.rows.iter().zip(&self.runs) {
            writeln!(
                f,
                "{:<10}{:>8}{:>11.3}{:>11.2}{:>12.2}{:>12}{:>10.4}",
                row.label,
                row.n_events,
                row.mean_rate,
                row.mean_delay,
                row.uplift_pct,
                run.transmitted_bytes(),
                secs
            )?;
        }
        write!(f, "uplift relative to `{}`", self.baseline)
    }
}

#[derive(Debug, Clone)]
pub struct ExportReport {
    pub trees: usize,
    pub bytes: usize,
    pub checked: usize,
}

/// Seed for the random inputs of export verification.
pub fn export_check_seed(cfg: &RunConfig) -> u64 {
    derive_seed(cfg.seed, stream::EXPORT)
}

/// Writes the conditional code for the bundle's forest to `out` and checks
/// it against the in-memory forest.
pub fn cmd_export(model: &Path, cfg: &RunConfig, out: &Path) -> Result<ExportReport> {
    let m = DdsModel::load(model)?;
    let src = export_conditional_code(m.forest());
    if let Err(e) = verify_export(m.forest(), &src, EXPORT_CHECKS, export_check_seed(cfg)) {
        bail!("internal error: freshly exported code disagrees with the model: {e}");
    }
    write(out, &src)?;
    Ok(ExportReport {
        trees: m.forest().trees().len(),
        bytes: src.len(),
        checked: EXPORT_CHECKS,
    })
}

/// Re-checks an existing export file against the bundle.
pub fn cmd_check_export(model: &Path, cfg: &RunConfig, exported: &Path) -> Result<usize> {
    let m = DdsModel::load(model)?;
    let src = fs::read_to_string(exported).with_context(|| format!("reading {}", exported.display()))?;
    verify_export(m.forest(), &src, EXPORT_CHECKS, export_check_seed(cfg))
        .with_context(|| format!("{} does not match {}", exported.display(), model.display()))?;
    Ok(EXPORT_CHECKS)
}
