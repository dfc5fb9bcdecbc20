//! Commands behind the `simreal` binary: `run`, `sweep` and `report`.
//!
//! Every `(strategy, seed)` cell writes `curve.csv` and `manifest.json` into
//! its own directory `<out>/<strategy>-seed<seed>/`. Existing cell
//! directories are never overwritten.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use simreal_core::config::{preset, ExperimentConfig, TrackKind, PRESETS};
use simreal_core::experiment::run_cells;
use simreal_core::pipeline::artifacts::{curve_csv, Manifest};
use simreal_core::pipeline::{GapReport, RunStatus};
use simreal_core::sampling::Strategy;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const REPORT_FILE: &str = "report.md";

/// Load a config from a file path, or a shipped preset by name.
pub fn load_config(source: &str) -> Result<ExperimentConfig> {
    let path = Path::new(source);
    if path.is_file() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        return ExperimentConfig::from_toml_str(&text).with_context(|| format!("config {}", path.display()));
    }
    preset(source).with_context(|| {
        format!("`{source}` is neither a config file nor a preset (presets: {})", PRESETS.join(", "))
    })
}

/// Default config of a track: its shipped preset.
pub fn default_config(track: TrackKind) -> ExperimentConfig {
    match track {
        TrackKind::Classification => preset("digits-analog"),
        TrackKind::Detection => preset("detection-analog"),
    }
    .expect("shipped preset")
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    /// Replaces the config's seed list.
    pub seed: Option<u64>,
    pub track: Option<TrackKind>,
    /// Replaces `run.strategies` when nonempty.
    pub strategies: Vec<Strategy>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(t) = self.track {
            cfg.track = t;
        }
        if let Some(s) = self.seed {
            cfg.run.seeds = vec![s];
        }
        if !self.strategies.is_empty() {
            cfg.run.strategies = self.strategies.clone();
        }
        cfg.validate()?;
        Ok(())
    }
}

pub fn cell_dir(out: &Path, strategy: Strategy, seed: u64) -> PathBuf {
    out.join(format!("{}-seed{seed}", strategy.name()))
}

/// Outcome of one cell as written to disk.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub strategy: Strategy,
    pub seed: u64,
    pub dir: PathBuf,
    /// `None` when the run failed before producing any artifact.
    pub manifest: Option<Manifest>,
    pub error: Option<String>,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Run every cell and write its artifacts. Fails before running anything if
/// a target directory already exists.
pub fn execute(cfg: &ExperimentConfig, cells: &[(Strategy, u64)], out: &Path, threads: usize) -> Result<Vec<CellResult>> {
    cfg.validate()?;
    let dirs: Vec<PathBuf> = cells.iter().map(|&(s, seed)| cell_dir(out, s, seed)).collect();
    if let Some(d) = dirs.iter().find(|d| d.exists()) {
        bail!("output directory {} already exists; refusing to overwrite", d.display());
    }
    let mut unique = BTreeSet::new();
    if let Some((s, seed)) = cells.iter().find(|c| !unique.insert(**c)) {
        bail!("cell ({s}, seed {seed}) listed twice");
    }
    let outcomes = run_cells(cfg, cells, threads);
    let mut results = Vec::with_capacity(cells.len());
    for ((&(strategy, seed), dir), outcome) in cells.iter().zip(dirs).zip(outcomes) {
        match outcome {
            Ok(o) => {
                let manifest = Manifest::new(cfg, &o)?;
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                fs::write(dir.join(CURVE_FILE), curve_csv(&o))?;
                fs::write(dir.join(MANIFEST_FILE), manifest.to_json())?;
                let error = match &o.status {
                    RunStatus::Failed { at_iteration, message } => {
                        Some(format!("failed at iteration {at_iteration}: {message} (partial outputs kept)"))
                    }
                    _ => None,
                };
                results.push(CellResult { strategy, seed, dir, manifest: Some(manifest), error });
            }
            Err(e) => results.push(CellResult { strategy, seed, dir, manifest: None, error: Some(e.to_string()) }),
        }
    }
    Ok(results)
}

/// `run`: one strategy (the config's, unless overridden) over the config's
/// seeds.
pub fn cmd_run(cfg: &ExperimentConfig, strategy: Option<Strategy>, out: &Path, threads: usize) -> Result<Vec<CellResult>> {
    let strategy = strategy.unwrap_or(cfg.selection.strategy);
    let cells: Vec<(Strategy, u64)> = cfg.run.seeds.iter().map(|&s| (strategy, s)).collect();
    execute(cfg, &cells, out, threads)
}

/// `sweep`: every listed strategy on the same seeds, then a comparison
/// report in `<out>/report.md`.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, threads: usize) -> Result<(Vec<CellResult>, String)> {
    let mut strategies = cfg.run.strategies.clone();
    strategies.dedup();
    if strategies.iter().collect::<BTreeSet<_>>().len() < 2 {
        bail!("a sweep needs at least two distinct strategies in run.strategies, got {}", strategies.len());
    }
    let report_path = out.join(REPORT_FILE);
    if report_path.exists() {
        bail!("{} already exists; refusing to overwrite", report_path.display());
    }
    let cells: Vec<(Strategy, u64)> =
        strategies.iter().flat_map(|&s| cfg.run.seeds.iter().map(move |&seed| (s, seed))).collect();
    let results = execute(cfg, &cells, out, threads)?;
    let runs: Vec<RunSummary> = results
        .iter()
        .filter_map(|r| r.manifest.as_ref().map(|m| RunSummary::from_manifest(m, r.dir.clone())))
        .collect::<Result<_>>()?;
    let report = render_report(&group_runs(runs));
    fs::create_dir_all(out)?;
    fs::write(&report_path, &report)?;
    Ok((results, report))
}

/// Labeled fraction at which the gap was bridged, or the largest fraction
/// reached without bridging it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bridged {
    At(f64),
    Beyond(f64),
}

impl fmt::Display for Bridged {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bridged::At(v) => write!(f, "{:.1}%", v * 100.0),
            Bridged::Beyond(v) => write!(f, "> {:.1}%", v * 100.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub name: String,
    pub track: TrackKind,
    pub dataset_key: String,
    pub strategy: Strategy,
    pub run_seed: u64,
    pub status: RunStatus,
    /// Recomputed from the stored curve.
    pub gap: GapReport,
    pub bridged: Bridged,
}

impl RunSummary {
    pub fn from_manifest(m: &Manifest, dir: PathBuf) -> Result<Self> {
        let gap = m.recompute_gap_report()?;
        let max_fraction = m.curve.records.iter().map(|r| r.labeled_fraction).fold(0.0, f64::max);
        let bridged = gap.bridged_fraction.map_or(Bridged::Beyond(max_fraction), Bridged::At);
        Ok(Self {
            dir,
            name: m.config.name.clone(),
            track: m.config.track,
            dataset_key: m.dataset_key.clone(),
            strategy: m.strategy,
            run_seed: m.run_seed,
            status: m.status.clone(),
            gap,
            bridged,
        })
    }
}

#[derive(Debug, Clone)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub seeds: Vec<u64>,
    /// Mean over runs of the mean metric over active iterations.
    pub mean_metric: Option<f64>,
    /// Mean bridged fraction; unbridged runs count with their largest
    /// fraction and make the result a lower bound.
    pub bridged: Bridged,
    pub gap: f64,
}

#[derive(Debug, Clone)]
pub struct Group {
    pub dataset_key: String,
    pub runs: Vec<RunSummary>,
    pub strategies: Vec<StrategySummary>,
}

/// Group runs by dataset spec, in order of first appearance, and summarize
/// each strategy within a group.
pub fn group_runs(runs: Vec<RunSummary>) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for r in runs {
        match groups.iter_mut().find(|g| g.dataset_key == r.dataset_key) {
            Some(g) => g.runs.push(r),
            None => groups.push(Group { dataset_key: r.dataset_key.clone(), runs: vec![r], strategies: Vec::new() }),
        }
    }
    for g in &mut groups {
        g.runs.sort_by_key(|r| (r.strategy, r.run_seed));
        let strategies: BTreeSet<Strategy> = g.runs.iter().map(|r| r.strategy).collect();
        g.strategies = strategies.into_iter().map(|s| summarize(s, g.runs.iter().filter(|r| r.strategy == s))).collect();
    }
    groups
}

fn summarize<'a>(strategy: Strategy, runs: impl Iterator<Item = &'a RunSummary>) -> StrategySummary {
    let runs: Vec<&RunSummary> = runs.collect();
    let n = runs.len() as f64;
    let metrics: Vec<f64> = runs.iter().filter_map(|r| r.gap.mean_metric).collect();
    let mean_metric = (!metrics.is_empty()).then(|| metrics.iter().sum::<f64>() / metrics.len() as f64);
    let mut all_bridged = true;
    let mut total = 0.0;
    for r in &runs {
        match r.bridged {
            Bridged::At(v) => total += v,
            Bridged::Beyond(v) => {
                all_bridged = false;
                total += v;
            }
        }
    }
    let bridged = if all_bridged { Bridged::At(total / n) } else { Bridged::Beyond(total / n) };
    StrategySummary {
        strategy,
        seeds: runs.iter().map(|r| r.run_seed).collect(),
        mean_metric,
        bridged,
        gap: runs.iter().map(|r| r.gap.gap).sum::<f64>() / n,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn status_text(s: &RunStatus) -> String {
    match s {
        RunStatus::Complete => "complete".into(),
        RunStatus::Truncated { at_iteration } => format!("truncated at {at_iteration}"),
        RunStatus::Failed { at_iteration, .. } => format!("failed at {at_iteration}"),
    }
}

/// Markdown report: per group, a strategy table and a per-run table.
pub fn render_report(groups: &[Group]) -> String {
    let mut out = String::new();
    for (i, g) in groups.iter().enumerate() {
        let first = &g.runs[0];
        out.push_str(&format!(
            "## Group {}: {} track, config `{}`\n\ndataset: `{}`\n\n",
            i + 1,
            match first.track {
                TrackKind::Classification => "classification",
                TrackKind::Detection => "detection",
            },
            first.name,
            g.dataset_key
        ));
        let level = first.gap.level;
        out.push_str(&format!(
            "| strategy | runs | seeds | mean metric | bridged at {:.0}% of gap | mean gap |\n|---|---|---|---|---|---|\n",
            level * 100.0
        ));
        for s in &g.strategies {
            let seeds: Vec<String> = s.seeds.iter().map(u64::to_string).collect();
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.4} |\n",
                s.strategy,
                s.seeds.len(),
                seeds.join(" "),
                fmt_opt(s.mean_metric),
                s.bridged,
                s.gap
            ));
        }
        out.push_str(
            "\n| strategy | seed | status | sim | real | mean metric | bridged | inverted | dir |\n|---|---|---|---|---|---|---|---|---|\n",
        );
        for r in &g.runs {
            out.push_str(&format!(
                "| {} | {} | {} | {:.4} | {:.4} | {} | {} | {} | {} |\n",
                r.strategy,
                r.run_seed,
                status_text(&r.status),
                r.gap.sim_perf,
                r.gap.real_perf,
                fmt_opt(r.gap.mean_metric),
                r.bridged,
                if r.gap.inverted { "yes" } else { "no" },
                r.dir.display()
            ));
        }
        out.push('\n');
    }
    out
}

/// Manifests found under the given paths, in path order. Unreadable or
/// corrupt manifests are returned as warnings.
pub fn collect_manifests(paths: &[PathBuf]) -> (Vec<(PathBuf, Manifest)>, Vec<String>) {
    let mut found = Vec::new();
    let mut warnings = Vec::new();
    for root in paths {
        if !root.exists() {
            warnings.push(format!("{}: no such file or directory", root.display()));
            continue;
        }
        let mut files = Vec::new();
        for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
            match entry {
                Ok(e) if e.file_type().is_file() && e.file_name() == MANIFEST_FILE => files.push(e),
                Ok(_) => {}
                Err(err) => warnings.push(err.to_string()),
            }
        }
        for entry in files {
            let path = entry.path().to_path_buf();
            match fs::read_to_string(&path).map_err(|e| e.to_string()).and_then(|t| Manifest::from_json(&t)) {
                Ok(m) => found.push((path, m)),
                Err(e) => warnings.push(format!("{}: skipped corrupt manifest: {e}", path.display())),
            }
        }
    }
    (found, warnings)
}

/// `report`: regroup and summarize stored runs. Errors when no valid
/// manifest is found.
pub fn cmd_report(paths: &[PathBuf]) -> Result<(Vec<Group>, Vec<String>)> {
    let (found, mut warnings) = collect_manifests(paths);
    let mut runs = Vec::new();
    for (path, m) in found {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        match RunSummary::from_manifest(&m, dir) {
            Ok(r) => runs.push(r),
            Err(e) => warnings.push(format!("{}: skipped: {e}", path.display())),
        }
    }
    if runs.is_empty() {
        let mut msg = format!("no valid manifests found ({} skipped)", warnings.len());
        for w in &warnings {
            msg.push_str(&format!("\nwarning: {w}"));
        }
        bail!(msg);
    }
    Ok((group_runs(runs), warnings))
}
