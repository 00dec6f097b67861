//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors (bad flags,
//! malformed files, schema mismatches, dimension mismatches, empty trial
//! sets), 3 for data errors found while processing valid input.

use std::collections::HashSet;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{batch_attack_sweep, AttackConfig, AttackReport, Strategy};
use crate::dataprep::{balance_by_attribute, flag_cross_dataset_duplicates, select_one_per_identity, write_flags, DuplicateFlag};
use crate::error::Error;
use crate::io::{load_json, load_templates, save_json, save_templates, GalleryManifest};
use crate::metrics::{
    det_curve, AttributeSplit, AttributedScore, DistributionSummary, MetricsReport, OperatingPoint,
    VerificationTrialSet, DEFAULT_FMR_TARGETS,
};
use crate::synth::{generate, Enhancer, EnhancerSpec, SynthConfig};
use crate::template::{similarity, AttributeSet, Gallery, LabeledTemplate};

#[derive(Debug, Parser)]
#[command(name = "simattack", version, about = "Similarity-score attribute inference and evaluation")]
pub struct Cli {
    /// Seed for randomized steps.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Encoding of tabular side outputs (flags, DET curve, success table, boxplots).
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EnhancerKind {
    Passthrough,
    Rotation,
    ProjectOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    All,
    Vote,
    Average,
    LinearWeighted,
    LogWeighted,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic gallery and probe set.
    Synth {
        /// JSON generator configuration.
        #[arg(long)]
        config: PathBuf,
        /// Enhancer applied to gallery and probes.
        #[arg(long, value_enum, default_value_t = EnhancerKind::Passthrough)]
        enhancer: EnhancerKind,
        /// Seed of the rotation enhancer (defaults to the generator seed).
        #[arg(long)]
        enhancer_seed: Option<u64>,
        /// Attribute directions removed by the project-out enhancer.
        #[arg(long, default_value_t = 1)]
        remove_directions: usize,
    },
    /// Select one sample per identity, flag cross-dataset duplicates, balance attributes.
    Prepare {
        input: PathBuf,
        /// Datasets to check for duplicate identities.
        #[arg(long)]
        against: Vec<PathBuf>,
        /// Score above which a cross-dataset pair is flagged for review.
        #[arg(long)]
        flag_threshold: f64,
        /// Attribute labels in canonical order (default: sorted labels of the input).
        #[arg(long, value_delimiter = ',')]
        attributes: Option<Vec<String>>,
    },
    /// Verification metrics from mated and non-mated comparisons.
    Verify {
        #[arg(long)]
        templates: PathBuf,
        /// CSV of `id_a,id_b` comparisons; all pairs when absent.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// FMR targets as fractions (0.001 = 0.1 %).
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_FMR_TARGETS.to_vec())]
        fmr_targets: Vec<f64>,
    },
    /// Attack every target template with the attacker's gallery.
    Attack {
        #[arg(long)]
        attacker: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long, value_enum, default_value_t = StrategyArg::All)]
        strategy: StrategyArg,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 5, 11, 51, 101, 201])]
        n_sweep: Vec<usize>,
        /// Warn about likely shared identities scoring above this threshold.
        #[arg(long)]
        flag_threshold: Option<f64>,
        /// Fail instead of truncating when fewer than n candidates exist.
        #[arg(long)]
        strict_n: bool,
    },
    /// Join an attack report with a metrics report.
    Report {
        #[arg(long)]
        attack: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_)
            | Error::ZeroNorm
            | Error::MissingAttribute(_)
            | Error::Truncated { .. }
            | Error::InvalidTemplate(_)
            | Error::ScoreOutOfRange(_) => 3,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    fs::create_dir_all(&cli.out).map_err(|e| CliError { code: 3, message: format!("{}: {e}", cli.out.display()) })?;
    match &cli.command {
        Command::Synth { config, enhancer, enhancer_seed, remove_directions } => {
            cmd_synth(cli, config, *enhancer, *enhancer_seed, *remove_directions)
        }
        Command::Prepare { input, against, flag_threshold, attributes } => {
            cmd_prepare(cli, input, against, *flag_threshold, attributes.as_deref())
        }
        Command::Verify { templates, pairs, fmr_targets } => cmd_verify(cli, templates, pairs.as_deref(), fmr_targets),
        Command::Attack { attacker, target, strategy, n_sweep, flag_threshold, strict_n } => {
            cmd_attack(cli, attacker, target, *strategy, n_sweep, *flag_threshold, *strict_n)
        }
        Command::Report { attack, metrics } => cmd_report(cli, attack, metrics),
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::usage(format!("input file {} does not exist", path.display())))
    }
}

fn with_path(path: &Path) -> impl Fn(Error) -> CliError + '_ {
    move |e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    }
}

fn read_templates_at(path: &Path) -> CliResult<Vec<LabeledTemplate>> {
    require_file(path)?;
    load_templates(path).map_err(with_path(path))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_manifest(dir: &Path, name: &str, templates: &[LabeledTemplate], source: &str) -> CliResult<()> {
    let mut attributes: Vec<String> = templates.iter().map(|t| t.attribute.clone()).collect();
    attributes.sort();
    attributes.dedup();
    let manifest = GalleryManifest {
        name: name.to_string(),
        dimension: templates.first().map_or(0, LabeledTemplate::dimension),
        attributes,
        source: source.to_string(),
    };
    Ok(save_json(&dir.join(format!("{name}.manifest.json")), &manifest)?)
}

/// Writes `rows` either as CSV with `header` or as a JSON array of objects.
fn write_table(path_stem: &Path, format: Format, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    match format {
        Format::Csv => {
            let path = path_stem.with_extension("csv");
            let mut wtr = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(BufWriter::new(File::create(&path).map_err(Error::from)?));
            wtr.write_record(header).map_err(Error::from)?;
            for row in rows {
                wtr.write_record(row).map_err(Error::from)?;
            }
            wtr.flush().map_err(Error::from)?;
        }
        Format::Json => {
            let objects: Vec<serde_json::Map<String, serde_json::Value>> = rows
                .iter()
                .map(|row| {
                    header
                        .iter()
                        .zip(row)
                        .map(|(k, v)| {
                            let value = v
                                .parse::<f64>()
                                .ok()
                                .and_then(serde_json::Number::from_f64)
                                .map_or_else(|| serde_json::Value::String(v.clone()), serde_json::Value::Number);
                            (k.to_string(), value)
                        })
                        .collect()
                })
                .collect();
            save_json(&path_stem.with_extension("json"), &objects)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSidecar {
    config: SynthConfig,
    enhancer: EnhancerSpec,
}

fn cmd_synth(
    cli: &Cli,
    config_path: &Path,
    enhancer: EnhancerKind,
    enhancer_seed: Option<u64>,
    remove_directions: usize,
) -> CliResult<()> {
    require_file(config_path)?;
    let mut config: SynthConfig = load_json(config_path).map_err(with_path(config_path))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    let spec = match enhancer {
        EnhancerKind::Passthrough => EnhancerSpec::Passthrough,
        EnhancerKind::Rotation => EnhancerSpec::Rotation { seed: enhancer_seed.unwrap_or(config.seed) },
        EnhancerKind::ProjectOut => EnhancerSpec::ProjectOut { directions: remove_directions },
    };
    let enhancer = Enhancer::new(&spec, config.dimension, config.attribute_subspace_dim)?;

    let output = generate(&config)?;
    let gallery = enhancer.apply_all(output.gallery.templates())?;
    let probes = enhancer.apply_all(&output.probes)?;

    let source = format!("synth seed={}", config.seed);
    save_templates(&cli.out.join("gallery.csv"), &gallery)?;
    write_manifest(&cli.out, "gallery", &gallery, &source)?;
    if !probes.is_empty() {
        save_templates(&cli.out.join("probes.csv"), &probes)?;
        write_manifest(&cli.out, "probes", &probes, &source)?;
    }
    save_json(&cli.out.join("synth_config.json"), &SynthSidecar { config, enhancer: spec })?;
    Ok(())
}

fn cmd_prepare(
    cli: &Cli,
    input: &Path,
    against: &[PathBuf],
    flag_threshold: f64,
    attributes: Option<&[String]>,
) -> CliResult<()> {
    let seed = cli.seed.ok_or_else(|| CliError::usage("prepare needs --seed for attribute balancing"))?;
    if !flag_threshold.is_finite() {
        return Err(CliError::usage("--flag-threshold must be finite"));
    }
    let records = read_templates_at(input)?;
    let others = against.iter().map(|p| read_templates_at(p)).collect::<CliResult<Vec<_>>>()?;
    let attributes = match attributes {
        Some(labels) => AttributeSet::new(labels.iter().cloned())?,
        None => AttributeSet::from_templates(&records)?,
    };

    let selected = select_one_per_identity(&records);
    let mut flags: Vec<DuplicateFlag> = Vec::new();
    for (other, path) in others.iter().zip(against) {
        flags.extend(flag_cross_dataset_duplicates(&selected, other, flag_threshold).map_err(with_path(path))?);
    }
    let balanced = balance_by_attribute(&selected, &attributes, seed)?;

    save_templates(&cli.out.join("prepared.csv"), &balanced)?;
    write_manifest(&cli.out, "prepared", &balanced, &format!("prepare {} seed={seed}", dataset_name(input)))?;
    match cli.format {
        Format::Csv => write_flags(BufWriter::new(File::create(cli.out.join("duplicates.csv")).map_err(Error::from)?), &flags)?,
        Format::Json => save_json(&cli.out.join("duplicates.json"), &flags)?,
    }
    if !flags.is_empty() {
        eprintln!("warning: {} cross-dataset pair(s) flagged for review", flags.len());
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PairRow {
    id_a: String,
    id_b: String,
}

fn read_pairs(path: &Path) -> CliResult<Vec<PairRow>> {
    require_file(path)?;
    let file = File::open(path).map_err(Error::from)?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    rdr.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line());
                CliError::usage(format!("{}: line {line}: {e}", path.display()))
            })
        })
        .collect()
}

/// Scores the requested comparisons and splits them into mated and
/// attributed non-mated trials.
fn collect_trials(
    templates: &[LabeledTemplate],
    pairs: Option<Vec<PairRow>>,
) -> CliResult<(VerificationTrialSet, Vec<AttributedScore>)> {
    let index_pairs: Vec<(usize, usize)> = match pairs {
        Some(rows) => {
            let by_id: std::collections::HashMap<&str, usize> =
                templates.iter().enumerate().map(|(i, t)| (t.id.as_str(), i)).collect();
            rows.iter()
                .map(|r| {
                    let find = |id: &str| {
                        by_id.get(id).copied().ok_or_else(|| CliError::usage(format!("pair references unknown id {id:?}")))
                    };
                    Ok((find(&r.id_a)?, find(&r.id_b)?))
                })
                .collect::<CliResult<_>>()?
        }
        None => (0..templates.len()).flat_map(|i| (i + 1..templates.len()).map(move |j| (i, j))).collect(),
    };

    let scored: Vec<(usize, usize, f64)> = index_pairs
        .par_iter()
        .map(|&(i, j)| Ok((i, j, similarity(&templates[i].embedding, &templates[j].embedding)?.value())))
        .collect::<Result<_, Error>>()?;

    let mut mated = Vec::new();
    let mut nonmated = Vec::new();
    let mut attributed = Vec::new();
    for (i, j, score) in scored {
        let (a, b) = (&templates[i], &templates[j]);
        if a.identity == b.identity {
            mated.push(score);
        } else {
            nonmated.push(score);
            attributed.push(AttributedScore {
                score,
                attribute_a: a.attribute.clone(),
                attribute_b: b.attribute.clone(),
            });
        }
    }
    if mated.is_empty() || nonmated.is_empty() {
        return Err(CliError::usage(format!(
            "need mated and non-mated trials, found {} mated and {} non-mated",
            mated.len(),
            nonmated.len()
        )));
    }
    Ok((VerificationTrialSet::new(mated, nonmated)?, attributed))
}

fn check_fmr_targets(targets: &[f64]) -> CliResult<()> {
    if targets.is_empty() {
        return Err(CliError::usage("at least one FMR target is required"));
    }
    match targets.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        Some(t) => Err(CliError::usage(format!("FMR target {t} must be a fraction in (0, 1)"))),
        None => Ok(()),
    }
}

fn cmd_verify(cli: &Cli, templates_path: &Path, pairs: Option<&Path>, fmr_targets: &[f64]) -> CliResult<()> {
    check_fmr_targets(fmr_targets)?;
    let templates = read_templates_at(templates_path)?;
    let pairs = pairs.map(read_pairs).transpose()?;
    let (trials, attributed) = collect_trials(&templates, pairs)?;

    let report = MetricsReport::new(&trials, &attributed, fmr_targets)?;
    save_json(&cli.out.join("metrics.json"), &report)?;

    let rows: Vec<Vec<String>> = det_curve(&trials)?
        .iter()
        .map(|OperatingPoint { threshold, fmr, fnmr }| vec![threshold.to_string(), fmr.to_string(), fnmr.to_string()])
        .collect();
    write_table(&cli.out.join("det"), cli.format, &["threshold", "fmr", "fnmr"], &rows)
}

fn cmd_attack(
    cli: &Cli,
    attacker_path: &Path,
    target_path: &Path,
    strategy: StrategyArg,
    n_sweep: &[usize],
    flag_threshold: Option<f64>,
    strict_n: bool,
) -> CliResult<()> {
    if n_sweep.is_empty() {
        return Err(CliError::usage("--n-sweep needs at least one value"));
    }
    let attacker = read_templates_at(attacker_path)?;
    let target = read_templates_at(target_path)?;
    let gallery = Gallery::from_templates(attacker).map_err(with_path(attacker_path))?;
    if target.is_empty() {
        return Err(CliError::usage(format!("{}: no target templates", target_path.display())));
    }
    if let Some(t) = target.first() {
        if t.dimension() != gallery.dimension() {
            return Err(Error::DimensionMismatch { expected: gallery.dimension(), found: t.dimension() }.into());
        }
    }

    let strategies: Vec<Strategy> = match strategy {
        StrategyArg::All => Strategy::ALL.to_vec(),
        StrategyArg::Vote => vec![Strategy::Vote],
        StrategyArg::Average => vec![Strategy::Average],
        StrategyArg::LinearWeighted => vec![Strategy::LinearWeighted],
        StrategyArg::LogWeighted => vec![Strategy::LogWeighted],
    };
    let configs = strategies
        .iter()
        .flat_map(|&s| n_sweep.iter().map(move |&n| (s, n)))
        .map(|(s, n)| Ok(AttackConfig::new(s, n)?.with_truncation(!strict_n)))
        .collect::<CliResult<Vec<_>>>()?;

    for cfg in &configs {
        if let Some(w) = cfg.warning(gallery.attributes()) {
            eprintln!("warning: {w}");
        }
    }
    warn_on_overlap(&gallery, &target, flag_threshold)?;

    let attacker_name = dataset_name(attacker_path);
    let target_name = dataset_name(target_path);
    let results = batch_attack_sweep(&target, &gallery, &configs)?;

    let mut table: Vec<Vec<String>> = strategies.iter().map(|s| vec![s.to_string()]).collect();
    for (i, (cfg, outcomes)) in configs.iter().zip(&results).enumerate() {
        let report = AttackReport::new(&attacker_name, &target_name, cfg, &target, outcomes)?;
        save_json(&cli.out.join(format!("attack_{}_n{}.json", cfg.strategy, cfg.n)), &report)?;
        table[i / n_sweep.len()].push(report.success_rate.to_string());
    }

    let mut header = vec!["strategy".to_string()];
    header.extend(n_sweep.iter().map(|n| n.to_string()));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&cli.out.join("success_rates"), cli.format, &header, &table)
}

fn warn_on_overlap(gallery: &Gallery, target: &[LabeledTemplate], flag_threshold: Option<f64>) -> CliResult<()> {
    let identities: HashSet<&str> = gallery.templates().iter().map(|t| t.identity.as_str()).collect();
    let shared = target.iter().filter(|t| identities.contains(t.identity.as_str())).count();
    if shared > 0 {
        eprintln!("warning: {shared} target template(s) share an identity label with the attacker gallery");
    }
    let unknown = target.iter().filter(|t| !gallery.attributes().contains(&t.attribute)).count();
    if unknown > 0 {
        eprintln!("warning: {unknown} target template(s) carry an attribute absent from the attacker gallery");
    }
    if let Some(threshold) = flag_threshold {
        let flags = flag_cross_dataset_duplicates(gallery.templates(), target, threshold)?;
        if !flags.is_empty() {
            eprintln!(
                "warning: {} attacker/target pair(s) score above {threshold}; identities may not be disjoint",
                flags.len()
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinedRow {
    pub fmr_target: f64,
    pub threshold: f64,
    pub fnmr: f64,
    pub attack_fm_fraction: f64,
}

/// Attack success joined with the target system's verification metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinedReport {
    pub attacker_gallery: String,
    pub target: String,
    pub strategy: Strategy,
    pub n: usize,
    pub probes: usize,
    pub success_rate: f64,
    pub eer: f64,
    pub eer_threshold: f64,
    pub rows: Vec<JoinedRow>,
    pub boxplots: AttributeSplit,
}

pub fn combine(attack: &AttackReport, metrics: MetricsReport) -> crate::Result<CombinedReport> {
    let metrics = metrics.with_attack_fractions(&attack.top1_scores())?;
    let rows = metrics
        .operating_points
        .iter()
        .zip(&metrics.attack_fm_fraction)
        .map(|(op, fm)| JoinedRow {
            fmr_target: op.fmr_target,
            threshold: op.threshold,
            fnmr: op.fnmr,
            attack_fm_fraction: fm.fraction,
        })
        .collect();
    Ok(CombinedReport {
        attacker_gallery: attack.attacker_gallery.clone(),
        target: attack.target.clone(),
        strategy: attack.strategy,
        n: attack.n,
        probes: attack.predictions.len(),
        success_rate: attack.success_rate,
        eer: metrics.eer,
        eer_threshold: metrics.eer_threshold,
        rows,
        boxplots: metrics.boxplots,
    })
}

fn summary_row(group: &str, s: &DistributionSummary) -> Vec<String> {
    vec![
        group.to_string(),
        s.count.to_string(),
        s.min.to_string(),
        s.q1.to_string(),
        s.median.to_string(),
        s.q3.to_string(),
        s.max.to_string(),
        s.iqr.to_string(),
        s.whisker_low.to_string(),
        s.whisker_high.to_string(),
        s.outlier_count.to_string(),
    ]
}

fn cmd_report(cli: &Cli, attack_path: &Path, metrics_path: &Path) -> CliResult<()> {
    require_file(attack_path)?;
    require_file(metrics_path)?;
    let attack: AttackReport = load_json(attack_path).map_err(with_path(attack_path))?;
    let metrics: MetricsReport = load_json(metrics_path).map_err(with_path(metrics_path))?;
    if attack.predictions.is_empty() {
        return Err(CliError::usage(format!("{}: attack report has no predictions", attack_path.display())));
    }
    let combined = combine(&attack, metrics)?;
    save_json(&cli.out.join("combined.json"), &combined)?;

    let header = [
        "group", "count", "min", "q1", "median", "q3", "max", "iqr", "whisker_low", "whisker_high", "outlier_count",
    ];
    let rows = vec![
        summary_row("same", &combined.boxplots.same),
        summary_row("different", &combined.boxplots.different),
    ];
    write_table(&cli.out.join("boxplots"), cli.format, &header, &rows)
}
