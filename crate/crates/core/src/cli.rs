//! Command-line front end.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::contact::{build_contact_map, DEFAULT_THRESHOLD};
use crate::dataset::{
    class_sizes, parse_index, read_entries, stratified_split, AttentionMode, Entry, LabelIndex,
    SplitFractions, SplitManifest, SplitName,
};
use crate::metrics::{threshold_report, EvaluationReport, MetricsReport};
use crate::model::{ModelConfig, ModelParams};
use crate::pdb::{check_completeness, parse_structure, residues_to_sequence, PdbError};
use crate::train::{
    evaluate, log_to_csv, train, training_class_weights, CheckpointSink, TrainConfig, TrainError,
};

pub const ENTRIES_FILE: &str = "entries.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const REJECTIONS_FILE: &str = "rejections.tsv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const DIVERGED_FILE: &str = "diverged.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "contactformer",
    version,
    about = "Contact-map masked transformer for protein superfamily classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse, filter and contact-map the chains listed in an index
    Prep(PrepArgs),
    /// Stratified train/validation/test split of a prepared dataset
    Split(SplitArgs),
    /// Train a model and keep the checkpoint with the lowest validation loss
    Train(TrainArgs),
    /// Score a checkpoint on one split
    Evaluate(EvaluateArgs),
    /// Export pooled per-entry representations
    Embed(EmbedArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PrepArgs {
    /// Tab-separated index: entry, pdb file, chain, start, end, superfamily
    #[arg(long)]
    pub index: PathBuf,
    /// Directory the index's pdb paths are relative to
    #[arg(long)]
    pub pdb_dir: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Contact distance cutoff in Å
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    /// Prepared dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest path (defaults to DATA/split.json)
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 256)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 5)]
    pub layers: usize,
    /// Feed-forward width (defaults to 4 × embed dim)
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
    #[arg(long, value_enum, default_value_t = AttentionArg::Contact)]
    pub attention: AttentionArg,
    #[arg(long)]
    pub no_positional: bool,
    #[arg(long, default_value_t = 512)]
    pub max_len: usize,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionArg {
    Contact,
    Full,
}

impl From<AttentionArg> for AttentionMode {
    fn from(a: AttentionArg) -> Self {
        match a {
            AttentionArg::Contact => AttentionMode::Contact,
            AttentionArg::Full => AttentionMode::Full,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Split manifest (defaults to DATA/split.json)
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Output directory for the checkpoint and epoch log
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping (0 disables)
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    /// Use an unweighted loss instead of balanced class weights
    #[arg(long)]
    pub no_class_weights: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Which split to score: train, val or test
    #[arg(long, default_value = "test")]
    pub which: String,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Class-size thresholds for the bucketed report
    #[arg(long, value_delimiter = ',', default_values_t = [10, 30])]
    pub thresholds: Vec<usize>,
    /// Use an unweighted loss instead of balanced class weights
    #[arg(long)]
    pub no_class_weights: bool,
    /// Directory for metrics.txt and metrics.json
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Restrict to one split of this manifest
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, requires = "split")]
    pub which: Option<String>,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Output TSV: entry id, label, comma-separated vector
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Data(String),
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Data(_) => EXIT_DATA,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Data(m) | CliError::Diverged(m) => f.write_str(m),
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_config(out: &mut dyn Write, name: &str, value: &impl Serialize) {
    let json = serde_json::to_string(value).expect("config serializes");
    let _ = writeln!(out, "{name} {json}");
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match &cli.command {
        Command::Prep(a) => prep(a, out),
        Command::Split(a) => split(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Evaluate(a) => evaluate_cmd(a, out),
        Command::Embed(a) => embed(a, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Rejection reasons written by `prep`.
pub const REASONS: [&str; 4] = ["NOT_FOUND", "MALFORMED", "INCOMPLETE", "NONSTANDARD"];

/// Result of preparing one index record.
pub enum PrepOutcome {
    Kept(String, String),
    Rejected(&'static str, String),
}

/// Runs one index record through parsing, the completeness filter and
/// contact-map construction. On success returns the sequence and the
/// encoded contact pairs.
pub fn prep_record(
    text: Option<&str>,
    chain: char,
    range: Option<(i32, i32)>,
    threshold: f64,
) -> PrepOutcome {
    let Some(text) = text else {
        return PrepOutcome::Rejected("NOT_FOUND", "structure file not found".into());
    };
    let structure = match parse_structure(text, chain, range) {
        Ok(s) => s,
        Err(e @ (PdbError::ChainNotFound(_) | PdbError::EmptySlice { .. })) => {
            return PrepOutcome::Rejected("NOT_FOUND", e.to_string())
        }
        Err(e @ PdbError::NonstandardResidue { .. }) => {
            return PrepOutcome::Rejected("NONSTANDARD", e.to_string())
        }
        Err(e) => return PrepOutcome::Rejected("MALFORMED", e.to_string()),
    };
    let report = check_completeness(&structure, range);
    if !report.nonstandard_residues.is_empty() {
        return PrepOutcome::Rejected("NONSTANDARD", report.nonstandard_residues.join(","));
    }
    if !report.passed {
        return PrepOutcome::Rejected(
            "INCOMPLETE",
            format!(
                "{} gaps, {} residues without CA",
                report.n_gaps, report.n_missing_ca
            ),
        );
    }
    let sequence = match residues_to_sequence(&structure) {
        Ok(s) => s,
        Err(e) => return PrepOutcome::Rejected("NONSTANDARD", e.to_string()),
    };
    match build_contact_map(&structure.ca_positions(), threshold) {
        Ok(map) => PrepOutcome::Kept(sequence, crate::contact::encode_pairs(&map)),
        Err(e) => PrepOutcome::Rejected("MALFORMED", e.to_string()),
    }
}

fn prep(a: &PrepArgs, out: &mut dyn Write) -> Result<(), CliError> {
    print_config(out, "prep", a);
    let records = parse_index(&read(&a.index)?).map_err(data_err)?;
    let mut kept_lines = String::new();
    let mut rejections = String::from("entry_id\treason\tdetail\n");
    let mut counts: BTreeMap<&str, usize> = REASONS.iter().map(|r| (*r, 0)).collect();
    let mut superfamilies = Vec::new();
    let mut kept = 0;
    for r in &records {
        let text = fs::read_to_string(a.pdb_dir.join(&r.pdb_path)).ok();
        match prep_record(text.as_deref(), r.chain_id, r.residue_range, a.threshold) {
            PrepOutcome::Kept(seq, pairs) => {
                let _ = writeln!(
                    kept_lines,
                    "{}\t{}\t{seq}\t{pairs}",
                    r.entry_id, r.superfamily
                );
                superfamilies.push(r.superfamily.clone());
                kept += 1;
            }
            PrepOutcome::Rejected(reason, detail) => {
                let detail = detail.replace(['\t', '\n'], " ");
                let _ = writeln!(rejections, "{}\t{reason}\t{detail}", r.entry_id);
                *counts.get_mut(reason).expect("known reason") += 1;
            }
        }
    }
    fs::create_dir_all(&a.out).map_err(data_err)?;
    write(&a.out.join(ENTRIES_FILE), &kept_lines)?;
    write(
        &a.out.join(LABELS_FILE),
        LabelIndex::from_ids(superfamilies).to_tsv(),
    )?;
    write(&a.out.join(REJECTIONS_FILE), &rejections)?;
    let _ = writeln!(out, "kept {kept}");
    for (reason, n) in &counts {
        let _ = writeln!(out, "rejected {reason} {n}");
    }
    if kept == 0 {
        return Err(CliError::Data("no entries survived filtering".into()));
    }
    Ok(())
}

/// Loads a prepared dataset directory.
pub fn load_dataset(dir: &Path) -> Result<(LabelIndex, Vec<Entry>), CliError> {
    let labels = LabelIndex::from_tsv(&read(&dir.join(LABELS_FILE))?).map_err(data_err)?;
    let entries = read_entries(&read(&dir.join(ENTRIES_FILE))?, &labels).map_err(data_err)?;
    if entries.is_empty() {
        return Err(CliError::Data(format!("{} has no entries", dir.display())));
    }
    Ok((labels, entries))
}

fn manifest_path(data: &Path, split: &Option<PathBuf>) -> PathBuf {
    split.clone().unwrap_or_else(|| data.join("split.json"))
}

fn load_manifest(path: &Path) -> Result<SplitManifest, CliError> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn split(a: &SplitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    print_config(out, "split", a);
    let (_, entries) = load_dataset(&a.data)?;
    let manifest =
        stratified_split(&entries, SplitFractions::default(), a.seed).map_err(data_err)?;
    let path = manifest_path(&a.data, &a.out);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write(&path, json + "\n")?;
    let _ = writeln!(
        out,
        "train {} val {} test {}",
        manifest.train.len(),
        manifest.val.len(),
        manifest.test.len()
    );
    Ok(())
}

fn model_config(m: &ModelArgs, n_classes: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: m.embed_dim,
        n_heads: m.heads,
        n_layers: m.layers,
        ffn_dim: m.ffn_dim.unwrap_or(4 * m.embed_dim),
        dropout: m.dropout,
        max_len: m.max_len,
        n_classes,
        attention_mode: m.attention.into(),
        positional: !m.no_positional,
        ..ModelConfig::default()
    }
}

fn split_of<'a>(
    manifest: &SplitManifest,
    which: SplitName,
    entries: &'a [Entry],
) -> Result<Vec<&'a Entry>, CliError> {
    let picked = manifest.select(which, entries);
    if picked.len() != manifest.ids(which).len() {
        return Err(CliError::Data(format!(
            "{} of {} {which:?} ids are missing from the dataset",
            manifest.ids(which).len() - picked.len(),
            manifest.ids(which).len()
        )));
    }
    Ok(picked)
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (labels, entries) = load_dataset(&a.data)?;
    let manifest = load_manifest(&manifest_path(&a.data, &a.split))?;
    let config = model_config(&a.model, labels.len());
    config.validate().map_err(data_err)?;
    let tc = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        seed: a.seed,
        class_weighting: !a.no_class_weights,
        weight_decay: a.weight_decay,
    };
    tc.validate().map_err(data_err)?;
    print_config(out, "model", &config);
    print_config(out, "train", &tc);
    let tr = split_of(&manifest, SplitName::Train, &entries)?;
    let va = split_of(&manifest, SplitName::Val, &entries)?;
    fs::create_dir_all(&a.out).map_err(data_err)?;
    let sink = CheckpointSink {
        best: a.out.join(CHECKPOINT_FILE),
        divergence_dump: Some(a.out.join(DIVERGED_FILE)),
        label_digest: labels.digest(),
    };
    let params = ModelParams::init(&config, a.seed).map_err(data_err)?;
    let mut log = Vec::new();
    let result = train(&config, params, &tr, &va, &tc, Some(&sink), |r| {
        let _ = writeln!(
            out,
            "epoch {} train_loss {:.6} val_loss {:.6} val_acc {:.4}{}",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_accuracy,
            if r.improved { " *" } else { "" }
        );
        log.push(r.clone());
        true
    });
    write(&a.out.join(LOG_FILE), log_to_csv(&log))?;
    match result {
        Ok(o) => {
            let _ = writeln!(
                out,
                "best epoch {} val_loss {:.6}",
                o.best_epoch, o.best_val_loss
            );
            Ok(())
        }
        Err(e @ TrainError::Divergence { .. }) => Err(CliError::Diverged(e.to_string())),
        Err(e) => Err(data_err(e)),
    }
}

fn load_checkpoint(path: &Path, labels: &LabelIndex) -> Result<Checkpoint, CliError> {
    let ck =
        Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    ck.verify(&labels.digest(), None).map_err(data_err)?;
    Ok(ck)
}

fn evaluate_cmd(a: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    print_config(out, "evaluate", a);
    let which: SplitName = a.which.parse().map_err(CliError::Data)?;
    let (labels, entries) = load_dataset(&a.data)?;
    let manifest = load_manifest(&manifest_path(&a.data, &a.split))?;
    let ck = load_checkpoint(&a.checkpoint, &labels)?;
    let c = ck.config.n_classes;
    let tr = split_of(&manifest, SplitName::Train, &entries)?;
    let subset = split_of(&manifest, which, &entries)?;
    if subset.is_empty() {
        return Err(CliError::Data(format!("{} split is empty", a.which)));
    }
    let weights = training_class_weights(&tr, c, !a.no_class_weights);
    let ev = evaluate(&ck.params, &ck.config, &subset, a.batch_size, &weights).map_err(data_err)?;
    let sizes = class_sizes(&entries, c);
    let report = EvaluationReport {
        split: a.which.clone(),
        loss: ev.loss,
        overall: MetricsReport::compute(&ev.probs, c, &ev.labels).map_err(data_err)?,
        buckets: threshold_report(&ev.probs, c, &ev.labels, &sizes, &a.thresholds),
    };
    let text = report.to_text();
    let _ = write!(out, "{text}");
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir).map_err(data_err)?;
        write(&dir.join("metrics.txt"), &text)?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write(&dir.join("metrics.json"), json + "\n")?;
    }
    Ok(())
}

fn embed(a: &EmbedArgs, out: &mut dyn Write) -> Result<(), CliError> {
    print_config(out, "embed", a);
    let (labels, entries) = load_dataset(&a.data)?;
    let ck = load_checkpoint(&a.checkpoint, &labels)?;
    let subset: Vec<&Entry> = match (&a.split, &a.which) {
        (Some(path), Some(w)) => {
            let which: SplitName = w.parse().map_err(CliError::Data)?;
            split_of(&load_manifest(path)?, which, &entries)?
        }
        _ => entries.iter().collect(),
    };
    let ones = vec![1.0; ck.config.n_classes];
    let ev = evaluate(&ck.params, &ck.config, &subset, a.batch_size, &ones).map_err(data_err)?;
    let d = ck.config.embed_dim;
    let mut text = String::new();
    for (e, v) in subset.iter().zip(ev.pooled.chunks(d)) {
        let vec: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(text, "{}\t{}\t{}", e.id, e.superfamily, vec.join(","));
    }
    write(&a.out, text)?;
    let _ = writeln!(out, "wrote {} embeddings of dimension {d}", subset.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_file_is_not_found() {
        assert!(matches!(
            prep_record(None, 'A', None, 8.0),
            PrepOutcome::Rejected("NOT_FOUND", _)
        ));
    }

    #[test]
    fn garbage_is_malformed() {
        let text = "ATOM      1  CA  ALA A   x      1.000   2.000   3.000\n";
        assert!(matches!(
            prep_record(Some(text), 'A', None, 8.0),
            PrepOutcome::Rejected("MALFORMED", _)
        ));
    }

    #[test]
    fn wrong_chain_is_not_found() {
        let text =
            "ATOM      1  CA  ALA A   1       1.000   2.000   3.000  1.00  0.00           C\n";
        assert!(matches!(
            prep_record(Some(text), 'B', None, 8.0),
            PrepOutcome::Rejected("NOT_FOUND", _)
        ));
        match prep_record(Some(text), 'A', None, 8.0) {
            PrepOutcome::Kept(seq, pairs) => {
                assert_eq!(seq, "A");
                assert_eq!(pairs, "");
            }
            PrepOutcome::Rejected(r, d) => panic!("rejected {r}: {d}"),
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(
            run(["contactformer", "train", "--bogus"], &mut o, &mut e),
            EXIT_USAGE
        );
        assert_eq!(run(["contactformer"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run(["contactformer", "--help"], &mut o, &mut e), EXIT_OK);
    }

    #[test]
    fn defaults_follow_the_reference_setup() {
        let cli =
            Cli::try_parse_from(["contactformer", "train", "--data", "d", "--out", "o"]).unwrap();
        let Command::Train(a) = cli.command else {
            panic!("train expected")
        };
        let cfg = model_config(&a.model, 7);
        assert_eq!(
            (cfg.embed_dim, cfg.n_heads, cfg.n_layers, cfg.ffn_dim),
            (256, 8, 5, 1024)
        );
        assert_eq!((cfg.dropout, cfg.max_len, cfg.positional), (0.1, 512, true));
        assert_eq!(cfg.attention_mode, AttentionMode::Contact);
        assert_eq!(
            (a.lr, a.batch_size, a.epochs, a.patience),
            (1e-4, 64, 200, 20)
        );
    }
}
