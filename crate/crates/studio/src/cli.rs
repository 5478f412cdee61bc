//! The `dramaturg` command line.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use dramaturg_core::metrics::{compare, length_stats, EditReport, MAX_NGRAM};
use dramaturg_core::script::{
    assemble_partial, assemble_script, export_plaintext, load_session, save_session,
};
use dramaturg_core::story::resolve_slot_text;
use dramaturg_core::{EngineError, SeedPolicy, SlotAddress, StorySession};

use crate::config::{BackendChoice, EngineSetup, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "dramaturg", version, about = "Co-write scripts with a language model, top down")]
pub struct Cli {
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// `mock`, or the URL of a completion endpoint.
    #[arg(long, global = true, env = "DRAMATURG_BACKEND")]
    pub backend: Option<String>,
    /// JSON array of scripted mock responses.
    #[arg(long, global = true, env = "DRAMATURG_MOCK_SCRIPT")]
    pub mock_script: Option<PathBuf>,
    /// Directory of extra `*.promptset` files.
    #[arg(long, global = true, env = "DRAMATURG_PROMPT_DIR")]
    pub prompt_dir: Option<PathBuf>,
    /// Generate locations and dialogues one at a time.
    #[arg(long, global = true)]
    pub serial: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start a session from a log line.
    New {
        #[arg(long)]
        logline: String,
        #[arg(long, default_value = "medea")]
        prompt_set: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate the next unfilled slot, or every unfilled slot with `--full`.
    Run {
        session: PathBuf,
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use seed, seed+1, ... in hierarchy order instead of one seed.
        #[arg(long)]
        sequential: bool,
    },
    /// Add a new candidate to a slot.
    Gen {
        session: PathBuf,
        #[arg(long)]
        slot: String,
        /// Defaults to the slot's candidate count plus one.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extend a slot's current text.
    Continue {
        session: PathBuf,
        #[arg(long)]
        slot: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Replace a slot's text with your own.
    Edit {
        session: PathBuf,
        #[arg(long)]
        slot: String,
        #[arg(long, conflicts_with = "text", required_unless_present = "text")]
        file: Option<PathBuf>,
        #[arg(long)]
        text: Option<String>,
    },
    /// Pick which candidate a slot uses.
    Accept {
        session: PathBuf,
        #[arg(long)]
        slot: String,
        #[arg(long)]
        index: usize,
    },
    /// Write the plain-text script.
    Export {
        session: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Export whatever is filled instead of refusing an incomplete session.
        #[arg(long)]
        partial: bool,
    },
    /// Edit metrics for a session file, or for a directory of
    /// `<name>.original.txt` / `<name>.edited.txt` pairs.
    Metrics {
        path: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
        /// Also write `edits.tsv` and `lengths.tsv` into this directory.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
}

impl BackendArgs {
    fn apply(&self, setup: &mut EngineSetup) -> anyhow::Result<()> {
        if let Some(backend) = &self.backend {
            setup.backend = BackendChoice::parse(backend)?;
        }
        if let Some(path) = &self.mock_script {
            setup.mock_script = Some(path.clone());
        }
        if let Some(dir) = &self.prompt_dir {
            setup.prompt_dir = Some(dir.clone());
        }
        if self.serial {
            setup.parallel = false;
        }
        Ok(())
    }

    fn engine(&self) -> anyhow::Result<dramaturg_core::Engine> {
        let mut setup = EngineSetup {
            api_key: std::env::var("LMGW_API_KEY").ok(),
            ..EngineSetup::default()
        };
        self.apply(&mut setup)?;
        Ok(setup.build()?.engine)
    }
}

fn load(path: &Path) -> anyhow::Result<StorySession> {
    load_session(path).with_context(|| format!("cannot load {}", path.display()))
}

fn save(session: &StorySession, path: &Path) -> anyhow::Result<()> {
    save_session(session, path).with_context(|| format!("cannot save {}", path.display()))
}

fn address(raw: &str) -> anyhow::Result<SlotAddress> {
    raw.parse().map_err(|_| anyhow!("no such slot: {raw}"))
}

fn summary(out: &mut String, address: &SlotAddress, session: &StorySession) {
    if let Some(slot) = session.slot(address) {
        let index = slot.candidates.len().saturating_sub(1);
        if let Some(c) = slot.candidates.last() {
            let _ = writeln!(out, "{address}: candidate {index} (seed {})", c.seed);
            let _ = writeln!(out, "{}", c.raw_text.trim_end());
        }
    }
}

/// Runs one command and returns what it prints on success.
pub async fn run(cli: Cli) -> anyhow::Result<String> {
    let mut out = String::new();
    match cli.command {
        Command::New { logline, prompt_set, out: path } => {
            let engine = cli.backend.engine()?;
            let session = engine.new_session(&logline, &prompt_set)?;
            save(&session, &path)?;
            let _ = writeln!(out, "created session {} in {}", session.id, path.display());
        }
        Command::Run { session: path, full, seed, sequential } => {
            let engine = cli.backend.engine()?;
            let mut session = load(&path)?;
            if full {
                let policy = if sequential {
                    SeedPolicy::Sequential { start: seed }
                } else {
                    SeedPolicy::Fixed { seed }
                };
                let result = engine.generate_full(&mut session, policy).await;
                // Keep the slots that finished before any failure.
                save(&session, &path)?;
                let report = result?;
                let _ = writeln!(out, "generated {} slots", report.generated.len());
                for address in &report.unresolved_loops {
                    let _ = writeln!(out, "warning: {address} still loops after resampling");
                }
            } else {
                let next = session
                    .slots()
                    .find(|s| !s.is_resolvable())
                    .map(|s| s.key.clone());
                let Some(next) = next else {
                    let _ = writeln!(out, "nothing to generate");
                    return Ok(out);
                };
                let result = engine.generate(&mut session, &next, seed).await;
                finish(&mut out, &session, &path, result)?;
                summary(&mut out, &next, &session);
            }
        }
        Command::Gen { session: path, slot, seed } => {
            let engine = cli.backend.engine()?;
            let mut session = load(&path)?;
            let address = address(&slot)?;
            let seed = match seed {
                Some(seed) => seed,
                None => session.slot(&address).map_or(1, |s| s.candidates.len() as u64 + 1),
            };
            let result = engine.generate(&mut session, &address, seed).await;
            finish(&mut out, &session, &path, result)?;
            summary(&mut out, &address, &session);
        }
        Command::Continue { session: path, slot, seed } => {
            let engine = cli.backend.engine()?;
            let mut session = load(&path)?;
            let address = address(&slot)?;
            let result = engine.continue_generation(&mut session, &address, seed).await;
            finish(&mut out, &session, &path, result)?;
            summary(&mut out, &address, &session);
        }
        Command::Edit { session: path, slot, file, text } => {
            let engine = cli.backend.engine()?;
            let mut session = load(&path)?;
            let address = address(&slot)?;
            let text = match (file, text) {
                (Some(file), _) => std::fs::read_to_string(&file)
                    .with_context(|| format!("cannot read {}", file.display()))?,
                (None, Some(text)) => text,
                (None, None) => bail!("give --file or --text"),
            };
            engine.apply_edit(&mut session, &address, &text)?;
            save(&session, &path)?;
            let _ = writeln!(out, "{address}: edited");
        }
        Command::Accept { session: path, slot, index } => {
            let engine = cli.backend.engine()?;
            let mut session = load(&path)?;
            let address = address(&slot)?;
            engine.accept(&mut session, &address, index)?;
            save(&session, &path)?;
            let _ = writeln!(out, "{address}: accepted candidate {index}");
        }
        Command::Export { session: path, out: target, partial } => {
            let session = load(&path)?;
            let doc = if partial {
                assemble_partial(&session)
            } else {
                assemble_script(&session)?
            };
            let text = export_plaintext(&doc);
            match target {
                Some(target) => {
                    std::fs::write(&target, &text)
                        .with_context(|| format!("cannot write {}", target.display()))?;
                    let _ = writeln!(out, "wrote {}", target.display());
                    if !doc.missing.is_empty() {
                        let missing: Vec<String> = doc.missing.iter().map(ToString::to_string).collect();
                        let _ = writeln!(out, "missing: {}", missing.join(", "));
                    }
                }
                None => out.push_str(&text),
            }
        }
        Command::Metrics { path, json, plot_data } => {
            let pairs = if path.is_dir() {
                read_pairs(&path)?
            } else {
                session_pairs(&load(&path)?)
            };
            let reports: Vec<EditReport> = pairs
                .iter()
                .map(|(name, original, edited)| compare(report_address(name), original, edited))
                .collect();
            let table = metrics_table(&pairs, &reports);
            if let Some(dir) = plot_data {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("edits.tsv"), &table)?;
                std::fs::write(dir.join("lengths.tsv"), lengths_table(&pairs)?)?;
            }
            if json {
                let rows = pairs
                    .iter()
                    .zip(&reports)
                    .map(|((name, _, _), r)| json_row(name, r))
                    .collect::<anyhow::Result<Vec<_>>>()?;
                out.push_str(&serde_json::to_string_pretty(&rows)?);
                out.push('\n');
            } else {
                out.push_str(&table);
            }
        }
        Command::Serve { config, bind } => {
            let mut config = ServiceConfig::load(config.as_deref())?;
            cli.backend.apply(&mut config.engine)?;
            if let Some(bind) = bind {
                config.bind = bind;
            }
            crate::service::serve(config).await?;
        }
    }
    Ok(out)
}

/// Saves after a generation. A looping candidate is kept with a warning;
/// any other failure leaves the file untouched.
fn finish<T>(
    out: &mut String,
    session: &StorySession,
    path: &Path,
    result: Result<T, EngineError>,
) -> anyhow::Result<()> {
    match result {
        Ok(_) => save(session, path),
        Err(EngineError::LoopUnresolved { address, .. }) => {
            let _ = writeln!(out, "warning: {address} still loops after resampling");
            save(session, path)
        }
        Err(e) => Err(e.into()),
    }
}

type Pair = (String, String, String);

/// Accepted candidate against current text, for every filled slot.
fn session_pairs(session: &StorySession) -> Vec<Pair> {
    session
        .slots()
        .filter_map(|slot| {
            let current = resolve_slot_text(slot).ok()?;
            let original = slot.accepted_candidate().map_or("", |c| c.raw_text.as_str());
            Some((slot.key.to_string(), original.to_string(), current.to_string()))
        })
        .collect()
}

fn read_pairs(dir: &Path) -> anyhow::Result<Vec<Pair>> {
    let mut stems = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".original.txt") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        bail!("no *.original.txt files in {}", dir.display());
    }
    stems
        .into_iter()
        .map(|stem| {
            let read = |suffix: &str| {
                let path = dir.join(format!("{stem}.{suffix}.txt"));
                std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))
            };
            Ok((stem.clone(), read("original")?, read("edited")?))
        })
        .collect()
}

/// Directory pairs carry free-form names, so the report's address is only a
/// placeholder there; output rows are keyed by `name` instead.
fn report_address(name: &str) -> SlotAddress {
    name.parse().unwrap_or(SlotAddress::Title)
}

fn json_row(name: &str, report: &EditReport) -> anyhow::Result<serde_json::Value> {
    let mut row = serde_json::to_value(report)?;
    if let Some(fields) = row.as_object_mut() {
        fields.remove("slot_address");
        fields.insert("name".into(), name.into());
    }
    Ok(row)
}

fn metrics_table(pairs: &[Pair], reports: &[EditReport]) -> String {
    let mut out = String::from("slot\tlevenshtein\trelative\tjaccard\tlength_delta");
    for n in 1..=MAX_NGRAM {
        let _ = write!(out, "\t{n}gram");
    }
    out.push_str("\ttcr\tlcr\n");
    for ((name, _, _), r) in pairs.iter().zip(reports) {
        let relative = r.relative_levenshtein.map_or("-".to_string(), |v| v.to_string());
        let _ = write!(
            out,
            "{name}\t{}\t{relative}\t{}\t{}",
            r.levenshtein, r.jaccard_lemma, r.length_delta
        );
        for n in 1..=MAX_NGRAM {
            let _ = write!(out, "\t{}", r.repetition.ngram_overlap[&n]);
        }
        let _ = writeln!(
            out,
            "\t{}\t{}",
            r.repetition.total_consecutive_repetition, r.repetition.longest_consecutive_repetition
        );
    }
    out
}

fn lengths_table(pairs: &[Pair]) -> anyhow::Result<String> {
    let texts: Vec<(&str, &str)> = pairs.iter().map(|(_, o, e)| (o.as_str(), e.as_str())).collect();
    let stats = length_stats(&texts)?;
    let mut out = String::from("slot\tdelta\tnormalized_abs_delta\n");
    for ((name, _, _), (delta, norm)) in pairs.iter().zip(stats.deltas.iter().zip(&stats.normalized)) {
        let _ = writeln!(out, "{name}\t{delta}\t{norm}");
    }
    Ok(out)
}
