//! Command definitions and their implementations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use xpir::evalkit::{generate_corpus, run_experiment};
use xpir::index::{build_index_with, BuildEvent, ErrorPolicy};
use xpir::storage::save_index;
use xpir::{create_profile, IndexOptions, ProfileStore, SourceDocument, WeightingMode};

use crate::config::{EvalRunConfig, GenCorpusConfig, SearchDefaults, ServiceConfig};
use crate::server;
use crate::service::{read_ontology, Engine, SearchRequest};

#[derive(Debug, Parser)]
#[command(name = "xpir", version, about = "Ontology-weighted, personalized XML retrieval")]
pub struct Cli {
    /// Ontology JSON file.
    #[arg(long, global = true, env = "XPIR_ONTOLOGY")]
    pub ontology: Option<PathBuf>,
    /// Directory of user profiles.
    #[arg(long, global = true, env = "XPIR_PROFILES", default_value = "profiles")]
    pub profiles: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect an ontology file.
    #[command(subcommand)]
    Ontology(OntologyCommand),
    /// Build indexes.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Rank the nodes of an index for a query.
    Search(SearchArgs),
    /// Manage user profiles.
    #[command(subcommand)]
    Profile(ProfileCommand),
    /// Run evaluation experiments.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Generate synthetic data.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Start the HTTP service.
    Serve { config: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum OntologyCommand {
    /// Validate and print the concept weighting.
    Check { file: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Weighting {
    Ontology,
    Uniform,
}

#[derive(Debug, Subcommand)]
pub enum IndexCommand {
    /// Index every `.xml` file of a directory.
    Build {
        corpus: PathBuf,
        out: PathBuf,
        #[arg(long, value_enum, default_value = "ontology")]
        weighting: Weighting,
        /// Treat attribute values as indexed leaves.
        #[arg(long)]
        index_attributes: bool,
        /// Skip malformed documents instead of aborting.
        #[arg(long)]
        skip_invalid: bool,
        /// Logical build time stored in the header.
        #[arg(long, default_value_t = 0)]
        timestamp: u64,
    },
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("input").required(true).args(["query", "concept"])))]
pub struct SearchArgs {
    pub index: PathBuf,
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long)]
    pub concept: Option<String>,
    #[arg(short, default_value_t = 10)]
    pub k: usize,
    /// Rank without the profile and leave it unchanged.
    #[arg(long)]
    pub no_profile: bool,
    #[arg(long)]
    pub overlap_filter: bool,
    #[arg(long)]
    pub normalize_profile: bool,
    #[arg(long, default_value_t = 0)]
    pub max_hops: u32,
    /// Relation to follow during expansion; repeatable.
    #[arg(long = "relation")]
    pub relations: Vec<String>,
    /// Print the response as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum ProfileCommand {
    /// Print a profile as JSON.
    Show { id: String },
    /// Create a uniform profile.
    Create { id: String },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Run the baseline/proposed comparison described by a config file.
    Run { config: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum GenCommand {
    /// Write a synthetic corpus with queries and relevance judgments.
    Corpus { config: PathBuf },
}

/// Failure classes mapped to process exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => f.write_str(m),
            Failure::Data(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl Cli {
    fn ontology_path(&self) -> Result<&Path, Failure> {
        self.ontology
            .as_deref()
            .ok_or_else(|| Failure::Usage("this command needs --ontology <file>".into()))
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Ontology(OntologyCommand::Check { file }) => ontology_check(file, out)?,
        Command::Index(IndexCommand::Build {
            corpus,
            out: dest,
            weighting,
            index_attributes,
            skip_invalid,
            timestamp,
        }) => {
            let options = IndexOptions {
                weighting: match weighting {
                    Weighting::Ontology => WeightingMode::Ontology,
                    Weighting::Uniform => WeightingMode::Uniform,
                },
                index_attributes: *index_attributes,
                build_timestamp: *timestamp,
                on_error: if *skip_invalid {
                    ErrorPolicy::Skip
                } else {
                    ErrorPolicy::Abort
                },
            };
            index_build(cli.ontology_path()?, corpus, dest, &options, out)?
        }
        Command::Search(args) => search(cli.ontology_path()?, &cli.profiles, args, out)?,
        Command::Profile(cmd) => {
            let ontology = read_ontology(cli.ontology_path()?)?;
            let store = ProfileStore::open(&cli.profiles).map_err(anyhow::Error::from)?;
            match cmd {
                ProfileCommand::Show { id } => {
                    let p = store.load(id).map_err(|e| match e {
                        xpir::StorageError::NotFound(_) => anyhow::anyhow!("unknown user `{id}`"),
                        other => other.into(),
                    })?;
                    p.check_fingerprint(&ontology).map_err(anyhow::Error::from)?;
                    let json = serde_json::to_string_pretty(&p.export(&ontology)).map_err(anyhow::Error::from)?;
                    writeln!(out, "{json}").map_err(anyhow::Error::from)?;
                }
                ProfileCommand::Create { id } => {
                    if id.trim().is_empty() {
                        return Err(Failure::Usage("user id must not be empty".into()));
                    }
                    store
                        .create(&create_profile(id.clone(), &ontology))
                        .map_err(anyhow::Error::from)?;
                    writeln!(out, "created profile `{id}` over {} concepts", ontology.len())
                        .map_err(anyhow::Error::from)?;
                }
            }
        }
        Command::Eval(EvalCommand::Run { config }) => eval_run(config, out)?,
        Command::Gen(GenCommand::Corpus { config }) => gen_corpus(config, out)?,
        Command::Serve { config } => server::serve(&ServiceConfig::load(config)?)?,
    }
    Ok(())
}

fn ontology_check(file: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let o = read_ontology(file)?;
    writeln!(
        out,
        "ontology `{}`: {} concepts, {} roots",
        o.name(),
        o.len(),
        o.roots().count()
    )?;
    match o.margin() {
        Some(d) => writeln!(out, "Δ = {d:.6}")?,
        None => writeln!(out, "Δ = undefined (every concept is a root; weights are uniform)")?,
    }
    writeln!(out, "Coef_AVG = {:.6}", o.coef_avg())?;
    writeln!(out, "W_AVG = {:.6}", o.avg_weight())?;
    writeln!(out, "fingerprint = {}", o.fingerprint())?;
    let width = o.ids().map(|c| o.key(c).len()).max().unwrap_or(7).max(7);
    writeln!(out, "{:<width$}  {:>11}  {:>10}", "concept", "coefficient", "W_R")?;
    for c in o.ids() {
        writeln!(
            out,
            "{:<width$}  {:>11.6}  {:>10.6}",
            o.key(c),
            o.coefficients()[c.index()],
            o.weight(c)
        )?;
    }
    Ok(())
}

fn xml_files(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read corpus directory {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn index_build(
    ontology: &Path,
    corpus: &Path,
    dest: &Path,
    options: &IndexOptions,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let o = read_ontology(ontology)?;
    let mut sources = Vec::new();
    for path in xml_files(corpus)? {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let bytes = fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
        sources.push(SourceDocument::new(name, bytes));
    }
    if sources.is_empty() {
        bail!("no .xml files in {}", corpus.display());
    }
    let mut skipped = Vec::new();
    let store = build_index_with(&sources, &o, options, |ev| {
        if let BuildEvent::Skipped { name, error } = ev {
            skipped.push(format!("{name}: {error}"));
        }
    })?;
    for s in &skipped {
        eprintln!("skipped {s}");
    }
    save_index(&store, dest).with_context(|| format!("cannot write index {}", dest.display()))?;
    writeln!(
        out,
        "indexed {} documents ({} skipped): {} text nodes, {} elements -> {}",
        store.documents.len(),
        skipped.len(),
        store.header.total_text_nodes,
        store.element_count(),
        dest.display()
    )?;
    Ok(())
}

fn search(ontology: &Path, profiles: &Path, args: &SearchArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let user = match (&args.user, args.no_profile) {
        (Some(u), _) => u.clone(),
        (None, true) => String::new(),
        (None, false) => return Err(Failure::Usage("--user is required unless --no-profile is given".into())),
    };
    if args.k == 0 {
        return Err(Failure::Usage("-k must be positive".into()));
    }
    let engine = Engine::from_paths(ontology, &args.index, profiles, SearchDefaults::default())?;
    let req = SearchRequest {
        user_id: user.clone(),
        query: args.query.clone(),
        concept: args.concept.clone(),
        k: Some(args.k),
        overlap_filter: Some(args.overlap_filter),
        use_profile: Some(!args.no_profile),
        normalize_profile: Some(args.normalize_profile),
        max_hops: Some(args.max_hops),
        relations: Some(args.relations.clone()),
    };
    let response = engine.search(&req).map_err(|e| Failure::Data(e.into()))?;
    let io = |e: std::io::Error| Failure::Data(e.into());
    if args.json {
        let json = serde_json::to_string_pretty(&response).map_err(|e| Failure::Data(e.into()))?;
        writeln!(out, "{json}").map_err(io)?;
        return Ok(());
    }
    writeln!(
        out,
        "{:>4}  {:>10}  {:<14} {:>6} {:>6}  {:<9}  path",
        "rank", "score", "document", "start", "end", "type"
    )
    .map_err(io)?;
    for h in &response.results {
        writeln!(
            out,
            "{:>4}  {:>10.6}  {:<14} {:>6} {:>6}  {:<9}  {}",
            h.rank,
            h.score,
            h.doc_name,
            h.start,
            h.end,
            h.node_type.as_str(),
            h.path
        )
        .map_err(io)?;
    }
    if response.results.is_empty() {
        writeln!(out, "no matching nodes").map_err(io)?;
    }
    Ok(())
}

fn eval_run(config: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let c = EvalRunConfig::load(config)?;
    let o = read_ontology(&c.ontology)?;
    let report = run_experiment(&o, &c.experiment)?;
    fs::write(&c.output, report.to_csv()).with_context(|| format!("cannot write {}", c.output.display()))?;
    let text = report.to_text();
    if let Some(p) = &c.text_output {
        fs::write(p, &text).with_context(|| format!("cannot write {}", p.display()))?;
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn gen_corpus(config: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let c = GenCorpusConfig::load(config)?;
    let o = read_ontology(&c.ontology)?;
    let corpus = generate_corpus(&o, &c.corpus)?;
    let docs = c.out_dir.join("docs");
    fs::create_dir_all(&docs).with_context(|| format!("cannot create {}", docs.display()))?;
    for d in &corpus.documents {
        fs::write(docs.join(format!("{}.xml", d.name)), &d.xml)?;
    }
    let queries: Vec<serde_json::Value> = corpus
        .queries
        .iter()
        .map(|q| serde_json::json!({ "id": q.id, "concept": o.key(q.concept) }))
        .collect();
    fs::write(c.out_dir.join("queries.json"), serde_json::to_string_pretty(&queries)?)?;
    fs::write(c.out_dir.join("qrels.txt"), corpus.qrels.to_trec())?;
    writeln!(
        out,
        "wrote {} documents, {} queries to {}",
        corpus.documents.len(),
        corpus.queries.len(),
        c.out_dir.display()
    )?;
    Ok(())
}
