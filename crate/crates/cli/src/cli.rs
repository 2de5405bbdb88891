//! Subcommands. Each one loads its inputs, calls the library, and writes the result.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use featurescope::dative::{emit_figure_data, generate_pairs, run_dative_study, StudyLexicon};
use featurescope::extract::{Extractor, PseudoExtractor};
use featurescope::hpo::{run_study, StudyConfig};
use featurescope::mlp::{load_model, save_model, train, MlpConfig, ModelMetadata, ProjectorModel};
use featurescope::norms::{load_norms, NormSpace, SpaceConfig, PERSON_FEATURES, PLACE_FEATURES};
use featurescope::predict::{format_table, predict, PredictResponse};
use featurescope::store::{build_training_pairs, ingest_jsonl, EmbeddingStore};
use featurescope::Dataset;
use serde::{Deserialize, Serialize};

use crate::extractor::{HttpExtractor, StubExtractor};
use crate::registry::Registry;
use crate::server::{self, AppState};

pub const EXTRACTOR_URL_ENV: &str = "FEATURESCOPE_EXTRACTOR_URL";

#[derive(Debug, Parser)]
#[command(name = "featurescope", version, about = "Project contextual word embeddings into semantic feature spaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Append extractor JSONL records to an embedding store.
    Ingest(IngestArgs),
    /// Train a projector on one store layer and a norm file.
    Train(TrainArgs),
    /// Search hyperparameters and save the best projector.
    Tune(TuneArgs),
    /// Rank the features of a word in a sentence.
    Predict(PredictArgs),
    /// Compute DO/PO person and place deltas per layer.
    Study(StudyArgs),
    /// Serve GET /models and POST /predict.
    Serve(ServeArgs),
    /// Write pseudo-embedding JSONL for a corpus (offline stand-in for the extractor).
    StubExtract(StubExtractArgs),
    /// Serve pseudo-embeddings behind POST /embed.
    StubExtractor(StubServerArgs),
}

#[derive(Debug, Args)]
pub struct ExtractorArgs {
    /// Base URL of the embedding sidecar.
    #[arg(long, env = EXTRACTOR_URL_ENV)]
    pub extractor_url: Option<String>,
    /// Use deterministic pseudo-embeddings instead of a sidecar.
    #[arg(long)]
    pub stub_extractor: bool,
}

impl ExtractorArgs {
    /// Stub dims come from the models' input sizes.
    fn build<'a>(&self, models: impl IntoIterator<Item = &'a ProjectorModel>) -> Result<Arc<dyn Extractor>> {
        if self.stub_extractor {
            let mut stub = StubExtractor::new(0);
            for m in models {
                stub = stub.with_model(&m.metadata().source_model, m.config().input_dim);
            }
            return Ok(Arc::new(stub));
        }
        match &self.extractor_url {
            Some(url) => Ok(Arc::new(HttpExtractor::new(url))),
            None => bail!("no extractor configured: pass --extractor-url, set {EXTRACTOR_URL_ENV}, or use --stub-extractor"),
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// JSONL file, or `-` for stdin.
    #[arg(long)]
    pub input: PathBuf,
    /// Source LM name, recorded when the store is created.
    #[arg(long)]
    pub model_name: String,
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct NormArgs {
    /// Norm file (CSV or TSV, header `word,<features...>`).
    #[arg(long)]
    pub norms: PathBuf,
    /// Space config JSON; defaults to a space named after the file stem.
    #[arg(long)]
    pub space_config: Option<PathBuf>,
}

impl NormArgs {
    fn load(&self) -> Result<NormSpace> {
        let config = match &self.space_config {
            Some(p) => SpaceConfig::from_json_file(p).with_context(|| format!("reading {}", p.display()))?,
            None => SpaceConfig::named(file_stem(&self.norms)),
        };
        load_norms(&self.norms, &config).with_context(|| format!("loading norms {}", self.norms.display()))
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[command(flatten)]
    pub norms: NormArgs,
    /// Store layer to train on; optional when the store holds one layer.
    #[arg(long)]
    pub layer: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Training config JSON.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the per-epoch report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Study config JSON (sampler, pruner, trial count).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fixed training settings shared by every trial.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Overrides the study config's trial count.
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Trial journal; an existing journal is resumed.
    #[arg(long)]
    pub journal: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub sentence: String,
    #[arg(long)]
    pub word: String,
    #[arg(long, default_value_t = 0)]
    pub occurrence: usize,
    /// Id reported in the output; defaults to the model file stem.
    #[arg(long)]
    pub model_id: Option<String>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Projector files, one per (source model, layer).
    #[arg(long = "model", required_unless_present = "registry", conflicts_with = "registry")]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Lexicon JSON; defaults to the bundled lexicon.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub person: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub place: Option<Vec<String>>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8000")]
    pub bind: String,
    #[command(flatten)]
    pub extractor: ExtractorArgs,
}

#[derive(Debug, Args)]
pub struct StubExtractArgs {
    /// One context per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub model_name: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<u32>,
    #[arg(long)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StubServerArgs {
    #[arg(long, default_value = "127.0.0.1:8001")]
    pub bind: String,
    #[arg(long)]
    pub dim: usize,
}

/// Training settings; dimensions come from the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default)]
    pub hidden_size: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub dropout: Option<f64>,
    #[serde(default)]
    pub max_epochs: Option<usize>,
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub val_fraction: Option<f64>,
}

impl TrainSettings {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn to_config(&self, input_dim: usize, output_dim: usize, hidden_fallback: usize) -> MlpConfig {
        let d = MlpConfig::new(input_dim, output_dim, self.hidden_size.unwrap_or(hidden_fallback));
        MlpConfig {
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            dropout: self.dropout.unwrap_or(d.dropout),
            max_epochs: self.max_epochs.unwrap_or(d.max_epochs),
            patience: self.patience.unwrap_or(d.patience),
            seed: self.seed.unwrap_or(d.seed),
            val_fraction: self.val_fraction.unwrap_or(d.val_fraction),
            ..d
        }
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Tune(a) => tune(&a),
        Command::Predict(a) => predict_cmd(&a),
        Command::Study(a) => study(&a),
        Command::Serve(a) => serve(&a),
        Command::StubExtract(a) => stub_extract(&a),
        Command::StubExtractor(a) => stub_server(&a),
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let mut store = EmbeddingStore::open_or_create(&a.store, &a.model_name)?;
    if store.manifest().model_name != a.model_name {
        bail!(
            "store {} holds embeddings from `{}`, not `{}`",
            a.store.display(),
            store.manifest().model_name,
            a.model_name
        );
    }
    let reader: Box<dyn BufRead> = if a.input.as_os_str() == "-" {
        Box::new(std::io::stdin().lock())
    } else {
        Box::new(BufReader::new(
            File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?,
        ))
    };
    let n = ingest_jsonl(&mut store, reader, a.batch_size)?;
    let m = store.manifest();
    println!(
        "ingested {n} records; store now holds {} records over layers {:?}, dim {}",
        m.total_records(),
        m.layers,
        m.dimensionality
    );
    Ok(())
}

/// Store, layer, and norms joined into a training set.
pub struct Prepared {
    pub dataset: Dataset,
    pub metadata: ModelMetadata,
}

pub fn prepare(data: &DataArgs) -> Result<Prepared> {
    let store = EmbeddingStore::open(&data.store).with_context(|| format!("opening store {}", data.store.display()))?;
    let layers = &store.manifest().layers;
    let layer = match (data.layer, layers.as_slice()) {
        (Some(l), _) => l,
        (None, [only]) => *only,
        (None, _) => bail!("store holds layers {layers:?}; choose one with --layer"),
    };
    let space = data.norms.load()?;
    let aggregates = store.aggregate(layer)?;
    let dataset = build_training_pairs(&aggregates, &space)?;
    log::info!("{} training pairs at layer {layer}", dataset.len());
    Ok(Prepared {
        dataset,
        metadata: ModelMetadata {
            source_model: store.manifest().model_name.clone(),
            layer,
            norm_space: space.name().to_string(),
            feature_names: space.feature_names(),
        },
    })
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let settings = TrainSettings::from_json_file(&a.config)?;
    let Some(hidden) = settings.hidden_size else {
        bail!("{}: hidden_size is required", a.config.display());
    };
    let p = prepare(&a.data)?;
    let config = settings.to_config(p.dataset.input_dim(), p.dataset.output_dim(), hidden);
    let (model, report) = train(&p.dataset, &config)?;
    let model = model.with_metadata(p.metadata)?;
    save_model(&model, &a.out)?;
    if let Some(path) = &a.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!(
        "trained on {} pairs: best epoch {} of {}, validation mse {}; wrote {}",
        p.dataset.len(),
        report.best_epoch,
        report.epochs_run,
        report.best_val_loss,
        a.out.display()
    );
    Ok(())
}

fn tune(a: &TuneArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<StudyConfig>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => StudyConfig::default(),
    };
    if let Some(n) = a.trials {
        config.n_trials = n;
    }
    let settings = match &a.train_config {
        Some(p) => TrainSettings::from_json_file(p)?,
        None => TrainSettings::default(),
    };
    let p = prepare(&a.data)?;
    let base = settings.to_config(p.dataset.input_dim(), p.dataset.output_dim(), 1);
    let outcome = run_study(&config, &p.dataset, &base, Some(&a.journal))?;
    let model = outcome.model.with_metadata(p.metadata)?;
    save_model(&model, &a.out)?;
    let b = &outcome.best;
    println!(
        "{} trials; best trial {}: hidden_size {}, batch_size {}, learning_rate {}, validation mse {}; wrote {}",
        outcome.trials.len(),
        b.trial_id,
        b.params.hidden_size,
        b.params.batch_size,
        b.params.learning_rate,
        outcome.report.best_val_loss,
        a.out.display()
    );
    Ok(())
}

/// Runs one prediction exactly as the service does.
pub fn predict_with(args: &PredictArgs, extractor: &dyn Extractor, model: &ProjectorModel) -> Result<PredictResponse> {
    let model_id = args.model_id.clone().unwrap_or_else(|| file_stem(&args.model));
    Ok(predict(&model_id, model, extractor, &args.sentence, &args.word, args.occurrence)?)
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let extractor = a.extractor.build([&model])?;
    let response = predict_with(a, extractor.as_ref(), &model)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&response)?);
    } else {
        print!("{}", format_table(&response));
    }
    Ok(())
}

fn study(a: &StudyArgs) -> Result<()> {
    let models: Vec<ProjectorModel> = match &a.registry {
        Some(r) => Registry::load(r)?.models().map(|(_, m)| m.clone()).collect(),
        None => a
            .models
            .iter()
            .map(|p| load_model(p).with_context(|| format!("loading {}", p.display())))
            .collect::<Result<_>>()?,
    };
    if models.is_empty() {
        bail!("no models to study");
    }
    let lexicon = match &a.lexicon {
        Some(p) => StudyLexicon::from_json_file(p)?,
        None => StudyLexicon::default(),
    };
    let items = generate_pairs(&lexicon)?;
    let owned = |v: &Option<Vec<String>>, d: &[&str]| v.clone().unwrap_or_else(|| d.iter().map(|s| s.to_string()).collect());
    let person = owned(&a.person, &PERSON_FEATURES);
    let place = owned(&a.place, &PLACE_FEATURES);
    let extractor = a.extractor.build(&models)?;
    let reports = run_dative_study(&items, &models, extractor.as_ref(), &person, &place)?;
    let out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    emit_figure_data(&reports, out)?;
    let rows: usize = reports.iter().map(|r| r.layers.len() * 2).sum();
    println!("{} pairs, {} models; wrote {rows} rows to {}", items.len(), models.len(), a.out.display());
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

async fn bind(addr: &str) -> Result<tokio::net::TcpListener> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("binding {addr}"))?;
    println!("listening on http://{}", listener.local_addr()?);
    std::io::stdout().flush()?;
    Ok(listener)
}

fn serve(a: &ServeArgs) -> Result<()> {
    let registry = Registry::load(&a.registry)?;
    log::info!("serving {} models", registry.len());
    let extractor = a.extractor.build(registry.models().map(|(_, m)| m))?;
    let app = server::router(AppState {
        registry: Arc::new(registry),
        extractor,
    });
    runtime()?.block_on(async {
        let listener = bind(&a.bind).await?;
        server::serve(listener, app).await?;
        Ok(())
    })
}

fn stub_extract(a: &StubExtractArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let records = PseudoExtractor::new(a.dim).extract_corpus(text.lines(), &a.model_name, &a.layers);
    let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    println!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

fn stub_server(a: &StubServerArgs) -> Result<()> {
    let app = server::extractor_router(Arc::new(PseudoExtractor::new(a.dim)));
    runtime()?.block_on(async {
        let listener = bind(&a.bind).await?;
        server::serve(listener, app).await?;
        Ok(())
    })
}
