//! The `hat` command-line interface.
//!
//! Every command reads an optional TOML config, applies `--set key=value`
//! overrides and its dedicated flags, validates the result and writes the
//! resolved config next to its outputs. Exit codes: 0 success, 1 runtime
//! failure, 2 usage error.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::FormatError;
use crate::dataio::{gen_world, join_instances, write_manifest, DataError, FeatureStore, Space, WorldConfig};
use crate::hallucinator::{hallucinate, nearest_real_audit, train_offline, HalError, QuadrupletSampler, TrainConfig};
use crate::nets::{load_model, save_model, ModelFile, NetError};
use crate::sdt::{SdtError, SnippetIndex, DEFAULT_TOP};
use crate::tracker::{
    prepare_suite, run_ablation, track_video, PairSource, Ratio, SimVideo, SuiteConfig, TrackConfig, TrackContext,
    TrackError, Variant,
};
use crate::rng;

pub use config::{resolve, Overrides};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Hal(#[from] HalError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sdt(#[from] SdtError),
    #[error(transparent)]
    Track(#[from] TrackError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hat", version, about = "Adversarial deformation hallucination for tracking-by-detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic world's feature and semantic stores.
    SynthGen(SynthGenArgs),
    /// Train the hallucinator and discriminator offline.
    TrainAh(TrainAhArgs),
    /// Build a snippet index from a semantic store.
    SdtIndex(SdtIndexArgs),
    /// Rank indexed snippets against an exemplar descriptor.
    SdtQuery(SdtQueryArgs),
    /// Track synthetic videos with one variant.
    Track(TrackArgs),
    /// Run the variant grid over seeded video suites.
    Ablate(AblateArgs),
    /// Match hallucinated samples to their nearest real instances.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set world.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct SynthGenArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainAhArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Feature-space store to draw quadruplets from.
    #[arg(long)]
    features: PathBuf,
    /// Training iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Weight of the deformation reconstruction loss.
    #[arg(long = "lambda-def")]
    lambda_def: Option<f64>,
    /// Hallucinator learning rate; also the discriminator's unless `train.lr_d` is set.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SdtIndexArgs {
    #[arg(long = "semantic-features")]
    semantic_features: PathBuf,
    /// Index file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SdtQueryArgs {
    /// Prebuilt index file.
    #[arg(long, conflicts_with = "semantic_features", required_unless_present = "semantic_features")]
    index: Option<PathBuf>,
    /// Semantic store to index on the fly.
    #[arg(long = "semantic-features")]
    semantic_features: Option<PathBuf>,
    /// Semantic store holding the exemplar descriptor.
    #[arg(long)]
    exemplar: PathBuf,
    /// Record of the exemplar store to use.
    #[arg(long, default_value_t = 0)]
    record: usize,
    /// Number of nearest snippets to return.
    #[arg(long, default_value_t = DEFAULT_TOP)]
    top: usize,
    /// CSV file to write instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AuditArgs {
    /// Hallucinator model file.
    #[arg(long)]
    model: PathBuf,
    /// Number of hallucinated samples to audit.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    /// Feature-space store of real instances.
    #[arg(long)]
    pool: PathBuf,
    /// Pairing window for the deformation sources.
    #[arg(long, default_value_t = 20)]
    window: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV file to write instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Offline training settings of `train-ah`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainAhConfig {
    pub window: u32,
    pub train: TrainConfig,
}

impl Default for TrainAhConfig {
    fn default() -> Self {
        Self {
            window: 20,
            train: TrainConfig::default(),
        }
    }
}

/// Settings of `track`: one variant over `videos` videos of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackRunConfig {
    pub suite: SuiteConfig,
    pub variant: Variant,
    pub seed: u64,
    pub videos: usize,
}

impl Default for TrackRunConfig {
    fn default() -> Self {
        Self {
            suite: SuiteConfig::default(),
            variant: Variant::grid().pop().expect("non-empty grid"),
            seed: 0,
            videos: 1,
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::SynthGen(a) => synth_gen(a),
        Command::TrainAh(a) => train_ah(a),
        Command::SdtIndex(a) => sdt_index(a),
        Command::SdtQuery(a) => sdt_query(a),
        Command::Track(a) => track(a),
        Command::Ablate(a) => ablate(a),
        Command::Audit(a) => audit(a),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_resolved<T: Serialize>(path: &Path, config: &T) -> Result<(), CliError> {
    let text = toml::to_string(config).map_err(|e| CliError::Usage(format!("cannot serialize config: {e}")))?;
    write_text(path, &text)
}

fn load_config<T>(args: &ConfigArgs, flags: Overrides) -> Result<T, CliError>
where
    T: Default + Serialize + for<'de> Deserialize<'de>,
{
    let mut overrides = Overrides::parse(&args.overrides)?;
    overrides.extend(flags);
    resolve(args.config.as_deref(), &overrides)
}

fn synth_gen(a: SynthGenArgs) -> Result<(), CliError> {
    let config: WorldConfig = load_config(&a.config, Overrides::default())?;
    config.validate()?;
    let (_, features, semantic) = gen_world(&config)?;
    create_dir(&a.out)?;
    features.write(&a.out.join("features.hatf"))?;
    semantic.write(&a.out.join("semantic.hatf"))?;
    write_manifest(
        &a.out.join("manifest.txt"),
        &[
            ("features", "features.hatf".to_string()),
            ("semantic", "semantic.hatf".to_string()),
            ("records", features.len().to_string()),
            ("identities", config.identities.to_string()),
            ("feature_dim", config.feature_dim.to_string()),
            ("semantic_dim", config.semantic_dim.to_string()),
            ("family", config.family.to_string()),
            ("seed", config.seed.to_string()),
        ],
    )?;
    write_resolved(&a.out.join("config.toml"), &config)?;
    println!("wrote {} records to {}", features.len(), a.out.display());
    Ok(())
}

fn train_ah(a: TrainAhArgs) -> Result<(), CliError> {
    let mut flags = Overrides::default();
    flags.set_opt("train.iterations", a.iters.map(|v| v as i64));
    flags.set_opt("train.lambda_def", a.lambda_def);
    flags.set_opt("train.lr", a.lr);
    flags.set_opt("train.seed", a.seed.map(|v| v as i64));
    let config: TrainAhConfig = load_config(&a.config, flags)?;
    config.train.validate()?;
    let store = FeatureStore::read(&a.features)?;
    if store.space != Space::Feature {
        return Err(DataError::WrongSpace {
            expected: Space::Feature,
            found: store.space,
        }
        .into());
    }
    let sampler = QuadrupletSampler::from_store(&store, config.window)?;
    println!(
        "training: iterations={} lambda_def={} lr={} seed={}",
        config.train.iterations, config.train.lambda_def, config.train.lr, config.train.seed
    );
    let out = train_offline(&sampler, &config.train)?;
    create_dir(&a.out)?;
    save_model(&a.out.join("generator.hatm"), &ModelFile::Hallucinator(out.generator))?;
    save_model(&a.out.join("discriminator.hatm"), &ModelFile::Discriminator(out.discriminator))?;
    write_text(&a.out.join("report.csv"), &out.report.to_csv())?;
    write_resolved(&a.out.join("config.toml"), &config)?;
    Ok(())
}

fn sdt_index(a: SdtIndexArgs) -> Result<(), CliError> {
    let store = FeatureStore::read(&a.semantic_features)?;
    let index = SnippetIndex::from_store(&store)?;
    index.write(&a.out)?;
    let mut resolved = a.out.clone().into_os_string();
    resolved.push(".toml");
    #[derive(Serialize)]
    struct Resolved {
        semantic_features: String,
        snippets: usize,
        source_sha256: String,
    }
    write_resolved(
        Path::new(&resolved),
        &Resolved {
            semantic_features: a.semantic_features.display().to_string(),
            snippets: index.len(),
            source_sha256: index.source_hash_hex(),
        },
    )?;
    println!("indexed {} snippets", index.len());
    Ok(())
}

fn sdt_query(a: SdtQueryArgs) -> Result<(), CliError> {
    let index = match (&a.index, &a.semantic_features) {
        (Some(path), _) => SnippetIndex::read(path)?,
        (None, Some(path)) => SnippetIndex::from_store(&FeatureStore::read(path)?)?,
        (None, None) => return Err(CliError::Usage("pass --index or --semantic-features".into())),
    };
    let store = FeatureStore::read(&a.exemplar)?;
    let exemplar = store
        .records
        .get(a.record)
        .ok_or_else(|| CliError::Usage(format!("--record {} is outside the {} exemplar records", a.record, store.len())))?;
    let (ranked, took) = index.timed_rank(&exemplar.values, a.top)?;
    let mut csv = String::from("rank,snippet_id,distance\n");
    for (i, r) in ranked.iter().enumerate() {
        let _ = writeln!(csv, "{},{},{:.9}", i + 1, r.id, r.distance);
    }
    match &a.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    eprintln!("query over {} snippets took {:.3} ms", index.len(), took.as_secs_f64() * 1e3);
    Ok(())
}

fn track(a: TrackArgs) -> Result<(), CliError> {
    let config: TrackRunConfig = load_config(&a.config, Overrides::default())?;
    let suite_config = SuiteConfig {
        seeds: vec![config.seed],
        videos: config.videos,
        variants: vec![config.variant.clone()],
        ..config.suite.clone()
    };
    suite_config.validate()?;
    let suite = prepare_suite(&suite_config)?;
    let v = &config.variant;
    let track = TrackConfig {
        ratio: v.ratio,
        sdt: v.sdt,
        update_ah: v.update_ah,
        seed: config.seed,
        ..suite_config.track.clone()
    };
    let mut frames = String::from("variant,seed,video_id,frame,chosen,distance,success\n");
    let mut videos = String::from("variant,seed,video_id,success_rate,hallucinate_calls\n");
    for id in 0..config.videos as u32 {
        let video = SimVideo::generate(&suite.world, &suite_config.video, config.seed, id)?;
        let selected = if v.sdt && v.ratio != Ratio::OneThird {
            suite.selected_pairs(&video, &track, config.seed)?
        } else {
            Vec::new()
        };
        let pairs = if v.sdt { &selected } else { &suite.all_pairs };
        let ctx = TrackContext {
            world: &suite.world,
            discriminator: &suite.discriminator,
            pairs: PairSource {
                features: &suite.feature_rows,
                pairs,
            },
        };
        let (result, _) = track_video(&video, &ctx, &suite.generator, &track)?;
        for (t, &c) in result.chosen.iter().enumerate().skip(1) {
            let cand = &video.frames[t].candidates[c];
            let _ = writeln!(
                frames,
                "{},{},{},{},{},{:.6},{}",
                v.name,
                config.seed,
                id,
                t,
                c,
                cand.distance,
                u8::from(result.success[t - 1])
            );
        }
        let _ = writeln!(
            videos,
            "{},{},{},{:.6},{}",
            v.name, config.seed, id, result.success_rate, result.hallucinate_calls
        );
        println!("video {id}: success rate {:.3}", result.success_rate);
    }
    create_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("frames.csv"), &frames)?;
    write_text(&a.out_dir.join("videos.csv"), &videos)?;
    write_resolved(&a.out_dir.join("config.toml"), &config)?;
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<(), CliError> {
    let config: SuiteConfig = load_config(&a.config, Overrides::default())?;
    config.validate()?;
    let start = Instant::now();
    let suite = prepare_suite(&config)?;
    let table = run_ablation(&suite, &config)?;
    create_dir(&a.out_dir)?;
    write_text(&a.out_dir.join("rows.csv"), &table.rows_csv())?;
    write_text(&a.out_dir.join("summary.csv"), &table.summary_csv())?;
    write_resolved(&a.out_dir.join("config.toml"), &config)?;
    print!("{}", table.summary_csv());
    eprintln!("ablation took {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}

fn audit(a: AuditArgs) -> Result<(), CliError> {
    let generator = match load_model(&a.model)? {
        ModelFile::Hallucinator(g) => g,
        _ => return Err(CliError::Usage(format!("{} is not a hallucinator model", a.model.display()))),
    };
    let store = FeatureStore::read(&a.pool)?;
    let pool = join_instances(&store, None)?;
    if pool.is_empty() {
        return Err(HalError::EmptyPool.into());
    }
    let sampler = QuadrupletSampler::from_store(&store, a.window)?;
    let mut r = rng::stream(a.seed, 40);
    let quads = sampler.sample(a.samples, &mut r);
    let samples = quads
        .iter()
        .map(|q| hallucinate(&generator, &q.xa1, &q.xa2, &q.xb1))
        .collect::<Result<Vec<_>, _>>()?;
    let matches = nearest_real_audit(&samples, &pool)?;
    let mut csv = String::from("sample,source_identity,exemplar_identity,nearest_identity,nearest_frame,distance\n");
    for (m, q) in matches.iter().zip(&quads) {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{:.6}",
            m.sample, q.identity_a, q.identity_b, m.identity, m.frame, m.distance
        );
    }
    match &a.out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
