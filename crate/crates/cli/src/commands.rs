use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use gazesep::encoders::{bank_manifest_path, build_feature_bank, BankPrompts};
use gazesep::pco::{
    load_attribute_examples, load_identity_coefficients, lookup_identity, make_synthetic_attributes, save_attribute_labels,
    save_identity_coefficients, tune_prompts, PromptState, ProxyTask, SyntheticAttributeSpec, TuneConfig, DEFAULT_CONTEXT_LEN,
};
use gazesep::pipeline::dataset::{load_feature_table, load_targets};
use gazesep::pipeline::plot::{scatter_csv, scatter_points, scatter_svg};
use gazesep::pipeline::{
    build_banks, compute_targets, evaluate, export_features, frozen_encoders, load_factors, make_synthetic, read_export,
    similarity_spearman, train, BankSource, Checkpoint, GazeDataset, NuisancePlanter, SyntheticGazeSpec, TrainConfig,
    TrainInputs,
};
use gazesep::{FeatureVector, SeededRng};

use crate::config::{require_file, resolve, ConfigFlags, Preset};
use crate::failure::{Failure, Outcome};
use crate::manifest::RunManifest;

/// Flags shared by every subcommand.
pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn out(&self) -> Outcome<&Path> {
        self.out.as_deref().ok_or_else(|| Failure::usage("--out is required for this command"))
    }

    fn resolve(&self, flags: &ConfigFlags) -> Outcome<TrainConfig> {
        resolve(self.config.as_deref(), self.seed, flags)
    }
}

fn config_json(config: &TrainConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config serializes")
}

fn write_text(path: &Path, text: &str) -> Outcome<()> {
    std::fs::write(path, text).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))
}

/// Checksums every file the resolved config points at.
fn record_config_inputs(m: &mut RunManifest, globals: &Globals, config: &TrainConfig) -> Outcome<()> {
    if let Some(p) = &globals.config {
        m.input_file("config", p)?;
    }
    if let Some(p) = &config.taxonomy {
        m.input_file("taxonomy", p)?;
    }
    if let Some(p) = &config.encoders.text_table {
        m.input_file("text_table", p)?;
    }
    match &config.bank {
        BankSource::Template => {}
        BankSource::File { path } => {
            m.input_file("bank", path)?;
            m.input_file("bank_rows", &bank_manifest_path(path))?;
        }
        BankSource::Pco { prompt_state, identities } => {
            m.input_file("prompt_state", prompt_state)?;
            m.input_file("identities", identities)?;
        }
    }
    Ok(())
}

/// Accepts a manifest file or a directory holding `manifest.csv`.
fn dataset_manifest(flag: &str, path: &Path) -> Outcome<PathBuf> {
    let p = if path.is_dir() { path.join("manifest.csv") } else { path.to_path_buf() };
    require_file(flag, &p)?;
    Ok(p)
}

/// Loads a dataset; one saved as `<dir>/manifest.csv` is named after `<dir>`.
fn load_dataset(manifest: &Path) -> Outcome<GazeDataset> {
    let mut ds = GazeDataset::load_manifest(manifest)?;
    if manifest.file_stem().is_some_and(|s| s == "manifest") {
        if let Some(name) = manifest.parent().and_then(Path::file_name) {
            ds.name = name.to_string_lossy().into_owned();
        }
    }
    Ok(ds)
}

#[derive(Debug, Args)]
pub struct BuildBankArgs {
    /// `mock`, or `table:PATH` for a prompt embedding table.
    #[arg(long, default_value = "mock")]
    pub encoder: String,
    /// Subject whose identity conditions tuned prompts.
    #[arg(long)]
    pub subject: Option<String>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

pub fn build_bank(globals: &Globals, args: &BuildBankArgs) -> Outcome<()> {
    let out = globals.out()?;
    let mut flags = args.flags.clone();
    match args.encoder.as_str() {
        "mock" => {}
        other => match other.strip_prefix("table:") {
            Some(path) => flags.text_table = Some(PathBuf::from(path)),
            None => return Err(Failure::usage(format!("--encoder: expected `mock` or `table:PATH`, got `{other}`"))),
        },
    }
    if flags.bank.is_some() {
        return Err(Failure::usage("--bank: build-bank writes a bank and cannot read one"));
    }
    let config = globals.resolve(&flags)?;
    let mut run = RunManifest::new("build-bank", run_path_for_file(out), config.seed, config_json(&config));
    record_config_inputs(&mut run, globals, &config)?;
    run.output(out);
    run.output(&bank_manifest_path(out));
    run.write()?;

    let factors = load_factors(&config)?;
    let enc = frozen_encoders(&config)?;
    let bank = match &config.bank {
        BankSource::Template => build_feature_bank(&factors, enc.text.as_ref(), BankPrompts::Template)?,
        BankSource::Pco { prompt_state, identities } => {
            let subject = args
                .subject
                .as_deref()
                .ok_or_else(|| Failure::usage("--subject is required with --prompt-state"))?;
            let state = PromptState::load(prompt_state)?;
            let ids = load_identity_coefficients(identities)?;
            let identity = lookup_identity(&ids, subject)?;
            build_feature_bank(&factors, enc.text.as_ref(), BankPrompts::Pco { state: &state, identity })?.with_identity(subject)
        }
        BankSource::File { .. } => unreachable!("rejected above"),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    bank.save(out)?;
    run.finish()?;
    println!("wrote {} x {} bank to {}", bank.len(), bank.dim(), out.display());
    Ok(())
}

/// `<file>.run.json` for commands whose output is a single file.
fn run_path_for_file(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

#[derive(Debug, Args)]
pub struct TunePromptsArgs {
    /// Attribute labels (`image_id,subject_id,factor_id,label`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Image features (`image_id,f_1,...`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Identity coefficients (`subject_id,c_1,...`).
    #[arg(long)]
    pub identities: Option<PathBuf>,
    /// Generate a synthetic attribute set instead of reading files; it is
    /// written to the output directory.
    #[arg(long, conflicts_with_all = ["labels", "features", "identities"])]
    pub synthetic: bool,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    /// Learnable context vectors; 4 for synthetic sets, 16 otherwise.
    #[arg(long)]
    pub context_len: Option<usize>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Taxonomy file, or `default`.
    #[arg(long)]
    pub taxonomy: Option<String>,
}

fn write_feature_table(rows: &[(String, &FeatureVector)], path: &Path) -> Outcome<()> {
    let dim = rows.first().map_or(0, |r| r.1.as_slice().len());
    let mut out = String::from("image_id");
    for k in 1..=dim {
        write!(out, ",f_{k}").expect("string write");
    }
    out.push('\n');
    for (id, f) in rows {
        out.push_str(id);
        for v in f.as_slice() {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn tune_prompts_cmd(globals: &Globals, args: &TunePromptsArgs) -> Outcome<()> {
    let out = globals.out()?;
    let flags = ConfigFlags {
        preset: args.preset,
        taxonomy: args.taxonomy.clone(),
        ..ConfigFlags::default()
    };
    let config = globals.resolve(&flags)?;
    let seed = config.seed;
    let factors = load_factors(&config)?;
    let enc = frozen_encoders(&config)?;
    let token_dim = enc
        .text
        .token_dim()
        .ok_or_else(|| Failure::usage("prompt tuning needs the mock text encoder, not an embedding table"))?;
    create_dir(out)?;

    let (labels, features, identities, context_len) = if args.synthetic {
        let spec = SyntheticAttributeSpec {
            seed,
            ..SyntheticAttributeSpec::default()
        };
        let (examples, ids) = make_synthetic_attributes(&spec, &factors, enc.text.as_ref())?;
        let (l, f, i) = (out.join("labels.csv"), out.join("features.csv"), out.join("identities.csv"));
        save_attribute_labels(&examples, &l)?;
        let rows: Vec<(String, &FeatureVector)> = examples.iter().map(|e| (e.image_id.clone(), &e.features)).collect();
        write_feature_table(&rows, &f)?;
        save_identity_coefficients(&ids, &i)?;
        (l, f, i, args.context_len.unwrap_or(spec.context_len))
    } else {
        let need = |flag: &str, p: &Option<PathBuf>| -> Outcome<PathBuf> {
            let p = p
                .clone()
                .ok_or_else(|| Failure::usage(format!("{flag} is required unless --synthetic is given")))?;
            require_file(flag, &p)?;
            Ok(p)
        };
        (
            need("--labels", &args.labels)?,
            need("--features", &args.features)?,
            need("--identities", &args.identities)?,
            args.context_len.unwrap_or(DEFAULT_CONTEXT_LEN),
        )
    };
    let tune = TuneConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        optimizer: gazesep::optim::OptimizerConfig::adam(args.lr),
        seed,
    };
    let mut resolved = config_json(&config);
    resolved["tune"] = serde_json::to_value(tune).expect("tune config serializes");
    resolved["tune"]["context_len"] = context_len.into();
    let mut run = RunManifest::new("tune-prompts", out.join("run.json"), seed, resolved);
    record_config_inputs(&mut run, globals, &config)?;
    run.input_file("labels", &labels)?;
    run.input_file("features", &features)?;
    run.input_file("identities", &identities)?;
    let (state_path, log_path) = (out.join("prompt_state.bin"), out.join("tune_log.csv"));
    run.output(&state_path);
    run.output(&log_path);
    run.write()?;

    let table: HashMap<String, FeatureVector> = load_feature_table(&features)?.into_iter().collect();
    let examples = load_attribute_examples(&labels, &table)?;
    let ids = load_identity_coefficients(&identities)?;
    let identity_dim = ids
        .values()
        .next()
        .map(|c| c.dim())
        .ok_or_else(|| Failure::usage(format!("--identities {}: no subjects", identities.display())))?;
    let task = ProxyTask {
        examples: &examples,
        identities: &ids,
        factors: &factors,
        encoder: enc.text.as_ref(),
    };
    let init = PromptState::init(context_len, token_dim, identity_dim, &mut SeededRng::derive(seed, "prompt-init"));
    let outcome = tune_prompts(&task, init, &tune)?;
    outcome.state.save(&state_path)?;
    let mut log = String::from("epoch,loss,accuracy\n");
    for e in &outcome.log {
        writeln!(log, "{},{},{}", e.epoch, e.loss, e.accuracy).expect("string write");
    }
    write_text(&log_path, &log)?;
    run.finish()?;
    match outcome.log.last() {
        Some(e) => println!("{} examples, {} epochs, accuracy {:.4}", examples.len(), e.epoch, e.accuracy),
        None => println!("{} examples, 0 epochs, prompt state left at initialization", examples.len()),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub subjects: usize,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Bank rows planted as each subject's nuisance pattern.
    #[arg(long, default_value_t = 3)]
    pub factors_per_subject: usize,
    #[arg(long)]
    pub nuisance_amplitude: Option<f64>,
    /// Random per-subject nuisance instead of planted bank rows.
    #[arg(long)]
    pub plain: bool,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

pub fn synth_data(globals: &Globals, args: &SynthArgs) -> Outcome<()> {
    let out = globals.out()?;
    let config = globals.resolve(&args.flags)?;
    let [h, w, c] = config.model.image_shape;
    if c != 3 {
        return Err(Failure::usage("synthetic images have 3 channels; the model config expects a different count"));
    }
    let defaults = SyntheticGazeSpec::default();
    let spec = SyntheticGazeSpec {
        n: args.n,
        subjects: args.subjects,
        seed: config.seed,
        noise: args.noise,
        height: h,
        width: w,
        factors_per_subject: args.factors_per_subject,
        nuisance_amplitude: args.nuisance_amplitude.unwrap_or(defaults.nuisance_amplitude),
        ..defaults
    };
    let mut resolved = config_json(&config);
    resolved["synthetic"] = serde_json::to_value(spec).expect("spec serializes");
    resolved["synthetic"]["planted"] = (!args.plain).into();
    let mut run = RunManifest::new("synth-data", out.join("run.json"), config.seed, resolved);
    record_config_inputs(&mut run, globals, &config)?;
    let manifest_path = out.join("manifest.csv");
    run.output(&manifest_path);
    run.output(&out.join("images"));
    run.output(&out.join("planted.json"));
    run.write()?;

    let syn = if args.plain {
        make_synthetic(&spec, None)?
    } else {
        if matches!(config.bank, BankSource::Pco { .. }) {
            return Err(Failure::usage("--prompt-state: synthetic data plants rows of a shared bank"));
        }
        let factors = load_factors(&config)?;
        let enc = frozen_encoders(&config)?;
        let banks = build_banks(&config, &factors, enc.text.as_ref(), &[])?;
        let bank = match &banks {
            gazesep::pipeline::BankSet::Shared(b) => b,
            gazesep::pipeline::BankSet::PerIdentity(_) => {
                return Err(Failure::usage("--per-identity-banks: synthetic data plants rows of a shared bank"))
            }
        };
        make_synthetic(&spec, Some(NuisancePlanter { bank, vision: &enc.vision }))?
    };
    syn.dataset.save(out)?;
    let planted = serde_json::to_string_pretty(&syn.planted).expect("planted ids serialize");
    write_text(&out.join("planted.json"), &(planted + "\n"))?;
    run.finish()?;
    println!("wrote {} samples to {}", syn.dataset.len(), manifest_path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest, or a directory holding `manifest.csv`.
    #[arg(long)]
    pub data: PathBuf,
    /// Cached frozen-encoder features (`id,f_1,...`); computed when absent.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

struct Trained {
    model: gazesep::pipeline::GazeModel,
    dataset_name: String,
}

fn run_training(
    config: &TrainConfig,
    manifest: &Path,
    targets: Option<&Path>,
    out_dir: Option<&Path>,
) -> Outcome<Trained> {
    let dataset = load_dataset(manifest)?;
    let enc = frozen_encoders(config)?;
    let targets = match targets {
        Some(p) => load_targets(&dataset, p)?,
        None => compute_targets(&dataset, &enc.vision)?,
    };
    let factors = load_factors(config)?;
    let banks = build_banks(config, &factors, enc.text.as_ref(), &dataset.subjects())?;
    let inputs = TrainInputs {
        dataset: &dataset,
        targets: &targets,
        banks: &banks,
    };
    let outcome = train(&inputs, config, out_dir)?;
    if let Some(last) = outcome.log.last() {
        log::info!("trained {} epochs, final total loss {:.5}", last.epoch, last.total);
    }
    Ok(Trained {
        model: outcome.state.model,
        dataset_name: dataset.name,
    })
}

pub fn train_cmd(globals: &Globals, args: &TrainArgs) -> Outcome<()> {
    let out = globals.out()?;
    let config = globals.resolve(&args.flags)?;
    let manifest = dataset_manifest("--data", &args.data)?;
    if let Some(t) = &args.targets {
        require_file("--targets", t)?;
    }
    let mut run = RunManifest::new("train", out.join("run.json"), config.seed, config_json(&config));
    record_config_inputs(&mut run, globals, &config)?;
    run.input_dataset("data", &manifest)?;
    if let Some(t) = &args.targets {
        run.input_file("targets", t)?;
    }
    let (ckpt, metrics, cfg) = (out.join("checkpoint.bin"), out.join("metrics.csv"), out.join("config.toml"));
    run.output(&ckpt);
    run.output(&metrics);
    run.output(&cfg);
    run.write()?;
    write_text(&cfg, &config.to_toml())?;

    let trained = run_training(&config, &manifest, args.targets.as_deref(), Some(out))?;
    run.finish()?;
    println!("trained {} epochs on {}; checkpoint {}", config.epochs, trained.dataset_name, ckpt.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Target dataset manifest or directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Trained checkpoint to evaluate.
    #[arg(long, conflicts_with = "train_data")]
    pub checkpoint: Option<PathBuf>,
    /// Source dataset to train on first, using the resolved config.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Source name shown in the table.
    #[arg(long)]
    pub source: Option<String>,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

pub fn eval_cmd(globals: &Globals, args: &EvalArgs) -> Outcome<()> {
    let target = dataset_manifest("--data", &args.data)?;
    let (config, source_manifest) = match (&args.checkpoint, &args.train_data) {
        (Some(c), None) => {
            require_file("--checkpoint", c)?;
            if args.flags.ablation.is_some() {
                return Err(Failure::usage("--ablation selects a training configuration; use it with --train-data"));
            }
            (Checkpoint::load(c)?.config, None)
        }
        (None, Some(t)) => (globals.resolve(&args.flags)?, Some(dataset_manifest("--train-data", t)?)),
        _ => return Err(Failure::usage("eval needs either --checkpoint or --train-data")),
    };
    let mut run = match globals.out.as_deref() {
        Some(out) => {
            let mut run = RunManifest::new("eval", out.join("run.json"), config.seed, config_json(&config));
            if let Some(c) = &args.checkpoint {
                run.input_file("checkpoint", c)?;
            }
            if let Some(s) = &source_manifest {
                record_config_inputs(&mut run, globals, &config)?;
                run.input_dataset("train_data", s)?;
                run.output(&out.join("checkpoint.bin"));
                run.output(&out.join("metrics.csv"));
            }
            run.input_dataset("data", &target)?;
            run.output(&out.join("eval.json"));
            run.write()?;
            Some(run)
        }
        None => None,
    };

    let (model, default_source) = match (&args.checkpoint, &source_manifest) {
        (Some(c), _) => {
            let name = c
                .parent()
                .and_then(Path::file_name)
                .map_or_else(|| "model".to_string(), |n| n.to_string_lossy().into_owned());
            (Checkpoint::load(c)?.model, name)
        }
        (None, Some(s)) => {
            let trained = run_training(&config, s, None, globals.out.as_deref())?;
            (trained.model, trained.dataset_name)
        }
        (None, None) => unreachable!("checked above"),
    };
    let dataset = load_dataset(&target)?;
    let source = args.source.clone().unwrap_or(default_source);
    let report = evaluate(&model, &dataset, &source)?;
    print!("{}", report.table());
    if let (Some(run), Some(out)) = (run.as_mut(), globals.out.as_deref()) {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        write_text(&out.join("eval.json"), &(json + "\n"))?;
        run.finish()?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest or directory.
    #[arg(long)]
    pub data: PathBuf,
}

pub fn export_cmd(globals: &Globals, args: &ExportArgs) -> Outcome<()> {
    let out = globals.out()?;
    require_file("--checkpoint", &args.checkpoint)?;
    let manifest = dataset_manifest("--data", &args.data)?;
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut run = RunManifest::new("export-features", out.join("run.json"), ckpt.config.seed, config_json(&ckpt.config));
    run.input_file("checkpoint", &args.checkpoint)?;
    run.input_dataset("data", &manifest)?;
    let path = out.join("features.csv");
    run.output(&path);
    run.write()?;

    let dataset = load_dataset(&manifest)?;
    let records = export_features(&ckpt.model, &dataset, &path)?;
    run.finish()?;
    println!("wrote {} rows to {}", records.len(), path.display());
    if records.len() >= 2 {
        match similarity_spearman(&records) {
            Ok(r) => println!("feature/gaze similarity rank correlation {r:.4}"),
            Err(e) => log::warn!("rank correlation unavailable: {e}"),
        }
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Feature export written by `export-features`.
    #[arg(long)]
    pub features: PathBuf,
}

pub fn plot_cmd(globals: &Globals, args: &PlotArgs) -> Outcome<()> {
    let out = globals.out()?;
    require_file("--features", &args.features)?;
    let mut run = RunManifest::new("plot", out.join("run.json"), globals.seed.unwrap_or(0), serde_json::Value::Null);
    run.input_file("features", &args.features)?;
    let (csv, svg) = (out.join("scatter.csv"), out.join("scatter.svg"));
    run.output(&csv);
    run.output(&svg);
    run.write()?;

    let records = read_export(&args.features)?;
    let points = scatter_points(&records)?;
    write_text(&csv, &scatter_csv(&points))?;
    write_text(&svg, &scatter_svg(&points))?;
    run.finish()?;
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}
