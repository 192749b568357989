use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rhm::config::RunConfig;
use rhm::dataset::{adapt, load_dataset, Dataset, Layout};
use rhm::pipeline::{
    evaluate_maps, evaluate_outputs, import_external_maps, layer_dictionaries, prepare, rhm_from_maps, run_ablation,
    run_dataset, run_rhm, tune, write_layer_maps, RhmOutput,
};
use rhm::record::RunRecord;
use rhm_core::fixation_sampler::write_chains_csv;
use rhm_core::image_core::load_image;
use rhm_core::saliency_map::io::{read_f32, read_map_image, write_f32, write_png16};
use rhm_core::saliency_map::{Method, SaliencyMap};
use rhm_core::sparse_sr::DictionaryPair;
use rhm_core::{Error, Result};

#[derive(Parser)]
#[command(name = "rhm", version, about = "Reverse-hierarchy saliency and fixation prediction")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    method: Option<Method>,
    /// Centre prior weight (0 or 1).
    #[arg(long, global = true, value_parser = ["0", "1"])]
    center: Option<String>,
    #[arg(long, global = true)]
    chains: Option<usize>,
    #[arg(long, global = true)]
    stride: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Cap the image count at 30 and the stride at no less than 3.
    #[arg(long, global = true)]
    desk_scale: bool,
    /// Override any config key, e.g. `--set eta=5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Log progress (-v) or solver detail (-vv).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// A single image or a dataset manifest.
#[derive(Args)]
#[group(required = true, multiple = false)]
struct Input {
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer saliency maps.
    Saliency {
        #[command(flatten)]
        input: Input,
    },
    /// Attention chains and the accumulated fixation map.
    Fixate {
        #[command(flatten)]
        input: Input,
    },
    /// Score final maps against a dataset's fixations.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        /// Score `<id>.f32` or `<id>.png` maps from this directory instead of
        /// running the pipeline.
        #[arg(long)]
        maps: Option<PathBuf>,
    },
    /// Single-layer, linear-fusion and hierarchy scores per method.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "lr,bi,cs")]
        methods: Vec<Method>,
    },
    /// Run the sampler on externally computed layer maps.
    ImportMaps {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory of `<id>_layer<k>.f32` or `.png` maps.
        #[arg(long)]
        maps: PathBuf,
    },
    /// Build or inspect per-layer dictionaries.
    Dict {
        #[command(subcommand)]
        action: DictAction,
    },
    /// Write a manifest for a dataset laid out as `images/` + `fixations/`.
    Adapt {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "dataset")]
        name: String,
        /// `pairs` (CSV fixations) or `points` (binary fixation images).
        #[arg(long, default_value = "pairs")]
        layout: String,
        /// File-name suffix of binary fixation images.
        #[arg(long, default_value = "_fixPts")]
        suffix: String,
    },
    /// Grid search over the sampler weights.
    Tune {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
        eta: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1")]
        lambda: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum DictAction {
    /// Sample one dictionary per pyramid layer into `<out>/dict_layer<k>.bin`.
    Build {
        #[command(flatten)]
        input: Input,
    },
    /// Print a dictionary file's header and checksum.
    Inspect { path: PathBuf },
}

fn build_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.method {
        cfg.method = m;
    }
    if let Some(c) = &g.center {
        cfg.set("theta", c)?;
    }
    if let Some(n) = g.chains {
        cfg.chains = n;
    }
    if let Some(s) = g.stride {
        cfg.stride = s;
    }
    for kv in &g.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("`--set {kv}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    if g.desk_scale {
        cfg.apply_desk_scale();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Pipeline outputs for a single image or every selected dataset image.
fn run_input(input: &Input, cfg: &RunConfig, record: &mut RunRecord) -> Result<(Vec<RhmOutput>, Option<Dataset>)> {
    if let Some(path) = &input.image {
        record.add_input(path)?;
        let img = load_image(path)?;
        let id = stem(path);
        return Ok((vec![run_rhm(&img, &id, cfg, None)?], None));
    }
    let ds = open_dataset(input.manifest.as_ref().expect("clap enforces one input"), cfg, record)?;
    Ok((run_dataset(&ds, cfg)?, Some(ds)))
}

fn open_dataset(path: &Path, cfg: &RunConfig, record: &mut RunRecord) -> Result<Dataset> {
    let mut ds = load_dataset(path)?;
    if let Some(n) = cfg.max_images {
        ds.truncate(n);
    }
    record.add_input(path)?;
    for it in &ds.items {
        record.add_input(&it.image_path)?;
        record.add_input(&it.fixation_path)?;
    }
    Ok(ds)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

fn write_final(out: &RhmOutput, dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir.join("final"))?;
    fs::create_dir_all(dir.join("chains"))?;
    let tag = cfg.method.to_string();
    write_f32(&out.final_map, dir.join("final").join(format!("{}.f32", out.id)), Some(&tag), Some(cfg.seed))?;
    write_png16(&out.final_map, dir.join("final").join(format!("{}.png", out.id)))?;
    write_chains_csv(&out.chains, dir.join("chains").join(format!("{}.csv", out.id)))
}

fn write_report(report: &impl serde::Serialize, dir: &Path, name: &str) -> Result<()> {
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

fn load_final_map(dir: &Path, id: &str) -> Result<SaliencyMap> {
    let f32_path = dir.join(format!("{id}.f32"));
    if f32_path.is_file() {
        return read_f32(f32_path);
    }
    let png = dir.join(format!("{id}.png"));
    if png.is_file() {
        return read_map_image(png, 0);
    }
    Err(Error::Data(format!("no map for `{id}` in {}", dir.display())))
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Command::Dict { action: DictAction::Inspect { path } } = &cli.command {
        let d = DictionaryPair::load(path)?;
        let op = d.op();
        println!("atoms          {}", d.size());
        println!("seed           {}", d.seed());
        println!("patch          {0}x{0}x{1}", op.patch_side(), op.channels());
        println!("blur sigma     {}", op.blur_sigma());
        println!("down factor    {}", op.down_factor());
        println!("mean centred   {}", d.mean_centered());
        println!("lipschitz      {:.6}", d.sensing().lipschitz());
        println!("lo checksum    {}", d.lo_checksum().iter().map(|b| format!("{b:02x}")).collect::<String>());
        return Ok(());
    }
    if let Command::Adapt { root, name, layout, suffix } = &cli.command {
        let layout = match layout.as_str() {
            "pairs" => Layout::Pairs,
            "points" => Layout::Points { suffix: suffix.clone() },
            other => return Err(Error::Parameter(format!("unknown layout `{other}` (pairs, points)"))),
        };
        println!("{}", adapt(root, name, &layout)?.display());
        return Ok(());
    }

    let cfg = build_config(g)?;
    let out = &g.out;
    fs::create_dir_all(out)?;
    let mut record = RunRecord::new(std::env::args().collect(), &cfg);
    fs::write(out.join("config.txt"), cfg.to_text())?;

    match &cli.command {
        Command::Saliency { input } => {
            let (outputs, _) = run_input(input, &cfg, &mut record)?;
            for o in &outputs {
                write_layer_maps(o, &out.join("maps"), cfg.method, cfg.seed)?;
            }
        }
        Command::Fixate { input } => {
            let (outputs, ds) = run_input(input, &cfg, &mut record)?;
            for o in &outputs {
                write_layer_maps(o, &out.join("maps"), cfg.method, cfg.seed)?;
                write_final(o, out, &cfg)?;
            }
            if let Some(ds) = ds {
                let report = evaluate_outputs(&outputs, &ds, &cfg.metric_options())?;
                report.write_csv(out.join("report.csv"))?;
                write_report(&report, out, "report")?;
                println!("auc {:.4}  nss {:.4}  similarity {:.4}", report.auc, report.nss, report.similarity);
            }
        }
        Command::Eval { manifest, maps } => {
            let ds = open_dataset(manifest, &cfg, &mut record)?;
            let report = match maps {
                Some(dir) => {
                    let loaded = ds
                        .items
                        .iter()
                        .map(|it| Ok((it.id.as_str(), load_final_map(dir, &it.id)?)))
                        .collect::<Result<Vec<_>>>()?;
                    let refs: Vec<(&str, &SaliencyMap)> = loaded.iter().map(|(id, m)| (*id, m)).collect();
                    evaluate_maps(&refs, &ds, &cfg.metric_options())?
                }
                None => evaluate_outputs(&run_dataset(&ds, &cfg)?, &ds, &cfg.metric_options())?,
            };
            report.write_csv(out.join("report.csv"))?;
            write_report(&report, out, "report")?;
            println!("auc {:.4}  nss {:.4}  similarity {:.4}", report.auc, report.nss, report.similarity);
        }
        Command::Ablate { manifest, methods } => {
            let ds = open_dataset(manifest, &cfg, &mut record)?;
            let report = run_ablation(&ds, &cfg, methods)?;
            report.write_csv(out.join("ablation.csv"))?;
            fs::write(out.join("ablation.json"), report.to_json()?)?;
            println!("{:<6} {:<8} {:>7} {:>7} {:>7}", "method", "model", "auc", "nss", "sim");
            for r in &report.rows {
                println!("{:<6} {:<8} {:>7.4} {:>7.4} {:>7.4}", r.method, r.model, r.auc, r.nss, r.similarity);
            }
        }
        Command::ImportMaps { manifest, maps } => {
            let ds = open_dataset(manifest, &cfg, &mut record)?;
            let imported = import_external_maps(maps, &ds, &cfg)?;
            let outputs = imported
                .into_iter()
                .map(|(id, m)| rhm_from_maps(&id, m, &cfg))
                .collect::<Result<Vec<_>>>()?;
            for o in &outputs {
                write_final(o, out, &cfg)?;
            }
            let report = evaluate_outputs(&outputs, &ds, &cfg.metric_options())?;
            report.write_csv(out.join("report.csv"))?;
            write_report(&report, out, "report")?;
            println!("auc {:.4}  nss {:.4}  similarity {:.4}", report.auc, report.nss, report.similarity);
        }
        Command::Dict { action: DictAction::Build { input } } => {
            let images = match (&input.image, &input.manifest) {
                (Some(p), _) => {
                    record.add_input(p)?;
                    vec![load_image(p)?.to_rgb()]
                }
                (_, Some(m)) => {
                    let ds = open_dataset(m, &cfg, &mut record)?;
                    ds.items.iter().map(|it| it.load_image()).collect::<Result<_>>()?
                }
                _ => unreachable!("clap enforces one input"),
            };
            let pyrs = images.iter().map(|img| prepare(img, &cfg)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = pyrs.iter().collect();
            for (k, d) in layer_dictionaries(&refs, &cfg)?.iter().enumerate() {
                d.save(out.join(format!("dict_layer{k}.bin")))?;
            }
        }
        Command::Tune { manifest, eta, lambda } => {
            let ds = open_dataset(manifest, &cfg, &mut record)?;
            let points = tune(&ds, &cfg, eta, lambda)?;
            write_report(&points, out, "tune")?;
            for p in &points {
                println!("eta {:<6} lambda {:<6} auc {:.4}", p.eta, p.lambda, p.auc);
            }
        }
        Command::Dict { action: DictAction::Inspect { .. } } | Command::Adapt { .. } => unreachable!("handled above"),
    }
    record.hash_outputs(out)?;
    record.write(out)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
