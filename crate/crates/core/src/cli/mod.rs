//! Command-line driver. Reports go to stdout as JSON and to `<out_dir>`;
//! the resolved configuration goes to stderr.

mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{parse_pairs, RunConfig, SWEEP_ALIASES};

use crate::autonet::{checkpoint, GradCheckConfig, Network};
use crate::clsmodel::{self, predict_classes, train_cls, EmbedNetToy, Gallery, NnClassifier, WaterClass};
use crate::error::{Error, Result};
use crate::extract::{run_pipeline, ExtractionMap, WaterBodyClassifier};
use crate::metrics::{accuracy, MetricsReport};
use crate::raster::{
    build_dataset, load_cls_split, load_split, read_mask, read_mask_with_arity, read_raster, DatasetManifest, LabelMask,
    Raster, Split,
};
use crate::segmodel::{self, predict_mask, train_seg, water_iou, SegNetToy};
use crate::verify::{run_suite, Objective, SuiteConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const SEG_CHECKPOINT: &str = "seg.ckpt";
pub const CLS_CHECKPOINT: &str = "cls.ckpt";
pub const GALLERY_FILE: &str = "gallery.bin";
pub const EXTRACT_DIR: &str = "extract";

#[derive(Debug, Parser)]
#[command(name = "damex", version, about = "Dam reservoir extraction from synthetic RGB scenes")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_dir: Option<String>,
    #[arg(long = "out", global = true)]
    out_dir: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset under the data directory.
    GenData,
    /// Train the segmentation network.
    TrainSeg,
    /// Train the embedding network and build its gallery.
    TrainCls,
    /// Segment, split and classify every scene of a split.
    Extract(SplitArgs),
    /// Water IoU of predicted masks, from files or from the trained model.
    EvalSeg(EvalArgs),
    /// Crop classification accuracy of the trained model.
    EvalCls(SplitArgs),
    /// Dam / natural / land IoU family of extraction maps.
    EvalExtract(EvalArgs),
    /// Finite-difference check of both models' gradients.
    Gradcheck {
        /// focal, plml, pgml, ce or all.
        #[arg(long, default_value = "all")]
        objective: String,
    },
    /// Retrain across values of one parameter.
    Sweep {
        /// K, beta, sigma, Z, epsilon, seg_batch_size, cls_batch_size or knn_k.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

#[derive(Debug, Args)]
struct SplitArgs {
    #[arg(long, default_value = "test")]
    split: String,
    /// Directory holding the checkpoints; defaults to the output directory.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    split: SplitArgs,
    /// Directory of predicted `*_mask.pgm` files.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Directory of ground-truth `*_mask.pgm` files.
    #[arg(long)]
    gt: Option<PathBuf>,
}

/// Exit status for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) => EXIT_CONFIG,
        Error::NonFinite(_) | Error::StaleTape => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    run(std::env::args_os())
}

/// Parses `args` (program name first), executes and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match resolve(&cli.global) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    eprint!("# resolved configuration\n{}", cfg.to_text());
    match execute(&cli.command, &cfg) {
        Ok((report, code)) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for s in &g.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{s}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(d) = &g.data_dir {
        cfg.data_dir.clone_from(d);
    }
    if let Some(o) = &g.out_dir {
        cfg.out_dir.clone_from(o);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenData => "gen-data",
        Command::TrainSeg => "train-seg",
        Command::TrainCls => "train-cls",
        Command::Extract(_) => "extract",
        Command::EvalSeg(_) => "eval-seg",
        Command::EvalCls(_) => "eval-cls",
        Command::EvalExtract(_) => "eval-extract",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Sweep { .. } => "sweep",
    }
}

fn execute(command: &Command, cfg: &RunConfig) -> Result<(Value, i32)> {
    let out = PathBuf::from(&cfg.out_dir);
    create_dir(&out)?;
    let name = command_name(command);
    write_file(&out.join(format!("{name}.cfg")), cfg.to_text().as_bytes())?;
    let (body, code) = match command {
        Command::GenData => (gen_data(cfg)?, EXIT_OK),
        Command::TrainSeg => (train_seg_cmd(cfg, &out)?, EXIT_OK),
        Command::TrainCls => (train_cls_cmd(cfg, &out)?, EXIT_OK),
        Command::Extract(a) => (extract_cmd(cfg, a, &out)?, EXIT_OK),
        Command::EvalSeg(a) => (eval_seg(cfg, a, &out)?, EXIT_OK),
        Command::EvalCls(a) => (eval_cls(cfg, a, &out)?, EXIT_OK),
        Command::EvalExtract(a) => (eval_extract(cfg, a, &out)?, EXIT_OK),
        Command::Gradcheck { objective } => gradcheck(cfg, objective)?,
        Command::Sweep { param, values } => (sweep(cfg, param, values, &out)?, EXIT_OK),
    };
    let report = json!({ "command": name, "seed": cfg.seed, "report": body });
    let text = serde_json::to_string_pretty(&report)?;
    write_file(&out.join(format!("{name}.json")), text.as_bytes())?;
    Ok((report, code))
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn write_file(p: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(p, bytes).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn to_value(v: &impl Serialize) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    DatasetManifest::load(&cfg.data_dir)
}

fn cls_split(m: &DatasetManifest, split: Split) -> Result<Vec<(Raster, WaterClass)>> {
    load_cls_split(m, split)?
        .into_iter()
        .map(|(r, l)| Ok((r, WaterClass::from_label(l)?)))
        .collect()
}

fn gen_data(cfg: &RunConfig) -> Result<Value> {
    let m = build_dataset(&cfg.scene_spec(), cfg.counts(), cfg.seed, &cfg.data_dir)?;
    let mut splits = serde_json::Map::new();
    for split in Split::ALL {
        let crops = m.cls_entries(split)?;
        let dams = crops.iter().filter(|c| c.label == 1).count();
        splits.insert(
            split.to_string(),
            json!({ "scenes": m.len(split), "crops": crops.len(), "dam_crops": dams }),
        );
    }
    Ok(json!({ "data_dir": cfg.data_dir, "splits": splits }))
}

fn train_seg_cmd(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let m = manifest(cfg)?;
    let train = load_split(&m, Split::Train)?;
    let val = load_split(&m, Split::Val)?;
    let o = train_seg(&train, &val, &cfg.seg_config(), cfg.seed)?;
    checkpoint::save(&[("encoder", &o.model.encoder), ("decoder", &o.model.decoder)], out.join(SEG_CHECKPOINT))?;
    segmodel::write_history(out.join("seg_history.csv"), &o.history)?;
    let best = o.history.iter().find(|h| h.epoch == o.best_epoch).map_or(o.initial_val_iou, |h| h.val_iou);
    Ok(json!({
        "initial_val_iou": o.initial_val_iou,
        "best_epoch": o.best_epoch,
        "best_val_iou": best,
        "history": to_value(&o.history)?,
    }))
}

fn train_cls_cmd(cfg: &RunConfig, out: &Path) -> Result<Value> {
    let m = manifest(cfg)?;
    let train = cls_split(&m, Split::Train)?;
    let val = cls_split(&m, Split::Val)?;
    let o = train_cls(&train, &val, &cfg.cls_config(), cfg.seed)?;
    let mut nets = vec![("embed", &o.model.net)];
    if let Some(h) = &o.head {
        nets.push(("head", h));
    }
    checkpoint::save(&nets, out.join(CLS_CHECKPOINT))?;
    o.gallery.save(out.join(GALLERY_FILE))?;
    clsmodel::write_history(out.join("cls_history.csv"), &o.history)?;
    let best = o
        .history
        .iter()
        .find(|h| h.epoch == o.best_epoch)
        .map_or(o.initial_val_accuracy, |h| h.val_accuracy);
    Ok(json!({
        "train_crops": train.len(),
        "initial_val_accuracy": o.initial_val_accuracy,
        "best_epoch": o.best_epoch,
        "best_val_accuracy": best,
        "history": to_value(&o.history)?,
    }))
}

fn load_seg(dir: &Path) -> Result<SegNetToy> {
    let mut nets = checkpoint::load(dir.join(SEG_CHECKPOINT))?;
    let encoder = checkpoint::take_named(&mut nets, "encoder")?;
    let decoder = checkpoint::take_named(&mut nets, "decoder")?;
    SegNetToy::from_networks(encoder, decoder)
}

struct ClsModels {
    model: EmbedNetToy,
    head: Option<Network>,
    gallery: Gallery,
}

fn load_cls(dir: &Path, cfg: &RunConfig) -> Result<ClsModels> {
    let mut nets = checkpoint::load(dir.join(CLS_CHECKPOINT))?;
    let model = EmbedNetToy::from_network(checkpoint::take_named(&mut nets, "embed")?, cfg.input_size)?;
    let head = nets.iter().any(|(n, _)| n == "head").then(|| checkpoint::take_named(&mut nets, "head")).transpose()?;
    Ok(ClsModels {
        model,
        head,
        gallery: Gallery::load(dir.join(GALLERY_FILE))?,
    })
}

fn models_dir(a: &SplitArgs, out: &Path) -> PathBuf {
    a.models.clone().unwrap_or_else(|| out.to_path_buf())
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn extract_cmd(cfg: &RunConfig, a: &SplitArgs, out: &Path) -> Result<Value> {
    let split: Split = a.split.parse()?;
    let dir = models_dir(a, out);
    let seg = load_seg(&dir)?;
    let cls = load_cls(&dir, cfg)?;
    let nn = NnClassifier {
        model: &cls.model,
        gallery: &cls.gallery,
        k: cfg.knn_k,
    };
    let head_classify = |crop: &Raster| -> Result<WaterClass> {
        let head = cls.head.as_ref().expect("head present");
        let z = head.infer(&crate::autonet::Tensor::vector(cls.model.embed(crop)?.vector))?;
        Ok(if z.data[1] > z.data[0] { WaterClass::Dam } else { WaterClass::Natural })
    };
    let classifier: &dyn WaterBodyClassifier = if cls.head.is_some() { &head_classify } else { &nn };
    let m = manifest(cfg)?;
    let target = out.join(EXTRACT_DIR);
    create_dir(&target)?;
    let (mut images, mut dams, mut naturals) = (0, 0, 0);
    for e in m.entries(split) {
        let raster = read_raster(m.root.join(&e.raster))?;
        let map: ExtractionMap = run_pipeline(&raster, &seg, classifier, &cfg.pipeline_config())?;
        let s = stem(&e.raster);
        map.save(target.join(format!("{s}_mask.pgm")), target.join(format!("{s}.csv")))?;
        images += 1;
        dams += map.segments.iter().filter(|s| s.class == Some(WaterClass::Dam)).count();
        naturals += map.segments.iter().filter(|s| s.class == Some(WaterClass::Natural)).count();
    }
    Ok(json!({
        "split": split.as_str(),
        "images": images,
        "dam_segments": dams,
        "natural_segments": naturals,
        "pred_dir": target.display().to_string(),
    }))
}

/// Sorted `*_mask.pgm` file names of a directory.
fn mask_names(dir: &Path) -> Result<Vec<String>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut names = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let n = entry.file_name().to_string_lossy().into_owned();
        if n.ends_with("_mask.pgm") {
            names.push(n);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(Error::Data(format!("no *_mask.pgm files in {}", dir.display())));
    }
    Ok(names)
}

/// Pairs every ground-truth mask with the same-named prediction.
fn paired_masks(pred: &Path, gt: &Path, arity: Option<u8>) -> Result<(Vec<LabelMask>, Vec<LabelMask>)> {
    let read = |p: PathBuf| match arity {
        Some(a) => read_mask_with_arity(p, a),
        None => read_mask(p),
    };
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for n in mask_names(gt)? {
        let p = pred.join(&n);
        if !p.exists() {
            return Err(Error::Data(format!("prediction {} missing", p.display())));
        }
        preds.push(read(p)?);
        gts.push(read(gt.join(&n))?);
    }
    Ok((preds, gts))
}

fn gt_dir(cfg: &RunConfig, a: &EvalArgs) -> Result<PathBuf> {
    let split: Split = a.split.split.parse()?;
    Ok(a.gt.clone().unwrap_or_else(|| Path::new(&cfg.data_dir).join(split.as_str())))
}

fn eval_seg(cfg: &RunConfig, a: &EvalArgs, out: &Path) -> Result<Value> {
    let report = match &a.pred {
        Some(pred) => {
            let (p, g) = paired_masks(pred, &gt_dir(cfg, a)?, None)?;
            MetricsReport::segmentation(&p, &g)?
        }
        None => {
            let split: Split = a.split.split.parse()?;
            let seg = load_seg(&models_dir(&a.split, out))?;
            let data = load_split(&manifest(cfg)?, split)?;
            let mut preds = Vec::with_capacity(data.len());
            for (r, _) in &data {
                preds.push(predict_mask(&seg, r, cfg.threshold)?);
            }
            let gts: Vec<LabelMask> = data.into_iter().map(|(_, m)| m).collect();
            MetricsReport::segmentation(&preds, &gts)?
        }
    };
    to_value(&report)
}

fn eval_cls(cfg: &RunConfig, a: &SplitArgs, out: &Path) -> Result<Value> {
    let split: Split = a.split.parse()?;
    let cls = load_cls(&models_dir(a, out), cfg)?;
    let data = cls_split(&manifest(cfg)?, split)?;
    let pred = predict_classes(&cls.model, cls.head.as_ref(), &cls.gallery, &data, cfg.knn_k)?;
    let gt: Vec<WaterClass> = data.iter().map(|(_, l)| *l).collect();
    to_value(&MetricsReport::classification(&pred, &gt)?)
}

fn eval_extract(cfg: &RunConfig, a: &EvalArgs, out: &Path) -> Result<Value> {
    let pred = a.pred.clone().unwrap_or_else(|| out.join(EXTRACT_DIR));
    let (p, g) = paired_masks(&pred, &gt_dir(cfg, a)?, Some(3))?;
    to_value(&MetricsReport::extraction(&p, &g)?)
}

fn gradcheck(cfg: &RunConfig, objective: &str) -> Result<(Value, i32)> {
    let objectives: Vec<Objective> = match objective {
        "all" => Objective::ALL.to_vec(),
        "focal" => vec![Objective::Focal],
        "plml" => vec![Objective::Plml],
        "pgml" => vec![Objective::Pgml],
        "ce" => vec![Objective::Ce],
        other => return Err(Error::Config(format!("unknown objective '{other}'"))),
    };
    let suite = SuiteConfig {
        seeds: cfg.gradcheck_seeds,
        check: GradCheckConfig {
            step: cfg.gradcheck_step,
            tolerance: cfg.gradcheck_tolerance,
            max_params: Some(cfg.gradcheck_params),
            ..Default::default()
        },
        ..Default::default()
    };
    let report = run_suite(&objectives, &suite)?;
    let code = if report.passed { EXIT_OK } else { EXIT_NUMERIC };
    Ok((to_value(&report)?, code))
}

#[derive(Serialize)]
struct SweepRow {
    param: String,
    value: String,
    metric: &'static str,
    score: Option<f64>,
}

fn sweep(cfg: &RunConfig, param: &str, values: &[String], out: &Path) -> Result<Value> {
    let key = SWEEP_ALIASES
        .iter()
        .find(|(alias, _)| *alias == param)
        .map(|(_, k)| *k)
        .ok_or_else(|| Error::Config(format!("unknown sweep parameter '{param}'")))?;
    let seg_side = matches!(key, "anchors_per_image" | "margin_beta" | "loss_weight_sigma" | "seg_batch_size");
    let m = manifest(cfg)?;
    let mut rows = Vec::new();
    for v in values {
        let mut c = cfg.clone();
        c.set(key, v)?;
        c.validate()?;
        let row = |metric, score| SweepRow {
            param: param.to_string(),
            value: v.clone(),
            metric,
            score,
        };
        if seg_side {
            let o = train_seg(&load_split(&m, Split::Train)?, &load_split(&m, Split::Val)?, &c.seg_config(), c.seed)?;
            rows.push(row("iou", Some(water_iou(&o.model, &load_split(&m, Split::Test)?, c.threshold)?)));
        } else {
            let test = cls_split(&m, Split::Test)?;
            let o = train_cls(&cls_split(&m, Split::Train)?, &cls_split(&m, Split::Val)?, &c.cls_config(), c.seed)?;
            let pred = predict_classes(&o.model, o.head.as_ref(), &o.gallery, &test, c.knn_k)?;
            let gt: Vec<WaterClass> = test.iter().map(|(_, l)| *l).collect();
            rows.push(row("accuracy", Some(accuracy(&pred, &gt)?)));
            let msc: Vec<f64> = o.history.iter().filter_map(|h| h.msc).collect();
            let mean = (!msc.is_empty()).then(|| msc.iter().sum::<f64>() / msc.len() as f64);
            rows.push(row("msc", mean));
        }
    }
    let path = out.join(format!("sweep_{param}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::Io { path, source: e })?;
    to_value(&rows)
}
