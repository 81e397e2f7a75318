use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gala::classify::{train_forest, ForestModel, ForestParams, Provenance, TrainingSet};
use gala::eval::{
    adjusted_rand_error, contingency, covering, ods_ois, rand_index, split_vi_sweep, vi, vi_breakdown,
    write_sweep_csv, Goal,
};
use gala::features::FeatureMap;
use gala::fmt::g17;
use gala::learn::{train, InitialPolicy, Method, TrainOutcome, TrainParams, TrainingVolumes};
use gala::rag::{apply_threshold, Dendrogram, Policy, Rag, RagConfig};
use gala::synth::{generate, SynthConfig};
use gala::volume::{load_volume, regional_minima, save_volume, watershed, Connectivity, CueVolume, LabelVolume, Volume};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "gala", version, about = "Learned agglomeration of superpixel oversegmentations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic (gold standard, cues, superpixels) triple.
    Synth(SynthArgs),
    /// Watershed superpixels seeded from the regional minima of one cue channel.
    Watershed(WatershedArgs),
    /// Train a merge classifier.
    Train(TrainArgs),
    /// Agglomerate superpixels under a learned or mean-boundary policy.
    Segment(SegmentArgs),
    /// Compare segmentations or merge logs against a gold standard.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with a full or partial synth config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extents separated by 'x', e.g. 128x128.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    regions: Option<usize>,
    #[arg(long)]
    blur_radius: Option<usize>,
    #[arg(long)]
    boundary_noise: Option<f64>,
    #[arg(long)]
    texture_noise: Option<f64>,
    /// Omit the texture channel.
    #[arg(long)]
    no_texture: bool,
}

#[derive(Args)]
struct WatershedArgs {
    #[arg(long)]
    cues: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    channel: usize,
    #[arg(long, value_enum, default_value_t = Conn::Face)]
    connectivity: Conn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Conn {
    Face,
    Full,
}

impl From<Conn> for Connectivity {
    fn from(c: Conn) -> Self {
        match c {
            Conn::Face => Connectivity::Face,
            Conn::Full => Connectivity::Full,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, required_unless_present = "from_set")]
    sp: Option<PathBuf>,
    /// Cue stack; also fixes the channel count of the default feature map.
    #[arg(long)]
    cues: PathBuf,
    #[arg(long, required_unless_present = "from_set")]
    gt: Option<PathBuf>,
    /// Retrain from a training-set CSV dump instead of running epochs.
    #[arg(long, conflicts_with_all = ["sp", "gt"])]
    from_set: Option<PathBuf>,
    /// Provenance sidecar of `--from-set`.
    #[arg(long, requires = "from_set")]
    provenance: Option<PathBuf>,
    /// Model JSON to write; the training set is dumped next to it.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_enum)]
    initial: Option<InitialArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trees: Option<usize>,
    /// Worker threads for forest training.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Flat,
    Gala,
    Lash,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitialArg {
    Flat,
    Mean,
    Random,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    sp: PathBuf,
    #[arg(long)]
    cues: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyArg::Model)]
    policy: PolicyArg,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Segmentation volume to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write the complete merge log as CSV.
    #[arg(long)]
    save_tree: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyArg {
    Model,
    Mean,
}

#[derive(Args)]
struct EvalArgs {
    /// Gold standard; repeat once per image when sweeping several.
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// Segmentation to score.
    #[arg(long)]
    seg: Option<PathBuf>,
    /// Comma-separated subset of vi, splitvi, ri, are, covering, breakdown.
    #[arg(long, default_value = "vi,splitvi,ri,are,covering")]
    metrics: String,
    /// Merge log to sweep; repeat once per image.
    #[arg(long)]
    sweep: Vec<PathBuf>,
    /// Superpixels the merge logs refer to; repeat once per image.
    #[arg(long)]
    sp: Vec<PathBuf>,
    /// Number of evenly spaced thresholds in [0, 1].
    #[arg(long)]
    thresholds: Option<usize>,
    /// Report optimal dataset and image scale VI over all sweeps.
    #[arg(long)]
    ods: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Run record written next to every output.
struct Manifest {
    command: &'static str,
    config: Value,
    seeds: Vec<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    fn write(&self, path: &Path, started: Instant) -> Result<()> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| Ok(json!({ "path": p, "sha256": digest(p)? })))
            .collect::<Result<Vec<_>>>()?;
        let doc = json!({
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": inputs,
            "outputs": self.outputs,
            "tool_version": env!("CARGO_PKG_VERSION"),
            "wall_time_seconds": started.elapsed().as_secs_f64(),
        });
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))
    }
}

fn digest(path: &Path) -> Result<String> {
    let mut f = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut h = Sha256::new();
    std::io::copy(&mut f, &mut h)?;
    Ok(hex::encode(h.finalize()))
}

fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, "manifest.json")
}

/// `dir/name.ext` becomes `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))
        }
    }
}

fn load(path: &Path) -> Result<Volume> {
    load_volume(path).with_context(|| format!("cannot load volume {}", path.display()))
}

fn load_labels(path: &Path) -> Result<LabelVolume> {
    load(path)?.into_labels().with_context(|| format!("{} is not a label volume", path.display()))
}

fn load_cues(path: &Path) -> Result<CueVolume> {
    load(path)?.into_cues().with_context(|| format!("{} is not a cue volume", path.display()))
}

fn save(v: Volume, path: &Path) -> Result<()> {
    save_volume(&v, path).with_context(|| format!("cannot write {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs.unwrap_or(0)).build()?)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: SynthConfig = read_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = &a.shape {
        cfg.shape = s
            .split('x')
            .map(|e| e.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("invalid shape {s:?}"))?;
    }
    if let Some(k) = a.regions {
        cfg.regions = k;
    }
    if let Some(r) = a.blur_radius {
        cfg.blur_radius = r;
    }
    if let Some(s) = a.boundary_noise {
        cfg.boundary_noise = s;
    }
    if let Some(s) = a.texture_noise {
        cfg.texture_noise = s;
    }
    if a.no_texture {
        cfg.texture = false;
    }
    let s = generate(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("cannot create {}", a.out.display()))?;
    let out = |name: &str| a.out.join(name);
    save(s.gt.into(), &out("gt.ndv"))?;
    save(s.cues.into(), &out("cues.ndv"))?;
    save(s.sp.into(), &out("sp.ndv"))?;
    fs::write(out("config.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    Manifest {
        command: "synth",
        config: serde_json::to_value(&cfg)?,
        seeds: vec![cfg.seed],
        inputs: vec![],
        outputs: ["gt.ndv", "cues.ndv", "sp.ndv", "config.json"].map(out).to_vec(),
    }
    .write(&out("manifest.json"), started)
}

fn cmd_watershed(a: WatershedArgs) -> Result<()> {
    let started = Instant::now();
    let cues = load_cues(&a.cues)?;
    let conn = a.connectivity.into();
    let seeds = regional_minima(&cues, a.channel, conn)?;
    let sp = watershed(&cues, a.channel, &seeds, conn)?;
    save(sp.into(), &a.out)?;
    Manifest {
        command: "watershed",
        config: json!({ "channel": a.channel, "connectivity": conn }),
        seeds: vec![],
        inputs: vec![a.cues],
        outputs: vec![a.out.clone()],
    }
    .write(&manifest_path(&a.out), started)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainConfig {
    method: Method,
    epochs: usize,
    initial: InitialPolicy,
    mix_lash: bool,
    forest: ForestParams,
    /// Defaults to the standard map for the cue channel count.
    features: Option<FeatureMap>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self {
            method: p.method,
            epochs: p.epochs,
            initial: p.initial,
            mix_lash: p.mix_lash,
            forest: p.forest,
            features: None,
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: TrainConfig = read_config(a.config.as_deref())?;
    if let Some(m) = a.method {
        cfg.method = match m {
            MethodArg::Flat => Method::Flat,
            MethodArg::Gala => Method::Gala,
            MethodArg::Lash => Method::Lash,
        };
    }
    if let Some(k) = a.epochs {
        cfg.epochs = k;
    }
    if let Some(i) = a.initial {
        cfg.initial = match i {
            InitialArg::Flat => InitialPolicy::Flat,
            InitialArg::Mean => InitialPolicy::Mean,
            InitialArg::Random => InitialPolicy::Random,
        };
    }
    if let Some(s) = a.seed {
        cfg.forest.seed = s;
    }
    if let Some(n) = a.trees {
        cfg.forest.n_trees = n;
    }
    let cues = load_cues(&a.cues)?;
    let fm = match cfg.features.clone() {
        Some(fm) => fm,
        None => FeatureMap::default_for(cues.channels(), cues.shape().ndim() == 2),
    };
    fm.validate()?;
    cfg.features = Some(fm.clone());
    let params = TrainParams {
        method: cfg.method,
        epochs: cfg.epochs,
        forest: cfg.forest,
        initial: cfg.initial,
        mix_lash: cfg.mix_lash,
    };
    let pool = thread_pool(a.jobs)?;
    let mut inputs = vec![a.cues.clone()];
    let outcome = match (&a.from_set, &a.sp, &a.gt) {
        (Some(path), _, _) => {
            let prov = match &a.provenance {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?;
                    let entries: Vec<Provenance> =
                        serde_json::from_str(&text).with_context(|| format!("invalid provenance {}", p.display()))?;
                    inputs.push(p.clone());
                    Some(entries)
                }
                None => None,
            };
            let f = File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
            let set = TrainingSet::read_csv(BufReader::new(f), prov)
                .with_context(|| format!("invalid training set {}", path.display()))?;
            inputs.push(path.clone());
            let model = pool.install(|| train_forest(&set, &params.forest, &fm))?;
            TrainOutcome { history: vec![set.len()], model, training_set: set }
        }
        (None, Some(sp_path), Some(gt_path)) => {
            let sp = load_labels(sp_path)?;
            let gt = load_labels(gt_path)?;
            inputs.extend([sp_path.clone(), gt_path.clone()]);
            let v = TrainingVolumes { sp: &sp, cues: &cues, gt: &gt };
            pool.install(|| train(&v, &fm, &params))?
        }
        _ => bail!(gala::Error::InvalidInput("give --sp and --gt, or --from-set".into())),
    };

    outcome.model.save(&a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let set_path = sibling(&a.out, "training.csv");
    let prov_path = sibling(&a.out, "provenance.json");
    let mut w = create(&set_path)?;
    outcome.training_set.write_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&prov_path)?;
    outcome.training_set.write_provenance(&mut w)?;
    w.flush()?;
    let mut config = serde_json::to_value(&cfg)?;
    config["history"] = json!(outcome.history);
    Manifest {
        command: "train",
        config,
        seeds: vec![cfg.forest.seed],
        inputs,
        outputs: vec![a.out.clone(), set_path, prov_path],
    }
    .write(&manifest_path(&a.out), started)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct SegmentConfig {
    threshold: f64,
    /// Boundary channel for the mean policy.
    channel: usize,
    /// Histogram bins of the graph when no model supplies a feature map.
    bins: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self { threshold: 0.5, channel: 0, bins: RagConfig::default().bins }
    }
}

fn cmd_segment(a: SegmentArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: SegmentConfig = read_config(a.config.as_deref())?;
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    if cfg.threshold.is_nan() || cfg.threshold < 0.0 {
        bail!(gala::Error::InvalidInput(format!("threshold {} must be nonnegative", cfg.threshold)));
    }
    let sp = load_labels(&a.sp)?;
    let cues = load_cues(&a.cues)?;
    let mut inputs = vec![a.sp.clone(), a.cues.clone()];
    let (policy, rag_config) = match a.policy {
        PolicyArg::Mean => (
            Policy::MeanBoundary { channel: cfg.channel },
            RagConfig { bins: cfg.bins, ..RagConfig::default() },
        ),
        PolicyArg::Model => {
            let Some(path) = &a.model else {
                bail!(gala::Error::InvalidInput("--policy model needs --model".into()));
            };
            let model = ForestModel::load(path).with_context(|| format!("cannot load model {}", path.display()))?;
            inputs.push(path.clone());
            let rc = model.feature_map().rag_config();
            (Policy::learned(model), rc)
        }
    };
    let mut rag = Rag::build(&sp, &cues, &rag_config)?;
    policy.check(&rag)?;
    let mut outputs = vec![a.out.clone()];
    let d: Dendrogram = match &a.save_tree {
        Some(tree) => {
            let d = rag.agglomerate(&policy, f64::INFINITY)?;
            let mut w = create(tree)?;
            d.write_csv(&mut w)?;
            w.flush()?;
            outputs.push(tree.clone());
            d
        }
        None => rag.agglomerate(&policy, cfg.threshold)?,
    };
    save(apply_threshold(&sp, &d, cfg.threshold)?.into(), &a.out)?;
    Manifest {
        command: "segment",
        config: json!({
            "threshold": cfg.threshold,
            "policy": if a.policy == PolicyArg::Mean { "mean" } else { "model" },
            "channel": cfg.channel,
            "rag": rag_config,
            "merges": d.cut_len(cfg.threshold),
        }),
        seeds: vec![],
        inputs,
        outputs,
    }
    .write(&manifest_path(&a.out), started)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct EvalConfig {
    thresholds: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { thresholds: 21 }
    }
}

const METRICS: [&str; 6] = ["vi", "splitvi", "ri", "are", "covering", "breakdown"];

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: EvalConfig = read_config(a.config.as_deref())?;
    if let Some(n) = a.thresholds {
        cfg.thresholds = n;
    }
    let mut inputs = a.gt.clone();
    let mut outputs = vec![a.out.clone()];
    let metrics: Vec<&str> = a.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    if let Some(m) = metrics.iter().find(|m| !METRICS.contains(m)) {
        bail!(gala::Error::InvalidInput(format!("unknown metric {m:?}")));
    }

    if !a.sweep.is_empty() {
        if a.sp.len() != a.sweep.len() || a.gt.len() != a.sweep.len() {
            bail!(gala::Error::InvalidInput("give one --sp and one --gt per --sweep".into()));
        }
        if cfg.thresholds < 2 {
            bail!(gala::Error::InvalidInput("a sweep needs at least 2 thresholds".into()));
        }
        let ts: Vec<f64> = (0..cfg.thresholds).map(|i| i as f64 / (cfg.thresholds - 1) as f64).collect();
        let images: Vec<usize> = (0..a.sweep.len()).collect();
        let curves = thread_pool(a.jobs)?.install(|| {
            images
                .par_iter()
                .map(|&i| {
                    let sp = load_labels(&a.sp[i])?;
                    let gt = load_labels(&a.gt[i])?;
                    let f = File::open(&a.sweep[i]).with_context(|| format!("cannot read {}", a.sweep[i].display()))?;
                    let d = Dendrogram::read_csv(BufReader::new(f), &sp)
                        .with_context(|| format!("invalid merge log {}", a.sweep[i].display()))?;
                    Ok(split_vi_sweep(&sp, &d, &gt, &ts)?)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        inputs.extend(a.sp.iter().cloned());
        inputs.extend(a.sweep.iter().cloned());
        let mut w = create(&a.out)?;
        if a.ods {
            let scores: Vec<Vec<f64>> = curves.iter().map(|c| c.iter().map(|r| r.total).collect()).collect();
            let o = ods_ois(&ts, &scores, Goal::Minimize)?;
            writeln!(w, "metric,threshold,value")?;
            writeln!(w, "ods_vi,{},{}", g17(o.ods_threshold), g17(o.ods_score))?;
            writeln!(w, "ois_vi,,{}", g17(o.ois_score))?;
        } else {
            if curves.len() != 1 {
                bail!(gala::Error::InvalidInput("several sweeps need --ods".into()));
            }
            write_sweep_csv(&curves[0], &mut w)?;
        }
        w.flush()?;
    } else {
        let Some(seg_path) = &a.seg else {
            bail!(gala::Error::InvalidInput("give --seg or --sweep".into()));
        };
        if a.gt.len() != 1 {
            bail!(gala::Error::InvalidInput("give exactly one --gt with --seg".into()));
        }
        let seg = load_labels(seg_path)?;
        let gt = load_labels(&a.gt[0])?;
        inputs.push(seg_path.clone());
        let t = contingency(&seg, &gt)?;
        let mut w = create(&a.out)?;
        // Scalar metrics share the sweep layout with an empty threshold.
        writeln!(w, "metric,threshold,value")?;
        for m in &metrics {
            match *m {
                "vi" => writeln!(w, "vi,,{}", g17(vi(&t).total))?,
                "splitvi" => {
                    let r = vi(&t);
                    writeln!(w, "vi_under,,{}", g17(r.under))?;
                    writeln!(w, "vi_over,,{}", g17(r.over))?;
                }
                "ri" => writeln!(w, "ri,,{}", g17(rand_index(&t)))?,
                "are" => writeln!(w, "are,,{}", g17(adjusted_rand_error(&t)))?,
                "covering" => writeln!(w, "covering,,{}", g17(covering(&t)))?,
                _ => {
                    let path = sibling(&a.out, "breakdown.csv");
                    let mut bw = create(&path)?;
                    vi_breakdown(&t).write_csv(&mut bw)?;
                    bw.flush()?;
                    outputs.push(path);
                }
            }
        }
        w.flush()?;
    }
    Manifest {
        command: "eval",
        config: json!({ "metrics": metrics, "thresholds": cfg.thresholds, "ods": a.ods }),
        seeds: vec![],
        inputs,
        outputs,
    }
    .write(&manifest_path(&a.out), started)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<gala::Error>()) {
        Some(gala::Error::ImpureNode(..)) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Watershed(a) => cmd_watershed(a),
        Command::Train(a) => cmd_train(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
