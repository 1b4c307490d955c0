use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use layermix::config::{load_phantom_spec, RunConfig};
use layermix::displace::{
    compute_stats, confidence_gap, displace, patchify, replay_displacement, topk_select, StreamStack,
};
use layermix::io::{decode_params, encode_params, read_volume, write_atomic, write_volume, GridKind, VolumeFile};
use layermix::manifest::{DisplaceRecord, Manifest, Plan};
use layermix::metrics::MetricReport;
use layermix::model::forward;
use layermix::phantom::{generate_cases, PhantomSpec};
use layermix::shuffle::{choose_axis, recover_batch, shuffle_batch, ShufflePlan};
use layermix::trainer::{run_training, AxisPolicy, Dataset, Mode};
use layermix::{Axis, ConfidenceGrid, Dims, Error, Lattice, Result};

/// Slice-block shuffling, confidence-guided displacement and a toy
/// teacher-student trainer for 3D volumes.
#[derive(Parser)]
#[command(name = "layermix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply or undo an augmentation on volume files.
    #[command(subcommand)]
    Augment(Augment),
    /// Train the toy segmentor on generated phantoms.
    Train(TrainArgs),
    /// Predict labels (and confidences) with a parameter snapshot.
    Predict(PredictArgs),
    /// Per-class Dice and ASD between two label files.
    Eval(EvalArgs),
    /// Export mid-slices as PGM/PPM rasters.
    Montage(MontageArgs),
    /// Generate phantom cases.
    Phantom(PhantomArgs),
    /// Convert between volume files and bare payloads.
    #[command(subcommand)]
    Convert(Convert),
}

#[derive(Subcommand)]
enum Augment {
    /// Shuffle slice-blocks across the given volumes.
    Shuffle(ShuffleArgs),
    /// Undo a shuffle recorded in a manifest.
    Recover(RecoverArgs),
    /// Exchange weak/strong patches of prepared cases.
    Displace(DisplaceArgs),
}

#[derive(Args)]
struct SeedArg {
    /// Random seed; defaults to $LAYERMIX_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ShuffleArgs {
    /// Volumes of one kind and shape, in batch order.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    /// D, H, W or random.
    #[arg(long, default_value = "random")]
    axis: AxisPolicy,
    /// Slice-block thickness.
    #[arg(long)]
    p: Option<usize>,
    /// Where to write the plan; defaults to OUT_DIR/manifest.txt.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Reuse the plan of an earlier run instead of sampling one.
    #[arg(long, conflicts_with_all = ["p"])]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DisplaceArgs {
    /// Case directories holding {weak,strong}{,_label,_conf,_sup}.jnv.
    #[arg(long = "case", required = true)]
    cases: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value = "random")]
    axis: AxisPolicy,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 2)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, conflicts_with_all = ["p"])]
    replay: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the max-probability confidence map.
    #[arg(long)]
    confidence: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MontageArgs {
    #[arg(long)]
    input: PathBuf,
    /// Axes orthogonal to the exported slices.
    #[arg(long = "axis", required = true)]
    axes: Vec<Axis>,
    /// Slice index; the middle slice when absent.
    #[arg(long)]
    index: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom spec (TOML); the built-in desk phantom when absent.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[command(flatten)]
    seed: SeedArg,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Independent case stream within the seed.
    #[arg(long, default_value_t = 0)]
    stream: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Image,
    Label,
    Confidence,
    Supervision,
}

#[derive(Subcommand)]
enum Convert {
    /// Strip the header.
    ToRaw {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add a header to a bare little-endian payload.
    FromRaw {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, num_args = 3, value_names = ["D", "H", "W"])]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        classes: usize,
    },
}

fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var("LAYERMIX_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("LAYERMIX_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Config(format!("{} has no file name", path.display())))
}

fn require_p(p: Option<usize>) -> Result<usize> {
    p.ok_or_else(|| Error::Config("--p is required (the slice-block thickness has no default)".into()))
}

fn fixed_axis(policy: AxisPolicy, rng: &mut ChaCha8Rng) -> Axis {
    match policy {
        AxisPolicy::Random => choose_axis(rng),
        AxisPolicy::Fixed(a) => a,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn run_plan<G: Lattice + Into<VolumeFile>>(
    grids: Vec<G>,
    plan: &ShufflePlan,
    shuffle: bool,
) -> Result<Vec<VolumeFile>> {
    let out = if shuffle { shuffle_batch(&grids, plan)? } else { recover_batch(&grids, plan)? };
    Ok(out.into_iter().map(Into::into).collect())
}

/// Shuffles (or recovers) a batch of files, which must all be of one kind.
fn apply_plan(files: Vec<VolumeFile>, plan: &ShufflePlan, shuffle: bool) -> Result<Vec<VolumeFile>> {
    let kind = files[0].kind();
    if files.iter().any(|f| f.kind() != kind) {
        return Err(Error::Config("all inputs must be of the same kind".into()));
    }
    match kind {
        GridKind::Image => {
            run_plan(files.into_iter().map(VolumeFile::into_image).collect::<Result<Vec<_>>>()?, plan, shuffle)
        }
        GridKind::Label => {
            run_plan(files.into_iter().map(VolumeFile::into_label).collect::<Result<Vec<_>>>()?, plan, shuffle)
        }
        GridKind::Confidence => {
            run_plan(files.into_iter().map(VolumeFile::into_confidence).collect::<Result<Vec<_>>>()?, plan, shuffle)
        }
        GridKind::Supervision => {
            run_plan(files.into_iter().map(VolumeFile::into_supervision).collect::<Result<Vec<_>>>()?, plan, shuffle)
        }
    }
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<VolumeFile>> {
    paths.iter().map(read_volume).collect()
}

fn write_outputs(out_dir: &Path, names: &[String], files: &[VolumeFile]) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    for (name, f) in names.iter().zip(files) {
        write_volume(out_dir.join(name), f)?;
    }
    Ok(())
}

fn unique_names(paths: &[PathBuf]) -> Result<Vec<String>> {
    let names = paths.iter().map(|p| file_name(p)).collect::<Result<Vec<_>>>()?;
    let mut sorted = names.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("input file names must be distinct".into()));
    }
    Ok(names)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Manifest::parse(&fs::read_to_string(path)?)
}

fn cmd_shuffle(a: ShuffleArgs) -> Result<()> {
    let names = unique_names(&a.inputs)?;
    let files = read_all(&a.inputs)?;
    let plan = match &a.replay {
        Some(path) => match load_manifest(path)?.plan {
            Plan::Shuffle(plan) => plan,
            Plan::Displace(_) => {
                return Err(Error::Config("replay manifest records a displacement, not a shuffle".into()))
            }
        },
        None => {
            let p = require_p(a.p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(a.seed.seed, None)?);
            let axis = fixed_axis(a.axis, &mut rng);
            let extent = files[0].dims().extent(axis);
            ShufflePlan::sample(&mut rng, axis, extent, p, files.len())?
        }
    };
    let out = apply_plan(files, &plan, true)?;
    write_outputs(&a.out_dir, &names, &out)?;
    let manifest = Manifest { plan: Plan::Shuffle(plan), inputs: names };
    write_text(&a.manifest.unwrap_or_else(|| a.out_dir.join("manifest.txt")), &manifest.to_text())
}

fn cmd_recover(a: RecoverArgs) -> Result<()> {
    let Plan::Shuffle(plan) = load_manifest(&a.manifest)?.plan else {
        return Err(Error::Config("manifest records a displacement; only shuffles can be recovered".into()));
    };
    let names = unique_names(&a.inputs)?;
    let out = apply_plan(read_all(&a.inputs)?, &plan, false)?;
    write_outputs(&a.out_dir, &names, &out)
}

const CASE_FILES: [&str; 2] = ["weak", "strong"];

fn cmd_displace(a: DisplaceArgs) -> Result<()> {
    let case_names = unique_names(&a.cases)?;
    let replay = match &a.replay {
        Some(path) => match load_manifest(path)?.plan {
            Plan::Displace(r) => Some(r),
            Plan::Shuffle(_) => {
                return Err(Error::Config("replay manifest records a shuffle, not a displacement".into()))
            }
        },
        None => None,
    };
    let (mut volumes, mut labels, mut confidence, mut supervision) = (vec![], vec![], vec![], vec![]);
    for dir in &a.cases {
        for s in CASE_FILES {
            let image = read_volume(dir.join(format!("{s}.jnv")))?.into_image()?;
            let dims = image.dims();
            volumes.push(image);
            labels.push(read_volume(dir.join(format!("{s}_label.jnv")))?.into_label()?);
            supervision.push(read_volume(dir.join(format!("{s}_sup.jnv")))?.into_supervision()?);
            confidence.push(if replay.is_some() {
                ConfidenceGrid::filled(dims, 0.0)?
            } else {
                read_volume(dir.join(format!("{s}_conf.jnv")))?.into_confidence()?
            });
        }
    }
    let stack = StreamStack::new(volumes, labels, confidence, supervision)?;
    let (record, displaced) = match replay {
        Some(r) => {
            if r.batch != stack.batch() {
                return Err(Error::Config(format!("manifest covers {} cases, got {}", r.batch, stack.batch())));
            }
            let d = replay_displacement(&stack, r.axis, r.thickness, r.grid, &r.swaps)?;
            (r, d)
        }
        None => {
            let p = require_p(a.p)?;
            let axis = fixed_axis(a.axis, &mut ChaCha8Rng::seed_from_u64(resolve_seed(a.seed.seed, None)?));
            let dec = patchify(&stack, axis, p, a.n)?;
            let stats = compute_stats(&dec);
            let selection = topk_select(&confidence_gap(&stats), a.k)?;
            let d = displace(&dec, &stats, &selection)?;
            let r = DisplaceRecord {
                axis,
                thickness: p,
                grid: a.n,
                top_k: a.k,
                batch: stack.batch(),
                swaps: d.swaps.clone(),
            };
            (r, d)
        }
    };
    for (b, name) in case_names.iter().enumerate() {
        let dir = a.out_dir.join(name);
        fs::create_dir_all(&dir)?;
        for (s, stem) in CASE_FILES.iter().enumerate() {
            let i = 2 * b + s;
            write_volume(dir.join(format!("{stem}.jnv")), &displaced.volumes[i].clone().into())?;
            write_volume(dir.join(format!("{stem}_label.jnv")), &displaced.labels[i].clone().into())?;
            write_volume(dir.join(format!("{stem}_sup.jnv")), &displaced.supervision[i].clone().into())?;
        }
    }
    let manifest = Manifest { plan: Plan::Displace(record), inputs: case_names };
    write_text(&a.manifest.unwrap_or_else(|| a.out_dir.join("manifest.txt")), &manifest.to_text())
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(i) = a.iters {
        cfg.iters = i;
    }
    let seed = resolve_seed(a.seed.seed, cfg.seed)?;
    let trainer = cfg.trainer_config(seed)?;
    let spec = cfg.phantom_spec(seed)?;
    let data = Dataset::phantom(&spec, cfg.labeled, cfg.unlabeled, cfg.eval_cases)?;
    let run = run_training(trainer, &data, cfg.batch, cfg.iters, cfg.eval_interval)?;

    fs::create_dir_all(&a.out_dir)?;
    let mut loss = String::from("iteration,axis,alpha,lr,loss_layer_l,loss_layer_u,loss_disp,loss_total\n");
    for r in &run.reports {
        loss.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.iteration,
            r.axis,
            f6(r.alpha),
            f6(r.lr),
            f6(r.loss_layer_labeled),
            f6(r.loss_layer_unlabeled),
            f6(r.loss_disp),
            f6(r.loss_total)
        ));
    }
    write_text(&a.out_dir.join("loss.csv"), &loss)?;
    let mut eval = String::from("iteration,mean_dice\n");
    for h in &run.history {
        eval.push_str(&format!("{},{}\n", h.iteration, f6(h.mean_dice)));
    }
    write_text(&a.out_dir.join("eval.csv"), &eval)?;
    write_text(&a.out_dir.join("params.txt"), &encode_params(run.state.student()))
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let params = decode_params(&fs::read_to_string(&a.params)?)?;
    let image = read_volume(&a.input)?.into_image()?;
    let (labels, conf) = forward(&params, &image).argmax();
    write_volume(&a.out, &labels.into())?;
    if let Some(path) = a.confidence {
        write_volume(path, &conf.into())?;
    }
    Ok(())
}

fn metric_cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), f6)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let pred = read_volume(&a.pred)?.into_label()?;
    let reference = read_volume(&a.reference)?.into_label()?;
    let report = MetricReport::evaluate(&pred, &reference, true)?;
    let mut csv = String::from("class,dice,asd\n");
    for c in &report.classes {
        csv.push_str(&format!("{},{},{}\n", c.class, metric_cell(c.dice), metric_cell(c.asd)));
    }
    csv.push_str(&format!("mean,{},{}\n", metric_cell(report.mean_dice()), metric_cell(report.mean_asd())));
    match a.out {
        Some(path) => write_text(&path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

const PALETTE: [[u8; 3]; 8] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
];

/// Grey levels (or RGB triples for labels) of one slice, plus its (rows, cols).
fn raster(file: &VolumeFile, axis: Axis, index: usize) -> Result<(Vec<u8>, usize, usize, bool)> {
    let dims = file.dims();
    let [r, c] = axis.in_plane().map(|a| dims.extent(a));
    let scale_floats = |values: &[f32], lo: f32, hi: f32| -> Vec<u8> {
        let span = hi - lo;
        values
            .iter()
            .map(|&v| if span > 0.0 { (((v - lo) / span) * 255.0).round().clamp(0.0, 255.0) as u8 } else { 0 })
            .collect()
    };
    Ok(match file {
        VolumeFile::Image(g) => {
            let s = g.slice_along(axis, index, 1)?;
            let lo = s.data().iter().copied().fold(f32::INFINITY, f32::min);
            let hi = s.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
            (scale_floats(s.data(), lo, hi), r, c, false)
        }
        VolumeFile::Confidence(g) => (scale_floats(g.slice_along(axis, index, 1)?.data(), 0.0, 1.0), r, c, false),
        VolumeFile::Supervision(g) => {
            (g.slice_along(axis, index, 1)?.data().iter().map(|&v| v * 255).collect(), r, c, false)
        }
        VolumeFile::Label(g) => {
            let rgb = g
                .slice_along(axis, index, 1)?
                .data()
                .iter()
                .flat_map(|&l| PALETTE[usize::from(l) % PALETTE.len()])
                .collect();
            (rgb, r, c, true)
        }
    })
}

fn cmd_montage(a: MontageArgs) -> Result<()> {
    let file = read_volume(&a.input)?;
    let stem = a.input.file_stem().map_or_else(|| "volume".into(), |s| s.to_string_lossy().into_owned());
    fs::create_dir_all(&a.out_dir)?;
    for axis in a.axes {
        let extent = file.dims().extent(axis);
        let index = a.index.unwrap_or(extent / 2);
        if index >= extent {
            return Err(Error::Config(format!("slice index {index} outside 0..{extent} along {axis}")));
        }
        let (pixels, rows, cols, color) = raster(&file, axis, index)?;
        let (magic, ext) = if color { ("P6", "ppm") } else { ("P5", "pgm") };
        let mut bytes = format!("{magic}\n{cols} {rows}\n255\n").into_bytes();
        bytes.extend(pixels);
        write_atomic(a.out_dir.join(format!("{stem}_{axis}.{ext}")), &bytes)?;
    }
    Ok(())
}

fn cmd_phantom(a: PhantomArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(path) => {
            let mut spec = load_phantom_spec(path)?;
            if let Some(seed) = a.seed.seed {
                spec.seed = seed;
            }
            spec
        }
        None => PhantomSpec::desk(resolve_seed(a.seed.seed, None)?),
    };
    spec.validate()?;
    fs::create_dir_all(&a.out_dir)?;
    for (i, (image, label)) in generate_cases(&spec, a.count, a.stream)?.into_iter().enumerate() {
        write_volume(a.out_dir.join(format!("case_{i:03}_image.jnv")), &image.into())?;
        write_volume(a.out_dir.join(format!("case_{i:03}_label.jnv")), &label.into())?;
    }
    Ok(())
}

fn cmd_convert(c: Convert) -> Result<()> {
    match c {
        Convert::ToRaw { input, out } => write_atomic(out, &read_volume(input)?.payload()),
        Convert::FromRaw { input, out, kind, dims, classes } => {
            let kind = match kind {
                KindArg::Image => GridKind::Image,
                KindArg::Label => GridKind::Label,
                KindArg::Confidence => GridKind::Confidence,
                KindArg::Supervision => GridKind::Supervision,
            };
            let dims = Dims::new(dims[0], dims[1], dims[2]).map_err(|e| Error::Config(e.to_string()))?;
            let file = VolumeFile::from_raw(kind, dims, classes, &fs::read(input)?)?;
            write_volume(out, &file)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Augment(Augment::Shuffle(a)) => cmd_shuffle(a),
        Command::Augment(Augment::Recover(a)) => cmd_recover(a),
        Command::Augment(Augment::Displace(a)) => cmd_displace(a),
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Montage(a) => cmd_montage(a),
        Command::Phantom(a) => cmd_phantom(a),
        Command::Convert(c) => cmd_convert(c),
    }
}

/// 2 for configuration problems, 3 for I/O and malformed files.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("layermix: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
