// `!(x > 0.0)` style checks are meant to reject NaN too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use morphnet::data::{gen_synthetic, write_idx, IdxPixels, SyntheticSpec};
use morphnet::init::{default_fit_sizes, fit_variance_model, InitSpec, Provenance, VarianceModel};
use morphnet::layers::gradcheck::{suite, SuiteSpec, Target};
use morphnet::layers::DualFlags;
use morphnet::morph::se_text::{parse_binary, parse_gray};
use morphnet::morph::{
    binary_dilate, binary_erode, binary_hit_or_miss, binary_hit_or_miss_unchecked, gray_dilate, gray_erode, gray_hit_or_miss,
    BinaryImage, BinarySe, BinarySePair, Valid,
};
use morphnet::pgm::{self, PgmEncoding};
use morphnet::train::{
    evaluate, export_filters, load_pair, prepare, train, Checkpoint, Control, DataSource, EpochRecord, ExportFormat, OpKind,
    TrainConfig,
};
use morphnet::{Error, Rng, Tensor};

/// Exit status for a failed tolerance check.
struct Breach(String);

impl std::fmt::Debug for Breach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for Breach {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Breach {}

#[derive(Parser)]
#[command(name = "morphnet", version, about = "Morphological hit-or-miss layers: classical transforms, training and checks")]
struct Cli {
    /// Worker threads for per-sample parallelism.
    #[arg(long, global = true, env = "MORPHNET_THREADS", default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classical erosion, dilation and hit-or-miss on a PGM image.
    Morph(MorphArgs),
    /// Write the disk/ring data set as IDX files.
    GenSynthetic(GenArgs),
    /// Train a model from a TOML config.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Compare backward passes with finite differences.
    Gradcheck(GradArgs),
    /// Fit the variance model a/n^b of smooth aggregations.
    FitVariance(FitArgs),
    /// Write learned filters as images or CSV.
    ExportFilters(ExportArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MorphOp {
    Erode,
    Dilate,
    Hitmiss,
    BinaryHitmiss,
}

#[derive(Args)]
struct MorphArgs {
    #[arg(long, value_enum)]
    op: MorphOp,
    #[arg(long)]
    image: PathBuf,
    /// Structuring element; the hit element for hit-or-miss.
    #[arg(long)]
    se: PathBuf,
    #[arg(long)]
    miss_se: Option<PathBuf>,
    /// Allow binary hit and miss elements that share cells.
    #[arg(long)]
    force: bool,
    /// Result image: `.csv` keeps raw values, anything else is a PGM.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the full frame with `*` for uncomputed borders.
    #[arg(long)]
    ascii: bool,
    /// Decimals in grayscale text grids.
    #[arg(long, default_value_t = 1)]
    decimals: usize,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Samples per class in the held-out set.
    #[arg(long, default_value_t = 200)]
    test_per_class: usize,
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    #[arg(long, default_value_t = 28)]
    grid: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of IDX files; overrides the config's data source.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    layer: Option<OpKind>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long)]
    nonintersect: bool,
    #[arg(long, allow_negative_numbers = true)]
    dnc: Option<f64>,
    /// e.g. `kaiming`, `constant:0.01`, `uniform:-0.01,0.01`, `shm-variance`.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// History CSV; defaults to the checkpoint path with `.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Also save the checkpoint every N epochs.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Stop early once training accuracy reaches this value.
    #[arg(long)]
    stop_at_train_acc: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory of IDX files.
    #[arg(long, conflicts_with = "config")]
    data: Option<PathBuf>,
    /// Take the data from a training config instead.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    split: Split,
}

#[derive(Args)]
struct GradArgs {
    /// conv, gc1, gc2, hm-dual, hm-single, shm, erosion, dilation, batchnorm,
    /// dense, relu, maxpool, mse, softmax-ce
    #[arg(long)]
    layer: String,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    nonintersect: bool,
    #[arg(long, allow_negative_numbers = true)]
    dnc: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Corrupt the input gradient by 1% (checks the checker).
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Comma-separated, `inf` for hard min/max.
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1,2,inf")]
    alphas: Vec<String>,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Largest accepted relative deviation from the shipped table.
    #[arg(long, default_value_t = 0.15)]
    tolerance: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `layer{i}`.
    #[arg(long)]
    layer_name: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "pgm")]
    format: ExportFormat,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    let result = match cli.cmd {
        Cmd::Morph(a) => cmd_morph(a),
        Cmd::GenSynthetic(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::FitVariance(a) => cmd_fit(a),
        Cmd::ExportFilters(a) => cmd_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<Breach>().is_some() {
        return 3;
    }
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(
            Error::IntersectingSe { .. }
            | Error::AllDnc(_)
            | Error::Diverged { .. }
            | Error::NonFinite(_)
            | Error::EmptyReduction(_)
            | Error::Invalid(_),
        ) => 2,
        _ => 1,
    }
}

fn banner(lines: &[(&str, String)]) {
    for (k, v) in lines {
        eprintln!("# {k}: {v}");
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn to_binary(img: &Tensor<f64>) -> Result<BinaryImage> {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    Ok(BinaryImage::new(h, w, img.data().iter().map(|&v| (v > 0.5) as u8).collect())?)
}

fn write_gray(path: &Path, v: &Valid<Tensor<f64>>) -> Result<()> {
    let t = &v.values;
    if path.extension().is_some_and(|e| e == "csv") {
        let mut s = String::new();
        for row in t.data().chunks(t.shape()[1]) {
            let cells: Vec<String> = row.iter().map(|x| format!("{}", *x as f32)).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    } else {
        let (lo, hi) = (t.min(), t.max());
        let img = if hi > lo { t.map(|x| (x - lo) / (hi - lo)) } else { t.map(|_| 0.5) };
        pgm::write(path, &img, 255, PgmEncoding::Binary)?;
        eprintln!("# {} holds values rescaled from [{lo}, {hi}]", path.display());
    }
    Ok(())
}

fn cmd_morph(a: MorphArgs) -> Result<()> {
    banner(&[
        ("op", format!("{:?}", a.op)),
        ("image", a.image.display().to_string()),
        ("se", a.se.display().to_string()),
        ("miss-se", a.miss_se.as_ref().map_or("-".into(), |p| p.display().to_string())),
        ("force", a.force.to_string()),
        ("seed", "none".into()),
    ]);
    let img = pgm::read::<f64>(&a.image)?;
    let miss = || a.miss_se.as_ref().ok_or_else(|| anyhow!("--op {:?} needs --miss-se", a.op));
    let mut grids: Vec<(&str, String)> = Vec::new();
    match a.op {
        MorphOp::Erode | MorphOp::Dilate | MorphOp::Hitmiss => {
            let se = parse_gray::<f64>(&read_text(&a.se)?)?;
            let result = match a.op {
                MorphOp::Erode => gray_erode(&img, &se)?,
                MorphOp::Dilate => gray_dilate(&img, &se)?,
                _ => {
                    let m = parse_gray::<f64>(&read_text(miss()?)?)?;
                    let e = gray_erode(&img, &se)?;
                    let d = gray_dilate(&img, &m.reflect())?;
                    grids.push(("erosion by hit", e.to_ascii(a.decimals)));
                    grids.push(("dilation by reflected miss", d.to_ascii(a.decimals)));
                    gray_hit_or_miss(&img, &se, &m)?
                }
            };
            grids.push(("result", result.to_ascii(a.decimals)));
            if let Some(out) = &a.out {
                write_gray(out, &result)?;
            }
        }
        MorphOp::BinaryHitmiss => {
            let bin = to_binary(&img)?;
            let h = parse_binary(&read_text(&a.se)?)?;
            let m: BinarySe = parse_binary(&read_text(miss()?)?)?;
            let result = if a.force {
                let pair = BinarySePair::new_unchecked(h.clone(), m.clone())?;
                let shared = pair.intersection();
                if !shared.is_empty() {
                    eprintln!("# warning: hit and miss share cells {shared:?}; forced");
                }
                binary_hit_or_miss_unchecked(&bin, &h, &m)?
            } else {
                binary_hit_or_miss(&bin, &BinarySePair::new(h.clone(), m.clone())?)?
            };
            grids.push(("erosion by hit", binary_erode(&bin, &h)?.to_ascii()));
            grids.push(("dilation by reflected miss", binary_dilate(&bin, &m.reflect())?.to_ascii()));
            grids.push(("result", result.to_ascii()));
            if let Some(out) = &a.out {
                let v = &result.values;
                let t = Tensor::from_fn(&[v.rows(), v.cols()], |i| v.data()[i] as f64);
                pgm::write(out, &t, 1, PgmEncoding::Ascii)?;
            }
        }
    }
    if a.ascii {
        for (name, g) in &grids {
            println!("{name}:\n{g}");
        }
    } else if let Some((_, g)) = grids.last() {
        print!("{g}");
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let spec = SyntheticSpec { grid: a.grid, per_class: a.per_class, noise_sigma: a.noise, ..SyntheticSpec::default() };
    banner(&[("spec", format!("{spec:?}")), ("test_per_class", a.test_per_class.to_string()), ("seed", a.seed.to_string())]);
    let mut rng = Rng::new(a.seed);
    let (mut data_rng, mut test_rng) = (rng.fork(), rng.fork());
    let train = gen_synthetic::<f32>(&spec, &mut data_rng)?;
    let test = gen_synthetic::<f32>(&SyntheticSpec { per_class: a.test_per_class, ..spec }, &mut test_rng)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for (set, prefix) in [(&train, "train"), (&test, "t10k")] {
        let imgs = a.out.join(format!("{prefix}-images-idx3-ubyte"));
        let labs = a.out.join(format!("{prefix}-labels-idx1-ubyte"));
        write_idx(set, &imgs, &labs, IdxPixels::Float32)?;
        println!("{}: {} samples", imgs.display(), set.len());
    }
    Ok(())
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_acc,test_acc\n");
    for r in history {
        let test = r.test_acc.map_or(String::new(), |t| format!("{}", t as f32));
        let _ = writeln!(s, "{},{},{},{}", r.epoch, r.train_loss as f32, r.train_acc as f32, test);
    }
    s
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(dir) = &a.data {
        cfg.data.source = DataSource::Idx;
        cfg.data.dir = Some(dir.clone());
    }
    let m = &mut cfg.model;
    if let Some(l) = a.layer {
        m.layer = Some(l);
    }
    if a.alpha.is_some() {
        m.alpha = a.alpha;
    }
    if a.nonintersect {
        m.nonintersect = true;
    }
    if a.dnc.is_some() {
        m.dnc = a.dnc;
    }
    if let Some(i) = &a.init {
        InitSpec::parse(i)?;
        m.init = Some(i.clone());
    }
    let o = &mut cfg.optim;
    if let Some(s) = a.seed {
        o.seed = s;
    }
    if let Some(e) = a.epochs {
        o.epochs = e;
    }
    if let Some(b) = a.batch_size {
        o.batch_size = b;
    }
    if let Some(lr) = a.lr {
        o.optimizer = o.optimizer.with_lr(lr);
    }
    eprintln!("# resolved config:\n{}", cfg.to_toml().lines().map(|l| format!("#   {l}\n")).collect::<String>().trim_end());
    eprintln!("# seed: {}", cfg.optim.seed);

    let mut run = prepare::<f32>(&cfg)?;
    if let Some(path) = &a.resume {
        let ck = Checkpoint::load(path)?;
        if ck.model != *run.model.spec() {
            bail!("checkpoint {} was trained with a different model spec", path.display());
        }
        let (model, state) = ck.restore::<f32>()?;
        run.model = model;
        run.state = state;
        eprintln!("# resumed at epoch {}", run.state.epoch);
    }
    let history = a.history.clone().unwrap_or_else(|| a.out.with_extension("history.csv"));
    let optim = cfg.optim.clone();
    let every = a.checkpoint_every.unwrap_or(0);
    let stop = a.stop_at_train_acc;
    let out = a.out.clone();
    let mut hook = |r: &EpochRecord, model: &_, state: &_| -> morphnet::Result<Control> {
        let test = r.test_acc.map_or(String::new(), |t| format!(" test_acc {t:.4}"));
        eprintln!("epoch {:>4} loss {:.6} train_acc {:.4}{test}", r.epoch, r.train_loss, r.train_acc);
        if every > 0 && r.epoch.is_multiple_of(every) {
            Checkpoint::capture(model, state, Some(&optim)).save(&out)?;
        }
        Ok(if stop.is_some_and(|s| r.train_acc >= s) { Control::Stop } else { Control::Continue })
    };
    train(&mut run.model, &run.train, run.test.as_ref(), &cfg.optim, &mut run.state, &mut hook)?;
    Checkpoint::capture(&run.model, &run.state, Some(&cfg.optim)).save(&a.out)?;
    fs::write(&history, history_csv(&run.state.history)).with_context(|| format!("writing {}", history.display()))?;
    let fin = evaluate(&mut run.model, &run.train)?;
    println!("checkpoint: {}", a.out.display());
    println!("history: {}", history.display());
    println!("epochs: {}", run.state.epoch);
    println!("train_acc (eval mode): {:.4}", fin.accuracy);
    if let Some(best) = run.state.best_test_acc() {
        println!("best test_acc: {best:.4}");
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    banner(&[("checkpoint", a.checkpoint.display().to_string()), ("split", format!("{:?}", a.split)), ("seed", "none".into())]);
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (mut model, _) = ck.restore::<f32>()?;
    let data = match (&a.data, &a.config) {
        (Some(dir), _) => load_pair::<f32>(dir, if matches!(a.split, Split::Train) { "train" } else { "t10k" })?,
        (None, Some(cfg)) => {
            let cfg = TrainConfig::load(cfg)?;
            let mut rngs = morphnet::train::RunRngs::new(cfg.optim.seed);
            let (train, test) = cfg.load_data::<f32>(&mut rngs)?;
            match a.split {
                Split::Train => train,
                Split::Test => test.ok_or_else(|| anyhow!("the config has no test set"))?,
            }
        }
        (None, None) => bail!("give --data or --config"),
    };
    let m = evaluate(&mut model, &data)?;
    println!("samples: {}", data.len());
    println!("accuracy: {:.4}", m.accuracy);
    println!("loss: {}", m.loss as f32);
    println!("confusion (rows true, columns predicted):");
    for row in &m.confusion {
        println!("{}", row.iter().map(|v| format!("{v:>6}")).collect::<String>());
    }
    Ok(())
}

fn cmd_gradcheck(a: GradArgs) -> Result<()> {
    let target: Target = a.layer.parse()?;
    if target.needs_alpha() && a.alpha.is_none() {
        bail!(Error::Config(format!("--layer {} needs --alpha", a.layer)));
    }
    if let Some(al) = a.alpha {
        if !(al >= 0.0) {
            bail!(Error::Config(format!("--alpha must be >= 0, got {al}")));
        }
    }
    banner(&[
        ("layer", a.layer.clone()),
        ("alpha", format!("{:?}", a.alpha)),
        ("trials", a.trials.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    let spec = SuiteSpec {
        target,
        alpha: a.alpha,
        flags: DualFlags { nonintersect: a.nonintersect, dnc: a.dnc },
        trials: a.trials,
        seed: a.seed,
        fault: a.inject_fault,
    };
    let report = suite(&spec)?;
    for g in &report.groups {
        println!("{:<8} checked {:>6} kinks {:>4} max_rel_err {:.3e}", g.name, g.checked, g.kinks, g.max_rel_err);
    }
    let worst = report.max_rel_err();
    if !report.passed(a.tolerance) {
        return Err(Breach(format!("max relative error {worst:.3e} exceeds {:.1e}", a.tolerance)).into());
    }
    println!("pass (max relative error {worst:.3e})");
    Ok(())
}

fn parse_alpha(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => {
            let v: f64 = t.parse().map_err(|_| Error::Config(format!("bad alpha `{t}`")))?;
            if !(v >= 0.0) {
                bail!(Error::Config(format!("alpha must be >= 0, got {v}")));
            }
            Ok(v)
        }
    }
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let alphas = a.alphas.iter().map(|s| parse_alpha(s)).collect::<Result<Vec<f64>>>()?;
    let sizes = default_fit_sizes();
    banner(&[
        ("alphas", format!("{alphas:?}")),
        ("sizes", format!("{sizes:?}")),
        ("trials", a.trials.to_string()),
        ("seed", a.seed.to_string()),
    ]);
    let shipped = VarianceModel::default();
    let mut rng = Rng::new(a.seed);
    let mut entries = Vec::new();
    let mut notes = String::new();
    let mut breaches = Vec::new();
    println!("{:>6} {:>8} {:>8} {:>10} {:>10}", "alpha", "a", "b", "dev_a", "dev_b");
    for &al in &alphas {
        let (fa, fb) = fit_variance_model(al, &sizes, a.trials, &mut rng)?;
        entries.push((al, fa, fb));
        let (da, db) = match shipped.coefficients(al) {
            Ok((sa, sb)) => (Some((fa - sa).abs() / sa), Some((fb - sb).abs() / sb.abs())),
            Err(_) => (None, None),
        };
        let show = |d: Option<f64>| d.map_or("-".to_string(), |d| format!("{:.2}%", 100.0 * d));
        println!("{:>6} {:>8.4} {:>8.4} {:>10} {:>10}", al, fa, fb, show(da), show(db));
        let _ = writeln!(notes, "# alpha {al}: deviation a {}, b {}", show(da), show(db));
        if da.into_iter().chain(db).any(|d| d > a.tolerance) {
            breaches.push(al);
        }
    }
    let model = VarianceModel::new(entries, Provenance::Fitted)?;
    let text = format!("{}# trials {}, seed {}\n{notes}", model.to_text(), a.trials, a.seed);
    fs::write(&a.out, text).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {}", a.out.display());
    if !breaches.is_empty() {
        return Err(Breach(format!("alpha {breaches:?} deviate more than {:.0}% from the shipped table", 100.0 * a.tolerance)).into());
    }
    Ok(())
}

fn cmd_export(a: ExportArgs) -> Result<()> {
    banner(&[
        ("checkpoint", a.checkpoint.display().to_string()),
        ("layer", a.layer_name.clone()),
        ("format", format!("{:?}", a.format)),
        ("seed", "none".into()),
    ]);
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (model, _) = ck.restore::<f32>()?;
    let m = export_filters(&model, &a.layer_name, &a.out, a.format)?;
    for f in &m.filters {
        let flag = if f.degenerate { " (constant)" } else { "" };
        println!("{} range [{}, {}]{flag} dnc {}", f.file, f.min, f.max, f.dnc_cells.len());
    }
    println!("manifest: {}", a.out.join("manifest.json").display());
    Ok(())
}
