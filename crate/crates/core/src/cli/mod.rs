//! The `dxann` command line: `gen-data`, `train`, `eval` and `explain`.
//!
//! Exit codes are 0 on success, 1 on runtime failure and 2 on argument
//! errors. Results go to stdout, diagnostics to stderr.

pub mod render;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::classifier::explain;
use crate::data::netpbm::GrayImage;
use crate::data::{
    gen_blob_images, gen_two_moons, load_dataset, preprocess, save_dataset, split, BlobConfig,
    Dataset,
};
use crate::error::{Error, Result};
use crate::flow::ConditionerSpec;
use crate::train::{evaluate, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};

#[derive(Parser, Debug)]
#[command(name = "dxann", version, about = "Flow-based binary classifier with per-feature explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train on a dataset directory and write a checkpoint plus metrics CSV.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset directory.
    Eval(EvalArgs),
    /// Explain one sample: ECS table and, for images, heatmap and overlay.
    Explain(ExplainArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DataKind {
    #[value(name = "two-moons", alias = "moons")]
    TwoMoons,
    Blobs,
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    /// Number of samples (at least 2).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Image height (blobs).
    #[arg(long, default_value_t = 16)]
    h: usize,
    /// Image width (blobs).
    #[arg(long, default_value_t = 16)]
    w: usize,
    /// Bump radius (blobs).
    #[arg(long, default_value_t = 2.0)]
    r: f64,
    /// Bump amplitude (blobs).
    #[arg(long, default_value_t = 0.8)]
    a: f64,
    /// Noise level: Gaussian std for two-moons, uniform ceiling for blobs.
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Timing {
    /// Record elapsed seconds per epoch.
    Wall,
    /// Write 0 in the seconds column so reruns give identical files.
    None,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; metrics go to the same path with extension `.metrics.csv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    batch: usize,
    /// Number of coupling blocks.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Class means sit at -c and +c in every coordinate.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Log-scale clamp.
    #[arg(long, default_value_t = 3.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of samples used for training.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Conditioner hidden widths, comma separated.
    #[arg(long, default_value = "64,64", value_delimiter = ',')]
    hidden: Vec<usize>,
    /// Turn off per-epoch dequantisation noise on images.
    #[arg(long)]
    no_dequantize: bool,
    #[arg(long, value_enum, default_value_t = Timing::Wall)]
    timing: Timing,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    id: String,
    /// Output prefix for `.ecs.csv`, `.heatmap.ppm` and `.overlay.ppm`.
    #[arg(long)]
    out: PathBuf,
    /// Heatmap weight in the overlay.
    #[arg(long, default_value_t = render::DEFAULT_OVERLAY_ALPHA)]
    overlay_alpha: f64,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage<T>(msg: impl Into<String>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

type CmdResult = std::result::Result<(), Failure>;

/// Runs the CLI on `args` (including the program name) with the process's
/// standard streams and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// Like [`run`] with explicit output and error streams.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(&a, out),
        Command::Train(a) => train_cmd(&a, out),
        Command::Eval(a) => eval_cmd(&a, out),
        Command::Explain(a) => explain_cmd(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments) -> Result<()> {
    out.write_fmt(text)
        .and_then(|()| out.write_all(b"\n"))
        .map_err(|e| Error::io("<stdout>", e))
}

fn gen_data(a: &GenDataArgs, out: &mut dyn Write) -> CmdResult {
    if a.n < 2 {
        return usage(format!("--n must be at least 2, got {}", a.n));
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return usage(format!("--sigma must be >= 0, got {}", a.sigma));
    }
    let ds = match a.kind {
        DataKind::TwoMoons => gen_two_moons(a.n, a.sigma, a.seed),
        DataKind::Blobs => gen_blob_images(&BlobConfig {
            n: a.n,
            height: a.h,
            width: a.w,
            radius: a.r,
            amplitude: a.a,
            noise: a.sigma,
            seed: a.seed,
        }),
    }
    .map_err(|e| match e {
        Error::Config(msg) | Error::Contract(msg) => Failure::Usage(msg),
        other => Failure::Runtime(other),
    })?;
    save_dataset(&ds, &a.out)?;
    let [c0, c1] = ds.class_counts();
    say(
        out,
        format_args!(
            "wrote {} samples to {} (class 0: {c0}, class 1: {c1})",
            ds.len(),
            a.out.display()
        ),
    )?;
    Ok(())
}

/// `model.dxann` → `model.metrics.csv`.
pub fn metrics_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("metrics.csv")
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> CmdResult {
    if !(a.lr >= 0.0 && a.lr.is_finite()) {
        return usage(format!("--lr must be a finite value >= 0, got {}", a.lr));
    }
    if !(a.split > 0.0 && a.split < 1.0) {
        return usage(format!("--split must lie strictly between 0 and 1, got {}", a.split));
    }
    for (flag, v) in [("--c", a.c), ("--alpha", a.alpha)] {
        if !(v > 0.0 && v.is_finite()) {
            return usage(format!("{flag} must be positive, got {v}"));
        }
    }
    if a.k < 2 {
        return usage(format!("--k must be at least 2, got {}", a.k));
    }
    if a.batch == 0 {
        return usage("--batch must be at least 1");
    }
    if a.hidden.is_empty() || a.hidden.contains(&0) {
        return usage("--hidden widths must be positive");
    }

    let data = load_dataset(&a.data)?;
    let (train_set, test_set) = split(&data, a.split, a.seed)?;
    let train_set = preprocess(&train_set, false, a.seed);
    let test_set = preprocess(&test_set, false, a.seed);
    let cfg = TrainConfig {
        lr: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        alpha: a.alpha,
        separation: a.c,
        dequantize: !a.no_dequantize,
        num_blocks: a.k,
        conditioner: ConditionerSpec::Mlp {
            hidden: a.hidden.clone(),
        },
        ..TrainConfig::default()
    };
    let (model, heads, log) = train(&train_set, &test_set, &cfg)?;
    save_checkpoint(
        &Checkpoint {
            model,
            heads,
            train_config: cfg,
        },
        &a.out,
    )?;
    let metrics = metrics_path(&a.out);
    fs::write(&metrics, log.to_csv(a.timing == Timing::Wall)).map_err(|e| Error::io(&metrics, e))?;

    match log.last() {
        Some(r) => say(
            out,
            format_args!(
                "epoch {}: train_loss {:.6} train_acc {:.4} test_acc {:.4}",
                r.epoch, r.train_loss, r.train_acc, r.test_acc
            ),
        )?,
        None => say(out, format_args!("no epochs run"))?,
    }
    say(
        out,
        format_args!("saved {} and {}", a.out.display(), metrics.display()),
    )?;
    Ok(())
}

fn load_matching(model: &Path, data: &Path) -> Result<(Checkpoint, Dataset)> {
    let ck = load_checkpoint(model)?;
    let ds = load_dataset(data)?;
    if ds.dim() != ck.model.dim() {
        return Err(Error::Dimension(format!(
            "model expects {} features but dataset {} has {}",
            ck.model.dim(),
            data.display(),
            ds.dim()
        )));
    }
    Ok((ck, ds))
}

fn eval_cmd(a: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let (ck, ds) = load_matching(&a.model, &a.data)?;
    let e = evaluate(&ck.model, &ck.heads, &ds)?;
    let c = e.confusion;
    say(
        out,
        format_args!(
            "samples {}\naccuracy {:.6}\nmean_loss {:.6}\nconfusion (rows true, columns predicted)\n  {:>6} {:>6}\n  {:>6} {:>6}",
            ds.len(),
            e.accuracy,
            e.mean_loss,
            c[0][0],
            c[0][1],
            c[1][0],
            c[1][1]
        ),
    )?;
    Ok(())
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Per-feature explanation table: `feature,raw,normalized`.
pub fn ecs_csv(raw: &[f64], normalized: &[f64]) -> String {
    let mut s = String::from("feature,raw,normalized\n");
    for (i, (r, n)) in raw.iter().zip(normalized).enumerate() {
        s.push_str(&format!("{i},{r},{n}\n"));
    }
    s
}

fn explain_cmd(a: &ExplainArgs, out: &mut dyn Write) -> CmdResult {
    if !(0.0..=1.0).contains(&a.overlay_alpha) {
        return usage(format!("--overlay-alpha must lie in [0, 1], got {}", a.overlay_alpha));
    }
    let (ck, ds) = load_matching(&a.model, &a.data)?;
    let sample = ds
        .get(&a.id)
        .ok_or_else(|| Error::Contract(format!("no sample with id `{}`", a.id)))?;
    let map = explain(&sample.features, &ck.model, &ck.heads)?;
    write_explanation(&a.out, &map.raw, &map.normalized, ds.spatial(), &sample.features, a.overlay_alpha)?;

    let p = map.prediction;
    say(
        out,
        format_args!(
            "sample {} label {} predicted {}\nlogp0 {:.6}\nlogp1 {:.6}",
            sample.id, sample.label, p.label, p.logp0, p.logp1
        ),
    )?;
    if ds.spatial().is_none() {
        say(out, format_args!("vector data: wrote ECS table only"))?;
    }
    Ok(())
}

fn write_explanation(
    prefix: &Path,
    raw: &crate::numeric::Tensor,
    normalized: &crate::numeric::Tensor,
    spatial: Option<(usize, usize)>,
    source: &crate::numeric::Tensor,
    overlay_alpha: f64,
) -> Result<()> {
    let write = |suffix: &str, bytes: &[u8]| {
        let path = with_suffix(prefix, suffix);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(".ecs.csv", ecs_csv(raw.data(), normalized.data()).as_bytes())?;
    if let Some((h, w)) = spatial {
        let heat = render::heatmap(normalized.data(), w, h)?;
        let gray_pixels = source
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let gray = GrayImage::new(w, h, gray_pixels)?;
        let blended = render::overlay(&heat, &gray, overlay_alpha)?;
        write(".heatmap.ppm", &heat.encode())?;
        write(".overlay.ppm", &blended.encode())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(
            std::iter::once("dxann").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn argument_errors_exit_2() {
        assert_eq!(run_capture(&[]).0, 2);
        assert_eq!(run_capture(&["frobnicate"]).0, 2);
        let (code, _, err) = run_capture(&["gen-data", "--kind", "moons", "--n", "1", "--out", "x"]);
        assert_eq!(code, 2);
        assert!(err.contains("at least 2"), "{err}");
        assert_eq!(run_capture(&["train", "--data", "d"]).0, 2);
        assert_eq!(run_capture(&["--help"]).0, 0);
    }

    #[test]
    fn missing_data_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().join("nothing");
        let m = dir.path().join("m.dxann");
        let (code, _, err) = run_capture(&[
            "train",
            "--data",
            d.to_str().unwrap(),
            "--out",
            m.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("manifest"), "{err}");
    }

    #[test]
    fn ecs_table_layout() {
        assert_eq!(ecs_csv(&[0.5, 2.0], &[0.0, 1.0]), "feature,raw,normalized\n0,0.5,0\n1,2,1\n");
    }

    #[test]
    fn metrics_next_to_checkpoint() {
        assert_eq!(metrics_path(Path::new("a/m.dxann")), Path::new("a/m.metrics.csv"));
    }

    #[test]
    fn explain_identity_flow_at_mean_gives_flat_heatmap() {
        let dir = tempfile::tempdir().unwrap();
        // Two 2x4 images; the class-1 one equals mu1 = 0.5 everywhere.
        let samples = vec![
            crate::data::Sample {
                id: "a".into(),
                features: crate::numeric::Tensor::vector(vec![0.0; 8]),
                label: 0,
                truth_mask: None,
            },
            crate::data::Sample {
                id: "b".into(),
                features: crate::numeric::Tensor::vector(vec![0.5; 8]),
                label: 1,
                truth_mask: None,
            },
        ];
        let ds = Dataset::new(samples, 8, Some((2, 4)), crate::data::SplitTag::Full).unwrap();
        let data_dir = dir.path().join("d");
        save_dataset(&ds, &data_dir).unwrap();
        // 0.5 does not survive 8-bit storage exactly; use what was stored.
        let stored = load_dataset(&data_dir).unwrap().get("b").unwrap().features.clone();

        let model = crate::flow::FlowModel::new(&crate::flow::FlowConfig::image(2, 4)).unwrap();
        let heads = crate::classifier::LatentHeads::new(
            crate::numeric::Tensor::vector(vec![-1.0; 8]),
            stored,
            0.5,
            false,
        )
        .unwrap();
        let model_path = dir.path().join("m.dxann");
        save_checkpoint(
            &Checkpoint {
                model,
                heads,
                train_config: TrainConfig::default(),
            },
            &model_path,
        )
        .unwrap();

        let prefix = dir.path().join("ex");
        let (code, out, err) = run_capture(&[
            "explain",
            "--model",
            model_path.to_str().unwrap(),
            "--data",
            data_dir.to_str().unwrap(),
            "--id",
            "b",
            "--out",
            prefix.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
        assert!(out.contains("predicted 1"), "{out}");
        let heat = crate::data::netpbm::RgbImage::decode(
            &fs::read(with_suffix(&prefix, ".heatmap.ppm")).unwrap(),
        )
        .unwrap();
        assert_eq!((heat.width, heat.height), (4, 2));
        assert!(heat.pixels.chunks(3).all(|p| p == [128, 0, 0]));
        assert!(with_suffix(&prefix, ".overlay.ppm").is_file());

        let (code, _, err) = run_capture(&[
            "explain",
            "--model",
            model_path.to_str().unwrap(),
            "--data",
            data_dir.to_str().unwrap(),
            "--id",
            "zzz",
            "--out",
            prefix.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
        assert!(err.contains("zzz"));
    }
}
