use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lanesnn_core::dataset::{load_det_layout, save_pgm, save_sample, ManifestEntry, SampleSource, MANIFEST_NAME};
use lanesnn_core::evaluation::ThresholdReport;
use lanesnn_core::quantsim::{evaluate_quantized, load_quantized, quantize, save_quantized};
use lanesnn_core::training::{evaluate_samples, metrics_csv, predict_samples, train, TrainConfig};
use lanesnn_core::{
    build_network, fmt_g6, load_checkpoint, process_sample, process_split, save_checkpoint, DatasetManifest, Grid2D, InitConfig, LifParams,
    ManifestSource, PreprocessConfig, Rng, Sample, Split, SyntheticConfig, SyntheticSource,
};

use crate::{Command, EvalArgs, GenDataArgs, InferQuantArgs, PreprocessArgs, QuantizeArgs, TrainArgs};

/// Flag values that parse but do not make sense together.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

// Random streams derived from the user seed.
const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_TEST_DATA: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_INIT: u64 = 5;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(&a),
        Command::Preprocess(a) => preprocess(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval(&a),
        Command::Quantize(a) => quantize_cmd(&a),
        Command::InferQuant(a) => infer_quant(&a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Write samples as `dir/{input,label}/<id>.pgm` plus `dir/manifest.tsv`
/// with paths relative to `dir`.
pub fn write_split<S: SampleSource + ?Sized>(dir: &Path, split: Split, samples: &S) -> Result<DatasetManifest> {
    create_dir(&dir.join("input"))?;
    create_dir(&dir.join("label"))?;
    let mut manifest = DatasetManifest::new(split);
    for i in 0..samples.len() {
        let s = samples.get(i)?;
        let entry = ManifestEntry {
            input: PathBuf::from("input").join(format!("{}.pgm", s.id)),
            label: PathBuf::from("label").join(format!("{}.pgm", s.id)),
            id: s.id.clone(),
        };
        save_sample(&s, &dir.join(&entry.input), &dir.join(&entry.label))?;
        manifest.entries.push(entry);
    }
    manifest.write(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

/// Open a split directory: its manifest when present, otherwise the
/// `input/` + `label/` folder pair.
pub fn open_split(dir: &Path, split: Split) -> Result<ManifestSource> {
    let manifest_path = dir.join(MANIFEST_NAME);
    let manifest = if manifest_path.is_file() {
        DatasetManifest::read(&manifest_path, split)?
    } else {
        let scan = load_det_layout(dir, split)?;
        for w in &scan.warnings {
            eprintln!("warning: {w}");
        }
        scan.manifest
    };
    if manifest.is_empty() {
        return Err(lanesnn_core::Error::EmptyManifest(manifest_path).into());
    }
    Ok(ManifestSource { manifest })
}

fn load_all(source: &ManifestSource) -> Result<Vec<Sample>> {
    (0..source.len()).map(|i| Ok(source.get(i)?)).collect()
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    if a.n_train == 0 || a.n_test == 0 {
        return Err(UsageError("--n-train and --n-test must be at least 1".into()).into());
    }
    let root = Rng::new(a.seed);
    let cfg = SyntheticConfig::with_size(a.width, a.height);
    for (split, n, stream) in [
        (Split::Train, a.n_train, STREAM_TRAIN_DATA),
        (Split::Test, a.n_test, STREAM_TEST_DATA),
    ] {
        let source = SyntheticSource::new(&mut root.child(stream), n, &split.to_string(), cfg.clone())?;
        write_split(&a.out.join(split.to_string()), split, &source)?;
        println!("{split}: {n} samples -> {}", a.out.join(split.to_string()).display());
    }
    Ok(())
}

fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let cfg = PreprocessConfig {
        crop_top: a.crop_top,
        crop_bottom: a.crop_bottom,
        denorm_value: a.denorm,
        augment_count: a.augment,
        max_translate: a.max_translate,
        max_rotate_deg: a.max_rotate,
        ..PreprocessConfig::default()
    };
    let root = Rng::new(a.seed);
    for split in [Split::Train, Split::Test] {
        let source = open_split(&a.data.join(split.to_string()), split)?;
        // Check every original up front so all bad files are reported together.
        let mut failures = Vec::new();
        for (i, e) in source.manifest.entries.iter().enumerate() {
            if let Err(err) = source.get(i).and_then(|s| process_sample(&s, &cfg)) {
                failures.push(format!("  {}: {err}", e.input.display()));
            }
        }
        if !failures.is_empty() {
            return Err(anyhow::Error::new(lanesnn_core::Error::State(format!(
                "{} of {} {split} samples cannot be processed",
                failures.len(),
                source.len()
            ))))
            .context(failures.join("\n"));
        }
        let samples = process_split(&source, &mut root.child(STREAM_AUGMENT), &cfg, split == Split::Train)?;
        let out = a.out.join(split.to_string());
        write_split(&out, split, samples.as_slice())?;
        println!("{split}: {} samples -> {}", samples.len(), out.display());
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    if a.p > 0.5 && a.p <= 1.0 {
        eprintln!("warning: p = {} lies outside the usual 0.0-0.5 range", a.p);
    }
    let cfg = TrainConfig {
        p: a.p,
        beta: a.beta,
        lr: a.lr,
        lambda: a.lambda,
        v_th: a.vth,
        a1_half: a.a1_half,
        tau: a.tau,
        epochs: a.epochs,
        batch_size: a.batch_size,
        steps: a.steps,
        seed: a.seed,
        reset_term: a.reset_term,
        train_bias: a.train_bias,
        eval_every: a.eval_every,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let train_set = load_all(&open_split(&a.data.join("train"), Split::Train)?)?;
    let test_dir = a.data.join("test");
    let test_set = if test_dir.exists() {
        load_all(&open_split(&test_dir, Split::Test)?)?
    } else {
        Vec::new()
    };
    let init = InitConfig {
        lif: LifParams::new(a.vth, a.tau)?,
        sigma_r: a.sigma,
        drop_prob: a.dropout,
    };
    let net = build_network(a.arch, &mut Rng::new(a.seed).child(STREAM_INIT), &init)?;
    println!(
        "{}: {} parameters, {} train / {} test samples",
        a.arch,
        net.parameter_count(),
        train_set.len(),
        test_set.len()
    );
    let outcome = train(&train_set, &test_set, net, &cfg, |m| {
        let iou = m.test_iou.map(|v| format!(" test_iou {}", fmt_g6(v))).unwrap_or_default();
        println!("epoch {} loss {}{iou}", m.epoch, fmt_g6(m.loss_total));
    })?;
    save_checkpoint(&outcome.best, &a.out)?;
    if let Some(last) = &a.last {
        save_checkpoint(&outcome.last, last)?;
    }
    let metrics = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_file(&metrics, &metrics_csv(&outcome.history))?;
    match outcome.best_iou {
        Some(iou) => println!("best test_iou {} at epoch {}", fmt_g6(iou), outcome.best_epoch),
        None => println!("saved final epoch {}", outcome.best_epoch),
    }
    Ok(())
}

fn report_csv(samples: &[Sample], report: &ThresholdReport) -> String {
    let mut s = String::from("image_id,best_th,iou_at_mean_th\n");
    for ((sample, th), iou) in samples.iter().zip(&report.per_image_best_th).zip(&report.per_image_iou) {
        let _ = writeln!(s, "{},{},{}", sample.id, fmt_g6(*th), fmt_g6(*iou));
    }
    s
}

fn pr_csv(report: &ThresholdReport) -> String {
    let mut s = String::from("threshold,precision,recall,f_measure\n");
    for p in &report.pr_curve {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            fmt_g6(p.threshold),
            fmt_g6(p.precision),
            fmt_g6(p.recall),
            fmt_g6(p.f_measure)
        );
    }
    s
}

fn summary(tag: &str, report: &ThresholdReport) -> String {
    format!(
        "{tag}: images {} mean_best_th {} mean_iou {}",
        report.per_image_iou.len(),
        fmt_g6(report.mean_best_th),
        fmt_g6(report.mean_iou)
    )
}

fn write_reports(report_path: Option<&Path>, pr_path: Option<&Path>, samples: &[Sample], report: &ThresholdReport) -> Result<()> {
    if let Some(p) = report_path {
        write_file(p, &report_csv(samples, report))?;
    }
    if let Some(p) = pr_path {
        write_file(p, &pr_csv(report))?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let net = load_checkpoint(&a.ckpt)?;
    let samples = load_all(&open_split(&a.data, Split::Test)?)?;
    let units = net.output_units();
    if let Some(s) = samples.iter().find(|s| s.label.len() != units) {
        return Err(lanesnn_core::Error::State(format!("{}: label has {} pixels, network emits {units}", s.id, s.label.len())).into());
    }
    let rates = predict_samples(&net, &samples, a.steps, &mut Rng::new(a.seed))?;
    let pairs: Vec<(&[f64], &[f64])> = samples.iter().zip(&rates).map(|(s, r)| (s.label.data(), r.as_slice())).collect();
    let report = lanesnn_core::evaluate(&pairs, a.steps)?;
    write_reports(a.report.as_deref(), a.pr.as_deref(), &samples, &report)?;
    if let Some(dir) = &a.emit_masks {
        create_dir(dir)?;
        for (s, r) in samples.iter().zip(&rates) {
            let (rows, cols) = (s.label.rows(), s.label.cols());
            save_pgm(&dir.join(format!("{}.pgm", s.id)), &Grid2D::from_vec(rows, cols, r.clone())?)?;
            let bin = r.iter().map(|&v| if v > report.mean_best_th { 1.0 } else { 0.0 }).collect();
            save_pgm(&dir.join(format!("{}.bin.pgm", s.id)), &Grid2D::from_vec(rows, cols, bin)?)?;
        }
    }
    println!("{}", summary("eval", &report));
    Ok(())
}

fn quantize_cmd(a: &QuantizeArgs) -> Result<()> {
    let net = load_checkpoint(&a.ckpt)?;
    let (q, report) = quantize(&net)?;
    if report.vth_saturated {
        eprintln!("warning: threshold mantissa clamped to 12 bits; accuracy will suffer");
    }
    let saturated: usize = report.layers.iter().map(|l| l.saturated).sum();
    if saturated > 0 {
        eprintln!("warning: {saturated} weight mantissas clamped to 8 bits");
    }
    save_quantized(&q, &a.out)?;
    if let Some(p) = &a.report {
        write_file(p, &report.to_csv())?;
    }
    println!(
        "k {} vth_mant {} delta_v {} delta_i {} -> {}",
        fmt_g6(q.k),
        q.vth_mant,
        q.delta_v,
        q.delta_i,
        a.out.display()
    );
    Ok(())
}

fn infer_quant(a: &InferQuantArgs) -> Result<()> {
    let q = load_quantized(&a.qnt)?;
    let samples = load_all(&open_split(&a.data, Split::Test)?)?;
    let report = evaluate_quantized(&q, &samples, a.steps, a.blank, &mut Rng::new(a.seed))?;
    write_reports(a.report.as_deref(), a.pr.as_deref(), &samples, &report)?;
    println!("{}", summary("quant", &report));
    if let Some(ckpt) = &a.ckpt {
        let net = load_checkpoint(ckpt)?;
        let float = evaluate_samples(&net, &samples, a.steps, &mut Rng::new(a.seed))?;
        println!(
            "float_iou {} quant_iou {} delta {}",
            fmt_g6(float.mean_iou),
            fmt_g6(report.mean_iou),
            fmt_g6(report.mean_iou - float.mean_iou)
        );
    }
    Ok(())
}
