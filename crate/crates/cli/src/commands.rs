use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use minmax_match::eval::format_decimal;
use minmax_match::image::CropRect;
use minmax_match::pipeline::preprocess_stages;
use minmax_match::{
    classify_minmax, classify_nn_euclidean, evaluate, load_dataset, load_image, preprocess, save_image,
    sweep_windows, ClassifierKind, CropPolicy, Dataset, Error, EvalSettings, Gallery, PipelineConfig, Protocol,
    SweepMode, SynthParams, SyntheticGenerator, WindowSpec,
};

use crate::{Command, EvalArgs, PipelineArgs};

/// A failed command: message for stderr plus process exit code
/// (1 = evaluation aborted, 2 = usage or input error).
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    fn input(e: Error) -> Self {
        Failure::usage(e.to_string())
    }

    /// Errors raised while trials are running. Bad windows, bad parameters
    /// and mismatched images are still input errors; anything else means
    /// the run was cut short.
    fn during_eval(e: Error) -> Self {
        match e {
            Error::InvalidWindow(_)
            | Error::InvalidConfig(_)
            | Error::InvalidParams(_)
            | Error::DimensionMismatch { .. }
            | Error::OutOfBounds { .. }
            | Error::EmptyDataset => Failure::input(e),
            other => Failure { code: 1, message: format!("evaluation aborted: {other}") },
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Preprocess { input, pipeline, out } => cmd_preprocess(&input, &pipeline, &out),
        Command::Classify { input, dataset, pipeline, classifier, top } => {
            cmd_classify(&input, &dataset, &pipeline, &classifier, top)
        }
        Command::Evaluate { eval, out } => cmd_evaluate(&eval, &out),
        Command::Sweep { eval, mode, sizes, out } => cmd_sweep(&eval, &mode, &sizes, &out),
        Command::Synth { classes, subjects, replicates, height, width, noise, seed, out } => {
            let params = SynthParams {
                classes,
                subjects,
                replicates,
                height,
                width,
                noise_sigma: noise,
                seed,
            };
            cmd_synth(params, &out)
        }
    }
}

fn parse_crop(spec: &str) -> Result<CropPolicy, Failure> {
    match spec {
        "auto" => return Ok(CropPolicy::JaffeAuto),
        "none" => return Ok(CropPolicy::None),
        _ => {}
    }
    let parts: Vec<usize> = spec
        .split(',')
        .map(|p| p.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::usage(format!("--crop expects T,L,H,W, auto or none, got {spec:?}")))?;
    let [top, left, height, width] = parts[..] else {
        return Err(Failure::usage(format!("--crop expects four integers, got {spec:?}")));
    };
    if height == 0 || width == 0 {
        return Err(Failure::usage("crop height and width must be >= 1"));
    }
    Ok(CropPolicy::Fixed(CropRect::new(top, left, height, width)))
}

fn pipeline_config(args: &PipelineArgs) -> Result<PipelineConfig, Failure> {
    let cfg = PipelineConfig {
        norm_window: WindowSpec::new(args.norm_window).map_err(Failure::input)?,
        feat_window: WindowSpec::new(args.feat_window).map_err(Failure::input)?,
        alpha: args.alpha,
        crop: parse_crop(&args.crop)?,
        ..PipelineConfig::default()
    };
    cfg.validate().map_err(Failure::input)?;
    Ok(cfg)
}

fn eval_settings(args: &EvalArgs) -> Result<EvalSettings, Failure> {
    if args.trials == 0 {
        return Err(Failure::usage("--trials must be >= 1"));
    }
    Ok(EvalSettings {
        cfg: pipeline_config(&args.pipeline)?,
        classifier: args.classifier.parse::<ClassifierKind>().map_err(Failure::input)?,
        protocol: args.protocol.parse::<Protocol>().map_err(Failure::input)?,
        trials: args.trials,
        seed: args.seed,
    })
}

fn load(dir: &Path) -> Result<Dataset, Failure> {
    let (ds, summary) = load_dataset(dir).map_err(Failure::input)?;
    info!(
        "loaded {} images ({} subjects, {} classes); skipped {}, failed {}",
        summary.images,
        summary.subjects,
        summary.classes,
        summary.skipped.len(),
        summary.failed.len()
    );
    Ok(ds)
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| io_failure(path, e))
}

fn cmd_preprocess(input: &Path, args: &PipelineArgs, out: &Path) -> Result<(), Failure> {
    let cfg = pipeline_config(args)?;
    let img = load_image(input).map_err(Failure::input)?;
    let stages = preprocess_stages(&img, &cfg).map_err(Failure::input)?;

    let (rows, cols) = stages.features.dims();
    let mut csv = String::new();
    for row in stages.features.values().chunks(cols).take(rows) {
        let line: Vec<String> = row.iter().map(|&v| format_decimal(v)).collect();
        csv.push_str(&line.join(","));
        csv.push('\n');
    }

    let stem = input
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    create_dir(out)?;
    let normalized = out.join(format!("{stem}.normalized.pgm"));
    let features = out.join(format!("{stem}.features.pgm"));
    save_image(&stages.normalized.rescaled_for_display(), &normalized).map_err(|e| io_failure(&normalized, e))?;
    save_image(&stages.features.to_image().rescaled_for_display(), &features).map_err(|e| io_failure(&features, e))?;
    write_file(&out.join(format!("{stem}.features.csv")), csv.as_bytes())?;
    println!("features={} rows={rows} cols={cols}", stages.features.len());
    Ok(())
}

fn cmd_classify(input: &Path, dataset: &Path, args: &PipelineArgs, classifier: &str, top: usize) -> Result<(), Failure> {
    let cfg = pipeline_config(args)?;
    let classifier: ClassifierKind = classifier.parse().map_err(Failure::input)?;
    let test = preprocess(&load_image(input).map_err(Failure::input)?, &cfg).map_err(Failure::input)?;
    let ds = load(dataset)?;

    let mut rows = Vec::with_capacity(ds.len());
    for s in ds.samples() {
        let img = s.image().map_err(Failure::input)?;
        rows.push(preprocess(&img, &cfg).map_err(|e| io_failure(Path::new(&s.file_name), e))?);
    }
    let gallery = Gallery::new(
        &rows,
        ds.samples().iter().map(|s| s.expression.clone()).collect(),
        ds.samples().iter().enumerate().map(|(id, s)| s.source_id(id)).collect(),
    )
    .map_err(Failure::input)?;

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let emit = |out: &mut dyn Write, line: String| writeln!(out, "{line}").map_err(|e| Failure::usage(e.to_string()));
    match classifier {
        ClassifierKind::MinMax => {
            let m = classify_minmax(&gallery, &test, cfg.alpha).map_err(Failure::input)?;
            emit(&mut out, format!("predicted={}", m.class.name))?;
            emit(&mut out, "rank,row,file,class,weight".into())?;
            for (rank, (row, weight)) in m.scores.top(top).into_iter().enumerate() {
                let s = ds.sample(gallery.source_id(row).sample);
                emit(
                    &mut out,
                    format!("{},{row},{},{},{}", rank + 1, s.file_name, s.expression.name, format_decimal(weight)),
                )?;
            }
        }
        ClassifierKind::NnEuclidean => {
            let m = classify_nn_euclidean(&gallery, &test).map_err(Failure::input)?;
            emit(&mut out, format!("predicted={}", m.class.name))?;
            emit(&mut out, "rank,row,file,class,distance".into())?;
            let mut order: Vec<usize> = (0..m.distances.len()).collect();
            order.sort_by(|&a, &b| m.distances[a].total_cmp(&m.distances[b]).then(a.cmp(&b)));
            for (rank, row) in order.into_iter().take(top).enumerate() {
                let s = ds.sample(gallery.source_id(row).sample);
                emit(
                    &mut out,
                    format!(
                        "{},{row},{},{},{}",
                        rank + 1,
                        s.file_name,
                        s.expression.name,
                        format_decimal(m.distances[row])
                    ),
                )?;
            }
        }
    }
    Ok(())
}

fn cmd_evaluate(args: &EvalArgs, out: &Path) -> Result<(), Failure> {
    let settings = eval_settings(args)?;
    let ds = load(&args.dataset)?;
    let report = evaluate(&ds, &settings).map_err(Failure::during_eval)?;
    create_dir(out)?;
    report.write_outputs(&ds, out).map_err(|e| io_failure(out, e))?;
    println!("mean_accuracy={}", format_decimal(report.mean_accuracy));
    Ok(())
}

fn cmd_sweep(args: &EvalArgs, mode: &str, sizes: &[usize], out: &Path) -> Result<(), Failure> {
    let settings = eval_settings(args)?;
    let mode: SweepMode = mode.parse().map_err(Failure::input)?;
    for &s in sizes {
        WindowSpec::new(s).map_err(Failure::input)?;
        if s > 21 {
            return Err(Failure::usage(format!("window size {s} outside 3..=21")));
        }
    }
    let ds = load(&args.dataset)?;
    let table = sweep_windows(&ds, &settings, mode, sizes).map_err(Failure::during_eval)?;
    create_dir(out)?;
    let path = out.join("sweep.csv");
    let mut buf = Vec::new();
    table.write_csv(&mut buf).map_err(|e| io_failure(&path, e))?;
    write_file(&path, &buf)?;
    if let Some(best) = table.best() {
        println!(
            "best N={} M={} mean_accuracy={}",
            best.norm_window,
            best.feat_window,
            format_decimal(best.mean_accuracy)
        );
    }
    Ok(())
}

fn cmd_synth(params: SynthParams, out: &Path) -> Result<(), Failure> {
    if params.classes > minmax_match::JAFFE_CLASSES.len() {
        return Err(Failure::usage(format!(
            "at most {} classes can be written with JAFFE file names, got {}",
            minmax_match::JAFFE_CLASSES.len(),
            params.classes
        )));
    }
    let ds = SyntheticGenerator::new(params)
        .and_then(|g| g.generate())
        .map_err(Failure::input)?;
    ds.write_to_dir(out).map_err(|e| io_failure(out, e))?;
    println!("wrote {} images to {}", ds.len(), out.display());
    Ok(())
}
