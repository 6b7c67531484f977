use minmax_match::eval::{evaluate_uncached, trial_seed};
use minmax_match::pipeline::CropPolicy;
use minmax_match::{
    evaluate, generate_synthetic, load_dataset, make_trial_split, preprocess, run_eval, ClassifierKind, Dataset,
    EvalSettings, FeatureVector, PipelineConfig, Protocol, SynthParams, SyntheticGenerator,
};

fn params(c: usize, s: usize, r: usize, dim: usize, seed: u64) -> SynthParams {
    SynthParams {
        classes: c,
        subjects: s,
        replicates: r,
        height: dim,
        width: dim,
        noise_sigma: 0.0,
        seed,
    }
}

fn euclid(a: &FeatureVector, b: &FeatureVector) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn features(ds: &Dataset, cfg: &PipelineConfig) -> Vec<FeatureVector> {
    ds.materialize().unwrap().iter().map(|img| preprocess(img, cfg).unwrap()).collect()
}

/// For every sample, the farthest same-class sample must be closer than the
/// nearest other-class sample.
fn assert_separated(ds: &Dataset, cfg: &PipelineConfig) {
    let f = features(ds, cfg);
    for a in 0..f.len() {
        let mut intra = 0.0f64;
        let mut inter = f64::INFINITY;
        for b in 0..f.len() {
            if a == b {
                continue;
            }
            let d = euclid(&f[a], &f[b]);
            if ds.sample(a).expression == ds.sample(b).expression {
                intra = intra.max(d);
            } else {
                inter = inter.min(d);
            }
        }
        assert!(intra < inter, "sample {a}: max intra {intra} >= min inter {inter}");
    }
}

#[test]
fn noise_free_classes_are_separated() {
    let cfg = PipelineConfig::default();
    for p in [params(2, 1, 2, 24, 1), params(7, 3, 3, 32, 1), params(7, 5, 3, 48, 42), params(5, 4, 2, 40, 9)] {
        assert_separated(&generate_synthetic(p).unwrap(), &cfg);
    }
}

#[test]
fn separation_holds_for_other_windows() {
    let ds = generate_synthetic(params(7, 5, 3, 48, 42)).unwrap();
    for (n, m) in [(3, 3), (5, 11), (11, 3), (21, 21)] {
        assert_separated(&ds, &PipelineConfig::with_windows(n, m).unwrap());
    }
}

#[test]
fn nearest_prototype_matches_label() {
    // independent check of the generator margin: each sample is closer (in
    // feature space) to its own class prototype than to any other prototype
    let gen = SyntheticGenerator::new(params(7, 5, 3, 48, 42)).unwrap();
    let ds = gen.generate().unwrap();
    let cfg = PipelineConfig::default();
    let protos: Vec<_> = (0..7).map(|c| preprocess(gen.prototype(c), &cfg).unwrap()).collect();
    for (s, f) in ds.samples().iter().zip(features(&ds, &cfg)) {
        let nearest = (0..7)
            .min_by(|&a, &b| euclid(&f, &protos[a]).total_cmp(&euclid(&f, &protos[b])))
            .unwrap();
        assert_eq!(nearest, s.expression.id);
    }
}

#[test]
fn two_class_loocv_is_perfect() {
    let ds = generate_synthetic(params(2, 1, 2, 24, 1)).unwrap();
    let report = run_eval(&ds, &PipelineConfig::default(), ClassifierKind::MinMax, 5, 0).unwrap();
    assert_eq!(report.mean_accuracy, 1.0);
    let cm = &report.confusion;
    assert_eq!(cm.counts[0][1] + cm.counts[1][0], 0);
}

#[test]
fn cache_does_not_change_results() {
    let ds = generate_synthetic(SynthParams { noise_sigma: 6.0, ..params(4, 3, 3, 32, 3) }).unwrap();
    for classifier in [ClassifierKind::MinMax, ClassifierKind::NnEuclidean] {
        let settings = EvalSettings { classifier, trials: 4, seed: 99, ..EvalSettings::default() };
        assert_eq!(evaluate(&ds, &settings).unwrap(), evaluate_uncached(&ds, &settings).unwrap());
    }
}

#[test]
fn report_invariants_under_noise() {
    let ds = generate_synthetic(SynthParams { noise_sigma: 25.0, ..params(5, 3, 3, 32, 5) }).unwrap();
    let settings = EvalSettings { trials: 6, seed: 5, ..EvalSettings::default() };
    let report = evaluate(&ds, &settings).unwrap();
    let cm = &report.confusion;
    let mean = report.per_trial_accuracy().iter().sum::<f64>() / 6.0;
    assert!((report.mean_accuracy - mean).abs() <= 1e-12);
    assert!((report.mean_accuracy - cm.trace() as f64 / cm.total() as f64).abs() <= 1e-12);
    // 3 subjects x 6 trials presentations of each class
    for c in 0..5 {
        assert_eq!(cm.row_total(c), 18);
    }
    assert_eq!(report.coverage.iter().map(|&c| c as u64).sum::<u64>(), cm.total());
}

#[test]
fn splits_never_leak_and_cover_pairs() {
    let ds = generate_synthetic(params(3, 4, 3, 16, 2)).unwrap();
    for t in 0..30 {
        let split = make_trial_split(&ds, trial_seed(123, t)).unwrap();
        assert_eq!(split.test_ids.len(), 12);
        assert_eq!(split.test_ids.len() + split.train_ids.len(), ds.len());
        assert!(split.test_ids.iter().all(|id| !split.train_ids.contains(id)));
    }
}

#[test]
fn directory_round_trip_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(SynthParams { noise_sigma: 4.0, ..params(3, 2, 2, 24, 8) }).unwrap();
    ds.write_to_dir(dir.path()).unwrap();
    std::fs::write(dir.path().join("readme.txt"), "not an image").unwrap();
    std::fs::write(dir.path().join("S09.AN1.99.pgm"), "P5\n4 4\n255\n\x00").unwrap();

    let (loaded, summary) = load_dataset(dir.path()).unwrap();
    assert_eq!(summary.images, 12);
    assert_eq!(summary.subjects, 2);
    assert_eq!(summary.classes, 3);
    assert_eq!(summary.skipped, vec!["readme.txt".to_string()]);
    assert_eq!(summary.failed.len(), 1);

    let mut a = loaded.manifest();
    let mut b = ds.manifest();
    a.sort_by(|x, y| x.filename.cmp(&y.filename));
    b.sort_by(|x, y| x.filename.cmp(&y.filename));
    assert_eq!(a, b);

    // images are integer-valued, so PGM storage is lossless
    let settings = EvalSettings { trials: 3, seed: 4, ..EvalSettings::default() };
    let mem = evaluate(&ds, &settings).unwrap();
    let disk = evaluate(&loaded, &settings).unwrap();
    assert_eq!(mem.mean_accuracy, disk.mean_accuracy);
}

#[test]
fn loading_is_order_independent() {
    let ds = generate_synthetic(params(2, 2, 2, 16, 3)).unwrap();
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    ds.write_to_dir(first.path()).unwrap();
    // write the same files in reverse order
    for s in ds.samples().iter().rev() {
        minmax_match::save_image(&s.image().unwrap(), second.path().join(&s.file_name)).unwrap();
    }
    let (a, _) = load_dataset(first.path()).unwrap();
    let (b, _) = load_dataset(second.path()).unwrap();
    assert_eq!(a.manifest(), b.manifest());
    assert_eq!(a.materialize().unwrap(), b.materialize().unwrap());
}

#[test]
fn single_file_and_empty_directories() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(minmax_match::Error::EmptyDataset)));
    let img = minmax_match::GrayImage::filled(4, 4, 9.0).unwrap();
    minmax_match::save_image(&img, dir.path().join("KA.NE1.1.pgm")).unwrap();
    let (ds, summary) = load_dataset(dir.path()).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!((summary.subjects, summary.classes), (1, 1));
    assert_eq!(ds.classes()[0].name, "neutral");
    assert!(load_dataset(dir.path().join("missing")).is_err());
}

#[test]
fn mismatched_sizes_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let a = minmax_match::GrayImage::filled(8, 8, 1.0).unwrap();
    let b = minmax_match::GrayImage::filled(9, 8, 1.0).unwrap();
    minmax_match::save_image(&a, dir.path().join("KA.NE1.1.pgm")).unwrap();
    minmax_match::save_image(&b, dir.path().join("KA.NE2.2.pgm")).unwrap();
    let (ds, _) = load_dataset(dir.path()).unwrap();
    let cfg = PipelineConfig { crop: CropPolicy::None, ..PipelineConfig::with_windows(3, 3).unwrap() };
    let err = run_eval(&ds, &cfg, ClassifierKind::MinMax, 1, 0).unwrap_err();
    assert!(matches!(err, minmax_match::Error::DimensionMismatch { .. }));
}

#[test]
fn per_sample_protocol_on_synthetic() {
    let ds = generate_synthetic(params(4, 2, 3, 32, 6)).unwrap();
    let settings = EvalSettings { protocol: Protocol::PerSample, ..EvalSettings::default() };
    let report = evaluate(&ds, &settings).unwrap();
    assert_eq!(report.mean_accuracy, 1.0);
    assert_eq!(report.confusion.total(), 24);
}
