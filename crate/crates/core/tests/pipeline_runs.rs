use std::fs;
use std::path::{Path, PathBuf};

use melanoscope_core::classifier::{Arity, BackendDescriptor};
use melanoscope_core::decision::Verdict;
use melanoscope_core::pipeline::{self, PipelineConfig, ValidationEntry};
use melanoscope_core::synthgen::{generate_slide, SynthSpec};
use melanoscope_core::tiling::PlanMode;

fn synth(dir: &Path, n: usize) -> (Vec<PathBuf>, Vec<PathBuf>, Vec<Verdict>) {
    let mut slides = Vec::new();
    let mut anns = Vec::new();
    let mut truths = Vec::new();
    for i in 0..n {
        let verdict = if i % 2 == 0 {
            Verdict::Melanoma
        } else {
            Verdict::BenignNevus
        };
        let spec = SynthSpec::random(&format!("p{i}"), 3072, 3072, 3, 100 + i as u64, verdict);
        let out = generate_slide(&spec, dir).unwrap();
        assert_eq!(out.truth.verdict, verdict);
        slides.push(out.slide_dir);
        anns.push(out.annotations);
        truths.push(verdict);
    }
    (slides, anns, truths)
}

fn config(slides: &[PathBuf], anns: &[PathBuf], out: PathBuf, workers: usize) -> PipelineConfig {
    PipelineConfig {
        slides: slides.to_vec(),
        annotations: anns.to_vec(),
        workers,
        out,
        batch_size: 50,
        // Level 0 keeps blobs several patches wide on these small slides.
        magnification: 40.0,
        backend: BackendDescriptor::mock(Arity::Multiclass),
        ..PipelineConfig::default()
    }
}

const PAYLOADS: [&str; 5] = [
    pipeline::MANIFEST_FILE,
    pipeline::PREDICTIONS_FILE,
    pipeline::MAP_JSON_FILE,
    pipeline::MAP_PNG_FILE,
    pipeline::VERDICT_FILE,
];

#[test]
fn staged_run_equals_single_run() {
    let dir = tempfile::tempdir().unwrap();
    let (slides, anns, truths) = synth(dir.path(), 2);

    let whole = config(&slides, &anns, dir.path().join("whole"), 2);
    let verdicts = pipeline::run_pipeline(&whole).unwrap();
    for (v, t) in verdicts.iter().zip(&truths) {
        assert_eq!(v.verdict, *t, "{v:?}");
    }

    let staged = config(&slides, &anns, dir.path().join("staged"), 1);
    for (i, slide) in slides.iter().enumerate() {
        let manifest = pipeline::plan_stage(slide, staged.annotation_for(i), PlanMode::Tissue, &staged).unwrap();
        let run = pipeline::run_dir(&staged.out, &manifest.slide_id);
        pipeline::infer_stage(&run, &staged).unwrap();
        pipeline::map_stage(&run, &staged).unwrap();
        let v = pipeline::verdict_stage(&run, &staged).unwrap();
        assert_eq!(v, verdicts[i]);
        for file in PAYLOADS {
            let a = fs::read(pipeline::run_dir(&whole.out, &manifest.slide_id).join(file)).unwrap();
            let b = fs::read(run.join(file)).unwrap();
            assert!(a == b, "{file} differs between staged and single runs");
        }
    }
}

#[test]
fn calibration_and_metrics_from_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (slides, anns, truths) = synth(dir.path(), 4);
    let cfg = config(&slides, &anns, dir.path().join("runs"), 2);
    pipeline::run_pipeline(&cfg).unwrap();

    let runs: Vec<PathBuf> = (0..4).map(|i| pipeline::run_dir(&cfg.out, &format!("p{i}"))).collect();
    let entries: Vec<ValidationEntry> = runs
        .iter()
        .zip(&truths)
        .map(|(run, &truth)| ValidationEntry {
            run: run.clone(),
            truth,
        })
        .collect();
    let cal = pipeline::calibrate_runs(&entries, &[0.5, 0.9, 0.99], &[0.02, 0.04, 0.3]).unwrap();
    assert_eq!(cal.sensitivity, 1.0);
    assert_eq!(cal.specificity, 1.0);

    let report = pipeline::patch_metrics(&runs, false, cfg.t_p).unwrap();
    assert!(report.total > 0);
    assert!(report.accuracy > 0.9, "{report:?}");
    let after = pipeline::patch_metrics(&runs, true, cfg.t_p).unwrap();
    assert!(after.coverage <= report.coverage);
}

#[test]
fn dataset_export_is_labeled_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let (slides, anns, _) = synth(dir.path(), 2);
    let mut cfg = config(&slides, &anns, dir.path().join("export"), 1);
    cfg.augment_minority = true;
    let manifest = pipeline::extract_dataset(&cfg).unwrap();
    assert!(!manifest.entries.is_empty());
    assert!(manifest.entries.iter().all(|e| e.record.ground_label.is_some()));
    let root = cfg.out.join(pipeline::DATASET_DIR);
    let mut counts = [0usize; 3];
    for e in &manifest.entries {
        assert!(root.join(&e.file).exists());
        counts[e.record.ground_label.unwrap().index()] += 1;
    }
    for a in &manifest.augmented {
        assert!(root.join(&a.file).exists());
        counts[manifest.entries[a.source].record.ground_label.unwrap().index()] += 1;
    }
    let present: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    assert!(present.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}

#[test]
fn missing_inputs_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&[dir.path().join("nope")], &[], dir.path().join("o"), 1);
    let err = pipeline::run_pipeline(&cfg).unwrap_err();
    assert!(err.is_validation(), "{err}");
    let empty = config(&[], &[], dir.path().join("o"), 1);
    assert!(pipeline::run_pipeline(&empty).unwrap_err().is_validation());
}
