mod common;

use std::path::Path;

use common::tiny_net;
use prismcert::harness::dataset::{frame_image, parse_jsonl, save_jsonl, write_jsonl};
use prismcert::harness::{
    alpha_grid, gen_samples, load_dataset, run_alpha_sweep, run_verify, select_samples, summary_path, DatasetSource,
    RunConfig,
};
use prismcert::verifier::{PerturbationSpec, VerifierConfig};

fn setup(dir: &Path, n: usize) -> RunConfig {
    let net = tiny_net(2, 2, 3, 1, 3, 1.0, 30);
    let model = dir.join("model.json");
    net.save(&model).unwrap();
    let data = dir.join("data.jsonl");
    save_jsonl(&gen_samples(&net, n, 31), &data).unwrap();
    RunConfig {
        model_path: model,
        dataset: DatasetSource::Jsonl(data),
        epsilons: vec![0.0],
        verifier: VerifierConfig::default(),
        num_samples: None,
        seed: 0,
        output_path: dir.join("report.csv"),
        clip: false,
    }
}

fn without_column(csv_text: &str, name: &str) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_reader(csv_text.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    let skip = headers.iter().position(|h| h == name).unwrap();
    rdr.records()
        .map(|r| {
            r.unwrap()
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != skip)
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect()
}

#[test]
fn two_sample_run_writes_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 2);
    let out = run_verify(&cfg).unwrap();
    assert_eq!(out.reports[0].1.rows.len(), 2);
    let text = std::fs::read_to_string(&cfg.output_path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(summary_path(&cfg.output_path).is_file());
}

#[test]
fn epsilon_list_summary_is_nonincreasing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        epsilons: vec![0.005, 0.02],
        ..setup(dir.path(), 6)
    };
    let out = run_verify(&cfg).unwrap();
    assert_eq!(out.summary.len(), 2);
    assert!(out.summary[0].accuracy >= out.summary[1].accuracy);
    let summary = std::fs::read_to_string(summary_path(&cfg.output_path)).unwrap();
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn missing_model_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        model_path: dir.path().join("absent.json"),
        ..setup(dir.path(), 2)
    };
    assert!(run_verify(&cfg).is_err());
    assert!(!cfg.output_path.exists());
    assert!(!summary_path(&cfg.output_path).exists());
}

#[test]
fn reports_are_deterministic_apart_from_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        epsilons: vec![0.01, 0.05],
        ..setup(dir.path(), 5)
    };
    run_verify(&cfg).unwrap();
    let a = std::fs::read_to_string(&cfg.output_path).unwrap();
    run_verify(&cfg).unwrap();
    let b = std::fs::read_to_string(&cfg.output_path).unwrap();
    assert_eq!(without_column(&a, "elapsed_s"), without_column(&b, "elapsed_s"));
}

#[test]
fn jsonl_round_trip() {
    let text = "{\"sequence\": [[0,1],[1,0]], \"label\": 1}\n";
    let samples = parse_jsonl(text).unwrap();
    assert_eq!(samples, vec![(vec![vec![0.0, 1.0], vec![1.0, 0.0]], 1)]);
    let mut buf = Vec::new();
    write_jsonl(&samples, &mut buf).unwrap();
    assert_eq!(parse_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap(), samples);
    let ragged = parse_jsonl("{\"sequence\": [[0,1],[1]], \"label\": 0}").unwrap();
    assert!(prismcert::harness::Dataset::new(ragged).is_err());
}

fn idx_files(dir: &Path, count: usize) -> DatasetSource {
    let mut img = vec![0, 0, 8, 3];
    for v in [count as u32, 28, 28] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend((0..count * 784).map(|i| (i % 256) as u8));
    let mut lab = vec![0, 0, 8, 1];
    lab.extend_from_slice(&(count as u32).to_be_bytes());
    lab.extend((0..count).map(|i| (i % 10) as u8));
    let images = dir.join("images.idx");
    let labels = dir.join("labels.idx");
    std::fs::write(&images, img).unwrap();
    std::fs::write(&labels, lab).unwrap();
    DatasetSource::Idx { images, labels }
}

#[test]
fn idx_images_frame_into_rows() {
    let dir = tempfile::tempdir().unwrap();
    let source = idx_files(dir.path(), 3);
    let data = load_dataset(&source, 4).unwrap();
    assert_eq!(data.len(), 3);
    for (seq, _) in &data.samples {
        assert_eq!(seq.len(), 4);
        assert!(seq.iter().all(|f| f.len() == 196));
        assert!(seq.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
    }
    assert_eq!(data.samples[2].1, 2);
    let err = load_dataset(&source, 5).unwrap_err().to_string();
    assert!(err.contains("f = 5"), "{err}");
    assert!(frame_image(&[0.0; 784], 5).is_err());
}

#[test]
fn selection_keeps_only_correct_samples() {
    let net = tiny_net(2, 2, 3, 1, 3, 1.0, 32);
    let mut samples = gen_samples(&net, 10, 33);
    samples[0].1 = (samples[0].1 + 1) % 3;
    let data = prismcert::harness::Dataset::new(samples).unwrap();
    let picked = select_samples(&data, &net, 9, 1).unwrap();
    assert_eq!(picked.len(), 9);
    for (s, l) in &picked {
        assert_eq!(net.predict(s).unwrap(), *l);
    }
    assert_eq!(picked, select_samples(&data, &net, 9, 1).unwrap());
}

#[test]
fn alpha_sweep_reports_argmax() {
    let net = tiny_net(2, 3, 3, 1, 3, 1.0, 34);
    let samples = gen_samples(&net, 4, 35);
    let spec = PerturbationSpec::new(0.02);
    let sweep = run_alpha_sweep(&net, &samples, spec, &VerifierConfig::default(), &[0.0, 0.5, 1.0]).unwrap();
    assert_eq!(sweep.curve.len(), 3);
    let best = sweep.curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let (a, _) = sweep.curve.iter().find(|c| c.1 == best).unwrap();
    assert_eq!(*a, sweep.best_alpha);

    let one = run_alpha_sweep(&net, &samples, spec, &VerifierConfig::default(), &[0.674]).unwrap();
    assert_eq!(one.best_alpha, 0.674);
    assert!(run_alpha_sweep(&net, &samples, spec, &VerifierConfig::default(), &[]).is_err());

    let grid = alpha_grid(0.1).unwrap();
    assert_eq!(grid.len(), 11);
    assert_eq!(grid[10], 1.0);
}

#[test]
fn verdicts_are_lowercase_in_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = setup(dir.path(), 2);
    run_verify(&cfg).unwrap();
    let text = std::fs::read_to_string(&cfg.output_path).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",robust,")), "{text}");
}
