mod common;

use std::fs;
use std::path::Path;

use common::*;
use foilbox::attack::{read_trace_csv, AttackConfig};
use foilbox::attribution::{ExplanationMap, XaiKind, XaiMethod};
use foilbox::harness::{
    mse, pair_dir_name, run_experiment, summarize, ExperimentConfig, RunRecord, Stats, Summary,
    RECORD_FILE, SUMMARY_FILE,
};
use foilbox::net::Network;
use foilbox::{Error, Tensor};

fn small_config(out: &Path, xai: XaiKind, n_pairs: usize) -> ExperimentConfig {
    let (model, test) = fixture_files();
    ExperimentConfig {
        dataset: test.clone(),
        model: model.clone(),
        xai,
        n_pairs,
        attack: AttackConfig {
            pop_size: 10,
            budget: 62,
            seed: 7,
            ..AttackConfig::default()
        },
        out_dir: out.to_path_buf(),
        different_class: false,
    }
}

fn read_records(run_dir: &Path, n: usize) -> Vec<RunRecord> {
    (0..n)
        .map(|i| {
            let text =
                fs::read_to_string(run_dir.join(pair_dir_name(i)).join(RECORD_FILE)).unwrap();
            serde_json::from_str(&text).unwrap()
        })
        .collect()
}

#[test]
fn mse_matches_double_loop() {
    let mut r = rng(3);
    let a = uniform_tensor(&mut r, &[7, 9], -2.0, 2.0);
    let b = uniform_tensor(&mut r, &[7, 9], -2.0, 2.0);
    let mut acc = 0.0;
    for i in 0..7 {
        for j in 0..9 {
            let d = a.data()[i * 9 + j] - b.data()[i * 9 + j];
            acc += d * d;
        }
    }
    assert!((mse(&a, &b).unwrap() - acc / 63.0).abs() <= 1e-12);
    let ma = ExplanationMap::from_tensor(&a).unwrap();
    assert_eq!(mse(&ma, &ma).unwrap(), 0.0);
    assert!(matches!(
        mse(&a, &Tensor::zeros(&[9, 7])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn summary_statistics_edge_cases() {
    assert!(matches!(summarize(&[]), Err(Error::Config(_))));
    let s = Stats::of(&[1.0, 3.0]).unwrap();
    assert_eq!(s.median, 2.0);
    let s = Stats::of(&[4.5]).unwrap();
    assert_eq!((s.median, s.mean, s.min, s.max), (4.5, 4.5, 4.5, 4.5));
}

#[test]
fn three_pairs_give_three_records_and_traces() {
    let dir = scratch_dir();
    let cfg = small_config(dir.path(), XaiKind::Gradient, 3);
    let records = run_experiment(&cfg, 1).unwrap();
    assert_eq!(records.len(), 3);
    let run_dir = cfg.run_dir();
    let entries: Vec<_> = fs::read_dir(&run_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_type().unwrap().is_dir())
        .collect();
    assert_eq!(entries.len(), 3);
    for rec in &records {
        let pair_dir = run_dir.join(pair_dir_name(rec.pair_id));
        let trace =
            read_trace_csv(&fs::read_to_string(pair_dir.join(&rec.trace_path)).unwrap()).unwrap();
        assert_eq!(trace.len(), rec.generations_completed);
        // 62 = 2 bookkeeping + 6 generations of 10, leaving 0.
        assert_eq!(rec.generations_completed, 6);
        assert_eq!(rec.queries_used, 2 + 10 * rec.generations_completed as u64);
        assert_ne!(rec.image_index, rec.target_index);
    }
    let distinct: std::collections::HashSet<_> = records
        .iter()
        .map(|r| (r.image_index, r.target_index))
        .collect();
    assert_eq!(distinct.len(), 3);
}

#[test]
fn persisted_artifacts_reproduce_the_records_and_summary() {
    let dir = scratch_dir();
    let cfg = small_config(dir.path(), XaiKind::Gbp, 4);
    run_experiment(&cfg, 2).unwrap();
    let run_dir = cfg.run_dir();
    let records = read_records(&run_dir, 4);
    let net = Network::load(&cfg.model).unwrap();
    let method = XaiMethod::with_defaults(XaiKind::Gbp, &[1, 16, 16]).unwrap();
    for rec in &records {
        let pair_dir = run_dir.join(pair_dir_name(rec.pair_id));
        let x = Tensor::load(pair_dir.join("x.tnsr")).unwrap();
        let x_adv = Tensor::load(pair_dir.join("x_adv.tnsr")).unwrap();
        let target = ExplanationMap::load(pair_dir.join("target_map.tnsr")).unwrap();
        let adv_map = method.explain(&net, &x_adv, rec.image_label).unwrap();
        let recomputed = mse(&adv_map, &target).unwrap();
        assert!(
            (recomputed - rec.mse_expl_final).abs() <= 1e-6 * rec.mse_expl_final.max(1e-12),
            "pair {}: {recomputed} vs {}",
            rec.pair_id,
            rec.mse_expl_final
        );
        assert!((mse(&x, &x_adv).unwrap() - rec.mse_input).abs() <= 1e-6);
        let probs = net.forward(&x_adv).unwrap().probs;
        assert_eq!(
            probs.argmax() == Tensor::vector(&rec.probs_initial).argmax(),
            rec.pred_preserved
        );
    }
    let on_disk: Summary =
        serde_json::from_str(&fs::read_to_string(run_dir.join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk, summarize(&records).unwrap());
    let mut finals: Vec<f64> = records.iter().map(|r| r.mse_expl_final).collect();
    finals.sort_by(f64::total_cmp);
    assert_eq!(on_disk.mse_expl_final.median, 0.5 * (finals[1] + finals[2]));
    assert_eq!(
        on_disk.total_queries,
        records.iter().map(|r| r.queries_used).sum::<u64>()
    );
}

#[test]
fn same_seed_gives_identical_files_for_any_worker_count() {
    let a = scratch_dir();
    let b = scratch_dir();
    let ca = small_config(a.path(), XaiKind::Deeplift, 3);
    let cb = small_config(b.path(), XaiKind::Deeplift, 3);
    run_experiment(&ca, 1).unwrap();
    run_experiment(&cb, 3).unwrap();
    let read = |p: &Path| fs::read(p).unwrap();
    assert_eq!(
        read(&ca.run_dir().join(SUMMARY_FILE)),
        read(&cb.run_dir().join(SUMMARY_FILE))
    );
    for i in 0..3 {
        for f in ["trace.csv", "record.json", "x_adv.tnsr"] {
            let name = Path::new(&pair_dir_name(i)).join(f);
            assert_eq!(
                read(&ca.run_dir().join(&name)),
                read(&cb.run_dir().join(&name)),
                "{}",
                name.display()
            );
        }
    }
}

#[test]
fn different_class_flag_is_respected_and_bad_inputs_are_config_errors() {
    let dir = scratch_dir();
    let mut cfg = small_config(dir.path(), XaiKind::Gradient, 2);
    cfg.different_class = true;
    for rec in run_experiment(&cfg, 1).unwrap() {
        assert_ne!(
            rec.image_label,
            fixture().test.label(rec.target_index).unwrap()
        );
    }
    let mut missing = cfg.clone();
    missing.model = dir.path().join("nope.anet");
    assert!(matches!(run_experiment(&missing, 1), Err(Error::Config(_))));
    let mut zero = cfg.clone();
    zero.n_pairs = 0;
    assert!(matches!(run_experiment(&zero, 1), Err(Error::Config(_))));
}
