use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use wavemotion_cli::commands::{
    CV_SUMMARY_HEADER, COVERAGE_HEADER, DETAIL_HEADER, ENSEMBLE_HEADER, EV_VS_M_HEADER, GRADCHECK_HEADER, HISTOGRAM_HEADER,
    SWEEP_HEADER,
};
use wavemotion_cli::csv_io::read_table;
use wavemotion_cli::{resolve_config, run_from_args, Cli};

const TINY: &[&str] = &[
    "--desk-profile",
    "--threads",
    "1",
    "-s",
    "sea.duration=220",
    "-s",
    "train.horizons=[4]",
    "-s",
    "train.noise_levels=[0.0, 0.2]",
    "-s",
    "arch.lstm_hidden=4",
    "-s",
    "arch.fc_width=4",
    "-s",
    "arch.num_fc_blocks=2",
    "-s",
    "train.max_epochs=3",
    "-s",
    "train.batch_size=16",
    "-s",
    "predict.horizon=4",
    "-s",
    "predict.b=20",
    "-s",
    "eval.b=40",
    "-s",
    "eval.coverage_b=10",
    "-s",
    "eval.gaussianity_b=[30]",
    "-s",
    "sweep.train_noise=[0.0, 0.2]",
    "-s",
    "sweep.test_noise=[0.0, 0.5]",
];

fn run(out: &Path, command: &[&str], extra: &[&str]) -> i32 {
    let mut args = vec!["wavemotion".to_string(), "--out".to_string(), out.display().to_string()];
    args.extend(TINY.iter().map(|s| s.to_string()));
    args.extend(extra.iter().map(|s| s.to_string()));
    args.extend(command.iter().map(|s| s.to_string()));
    run_from_args(args)
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(csv_files(&path));
        } else if path.extension().is_some_and(|e| e == "csv") {
            out.push(path);
        }
    }
    out.sort();
    out
}

fn full_pipeline(out: &Path) {
    assert_eq!(run(out, &["synth"], &[]), 0);
    assert_eq!(run(out, &["train"], &[]), 0);
    assert_eq!(run(out, &["predict", "--anchor", "30"], &[]), 0);
    assert_eq!(run(out, &["eval"], &[]), 0);
    assert_eq!(run(out, &["noise-sweep"], &[]), 0);
    assert_eq!(run(out, &["gradcheck"], &[]), 0);
}

#[test]
fn pipeline_artifacts_have_documented_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    full_pipeline(out);

    let header = |p: &str| read_table(&out.join(p)).unwrap().header.join(",");
    assert_eq!(header("models/cv_summary.csv"), CV_SUMMARY_HEADER);
    assert_eq!(header("models/m4_nl0_fold0.curve.csv"), "epoch,lr,train_mse,val_mse,val_ev");
    assert_eq!(header("predict/detail_case05_p30.csv"), DETAIL_HEADER);
    assert_eq!(header("predict/prediction_case05_p30.csv"), "point,mean,std,ci_lo,ci_hi");
    assert_eq!(header("eval/ev_vs_m.csv"), EV_VS_M_HEADER);
    assert_eq!(header("eval/coverage.csv"), COVERAGE_HEADER);
    assert_eq!(header("eval/ensemble_summary.csv"), ENSEMBLE_HEADER);
    assert_eq!(header("eval/histogram_m4.csv"), HISTOGRAM_HEADER);
    assert_eq!(header("eval/gaussianity_m4.csv"), "point,b,mean,std,skewness,excess_kurtosis");
    assert_eq!(header("eval/spacing_m4.csv"), "lag,cov,cv,flagged");
    assert_eq!(header("sweep/noise_sweep.csv"), SWEEP_HEADER);
    assert_eq!(header("gradcheck/gradcheck.csv"), GRADCHECK_HEADER);
    assert_eq!(header("data/psd/case01.csv"), "omega,eta_psd,jonswap,heave_psd");
    assert_eq!(header("data/case01.csv"), "t,eta,heave");

    // Every CSV parses as a rectangular table.
    let files = csv_files(out);
    assert!(files.len() > 20);
    for f in files {
        let t = read_table(&f).unwrap();
        assert!(t.rows.iter().all(|r| r.len() == t.header.len()), "{}", f.display());
    }

    let sweep = read_table(&out.join("sweep/noise_sweep.csv")).unwrap();
    assert_eq!(sweep.rows.len(), 4);
    let cv = read_table(&out.join("models/cv_summary.csv")).unwrap();
    assert_eq!(cv.rows.len(), 2);
    for snap in ["synth", "train", "predict", "eval", "noise-sweep", "gradcheck"] {
        assert!(out.join(format!("{snap}.resolved.toml")).exists());
    }
}

#[test]
fn reruns_need_force_and_reproduce_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run(out, &["synth"], &[]), 0);
    assert_eq!(run(out, &["train"], &[]), 0);
    let case = fs::read(out.join("data/case03.csv")).unwrap();
    let model = fs::read(out.join("models/m4_nl0_fold0.wmck")).unwrap();

    assert_eq!(run(out, &["synth"], &[]), 2);
    assert_eq!(run(out, &["train"], &[]), 2);
    assert_eq!(run(out, &["synth"], &["--force"]), 0);
    assert_eq!(run(out, &["train"], &["--force"]), 0);
    assert_eq!(fs::read(out.join("data/case03.csv")).unwrap(), case);
    assert_eq!(fs::read(out.join("models/m4_nl0_fold0.wmck")).unwrap(), model);
}

#[test]
fn snapshot_replays_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    assert_eq!(run(&first, &["synth"], &["--seed", "5"]), 0);
    let snapshot = first.join("synth.resolved.toml");
    let code = run_from_args([
        "wavemotion",
        "--out",
        second.to_str().unwrap(),
        "--config",
        snapshot.to_str().unwrap(),
        "synth",
    ]);
    assert_eq!(code, 0);
    for name in ["cases.csv", "case01.csv", "case06.csv", "psd_summary.csv", "folds.txt"] {
        assert_eq!(fs::read(first.join("data").join(name)).unwrap(), fs::read(second.join("data").join(name)).unwrap(), "{name}");
    }
    assert_eq!(fs::read_to_string(&snapshot).unwrap(), fs::read_to_string(second.join("synth.resolved.toml")).unwrap());
}

#[test]
fn exit_codes_follow_the_failure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(run_from_args(["wavemotion", "--bogus", "synth"]), 2);
    assert_eq!(run(out, &["synth"], &["-s", "train.nope=1"]), 3);
    assert_eq!(run(out, &["synth"], &["-s", "arch.dropout_p=2.0"]), 3);
    assert_eq!(run(out, &["train"], &[]), 4);
    assert_eq!(run(out, &["synth"], &[]), 0);
    assert_eq!(run(out, &["eval"], &[]), 4);
    assert_eq!(run(out, &["gradcheck"], &["-s", "gradcheck.tolerance=1e-300"]), 5);

    let missing = out.join("nope.toml");
    assert_eq!(run(out, &["synth"], &["--config", missing.to_str().unwrap()]), 3);
}

#[test]
fn environment_sits_between_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("cfg.toml");
    fs::write(&file, "seed = 3\n[train]\nmax_epochs = 11\npatience = 4\n").unwrap();
    let env = |k: &str| match k {
        "WAVEMOTION_TRAIN_MAX_EPOCHS" => Some("12".to_string()),
        "WAVEMOTION_TRAIN_PATIENCE" => Some("6".to_string()),
        _ => None,
    };
    let cli = Cli::parse_from(["wavemotion", "--config", file.to_str().unwrap(), "-s", "train.patience=9", "train"]);
    let cfg = resolve_config(&cli, env).unwrap();
    assert_eq!(cfg.seed().unwrap(), 3);
    assert_eq!(cfg.get_usize("train.max_epochs").unwrap(), 12);
    assert_eq!(cfg.get_usize("train.patience").unwrap(), 9);
}
