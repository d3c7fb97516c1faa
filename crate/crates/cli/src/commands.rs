//! The subcommands. Each one reads the resolved configuration, writes its
//! artifacts under the output directory and a `<command>.resolved.toml`
//! snapshot next to them.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use rand::Rng as _;
use wavemotion::dataset::{build_folds, inject_noise, CaseInfo, FoldLayout, WindowedSample};
use wavemotion::forecaster::{evaluate, fold_norm, predict_samples, target_matrix, train_fold, window_cases, ModelCheckpoint, TrainingCurve};
use wavemotion::nn::gradcheck::check_gradients;
use wavemotion::nn::{ArchitectureSpec, BatchMasks, Matrix, Network};
use wavemotion::oracle::make_case;
use wavemotion::record::{ETA, HEAVE};
use wavemotion::rng::{stream, Purpose};
use wavemotion::uncertainty::{
    ci_coverage, ensemble_covariance, explained_variance, gaussianity_report, mc_predict, normality_pass_fraction, CovarianceSummary,
    MomentSummary,
};
use wavemotion::wave::{estimate_psd, Jonswap};
use wavemotion::{Error, TimeSeriesRecord};

use crate::config::RunConfig;

pub const DATA_DIR: &str = "data";
pub const MODELS_DIR: &str = "models";
pub const PREDICT_DIR: &str = "predict";
pub const EVAL_DIR: &str = "eval";
pub const SWEEP_DIR: &str = "sweep";
pub const GRADCHECK_DIR: &str = "gradcheck";

/// Everything a command needs besides its own settings.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub force: bool,
}

impl Context {
    fn dir(&self, sub: &str) -> PathBuf {
        self.out.join(sub)
    }

    fn write_snapshot(&self, command: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join(format!("{command}.resolved.toml"));
        fs::write(&path, self.cfg.snapshot()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Creates (or with `--force` recreates) a directory that must start out empty.
    fn fresh_dir(&self, sub: &str) -> Result<PathBuf> {
        let dir = self.dir(sub);
        if dir.exists() && fs::read_dir(&dir)?.next().is_some() {
            if !self.force {
                return Err(Error::Usage(format!("{} exists and is not empty; pass --force to replace it", dir.display())).into());
            }
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    /// Path of an artifact that may only be replaced with `--force`.
    fn artifact(&self, sub: &str, name: &str) -> Result<PathBuf> {
        let dir = self.dir(sub);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        if path.exists() && !self.force {
            return Err(Error::Usage(format!("{} already exists; pass --force to overwrite it", path.display())).into());
        }
        Ok(path)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> wavemotion::Result<()>) -> Result<()> {
    let mut w = create(path)?;
    f(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// One synthesized case as listed in `data/cases.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CasePlan {
    pub id: String,
    pub role: &'static str,
    pub hs: f64,
    pub tp: f64,
    pub seed: u64,
}

fn case_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64 + 1)
}

/// Cross-validation cases alternate between the two training sea states,
/// followed by the two test cases.
pub fn case_plan(cfg: &RunConfig) -> Result<Vec<CasePlan>> {
    let folds = cfg.get_usize("cases.folds")?;
    let seed = cfg.seed()?;
    let train = cfg.get_states("cases.train_states");
    let test = cfg.get_states("cases.test_states");
    let mut plan = Vec::new();
    for i in 0..2 * folds {
        let (hs, tp) = train[i % 2];
        plan.push(CasePlan { id: String::new(), role: "cv", hs, tp, seed: 0 });
    }
    for &(hs, tp) in &test {
        plan.push(CasePlan { id: String::new(), role: "test", hs, tp, seed: 0 });
    }
    for (i, c) in plan.iter_mut().enumerate() {
        c.id = format!("case{:02}", i + 1);
        c.seed = case_seed(seed, i);
    }
    Ok(plan)
}

const CASES_HEADER: &str = "case_id,role,hs,tp,seed";

fn read_case_manifest(path: &Path) -> Result<Vec<CasePlan>> {
    let table = crate::csv_io::read_table(path)?;
    table.expect_header(CASES_HEADER)?;
    table
        .rows
        .iter()
        .map(|r| {
            let role = match r[1].as_str() {
                "cv" => "cv",
                "test" => "test",
                other => return Err(Error::Data(format!("unknown case role {other:?} in {}", path.display())).into()),
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Data(format!("bad number {s:?} in {}", path.display())));
            Ok(CasePlan {
                id: r[0].clone(),
                role,
                hs: num(&r[2])?,
                tp: num(&r[3])?,
                seed: r[4].parse().map_err(|_| Error::Data(format!("bad seed {:?} in {}", r[4], path.display())))?,
            })
        })
        .collect()
}

/// Synthesized cases and their fold layout.
pub struct CaseData {
    pub plan: Vec<CasePlan>,
    pub records: Vec<TimeSeriesRecord>,
    pub layout: FoldLayout,
}

impl CaseData {
    pub fn record(&self, id: &str) -> Result<&TimeSeriesRecord> {
        self.records
            .iter()
            .find(|r| r.case_id == id)
            .ok_or_else(|| Error::Data(format!("case {id} not found")).into())
    }

    pub fn test_ids(&self) -> Vec<&str> {
        self.layout.test_cases.iter().map(String::as_str).collect()
    }
}

pub fn load_cases(ctx: &Context) -> Result<CaseData> {
    let dir = ctx.dir(DATA_DIR);
    let manifest = dir.join("cases.csv");
    if !manifest.exists() {
        return Err(Error::Data(format!("{} not found; run `wavemotion synth` first", manifest.display())).into());
    }
    let plan = read_case_manifest(&manifest)?;
    let mut records = Vec::with_capacity(plan.len());
    for c in &plan {
        let path = dir.join(format!("{}.csv", c.id));
        let file = File::open(&path).map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        records.push(TimeSeriesRecord::read_csv(&c.id, BufReader::new(file))?);
    }
    let infos: Vec<CaseInfo> = plan.iter().map(|c| CaseInfo::new(c.id.clone(), c.hs, c.tp)).collect();
    let layout = build_folds(&infos, ctx.cfg.get_usize("cases.folds")?)?;
    Ok(CaseData { plan, records, layout })
}

pub fn checkpoint_name(m: usize, noise: f64, fold: usize) -> String {
    format!("m{m}_nl{noise}_fold{fold}.wmck")
}

fn load_checkpoint(ctx: &Context, m: usize, noise: f64, fold: usize) -> Result<ModelCheckpoint> {
    let path = ctx.dir(MODELS_DIR).join(checkpoint_name(m, noise, fold));
    ModelCheckpoint::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn require_checkpoints(ctx: &Context, wanted: &[(usize, f64, usize)]) -> Result<()> {
    let missing: Vec<String> = wanted
        .iter()
        .map(|&(m, nl, fold)| checkpoint_name(m, nl, fold))
        .filter(|name| !ctx.dir(MODELS_DIR).join(name).exists())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Data(format!("missing checkpoints: {}", missing.join(", "))).into())
    }
}

/// `synth`: case CSVs, the case and fold manifests and PSD checks.
pub fn cmd_synth(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let dir = ctx.fresh_dir(DATA_DIR)?;
    ctx.write_snapshot("synth")?;
    let plan = case_plan(cfg)?;
    let oracle = cfg.oracle()?;
    let trim = cfg.get_f64("case.trim_seconds");
    let segment = cfg.get_usize("psd.segment")?;
    let overlap = cfg.get_f64("psd.overlap");
    fs::create_dir_all(dir.join("psd"))?;

    let mut manifest = create(&dir.join("cases.csv"))?;
    writeln!(manifest, "{CASES_HEADER}")?;
    let mut summary = create(&dir.join("psd_summary.csv"))?;
    writeln!(summary, "case_id,hs,tp,eta_variance,target_variance,variance_ratio,eta_peak_omega,omega_p,heave_peak_period_s")?;
    for c in &plan {
        let sea = cfg.sea_state(c.hs, c.tp, c.seed)?;
        let mut record = make_case(&sea, &oracle, trim)?;
        record.case_id = c.id.clone();
        write_with(&dir.join(format!("{}.csv", c.id)), |w| record.write_csv(w))?;
        writeln!(manifest, "{},{},{},{},{}", c.id, c.role, c.hs, c.tp, c.seed)?;

        let eta = record.channel(ETA)?;
        let mean = eta.iter().sum::<f64>() / eta.len() as f64;
        let var = eta.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / eta.len() as f64;
        let target = c.hs * c.hs / 16.0;
        let seg = segment.min(record.len());
        let eta_psd = estimate_psd(&record, ETA, seg, overlap)?;
        let heave_psd = estimate_psd(&record, HEAVE, seg, overlap)?;
        let jonswap = Jonswap::from_spec(&sea)?;
        write_with(&dir.join("psd").join(format!("{}.csv", c.id)), |w| {
            writeln!(w, "omega,eta_psd,jonswap,heave_psd")?;
            for (i, &om) in eta_psd.omegas().iter().enumerate() {
                let s = if om > 0.0 { jonswap.density(om)? } else { 0.0 };
                writeln!(w, "{om},{},{s},{}", eta_psd.densities()[i], heave_psd.densities()[i])?;
            }
            Ok(())
        })?;
        writeln!(
            summary,
            "{},{},{},{var},{target},{},{},{},{}",
            c.id,
            c.hs,
            c.tp,
            if target > 0.0 { var / target } else { f64::NAN },
            eta_psd.peak_omega(),
            sea.omega_p(),
            std::f64::consts::TAU / heave_psd.peak_omega()
        )?;
    }
    manifest.flush()?;
    summary.flush()?;

    let infos: Vec<CaseInfo> = plan.iter().map(|c| CaseInfo::new(c.id.clone(), c.hs, c.tp)).collect();
    let layout = build_folds(&infos, cfg.get_usize("cases.folds")?)?;
    write_with(&dir.join("folds.txt"), |w| layout.write_manifest(w))?;
    println!(
        "synth: {} cases ({} folds x 2 + {} test) in {}",
        plan.len(),
        layout.num_folds(),
        layout.test_cases.len(),
        dir.display()
    );
    Ok(())
}

/// Folds selected by `train.folds`; empty means all.
fn selected_folds(cfg: &RunConfig, layout: &FoldLayout) -> Result<Vec<usize>> {
    let folds = cfg.get_usize_list("train.folds")?;
    let folds = if folds.is_empty() { (0..layout.num_folds()).collect() } else { folds };
    if let Some(f) = folds.iter().find(|&&f| f >= layout.num_folds()) {
        return Err(Error::Config(format!("train.folds: fold {f} outside [0, {})", layout.num_folds())).into());
    }
    Ok(folds)
}

pub const CV_SUMMARY_HEADER: &str = "m,noise_level,fold,epochs_run,best_epoch,best_val_mse,best_val_ev";

/// `train`: one checkpoint and curve per (horizon, noise level, fold).
pub fn cmd_train(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_cases(ctx)?;
    let horizons = cfg.horizons("train.horizons")?;
    let noise_levels = cfg.get_f64_list("train.noise_levels");
    let folds = selected_folds(cfg, &data.layout)?;
    let spec = cfg.train_spec()?;
    let mut jobs = Vec::new();
    for &m in &horizons {
        for &nl in &noise_levels {
            for &fold in &folds {
                let name = checkpoint_name(m, nl, fold);
                jobs.push((m, nl, fold, ctx.artifact(MODELS_DIR, &name)?));
            }
        }
    }
    ctx.write_snapshot("train")?;
    for (m, nl, fold, path) in jobs {
        let arch = cfg.arch(m)?;
        let window = cfg.window(m)?;
        log::info!("training m = {m}, noise {nl}, fold {fold}");
        let (checkpoint, curve) = train_fold(&data.records, &data.layout, fold, &arch, &spec, &window, nl)?;
        checkpoint.save(&path)?;
        write_with(&path.with_extension("curve.csv"), |w| curve.write_csv(w))?;
        let best = curve.best().expect("non-empty curve");
        println!(
            "train: {} epochs {} best {} val_mse {:.5} val_ev {:.4}",
            path.file_name().unwrap_or_default().to_string_lossy(),
            checkpoint.meta.epochs_run,
            best.epoch,
            best.val_mse,
            best.val_ev
        );
    }
    write_cv_summary(ctx)
}

/// Rebuilds `models/cv_summary.csv` from every curve in the models directory.
fn write_cv_summary(ctx: &Context) -> Result<()> {
    let dir = ctx.dir(MODELS_DIR);
    let mut rows = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let path = entry?.path();
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let Some(stem) = name.strip_suffix(".curve.csv") else { continue };
        let Some((m, nl, fold)) = parse_model_stem(stem) else { continue };
        let curve = TrainingCurve::read_csv(BufReader::new(File::open(&path)?))?;
        if let Some(best) = curve.best() {
            rows.push((m, nl, fold, curve.records.len(), *best));
        }
    }
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    write_with(&dir.join("cv_summary.csv"), |w| {
        writeln!(w, "{CV_SUMMARY_HEADER}")?;
        for (m, nl, fold, epochs, best) in &rows {
            writeln!(w, "{m},{nl},{fold},{epochs},{},{},{}", best.epoch, best.val_mse, best.val_ev)?;
        }
        Ok(())
    })
}

fn parse_model_stem(stem: &str) -> Option<(usize, f64, usize)> {
    let rest = stem.strip_prefix('m')?;
    let (m, rest) = rest.split_once("_nl")?;
    let (nl, fold) = rest.split_once("_fold")?;
    Some((m.parse().ok()?, nl.parse().ok()?, fold.parse().ok()?))
}

pub const DETAIL_HEADER: &str = "point,time,truth,deterministic,mean,std,ci_lo,ci_hi";

/// `predict`: deterministic and Monte-Carlo forecast for one window.
pub fn cmd_predict(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_cases(ctx)?;
    let ck_path = match cfg.get_str("predict.checkpoint") {
        "" => ctx.dir(MODELS_DIR).join(checkpoint_name(
            cfg.get_usize("predict.horizon")?,
            cfg.get_f64("predict.noise_level"),
            cfg.get_usize("predict.fold")?,
        )),
        p => PathBuf::from(p),
    };
    let checkpoint = ModelCheckpoint::load(&ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
    let case = match cfg.get_str("predict.case") {
        "" => data.layout.test_cases[0].clone(),
        c => c.to_string(),
    };
    let record = data.record(&case)?;
    let window = checkpoint.window;
    let anchors = window
        .anchors(record.len())
        .ok_or_else(|| Error::Data(format!("case {case} is too short for n = {}, m = {}", window.n, window.m)))?;
    let requested = cfg.get_i64("predict.anchor");
    let anchor = if requested < 0 {
        stream(cfg.seed()?, Purpose::Anchor).random_range(anchors.clone())
    } else {
        let p = requested as usize;
        if !anchors.contains(&p) {
            return Err(Error::Index(format!("anchor {p} outside the admissible range [{}, {}]", anchors.start(), anchors.end())).into());
        }
        p
    };
    let b = cfg.get_usize("predict.b")?;
    let level = cfg.get_f64("predict.level");
    let stem = format!("{case}_p{anchor}");
    let paths = [
        ctx.artifact(PREDICT_DIR, &format!("prediction_{stem}.csv"))?,
        ctx.artifact(PREDICT_DIR, &format!("detail_{stem}.csv"))?,
        ctx.artifact(PREDICT_DIR, &format!("summary_{stem}.csv"))?,
        ctx.artifact(PREDICT_DIR, &format!("replicas_{stem}.bin"))?,
    ];
    ctx.write_snapshot("predict")?;

    let samples = wavemotion::dataset::window_case(record, &window, &checkpoint.norm)?;
    let sample = &samples[anchor - anchors.start()];
    debug_assert_eq!(sample.origin.anchor, anchor);
    let det = checkpoint.predict(&sample.x, true)?;
    let dist = mc_predict(&checkpoint, &sample.x, b, cfg.seed()?, level)?;
    let raw = dist.denormalized(&checkpoint.norm)?;
    let truth = sample.y_raw(&checkpoint.norm);
    let ev_det = explained_variance(&truth, &det).ok();
    let ev_mc = explained_variance(&truth, &raw.mean).ok();

    write_with(&paths[0], |w| raw.write_csv(w))?;
    write_with(&paths[1], |w| {
        writeln!(w, "{DETAIL_HEADER}")?;
        for i in 0..window.m {
            writeln!(
                w,
                "{i},{},{},{},{},{},{},{}",
                record.time(anchor + i),
                truth[i],
                det[i],
                raw.mean[i],
                raw.std[i],
                raw.ci_lower[i],
                raw.ci_upper[i]
            )?;
        }
        Ok(())
    })?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| x.to_string());
    write_with(&paths[2], |w| {
        writeln!(w, "key,value")?;
        writeln!(w, "checkpoint,{}", ck_path.strip_prefix(&ctx.out).unwrap_or(&ck_path).display())?;
        writeln!(w, "case,{case}")?;
        writeln!(w, "anchor,{anchor}")?;
        writeln!(w, "anchor_min,{}", anchors.start())?;
        writeln!(w, "anchor_max,{}", anchors.end())?;
        writeln!(w, "b,{b}")?;
        writeln!(w, "level,{level}")?;
        writeln!(w, "z,{}", raw.z)?;
        writeln!(w, "ev_deterministic,{}", fmt(ev_det))?;
        writeln!(w, "ev_mc_mean,{}", fmt(ev_mc))?;
        Ok(())
    })?;
    write_with(&paths[3], |w| dist.write_replicas(w))?;
    println!("predict: {case} anchor {anchor}: EV deterministic {} / MC mean {} (B = {b})", fmt(ev_det), fmt(ev_mc));
    Ok(())
}

pub const EV_VS_M_HEADER: &str = "m,test_ev,test_mse,best_val_mse,windows";
pub const COVERAGE_HEADER: &str = "m,level,b,windows,pairs,covered,coverage";
pub const ENSEMBLE_HEADER: &str =
    "m,b,anchor,max_asymmetry,min_eigenvalue,max_eigenvalue,psd,normalized_diagonal_ok,dominant_period,heave_peak_period,tp_over_dt,flagged_lags,normal_fraction";
pub const HISTOGRAM_HEADER: &str = "b,point,bin_lo,bin_hi,count";

/// Heave spectral peak period of a record, in samples.
pub fn heave_peak_period(record: &TimeSeriesRecord, segment: usize, overlap: f64) -> Result<f64> {
    let psd = estimate_psd(record, HEAVE, segment.min(record.len()), overlap)?;
    Ok(std::f64::consts::TAU / psd.peak_omega() / record.dt)
}

/// `eval`: test EV per horizon, CI coverage, ensemble covariance and Gaussianity tables.
pub fn cmd_eval(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_cases(ctx)?;
    let horizons = cfg.horizons("eval.horizons")?;
    let nl = cfg.get_f64("eval.noise_level");
    let fold = cfg.get_usize("eval.fold")?;
    require_checkpoints(ctx, &horizons.iter().map(|&m| (m, nl, fold)).collect::<Vec<_>>())?;
    let b = cfg.get_usize("eval.b")?;
    let coverage_b = cfg.get_usize("eval.coverage_b")?;
    let stride = cfg.get_usize("eval.coverage_stride")?.max(1);
    let level = cfg.get_f64("eval.level");
    let point = cfg.get_usize("eval.point")?;
    let bins = cfg.get_usize("eval.bins")?;
    let gauss_b = cfg.get_usize_list("eval.gaussianity_b")?;
    let seed = cfg.seed()?;
    let segment = cfg.get_usize("psd.segment")?;
    let overlap = cfg.get_f64("psd.overlap");

    let ev_path = ctx.artifact(EVAL_DIR, "ev_vs_m.csv")?;
    let cov_path = ctx.artifact(EVAL_DIR, "coverage.csv")?;
    let ens_path = ctx.artifact(EVAL_DIR, "ensemble_summary.csv")?;
    let mut per_m = Vec::new();
    for &m in &horizons {
        per_m.push([
            ctx.artifact(EVAL_DIR, &format!("covariance_m{m}.csv"))?,
            ctx.artifact(EVAL_DIR, &format!("covariance_normalized_m{m}.csv"))?,
            ctx.artifact(EVAL_DIR, &format!("spacing_m{m}.csv"))?,
            ctx.artifact(EVAL_DIR, &format!("gaussianity_m{m}.csv"))?,
            ctx.artifact(EVAL_DIR, &format!("histogram_m{m}.csv"))?,
            ctx.artifact(EVAL_DIR, &format!("prediction_m{m}.csv"))?,
        ]);
    }
    ctx.write_snapshot("eval")?;

    let test_ids = data.test_ids();
    let first_test = data.record(test_ids[0])?;
    let tp_over_dt = data.plan.iter().find(|c| c.id == test_ids[0]).map_or(f64::NAN, |c| c.tp) / first_test.dt;
    let heave_period = heave_peak_period(first_test, segment, overlap)?;

    let mut ev_rows = Vec::new();
    let mut cov_rows = Vec::new();
    let mut ens_rows = Vec::new();
    for (&m, paths) in horizons.iter().zip(&per_m) {
        let ck = load_checkpoint(ctx, m, nl, fold)?;
        let test = window_cases(&data.records, &test_ids, &ck.window, &ck.norm)?;
        let (mse, ev) = evaluate(&ck.network, &test)?;
        ev_rows.push(format!("{m},{ev},{mse},{},{}", ck.meta.best_val_loss, test.len()));

        let strided: Vec<WindowedSample> = test.iter().step_by(stride).cloned().collect();
        let cov = ci_coverage(&ck, &strided, coverage_b, level, seed)?;
        cov_rows.push(format!("{m},{level},{coverage_b},{},{},{},{}", strided.len(), cov.pairs, cov.covered, cov.fraction()));

        let first: Vec<&WindowedSample> = test.iter().filter(|s| &*s.origin.case_id == test_ids[0]).collect();
        let requested = cfg.get_i64("eval.anchor");
        let sample = if requested < 0 {
            first[first.len() / 2]
        } else {
            first
                .iter()
                .find(|s| s.origin.anchor == requested as usize)
                .copied()
                .ok_or_else(|| Error::Index(format!("eval.anchor {requested} is not an admissible anchor of {}", test_ids[0])))?
        };
        let dist = mc_predict(&ck, &sample.x, b, seed, level)?;
        let summary = ensemble_covariance(&dist)?;
        let (lo, hi) = summary.eigen_range();
        let diag_ok = (0..m).all(|i| summary.degenerate_rows.contains(&i) || summary.normalized[(i, i)] == 1.0);
        ens_rows.push(format!(
            "{m},{b},{},{},{lo},{hi},{},{},{},{heave_period},{tp_over_dt},{},{}",
            sample.origin.anchor,
            summary.max_asymmetry(),
            summary.is_psd(),
            diag_ok,
            summary.dominant_period().map_or_else(|| "undefined".to_string(), |p| p.to_string()),
            summary.flagged_lags().len(),
            normality_pass_fraction(&dist)?
        ));
        write_with(&paths[0], |w| CovarianceSummary::write_matrix_csv(&summary.cov, w))?;
        write_with(&paths[1], |w| CovarianceSummary::write_matrix_csv(&summary.normalized, w))?;
        write_with(&paths[2], |w| summary.write_spacing_csv(w))?;

        let mut gauss_rows = Vec::new();
        let mut hist_rows = Vec::new();
        for &gb in &gauss_b {
            let d = mc_predict(&ck, &sample.x, gb, seed, level)?;
            let g: MomentSummary = gaussianity_report(&d, point, bins)?;
            gauss_rows.push(g.csv_row());
            for (lo, hi, count) in &g.histogram {
                hist_rows.push(format!("{gb},{point},{lo},{hi},{count}"));
            }
        }
        write_with(&paths[3], |w| {
            writeln!(w, "{}", MomentSummary::CSV_HEADER)?;
            gauss_rows.iter().try_for_each(|r| writeln!(w, "{r}"))?;
            Ok(())
        })?;
        write_with(&paths[4], |w| {
            writeln!(w, "{HISTOGRAM_HEADER}")?;
            hist_rows.iter().try_for_each(|r| writeln!(w, "{r}"))?;
            Ok(())
        })?;
        let raw = dist.denormalized(&ck.norm)?;
        write_with(&paths[5], |w| raw.write_csv(w))?;
        println!("eval: m = {m}: test EV {ev:.4}, coverage {:.3}, normal fraction {:.2}", cov.fraction(), normality_pass_fraction(&dist)?);
    }
    for (path, header, rows) in [
        (&ev_path, EV_VS_M_HEADER, &ev_rows),
        (&cov_path, COVERAGE_HEADER, &cov_rows),
        (&ens_path, ENSEMBLE_HEADER, &ens_rows),
    ] {
        write_with(path, |w| {
            writeln!(w, "{header}")?;
            rows.iter().try_for_each(|r| writeln!(w, "{r}"))?;
            Ok(())
        })?;
    }
    Ok(())
}

pub const SWEEP_HEADER: &str = "train_noise,test_noise,m,ev,mse,window_ev_mean,window_ev_std";

/// Per-window EV across the horizon points of each window.
fn window_evs(pred: &Matrix, samples: &[WindowedSample]) -> Vec<f64> {
    samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| explained_variance(&s.y, pred.row(i)).ok())
        .collect()
}

/// `noise-sweep`: EV of checkpoints trained at several noise levels on noisy test inputs.
pub fn cmd_noise_sweep(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let data = load_cases(ctx)?;
    let horizons = cfg.horizons("sweep.horizons")?;
    let train_noise = cfg.get_f64_list("sweep.train_noise");
    let test_noise = cfg.get_f64_list("sweep.test_noise");
    let fold = cfg.get_usize("sweep.fold")?;
    let wanted: Vec<(usize, f64, usize)> = horizons.iter().flat_map(|&m| train_noise.iter().map(move |&nl| (m, nl, fold))).collect();
    require_checkpoints(ctx, &wanted)?;
    let path = ctx.artifact(SWEEP_DIR, "noise_sweep.csv")?;
    ctx.write_snapshot("noise-sweep")?;
    let seed = cfg.seed()?;
    let test_ids = data.test_ids();
    let norm = fold_norm(&data.records, &data.layout)?;

    let mut rows = Vec::new();
    for &m in &horizons {
        let window = cfg.window(m)?;
        let clean = window_cases(&data.records, &test_ids, &window, &norm)?;
        let truth = target_matrix(&clean)?;
        for (k, &test_nl) in test_noise.iter().enumerate() {
            // Every model sees the same noisy inputs for a given test level.
            let noisy = inject_noise(&clean, test_nl, seed.wrapping_add(k as u64))?;
            for &train_nl in &train_noise {
                let ck = load_checkpoint(ctx, m, train_nl, fold)?;
                if ck.window != window || ck.norm != norm {
                    return Err(Error::Data(format!(
                        "{} was trained on different windows or normalization than the current data",
                        checkpoint_name(m, train_nl, fold)
                    ))
                    .into());
                }
                let pred = predict_samples(&ck.network, &noisy)?;
                let ev = wavemotion::uncertainty::mean_explained_variance(&truth, &pred)?;
                let mse = wavemotion::nn::mse(&pred, &truth);
                let evs = window_evs(&pred, &noisy);
                let mean = evs.iter().sum::<f64>() / evs.len() as f64;
                let std = (evs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / evs.len() as f64).sqrt();
                rows.push(format!("{train_nl},{test_nl},{m},{ev},{mse},{mean},{std}"));
                println!("noise-sweep: m = {m} train {train_nl} test {test_nl}: EV {ev:.4}");
            }
        }
    }
    write_with(&path, |w| {
        writeln!(w, "{SWEEP_HEADER}")?;
        rows.iter().try_for_each(|r| writeln!(w, "{r}"))?;
        Ok(())
    })
}

pub const GRADCHECK_HEADER: &str = "tensor,index,analytic,numeric,rel_error";

/// `gradcheck`: finite-difference check of a small network with dropout masks.
pub fn cmd_gradcheck(ctx: &Context) -> Result<()> {
    let cfg = &ctx.cfg;
    let path = ctx.artifact(GRADCHECK_DIR, "gradcheck.csv")?;
    ctx.write_snapshot("gradcheck")?;
    let seed = cfg.seed()?;
    let hidden = cfg.get_usize("gradcheck.hidden")?;
    let steps = cfg.get_usize("gradcheck.steps")?;
    let batch = cfg.get_usize("gradcheck.batch")?;
    let arch = ArchitectureSpec {
        num_lstm_layers: 2,
        lstm_hidden: hidden,
        num_fc_blocks: 2,
        fc_width: hidden,
        dropout_p: cfg.get_f64("arch.dropout_p"),
        horizon: cfg.get_usize("gradcheck.horizon")?,
        lstm_shortcuts: true,
        lstm_dropout: true,
    };
    let mut net = Network::with_seed(&arch, seed)?;
    let mut rng = stream(seed, Purpose::Init);
    for p in net.parameters_mut() {
        p.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-0.5..=0.5));
    }
    let input: Vec<Matrix> = (0..steps).map(|_| Matrix::from_fn(batch, 2, |_, _| rng.random_range(-1.0..1.0))).collect();
    let target = Matrix::from_fn(batch, arch.horizon, |_, _| rng.random_range(-1.0..1.0));
    let masks = BatchMasks::sample(&arch, batch, &mut stream(seed, Purpose::TrainDropout))?;
    let report = check_gradients(&mut net, &input, &target, Some(&masks), cfg.get_f64("gradcheck.step"))?;
    write_with(&path, |w| report.write_csv(w))?;
    let worst = report.worst().expect("network has parameters");
    let tol = cfg.get_f64("gradcheck.tolerance");
    println!(
        "gradcheck: {} parameters, max relative error {:.3e} at {}[{}]",
        report.entries.len(),
        worst.rel_error,
        worst.tensor,
        worst.index
    );
    if worst.rel_error >= tol {
        return Err(Error::Numeric(format!("gradient check failed: relative error {:.3e} >= {tol:e}", worst.rel_error)).into());
    }
    Ok(())
}
