//! Subcommand implementations. Each one loads its inputs, runs the library,
//! writes its artifacts into --out, and finishes with a manifest.json
//! recording the resolved configuration and artifact checksums.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;
use tensorcast::completion::{complete_with_reference, CompletionRecord};
use tensorcast::io;
use tensorcast::lstm::TrainConfig;
use tensorcast::synth::{self, Scenario};
use tensorcast::{
    cp_als, joint_complete_predict_and_score, predict_and_score, rank_sweep, roc,
    split_learn_predict, AlsOptions, BoolTensor3, CompletionOptions, CpVariant, Error,
    PipelineConfig, PredictionMode, PredictionReport, PredictorKind, Result,
};

use crate::manifest::Manifest;
use crate::{
    Command, CompleteArgs, DecomposeArgs, EvaluateArgs, FiguresArgs, ForecastArgs, GenerateArgs,
    ModeArg, PredictArgs, PredictorArg, RocArgs, Table1Args, VariantArg,
};

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Decompose(a) => decompose(a),
        Command::Complete(a) => complete(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Roc(a) => roc_cmd(a),
        Command::Table1(a) => table1(a),
        Command::Figures(a) => figures(a),
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let scenario = load_scenario(a.scenario.as_deref(), a.seed)?;
    let (x, truth) = synth::generate(&scenario)?;
    std::fs::create_dir_all(&a.out)?;

    let mask_seed = a.mask_seed.unwrap_or(scenario.seed.wrapping_add(1));
    let mut manifest = Manifest::new(
        "generate",
        json!({ "scenario": scenario, "missing": a.missing, "mask_seed": a.missing.map(|_| mask_seed) }),
        Some(scenario.seed),
    );
    if let Some(p) = &a.scenario {
        manifest.input("scenario", p);
    }

    let tensor_path = a.out.join("tensor.txt");
    io::save_tensor(&tensor_path, &x)?;
    manifest.artifact("tensor", &tensor_path)?;

    let truth_path = a.out.join("truth.txt");
    io::save_mask(&truth_path, &truth)?;
    manifest.artifact("truth", &truth_path)?;

    if let Some(ratio) = a.missing {
        let mask = synth::generate_mask(x.dims(), ratio, mask_seed)?;
        let mask_path = a.out.join("mask.txt");
        io::save_mask(&mask_path, &mask)?;
        manifest.artifact("mask", &mask_path)?;
    }

    manifest.write(&a.out)?;
    let (f, t, n) = x.dims();
    println!("wrote {f}x{t}x{n} tensor under {}", a.out.display());
    Ok(())
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let x = io::load_tensor(&a.input)?;
    let als = AlsOptions {
        max_sweeps: a.max_sweeps,
        rel_tol: a.tol,
        seed: a.als_seed,
        ridge: a.ridge,
    };
    std::fs::create_dir_all(&a.out)?;

    match a.ranks {
        Some((lo, hi)) => {
            let ranks: Vec<usize> = (lo..=hi).collect();
            let sweep = rank_sweep(&x, &ranks, &als)?;
            let mut manifest = Manifest::new(
                "decompose",
                json!({ "als": als, "ranks": [lo, hi] }),
                Some(als.seed),
            );
            manifest.input("tensor", &a.input);
            let path = a.out.join("rank_sweep.csv");
            save_with(&path, |w| io::write_rank_sweep_csv(w, &sweep))?;
            manifest.artifact("rank_sweep", &path)?;
            manifest.write(&a.out)?;
            println!("swept ranks {lo}..{hi} into {}", path.display());
        }
        None => {
            let rank = a.rank.unwrap_or(10);
            let (fs, fits) = cp_als(&x, rank, &als)?;
            let mut manifest = Manifest::new(
                "decompose",
                json!({ "als": als, "rank": rank }),
                Some(als.seed),
            );
            manifest.input("tensor", &a.input);
            let factors_path = a.out.join("factors.txt");
            io::save_factors(&factors_path, &fs)?;
            manifest.artifact("factors", &factors_path)?;
            let fit_path = a.out.join("fit.csv");
            save_with(&fit_path, |w| write_fit_csv(w, &fits))?;
            manifest.artifact("fit", &fit_path)?;
            manifest.write(&a.out)?;
            println!(
                "rank {rank} fit {} after {} sweeps",
                fits.last().unwrap(),
                fits.len()
            );
        }
    }
    Ok(())
}

fn complete(a: CompleteArgs) -> Result<()> {
    let x = io::load_tensor(&a.input)?;
    let mask = io::load_mask(&a.mask)?;
    let truth = a.truth.as_ref().map(io::load_tensor).transpose()?;
    let opts = CompletionOptions {
        rank: a.rank,
        cp_variant: a.variant.into(),
        max_outer_iters: a.max_outer,
        outer_rel_tol: a.outer_tol,
        als: AlsOptions {
            max_sweeps: a.max_sweeps,
            rel_tol: a.tol,
            seed: a.als_seed,
            ridge: a.ridge,
        },
    };
    let result = complete_with_reference(&x, &mask, &opts, truth.as_ref())?;

    std::fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new(
        "complete",
        json!({ "options": opts, "scored": truth.is_some() }),
        Some(opts.als.seed),
    );
    manifest.input("tensor", &a.input);
    manifest.input("mask", &a.mask);
    if let Some(p) = &a.truth {
        manifest.input("truth", p);
    }

    let completed_path = a.out.join("completed.txt");
    io::save_tensor(&completed_path, &result.tensor)?;
    manifest.artifact("completed", &completed_path)?;
    let factors_path = a.out.join("factors.txt");
    io::save_factors(&factors_path, &result.factors)?;
    manifest.artifact("factors", &factors_path)?;
    let history_path = a.out.join("history.csv");
    save_with(&history_path, |w| io::write_history_csv(w, &result.history))?;
    manifest.artifact("history", &history_path)?;
    manifest.write(&a.out)?;

    let passes = result.history.len().saturating_sub(1);
    if result.converged {
        println!("settled after {passes} passes");
    } else {
        println!("stopped at the {passes}-pass cap without settling");
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let x = io::load_tensor(&a.input)?;
    let cfg = a.forecast.pipeline_config(
        a.predictor.into(),
        a.mode.into(),
        Some(CompletionOptions {
            rank: a.forecast.rank,
            cp_variant: a.variant.into(),
            max_outer_iters: a.max_outer,
            outer_rel_tol: a.outer_tol,
            als: a.forecast.als(),
        }),
    );
    let report = match &a.mask {
        Some(p) => {
            let mask = io::load_mask(p)?;
            joint_complete_predict_and_score(&x, &mask, &cfg)?
        }
        None => predict_and_score(&x, &cfg)?,
    };

    std::fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new(
        "predict",
        json!({ "pipeline": cfg, "joint": a.mask.is_some() }),
        Some(cfg.train.seed),
    );
    manifest.input("tensor", &a.input);
    if let Some(p) = &a.mask {
        manifest.input("mask", p);
    }
    write_prediction_artifacts(&mut manifest, &a.out, &report, &cfg)?;
    manifest.write(&a.out)?;
    println!("e_p = {}", report.e_p.unwrap());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    if a.ratios.is_empty() {
        return Err(Error::InvalidOption("ratios list is empty".into()));
    }
    let x = io::load_tensor(&a.input)?;
    let base = CompletionOptions {
        rank: a.rank,
        cp_variant: CpVariant::Masked,
        max_outer_iters: a.max_outer,
        outer_rel_tol: a.outer_tol,
        als: AlsOptions {
            max_sweeps: a.max_sweeps,
            rel_tol: a.tol,
            seed: a.als_seed,
            ridge: a.ridge,
        },
    };

    let mut rows = Vec::with_capacity(a.ratios.len());
    for (i, &ratio) in a.ratios.iter().enumerate() {
        let mask = synth::generate_mask(x.dims(), ratio, a.mask_seed.wrapping_add(i as u64))?;
        let mut errors = [0.0; 2];
        for (slot, variant) in [CpVariant::Masked, CpVariant::Plain].into_iter().enumerate() {
            let opts = CompletionOptions {
                cp_variant: variant,
                ..base.clone()
            };
            let result = complete_with_reference(&x, &mask, &opts, Some(&x))?;
            errors[slot] = final_hidden(&result.history);
        }
        eprintln!(
            "ratio {ratio}: masked {} plain {}",
            errors[0], errors[1]
        );
        rows.push((ratio, errors[0], errors[1]));
    }

    std::fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new(
        "evaluate",
        json!({
            "rank": a.rank,
            "ratios": a.ratios,
            "mask_seed": a.mask_seed,
            "max_outer": a.max_outer,
            "outer_tol": a.outer_tol,
            "als": base.als,
        }),
        Some(a.mask_seed),
    );
    manifest.input("tensor", &a.input);
    let path = a.out.join("evaluate.csv");
    save_with(&path, |w| write_missing_sweep_csv(w, &rows))?;
    manifest.artifact("sweep", &path)?;
    manifest.write(&a.out)?;
    println!("swept {} ratios into {}", rows.len(), path.display());
    Ok(())
}

fn roc_cmd(a: RocArgs) -> Result<()> {
    let predicted = io::load_tensor(&a.predicted)?;
    let truth = align_truth(io::load_mask(&a.truth)?, predicted.dims())?;
    let curve = roc(&predicted, &truth, a.thresholds)?;

    std::fs::create_dir_all(&a.out)?;
    let mut manifest = Manifest::new("roc", json!({ "thresholds": a.thresholds }), None);
    manifest.input("predicted", &a.predicted);
    manifest.input("truth", &a.truth);
    let csv_path = a.out.join("roc.csv");
    save_with(&csv_path, |w| io::write_roc_csv(w, &curve))?;
    manifest.artifact("roc", &csv_path)?;
    let summary_path = a.out.join("roc_summary.json");
    save_with(&summary_path, |w| {
        write_json(w, &json!({ "auc": curve.auc(), "points": curve.points().len() }))
    })?;
    manifest.artifact("summary", &summary_path)?;
    manifest.write(&a.out)?;
    println!("auc = {}", curve.auc());
    Ok(())
}

fn table1(a: Table1Args) -> Result<()> {
    let x = io::load_tensor(&a.input)?;
    let methods = [
        ("lstm+cpd", PredictorKind::Lstm, PredictionMode::Cpd),
        ("ar+cpd", PredictorKind::Ar, PredictionMode::Cpd),
        ("lstm+raw", PredictorKind::Lstm, PredictionMode::Raw),
        ("ar+raw", PredictorKind::Ar, PredictionMode::Raw),
    ];
    let mut rows = Vec::with_capacity(methods.len());
    for (name, predictor, mode) in methods {
        eprintln!("running {name}");
        let cfg = a.forecast.pipeline_config(predictor, mode, None);
        let report = predict_and_score(&x, &cfg)?;
        rows.push(io::MethodRow {
            method: name.into(),
            cpd_time: report.cpd_seconds,
            learning_time: report.learn_seconds,
            total_time: report.total_seconds,
            error_percent: 100.0 * report.e_p.unwrap(),
        });
    }

    std::fs::create_dir_all(&a.out)?;
    let base = a
        .forecast
        .pipeline_config(PredictorKind::Lstm, PredictionMode::Cpd, None);
    let mut manifest = Manifest::new("table1", json!({ "pipeline": base }), Some(base.train.seed));
    manifest.input("tensor", &a.input);
    let path = a.out.join("table1.csv");
    save_with(&path, |w| io::write_table_csv(w, &rows))?;
    manifest.artifact("table", &path)?;
    manifest.write(&a.out)?;
    println!("wrote 4 method rows to {}", path.display());
    Ok(())
}

fn figures(a: FiguresArgs) -> Result<()> {
    let scenario = load_scenario(a.scenario.as_deref(), a.seed)?;
    let (x, truth) = synth::generate(&scenario)?;
    let n = x.dims().2;
    if a.forecast.n_learn + a.forecast.n_predict != n {
        return Err(Error::InvalidOption(format!(
            "n_learn {} + n_predict {} must equal the scenario's {n} days",
            a.forecast.n_learn, a.forecast.n_predict
        )));
    }
    // Checks the day split before hours of work depend on it.
    let (learn, _) = split_learn_predict(&x, a.forecast.n_learn)?;
    let cfg = a
        .forecast
        .pipeline_config(PredictorKind::Lstm, PredictionMode::Cpd, None);
    std::fs::create_dir_all(&a.out)?;

    let mut manifest = Manifest::new(
        "figures",
        json!({
            "scenario": scenario,
            "pipeline": cfg,
            "ranks": [a.ranks.0, a.ranks.1],
            "ratios": a.ratios,
            "missing": a.missing,
            "mask_seed": a.mask_seed,
            "max_outer": a.max_outer,
            "outer_tol": a.outer_tol,
            "thresholds": a.thresholds,
        }),
        Some(scenario.seed),
    );
    if let Some(p) = &a.scenario {
        manifest.input("scenario", p);
    }
    let completion_base = CompletionOptions {
        rank: a.forecast.rank,
        cp_variant: CpVariant::Masked,
        max_outer_iters: a.max_outer,
        outer_rel_tol: a.outer_tol,
        als: a.forecast.als(),
    };

    // Per-iteration completion curves at one missing ratio, both variants.
    eprintln!("completion histories at {} missing", a.missing);
    let mask = synth::generate_mask(x.dims(), a.missing, a.mask_seed)?;
    for (stem, variant) in [
        ("completion_history_masked", CpVariant::Masked),
        ("completion_history_plain", CpVariant::Plain),
    ] {
        let opts = CompletionOptions {
            cp_variant: variant,
            ..completion_base.clone()
        };
        let result = complete_with_reference(&x, &mask, &opts, Some(&x))?;
        let path = a.out.join(format!("{stem}.csv"));
        save_with(&path, |w| io::write_history_csv(w, &result.history))?;
        manifest.artifact(stem, &path)?;
    }

    // Final hidden error against missing ratio.
    let mut sweep_rows = Vec::with_capacity(a.ratios.len());
    for (i, &ratio) in a.ratios.iter().enumerate() {
        eprintln!("missing-ratio sweep {ratio}");
        let mask = synth::generate_mask(x.dims(), ratio, a.mask_seed.wrapping_add(i as u64))?;
        let mut errors = [0.0; 2];
        for (slot, variant) in [CpVariant::Masked, CpVariant::Plain].into_iter().enumerate() {
            let opts = CompletionOptions {
                cp_variant: variant,
                ..completion_base.clone()
            };
            let result = complete_with_reference(&x, &mask, &opts, Some(&x))?;
            errors[slot] = final_hidden(&result.history);
        }
        sweep_rows.push((ratio, errors[0], errors[1]));
    }
    let sweep_path = a.out.join("missing_sweep.csv");
    save_with(&sweep_path, |w| write_missing_sweep_csv(w, &sweep_rows))?;
    manifest.artifact("missing_sweep", &sweep_path)?;

    // Fit error and forecast error against rank. The fit column stays the
    // unregularized least-squares fit so it is comparable across ranks; the
    // forecasts use the configured ridge.
    let ranks: Vec<usize> = (a.ranks.0..=a.ranks.1).collect();
    let plain = AlsOptions {
        ridge: 0.0,
        ..a.forecast.als()
    };
    eprintln!("fit sweep over ranks {}..{}", a.ranks.0, a.ranks.1);
    let fit_sweep = rank_sweep(&learn, &ranks, &plain)?;
    let mut rank_rows = Vec::with_capacity(ranks.len());
    for (&rank, &(_, e_cpd)) in ranks.iter().zip(&fit_sweep) {
        eprintln!("forecast at rank {rank}");
        let mut c = cfg.clone();
        c.rank = rank;
        let report = predict_and_score(&x, &c)?;
        rank_rows.push((rank, e_cpd, report.e_p.unwrap()));
    }
    let curves_path = a.out.join("rank_curves.csv");
    save_with(&curves_path, |w| write_rank_curve_csv(w, &rank_rows))?;
    manifest.artifact("rank_curves", &curves_path)?;

    // Detection curves for both predictors over the held-out days.
    let truth_test = align_truth(truth, (x.dims().0, x.dims().1, a.forecast.n_predict))?;
    let mut aucs = Vec::new();
    for (stem, predictor) in [("roc_lstm", PredictorKind::Lstm), ("roc_ar", PredictorKind::Ar)] {
        eprintln!("detection curve for {stem}");
        let mut c = cfg.clone();
        c.predictor = predictor;
        let report = predict_and_score(&x, &c)?;
        let curve = roc(&report.predicted, &truth_test, a.thresholds)?;
        let path = a.out.join(format!("{stem}.csv"));
        save_with(&path, |w| io::write_roc_csv(w, &curve))?;
        manifest.artifact(stem, &path)?;
        aucs.push((stem, curve.auc()));
    }
    let summary_path = a.out.join("roc_summary.json");
    save_with(&summary_path, |w| {
        write_json(w, &json!({ "lstm_auc": aucs[0].1, "ar_auc": aucs[1].1 }))
    })?;
    manifest.artifact("roc_summary", &summary_path)?;

    manifest.write(&a.out)?;
    println!("wrote figure data under {}", a.out.display());
    Ok(())
}

impl ForecastArgs {
    fn als(&self) -> AlsOptions {
        AlsOptions {
            max_sweeps: self.max_sweeps,
            rel_tol: self.tol,
            seed: self.als_seed,
            ridge: self.ridge,
        }
    }

    fn pipeline_config(
        &self,
        predictor: PredictorKind,
        mode: PredictionMode,
        completion: Option<CompletionOptions>,
    ) -> PipelineConfig {
        PipelineConfig {
            rank: self.rank,
            n_learn: self.n_learn,
            n_predict: self.n_predict,
            predictor,
            mode,
            completion,
            als: self.als(),
            train: TrainConfig {
                num_layers: self.layers,
                layer_width: self.width,
                learning_rate: self.learning_rate,
                epochs: self.epochs,
                seed: self.train_seed,
            },
            ar_order: self.ar_order,
        }
    }
}

impl From<PredictorArg> for PredictorKind {
    fn from(p: PredictorArg) -> Self {
        match p {
            PredictorArg::Lstm => PredictorKind::Lstm,
            PredictorArg::Ar => PredictorKind::Ar,
        }
    }
}

impl From<ModeArg> for PredictionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cpd => PredictionMode::Cpd,
            ModeArg::Raw => PredictionMode::Raw,
        }
    }
}

impl From<VariantArg> for CpVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Masked => CpVariant::Masked,
            VariantArg::Plain => CpVariant::Plain,
        }
    }
}

fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario> {
    let mut scenario = match path {
        Some(p) => io::load_scenario(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    Ok(scenario)
}

/// Writes the predicted tensor plus whatever the report carries: factors in
/// factor-space mode, the completion history on the joint path.
fn write_prediction_artifacts(
    manifest: &mut Manifest,
    out: &Path,
    report: &PredictionReport,
    cfg: &PipelineConfig,
) -> Result<()> {
    let predicted_path = out.join("predicted.txt");
    io::save_tensor(&predicted_path, &report.predicted)?;
    manifest.artifact("predicted", &predicted_path)?;
    if let Some(fs) = &report.factors {
        let path = out.join("factors.txt");
        io::save_factors(&path, fs)?;
        manifest.artifact("factors", &path)?;
    }
    if let Some(history) = &report.completion_history {
        let path = out.join("history.csv");
        save_with(&path, |w| io::write_history_csv(w, history))?;
        manifest.artifact("history", &path)?;
    }
    let report_path = out.join("report.json");
    save_with(&report_path, |w| {
        write_json(
            w,
            &json!({
                "predictor": cfg.predictor,
                "mode": cfg.mode,
                "e_p": report.e_p,
                "cpd_seconds": report.cpd_seconds,
                "learn_seconds": report.learn_seconds,
                "total_seconds": report.total_seconds,
            }),
        )
    })?;
    manifest.artifact("report", &report_path)?;
    Ok(())
}

/// Drops leading days from the truth when the prediction covers only the
/// tail of the measurement window.
fn align_truth(truth: BoolTensor3, dims: (usize, usize, usize)) -> Result<BoolTensor3> {
    let (f, t, n) = truth.dims();
    if (f, t, n) == dims {
        return Ok(truth);
    }
    if f == dims.0 && t == dims.1 && n > dims.2 {
        let bits = truth.bits()[f * t * (n - dims.2)..].to_vec();
        return BoolTensor3::new(dims, bits);
    }
    Err(Error::DimMismatch {
        expected: dims,
        got: (f, t, n),
    })
}

fn final_hidden(history: &[CompletionRecord]) -> f64 {
    history
        .last()
        .and_then(|r| r.hidden_error)
        .expect("scored against a reference")
}

fn save_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    Ok(w.flush()?)
}

fn write_json(w: &mut impl Write, value: &serde_json::Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Parse {
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(w.write_all(b"\n")?)
}

fn write_fit_csv(w: &mut impl Write, fits: &[f64]) -> Result<()> {
    writeln!(w, "sweep,fit")?;
    for (i, fit) in fits.iter().enumerate() {
        writeln!(w, "{},{fit}", i + 1)?;
    }
    Ok(())
}

fn write_missing_sweep_csv(w: &mut impl Write, rows: &[(f64, f64, f64)]) -> Result<()> {
    writeln!(w, "missing_ratio,masked_error,plain_error")?;
    for (ratio, masked, plain) in rows {
        writeln!(w, "{ratio},{masked},{plain}")?;
    }
    Ok(())
}

fn write_rank_curve_csv(w: &mut impl Write, rows: &[(usize, f64, f64)]) -> Result<()> {
    writeln!(w, "rank,e_cpd,e_p")?;
    for (rank, e_cpd, e_p) in rows {
        writeln!(w, "{rank},{e_cpd},{e_p}")?;
    }
    Ok(())
}
