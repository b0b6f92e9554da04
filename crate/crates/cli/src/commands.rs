//! One function per subcommand. Each reads its inputs, writes artifacts
//! into the output directory and finishes with a manifest.

use std::collections::BTreeSet;
use std::path::Path;

use rwtkan::expr::{bank_lookup, EqSet, EquationBank};
use rwtkan::ingest::{
    attach_covariates, parse_daily, parse_morphometry, parse_observations_lenient, read_rows_csv, split_profiles, synth_generate,
    write_rows_csv, LabeledRow, SchemaVersion, SplitPlan,
};
use rwtkan::kan::{incremental_experiment, ExperimentConfig, ExperimentData};
use rwtkan::metrics::{metrics, per_group_metrics, quantile_compare, scatter_rows, MetricSet};
use rwtkan::mlp::{mlp_train, MlpModel, MlpTrainConfig};
use rwtkan::shapley::{shap_exact, shap_export, shap_global, BackgroundSet, ExportMode, ShapExplanation};
use rwtkan::trees::{gbm_fit_traced, rf_fit};
use rwtkan::{FeatureId, FeatureMatrix, Predictor, RegressorModel, Scaler, ScalerMode};
use serde::{Deserialize, Serialize};

use crate::config::{ModelChoice, RunConfig};
use crate::error::CliError;
use crate::output::{num, opt_num, ArtifactSet};
use crate::reference;

/// Rows routed through a saved split and scaler.
struct Prepared {
    plan: SplitPlan,
    scaler: Scaler,
    train: Vec<usize>,
    test: Vec<usize>,
    x: FeatureMatrix,
    y: Vec<f64>,
}

impl Prepared {
    fn new(rows: &[LabeledRow], plan: SplitPlan, scaler: Scaler) -> Result<Self, CliError> {
        let mut x = FeatureMatrix::new(FeatureId::ALL.len());
        let mut y = Vec::with_capacity(rows.len());
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, r) in rows.iter().enumerate() {
            x.push_row(&scaler.apply(&r.raw)?.x)?;
            y.push(scaler.scale_target(r.temp_c));
            if plan.is_train(&r.key) {
                train.push(i);
            } else if plan.is_test(&r.key) {
                test.push(i);
            }
        }
        Ok(Self { plan, scaler, train, test, x, y })
    }

    /// Splits profiles and fits the scaler on the training rows.
    fn fit(rows: &[LabeledRow], cfg: &RunConfig) -> Result<Self, CliError> {
        let keys: Vec<_> = rows.iter().map(|r| r.key.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let plan = split_profiles(&keys, cfg.split_ratio, cfg.split_seed)?;
        let scaler = match cfg.scaler {
            ScalerMode::Table2Fixed => Scaler::table2_fixed(),
            ScalerMode::FromData => {
                let train: Vec<_> = rows.iter().filter(|r| plan.is_train(&r.key)).map(|r| (r.raw.clone(), r.temp_c)).collect();
                Scaler::fit(&train, ScalerMode::FromData)?
            }
        };
        Self::new(rows, plan, scaler)
    }

    fn part(&self, idx: &[usize]) -> (FeatureMatrix, Vec<f64>) {
        (self.x.select_rows(idx), idx.iter().map(|&i| self.y[i]).collect())
    }
}

fn load_rows(art: &mut ArtifactSet, cfg: &RunConfig) -> Result<Vec<LabeledRow>, CliError> {
    let bytes = art.read(&cfg.paths.rows_file())?;
    Ok(read_rows_csv(&bytes[..])?)
}

fn read_json<T: for<'de> Deserialize<'de>>(art: &mut ArtifactSet, path: &Path) -> Result<T, CliError> {
    Ok(serde_json::from_str(&art.read_text(path)?)?)
}

/// Loads the rows with the split and scaler saved by `train`.
fn load_prepared(art: &mut ArtifactSet, cfg: &RunConfig) -> Result<(Vec<LabeledRow>, Prepared), CliError> {
    let rows = load_rows(art, cfg)?;
    let plan: SplitPlan = read_json(art, &cfg.paths.out.join("split.json"))?;
    let scaler: Scaler = read_json(art, &cfg.paths.out.join("scaler.json"))?;
    let prepared = Prepared::new(&rows, plan, scaler)?;
    Ok((rows, prepared))
}

fn load_model(art: &mut ArtifactSet, cfg: &RunConfig) -> Result<RegressorModel, CliError> {
    let path = cfg.paths.out.join(format!("model_{}.json", cfg.model.name()));
    Ok(RegressorModel::from_json(&art.read_text(&path)?)?)
}

fn feature_names() -> Vec<String> {
    FeatureId::ALL.iter().map(|f| f.name().to_string()).collect()
}

pub fn ingest(cfg: &RunConfig) -> Result<String, CliError> {
    let mut art = ArtifactSet::new(&cfg.paths.out, "ingest")?;
    let (rows, rejected): (Vec<LabeledRow>, Vec<Rejection>) = if cfg.synthetic {
        (synth_generate(&cfg.synth.to_core())?.profiles.rows(), Vec::new())
    } else {
        let need = |p: &Option<std::path::PathBuf>, key: &str| {
            p.clone().ok_or_else(|| CliError::usage(format!("ingest needs '{key}' (or --synthetic)")))
        };
        let (obs, daily, morph) =
            (need(&cfg.paths.observations, "observations")?, need(&cfg.paths.daily, "daily")?, need(&cfg.paths.morphometry, "morphometry")?);
        let parsed = parse_observations_lenient(&art.read(&obs)?[..], SchemaVersion::V1)?;
        let daily = parse_daily(&art.read(&daily)?[..])?;
        let morph = parse_morphometry(&art.read(&morph)?[..])?;
        let set = attach_covariates(parsed.accepted, &daily, &morph, cfg.window)?;
        let rejected = parsed.rejected.iter().map(|(k, e)| Rejection { profile: k.to_string(), reason: e.to_string() }).collect();
        (set.rows(), rejected)
    };
    let mut csv = Vec::new();
    write_rows_csv(&mut csv, &rows)?;
    art.write("rows.csv", &csv)?;
    art.write_jsonl("rejected.jsonl", &rejected)?;
    let n_profiles = rows.iter().map(|r| &r.key).collect::<BTreeSet<_>>().len();
    art.finish(cfg)?;
    Ok(format!("ingested {n_profiles} profiles ({} rows, {} rejected)", rows.len(), rejected.len()))
}

#[derive(Serialize)]
struct Rejection {
    profile: String,
    reason: String,
}

pub fn train(cfg: &RunConfig) -> Result<String, CliError> {
    let name = cfg.model.name();
    let mut art = ArtifactSet::new(&cfg.paths.out, format!("train_{name}"))?;
    let rows = load_rows(&mut art, cfg)?;
    let prep = Prepared::fit(&rows, cfg)?;
    let (x, y) = prep.part(&prep.train);
    let (model, trace) = match cfg.model {
        ModelChoice::Rf => (RegressorModel::Forest(rf_fit(&x, &y, &cfg.rf)?), Vec::new()),
        ModelChoice::Gbm => {
            let (m, trace) = gbm_fit_traced(&x, &y, &cfg.gbm)?;
            (RegressorModel::Boosted(m), trace)
        }
        ModelChoice::Mlp => {
            let mut layout = vec![x.n_cols()];
            layout.extend(&cfg.mlp.hidden);
            layout.push(1);
            let init = MlpModel::init(&layout, cfg.mlp.dropout, cfg.seed)?;
            let tc = MlpTrainConfig {
                epochs: cfg.mlp.epochs,
                batch_size: cfg.mlp.batch_size,
                learning_rate: cfg.mlp.learning_rate,
                momentum: cfg.mlp.momentum,
                seed: cfg.seed,
            };
            let (m, trace) = mlp_train(&init, &x, &y, &tc)?;
            (RegressorModel::Mlp(m), trace)
        }
    };
    let mut doc = model.to_json()?;
    doc.push('\n');
    art.write(&format!("model_{name}.json"), doc.as_bytes())?;
    art.write_json("split.json", &prep.plan)?;
    art.write_json("scaler.json", &prep.scaler)?;
    if !trace.is_empty() {
        let rows: Vec<Vec<String>> = trace.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), num(*v)]).collect();
        art.write_csv(&format!("trace_{name}.csv"), &["step", "train_mse"], &rows)?;
    }
    art.finish(cfg)?;
    Ok(format!("trained {} on {} rows ({} train profiles)", model.kind(), y.len(), prep.plan.train.len()))
}

/// One line of `metrics_<model>.jsonl`, in °C.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub split: String,
    pub n: usize,
    pub rmse_c: f64,
    pub mae_c: f64,
    pub r2: Option<f64>,
}

impl MetricRecord {
    fn new(model: &str, split: &str, n: usize, m: MetricSet) -> Self {
        Self { model: model.into(), split: split.into(), n, rmse_c: m.rmse, mae_c: m.mae, r2: m.r2 }
    }
}

const PREDICTION_HEADER: [&str; 6] = ["reservoir_id", "date", "site_id", "depth_m", "observed_c", "predicted_c"];

pub fn evaluate(cfg: &RunConfig) -> Result<String, CliError> {
    let name = cfg.model.name();
    let mut art = ArtifactSet::new(&cfg.paths.out, format!("evaluate_{name}"))?;
    let model = load_model(&mut art, cfg)?;
    let (rows, prep) = load_prepared(&mut art, cfg)?;
    let celsius = |idx: &[usize]| -> Result<(Vec<f64>, Vec<f64>), CliError> {
        let mut obs = Vec::with_capacity(idx.len());
        let mut pred = Vec::with_capacity(idx.len());
        for &i in idx {
            obs.push(rows[i].temp_c);
            pred.push(prep.scaler.invert_target(model.predict(prep.x.row(i))?));
        }
        Ok((obs, pred))
    };
    let (tr_obs, tr_pred) = celsius(&prep.train)?;
    let (obs, pred) = celsius(&prep.test)?;
    let test = metrics(&obs, &pred)?;
    let records = [
        MetricRecord::new(name, "train", tr_obs.len(), metrics(&tr_obs, &tr_pred)?),
        MetricRecord::new(name, "test", obs.len(), test),
    ];
    art.write_jsonl(&format!("metrics_{name}.jsonl"), &records)?;

    let pred_rows: Vec<Vec<String>> = prep
        .test
        .iter()
        .zip(&pred)
        .map(|(&i, p)| {
            let r = &rows[i];
            let depth = r.raw.get(FeatureId::DepthMeasure).map(num).unwrap_or_default();
            vec![r.key.reservoir_id.clone(), r.key.date.to_string(), r.key.site_id.clone(), depth, num(r.temp_c), num(*p)]
        })
        .collect();
    art.write_csv(&format!("predictions_{name}.csv"), &PREDICTION_HEADER, &pred_rows)?;

    let scatter: Vec<Vec<String>> =
        scatter_rows(&obs, &pred)?.iter().map(|s| vec![num(s.observed), num(s.predicted), num(s.lower), num(s.upper)]).collect();
    art.write_csv(&format!("scatter_{name}.csv"), &["observed_c", "predicted_c", "lower_10pct_c", "upper_10pct_c"], &scatter)?;

    let qq: Vec<Vec<String>> = quantile_compare(&obs, &pred, cfg.quantiles)?
        .iter()
        .map(|q| vec![num(q.probability), num(q.observed), num(q.predicted)])
        .collect();
    art.write_csv(&format!("qq_{name}.csv"), &["probability", "observed_c", "predicted_c"], &qq)?;

    let groups: Vec<String> = prep.test.iter().map(|&i| rows[i].key.reservoir_id.clone()).collect();
    let table = per_group_metrics(&groups, &obs, &[(name.to_string(), pred.clone())])?;
    art.write_csv(&format!("groups_{name}.csv"), &GROUP_HEADER, &group_rows(&table))?;
    art.finish(cfg)?;
    let r2 = test.r2.map(|v| format!("{v:.4}")).unwrap_or("undefined".into());
    Ok(format!("{name} test: rmse {:.3} C, mae {:.3} C, r2 {r2}", test.rmse, test.mae))
}

const GROUP_HEADER: [&str; 8] = ["reservoir_id", "model", "n", "rmse_c", "mae_c", "r2", "best_r2", "best_rmse"];

fn group_rows(table: &[rwtkan::metrics::GroupMetrics]) -> Vec<Vec<String>> {
    table
        .iter()
        .map(|g| {
            vec![
                g.group.clone(),
                g.model.clone(),
                g.n.to_string(),
                num(g.metrics.rmse),
                num(g.metrics.mae),
                opt_num(g.metrics.r2),
                g.best_r2.to_string(),
                g.best_rmse.to_string(),
            ]
        })
        .collect()
}

/// `m` indices spread evenly over `0..n`, in order.
fn spread(n: usize, m: usize) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    (0..m).map(|k| k * n / m).collect()
}

pub fn explain(cfg: &RunConfig) -> Result<String, CliError> {
    let name = cfg.model.name();
    let mut art = ArtifactSet::new(&cfg.paths.out, format!("explain_{name}"))?;
    let model = load_model(&mut art, cfg)?;
    let (rows, prep) = load_prepared(&mut art, cfg)?;
    let (train_x, _) = prep.part(&prep.train);
    let bg = BackgroundSet::subsample(&train_x, cfg.shap_background, cfg.seed)?;
    let picks: Vec<usize> = spread(prep.test.len(), cfg.shap_instances).into_iter().map(|k| prep.test[k]).collect();
    if picks.is_empty() {
        return Err(CliError::runtime("EmptyData", "the test split has no rows to explain"));
    }
    let explanations: Vec<ShapExplanation> = picks
        .iter()
        .map(|&i| {
            let r = &rows[i];
            let depth = r.raw.get(FeatureId::DepthMeasure).unwrap_or(f64::NAN);
            Ok(shap_exact(&model, prep.x.row(i), &bg, format!("{}@{depth}", r.key))?)
        })
        .collect::<Result<_, CliError>>()?;
    let worst = explanations.iter().map(ShapExplanation::efficiency_gap).fold(0.0, f64::max);
    art.write_jsonl(&format!("shap_{name}.jsonl"), &explanations)?;

    let names = feature_names();
    let global: Vec<Vec<String>> = shap_global(&explanations)?
        .iter()
        .enumerate()
        .map(|(rank, g)| vec![(rank + 1).to_string(), names[g.feature].clone(), num(g.mean_abs), opt_num(g.percent)])
        .collect();
    art.write_csv(&format!("shap_global_{name}.csv"), &["rank", "feature", "mean_abs_shap", "percent"], &global)?;
    art.write(&format!("shap_summary_{name}.csv"), shap_export(&explanations, &names, ExportMode::Summary)?.as_bytes())?;
    art.write(&format!("shap_heatmap_{name}.csv"), shap_export(&explanations, &names, ExportMode::Heatmap)?.as_bytes())?;
    art.finish(cfg)?;
    Ok(format!("explained {} instances against {} background rows; largest efficiency gap {worst:.1e}", explanations.len(), bg.len()))
}

pub fn kan_run(cfg: &RunConfig) -> Result<String, CliError> {
    let regime = cfg.kan.regime.name();
    let mut art = ArtifactSet::new(&cfg.paths.out, format!("kan_{regime}"))?;
    let rows = load_rows(&mut art, cfg)?;
    let prep = Prepared::fit(&rows, cfg)?;
    let data = ExperimentData::from_rows(&rows, &prep.plan, &prep.scaler)?;
    let ecfg = ExperimentConfig {
        regime: cfg.kan.regime,
        grid: cfg.kan.grid,
        train: cfg.kan.train.clone(),
        snap_rows: 1000,
        snap: cfg.kan.snap,
        restarts: cfg.kan.restarts,
    };
    let records = incremental_experiment(&data, &cfg.kan.ordering, &cfg.kan.seeds, &ecfg)?;
    art.write_jsonl(&format!("kan_{regime}.jsonl"), &records)?;
    let names = feature_names();
    let curve: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.n_inputs.to_string(),
                names[cfg.kan.ordering[r.n_inputs - 1]].clone(),
                num(r.r2_train),
                num(r.r2_test),
                opt_num(r.r2_test_snapped),
                r.expression_text.clone(),
            ]
        })
        .collect();
    art.write_csv(
        &format!("r2_vs_inputs_{regime}.csv"),
        &["seed", "n_inputs", "added_feature", "r2_train", "r2_test", "r2_test_snapped", "expression"],
        &curve,
    )?;
    art.finish(cfg)?;
    let last = records.iter().filter(|r| r.n_inputs == cfg.kan.ordering.len()).map(|r| r.r2_test).sum::<f64>() / cfg.kan.seeds.len() as f64;
    Ok(format!("{} {regime} KAN fits; mean test r2 with all {} inputs {last:.4}", records.len(), cfg.kan.ordering.len()))
}

#[derive(Debug, Deserialize)]
struct CurveRow {
    n_inputs: usize,
    added_feature: String,
    r2_test: f64,
}

#[derive(Debug, Deserialize)]
struct GlobalRow {
    feature: String,
    percent: Option<f64>,
}

fn read_csv_rows<T: for<'de> Deserialize<'de>>(art: &mut ArtifactSet, path: &Path) -> Result<Vec<T>, CliError> {
    let bytes = art.read(path)?;
    csv::Reader::from_reader(&bytes[..]).deserialize().map(|r| r.map_err(CliError::from)).collect()
}

pub fn report(cfg: &RunConfig) -> Result<String, CliError> {
    let out = cfg.paths.out.clone();
    let mut art = ArtifactSet::new(&out, "report")?;
    let models: Vec<ModelChoice> = ModelChoice::ALL.into_iter().filter(|m| out.join(format!("metrics_{}.jsonl", m.name())).exists()).collect();
    let mut md = String::from("# Reservoir water temperature report\n\n");
    let mut notes: Vec<String> = Vec::new();
    let mut note = |text: String| {
        notes.push(format!("{text} ({})", reference::REFERENCE_LABEL));
        notes.len()
    };

    if !models.is_empty() {
        md.push_str("## Test performance\n\n| model | split | n | RMSE (°C) | MAE (°C) | R² |\n|---|---|---|---|---|---|\n");
        for m in &models {
            let text = art.read_text(&out.join(format!("metrics_{}.jsonl", m.name())))?;
            for line in text.lines() {
                let r: MetricRecord = serde_json::from_str(line)?;
                md.push_str(&format!("| {} | {} | {} | {:.3} | {:.3} | {} |\n", r.model, r.split, r.n, r.rmse_c, r.mae_c, r.r2.map(|v| format!("{v:.4}")).unwrap_or("undefined".into())));
            }
        }
        let (bm, r2, rmse) = reference::BEST_MODEL;
        let k = note(format!("best published model {bm}: test R² {r2}, RMSE {rmse} °C"));
        md.push_str(&format!("\nReference: see note [{k}].\n\n"));

        // per-reservoir table across models; prediction files share the test split order
        let mut groups: Option<Vec<String>> = None;
        let mut truth: Vec<f64> = Vec::new();
        let mut preds: Vec<(String, Vec<f64>)> = Vec::new();
        for m in &models {
            let bytes = art.read(&out.join(format!("predictions_{}.csv", m.name())))?;
            let mut reader = csv::Reader::from_reader(&bytes[..]);
            let (mut g, mut t, mut p) = (Vec::new(), Vec::new(), Vec::new());
            for rec in reader.records() {
                let rec = rec?;
                let field = |i: usize| rec.get(i).unwrap_or("").to_string();
                let parse = |i: usize| field(i).parse::<f64>().map_err(|e| CliError::runtime("SchemaMismatch", format!("predictions_{}.csv: {e}", m.name())));
                g.push(format!("{}|{}|{}|{}", field(0), field(1), field(2), field(3)));
                t.push(parse(4)?);
                p.push(parse(5)?);
            }
            match &groups {
                Some(prev) if *prev != g => {
                    return Err(CliError::runtime("SchemaMismatch", "prediction files cover different test rows; retrain on one split"))
                }
                Some(_) => {}
                None => {
                    groups = Some(g);
                    truth = t;
                }
            }
            preds.push((m.name().to_string(), p));
        }
        let ids: Vec<String> = groups.unwrap_or_default().iter().map(|k| k.split('|').next().unwrap_or("").to_string()).collect();
        let table = per_group_metrics(&ids, &truth, &preds)?;
        art.write_csv("groups.csv", &GROUP_HEADER, &group_rows(&table))?;
        md.push_str("## Per-reservoir test metrics\n\nBest values per reservoir are in bold (ties share the mark).\n\n| reservoir | model | n | R² | RMSE (°C) |\n|---|---|---|---|---|\n");
        for g in &table {
            let r2 = g.metrics.r2.map(|v| format!("{v:.3}")).unwrap_or("undefined".into());
            let bold = |s: String, b: bool| if b { format!("**{s}**") } else { s };
            md.push_str(&format!("| {} | {} | {} | {} | {} |\n", g.group, g.model, g.n, bold(r2, g.best_r2), bold(format!("{:.3}", g.metrics.rmse), g.best_rmse)));
        }
        let mut lines = Vec::new();
        for (res, vals) in reference::PER_RESERVOIR {
            let cells: Vec<String> = models
                .iter()
                .filter_map(|m| reference::model_column(m.name()).map(|c| format!("{} R² {} / RMSE {}", m.name(), vals[c].0, vals[c].1)))
                .collect();
            lines.push(format!("{res}: {}", cells.join("; ")));
        }
        let k = note(format!("per-reservoir test metrics: {}", lines.join(" | ")));
        md.push_str(&format!("\nReference: see note [{k}].\n\n"));
    }

    let shap: Vec<ModelChoice> = ModelChoice::ALL.into_iter().filter(|m| out.join(format!("shap_global_{}.csv", m.name())).exists()).collect();
    if !shap.is_empty() {
        md.push_str("## Global Shapley contributions (%)\n\n| feature |");
        for m in &shap {
            md.push_str(&format!(" {} |", m.name()));
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(shap.len()));
        md.push('\n');
        let mut tables = Vec::new();
        for m in &shap {
            tables.push(read_csv_rows::<GlobalRow>(&mut art, &out.join(format!("shap_global_{}.csv", m.name())))?);
        }
        for f in feature_names() {
            md.push_str(&format!("| {f} |"));
            for t in &tables {
                let v = t.iter().find(|g| g.feature == f).and_then(|g| g.percent);
                md.push_str(&format!(" {} |", v.map(|p| format!("{p:.2}")).unwrap_or("-".into())));
            }
            md.push('\n');
        }
        let cells: Vec<String> = reference::SHAP_PERCENT
            .iter()
            .map(|(f, v)| {
                let per: Vec<String> = shap.iter().filter_map(|m| reference::model_column(m.name()).map(|c| format!("{} {}", m.name(), v[c]))).collect();
                format!("{f}: {}", per.join(", "))
            })
            .collect();
        let k = note(format!("global Shapley shares (%): {}", cells.join(" | ")));
        md.push_str(&format!("\nReference: see note [{k}].\n\n"));
    }

    let bank = EquationBank::load()?;
    for set in [EqSet::Simple, EqSet::Complex] {
        let path = out.join(format!("r2_vs_inputs_{set}.csv"));
        if !path.exists() {
            continue;
        }
        let curve: Vec<CurveRow> = read_csv_rows(&mut art, &path)?;
        md.push_str(&format!("## KAN test R² by number of inputs ({set})\n\n| inputs | added feature | mean test R² | fits |\n|---|---|---|---|\n"));
        let max_k = curve.iter().map(|r| r.n_inputs).max().unwrap_or(0);
        for k in 1..=max_k {
            let at: Vec<&CurveRow> = curve.iter().filter(|r| r.n_inputs == k).collect();
            let mean = at.iter().map(|r| r.r2_test).sum::<f64>() / at.len().max(1) as f64;
            let feature = at.first().map(|r| r.added_feature.as_str()).unwrap_or("");
            md.push_str(&format!("| {k} | {feature} | {mean:.4} | {} |\n", at.len()));
        }
        let published: Vec<String> = bank.entries().iter().filter(|e| e.set == set).map(|e| format!("{} inputs {}", e.n_inputs, e.r2_text)).collect();
        let k = note(format!("{set} KAN test R²: {}", published.join(", ")));
        md.push_str(&format!("\nReference: see note [{k}].\n\n"));
    }

    if !notes.is_empty() {
        md.push_str("## Notes\n\n");
        for (i, n) in notes.iter().enumerate() {
            md.push_str(&format!("{}. {n}\n", i + 1));
        }
    }
    art.write("report.md", md.as_bytes())?;
    art.finish(cfg)?;
    Ok(format!("report for {} model(s) written to {}", models.len(), out.join("report.md").display()))
}

/// Values for `x1..xn` in order; every variable the entry uses must be set.
pub fn eq_eval(set: &str, inputs: usize, values: &[Option<f64>]) -> Result<String, CliError> {
    let set: EqSet = set.parse().map_err(|_| CliError::usage(format!("unknown equation set '{set}' (expected simple or complex)")))?;
    let entry = bank_lookup(set, inputs)?;
    let mut x = vec![f64::NAN; inputs];
    for (i, slot) in x.iter_mut().enumerate() {
        *slot = values.get(i).copied().flatten().ok_or(rwtkan::Error::UnboundVariable(i + 1))?;
    }
    let e = entry.expression.eval_checked(&x)?;
    let mut text = format_value(e.value);
    if e.out_of_domain {
        text.push_str("\nwarning: inputs outside [0,1]; the equation is only valid on the training range");
    }
    Ok(text)
}

/// Twelve significant digits with trailing zeros removed, so values such as
/// `0.85 * 0.5 + 0.04` print as `0.465`.
pub fn format_value(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let digits = (11 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{v:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn eq_show(set: &str, inputs: usize) -> Result<String, CliError> {
    let set: EqSet = set.parse().map_err(|_| CliError::usage(format!("unknown equation set '{set}' (expected simple or complex)")))?;
    let e = bank_lookup(set, inputs)?;
    let vars: Vec<String> = (1..=inputs).map(|i| format!("x{i} = {}", FeatureId::ALL[i - 1].name())).collect();
    Ok(format!(
        "{}\npublished test R2 {} ({}; {})\nvariables: {}",
        e.expression,
        e.r2_text,
        e.anchor(),
        reference::REFERENCE_LABEL,
        vars.join(", ")
    ))
}

pub fn eq_list() -> Result<String, CliError> {
    let bank = EquationBank::load()?;
    Ok(bank.entries().iter().map(|e| format!("{},{},{},{}", e.set, e.n_inputs, e.r2_text, e.expression)).collect::<Vec<_>>().join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_print_compactly() {
        assert_eq!(format_value(0.85 * 0.5 + 0.04), "0.465");
        assert_eq!(format_value(-0.018421052631578946), "-0.0184210526316");
        assert_eq!(format_value(1234.5), "1234.5");
        assert_eq!(format_value(0.0), "0");
    }

    #[test]
    fn spread_picks_evenly() {
        assert_eq!(spread(10, 3), vec![0, 3, 6]);
        assert_eq!(spread(2, 5), vec![0, 1]);
    }
}
