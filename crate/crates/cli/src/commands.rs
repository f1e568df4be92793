use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use minmin_core::data::{parse_label_ranking_csv, parse_libsvm_multilabel, Dataset, LabelRankingOptions, LibsvmOptions};
use minmin_core::evaluation::{evaluate, micro_f1, metric_name, tau_vs_oracle, write_pairs_csv};
use minmin_core::inference::{predict, ModeSolverConfig};
use minmin_core::losses::PriorSampling;
use minmin_core::spaces::SpaceKind;
use minmin_core::training::{
    exact_objective_available, expand_grid, grid_search, train_with_eval, write_metrics_csv, MetricsRow, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::config::{prepare, LoadedConfig, Prepared};
use crate::CliError;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONVERGENCE_FILE: &str = "convergence.csv";
pub const TAUDIAG_FILE: &str = "taudiag.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_loss: Option<f64>,
    pub test_metric: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Train as configured; writes metrics, checkpoint and summary into the
/// output directory and returns the summary.
pub fn cmd_train(config_path: &Path) -> Result<Summary, CliError> {
    let cfg = LoadedConfig::load(config_path)?;
    let data = prepare(&cfg)?;
    let out_dir = cfg.output_dir();
    fs::create_dir_all(&out_dir)?;
    let tc = &cfg.config.train;

    let outcome = match &cfg.config.grid {
        Some(grid) => {
            if data.val.is_empty() {
                return Err(CliError::Config("grid: needs a nonempty validation split".into()));
            }
            let configs = expand_grid(tc, &grid.lr, &grid.l2);
            grid_search(&configs, &data.train, &data.val)?.refit
        }
        None => {
            let eval = (!data.val.is_empty()).then_some(&data.val);
            train_with_eval(tc, &data.train, eval)?
        }
    };

    write_metrics_csv(create(&out_dir.join(METRICS_FILE))?, &outcome.log)?;
    let test_metric = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.model, &data.test, &tc.mode_solver)?.value)
    };
    let bundle = ModelBundle {
        model: outcome.model,
        tau: outcome.tau,
        standardizer: data.standardizer.clone(),
        loss: tc.loss,
        config_hash: cfg.hash.clone(),
    };
    bundle.save(&out_dir.join(CHECKPOINT_FILE))?;
    let summary = Summary {
        final_loss: outcome.log.last().map(|r| r.loss),
        test_metric,
        seed: tc.seed,
        config_hash: cfg.hash.clone(),
    };
    let mut w = create(&out_dir.join(SUMMARY_FILE))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    writeln!(w)?;
    w.flush()?;
    Ok(summary)
}

/// Where `eval` and `taudiag` read examples from.
#[derive(Clone, Debug)]
pub enum DataArg {
    /// A dataset file; `.csv` is read as label rankings, anything else as libsvm.
    File(PathBuf),
    /// The test split of an experiment configuration.
    ConfigTestSplit(PathBuf),
}

fn load_eval_data(arg: &DataArg, bundle: &ModelBundle) -> Result<Dataset, CliError> {
    let space = bundle.model.space;
    let data = match arg {
        DataArg::ConfigTestSplit(p) => {
            let cfg = LoadedConfig::load(p)?;
            let Prepared { test, .. } = prepare(&cfg)?;
            // prepare() already standardized with the same training statistics
            return check_compatible(test, bundle);
        }
        DataArg::File(p) => {
            let is_csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            match (space.kind, is_csv) {
                (SpaceKind::BinaryVectors, false) => parse_libsvm_multilabel(
                    p,
                    &LibsvmOptions {
                        num_labels: Some(space.k),
                        num_features: Some(bundle.model.h.spec.input_dim),
                        zero_based_labels: false,
                    },
                )?,
                (SpaceKind::BinaryVectors, true) => {
                    return Err(CliError::Config("checkpoint predicts label sets; expected a libsvm dataset".into()))
                }
                (_, true) => parse_label_ranking_csv(
                    p,
                    &LabelRankingOptions {
                        num_labels: Some(space.k),
                        as_matrices: space.kind == SpaceKind::PermutationMatrices,
                    },
                )?,
                (_, false) => {
                    return Err(CliError::Config("checkpoint predicts rankings; expected a .csv dataset".into()))
                }
            }
        }
    };
    let data = match &bundle.standardizer {
        Some(st) if st.mean.len() == data.dim() => st.apply_dataset(&data),
        Some(st) if !data.is_empty() => {
            return Err(CliError::Config(format!(
                "dataset has {} features, checkpoint expects {}",
                data.dim(),
                st.mean.len()
            )))
        }
        _ => data,
    };
    check_compatible(data, bundle)
}

fn check_compatible(data: Dataset, bundle: &ModelBundle) -> Result<Dataset, CliError> {
    if data.space != bundle.model.space {
        return Err(CliError::Config(format!(
            "dataset space {:?} does not match checkpoint space {:?}",
            data.space, bundle.model.space
        )));
    }
    if !data.is_empty() && data.dim() != bundle.model.h.spec.input_dim {
        return Err(CliError::Config(format!(
            "dataset has {} features, checkpoint expects {}",
            data.dim(),
            bundle.model.h.spec.input_dim
        )));
    }
    Ok(data)
}

/// Score a checkpoint on a dataset. `metric` defaults to the task metric;
/// `micro_f1` is also available for label sets. With `out`, per-example
/// scores are written as `index,value`.
pub fn cmd_eval(checkpoint: &Path, data: &DataArg, metric: Option<&str>, out: Option<&Path>) -> Result<f64, CliError> {
    let bundle = ModelBundle::load(checkpoint)?;
    let data = load_eval_data(data, &bundle)?;
    let kind = bundle.model.space.kind;
    let default = metric_name(kind);
    let metric = metric.unwrap_or(default);
    let solver = ModeSolverConfig::default();
    let (value, per_example) = match metric {
        m if m == default => {
            let r = evaluate(&bundle.model, &data, &solver)?;
            (r.value, r.per_example)
        }
        "micro_f1" if kind == SpaceKind::BinaryVectors => {
            let preds = data
                .xs
                .iter()
                .map(|x| predict(&bundle.model, x, &solver).map(|p| p.0))
                .collect::<Result<Vec<_>, _>>()?;
            let truth: Vec<Vec<f64>> = data.ys.iter().map(|y| y.0.clone()).collect();
            (micro_f1(&truth, &preds)?, None)
        }
        other => {
            return Err(CliError::Config(format!(
                "metric {other:?} is not available for {kind:?} outputs"
            )))
        }
    };
    if let Some(path) = out {
        let per = per_example.ok_or_else(|| CliError::Config(format!("{metric} has no per-example values")))?;
        let mut w = create(path)?;
        writeln!(w, "index,value")?;
        for (i, v) in per.iter().enumerate() {
            writeln!(w, "{i},{v}")?;
        }
        w.flush()?;
    }
    println!("{metric} {value}");
    Ok(value)
}

fn bprime_label(p: PriorSampling) -> String {
    match p {
        PriorSampling::Sampled(n) => format!("bp{n}"),
        PriorSampling::Exhaustive => "exhaustive".into(),
    }
}

/// Header of the convergence CSV: `step` then a sampled and an exact
/// objective column per prior-sample setting.
pub fn convergence_header(list: &[PriorSampling]) -> String {
    let mut cols = vec!["step".to_string()];
    for &p in list {
        let l = bprime_label(p);
        cols.push(format!("loss_{l}"));
        cols.push(format!("exact_{l}"));
    }
    cols.join(",")
}

/// Train once per configured `B'`, logging the sampled and the exact
/// objective at every evaluation step. Returns the CSV path.
pub fn cmd_convergence(config_path: &Path, out: Option<&Path>) -> Result<PathBuf, CliError> {
    let cfg = LoadedConfig::load(config_path)?;
    let list = cfg
        .config
        .convergence
        .as_ref()
        .map(|c| c.bprime.clone())
        .unwrap_or_default();
    if list.is_empty() {
        return Err(CliError::Config("convergence.bprime: list is empty".into()));
    }
    let data = prepare(&cfg)?;
    let base = &cfg.config.train;
    if !exact_objective_available(&data.train, base) {
        return Err(CliError::Config(
            "convergence: the exact objective is unavailable for this model (needs a unary model or a small space)".into(),
        ));
    }
    let mut logs: Vec<Vec<MetricsRow>> = Vec::with_capacity(list.len());
    for &prior in &list {
        let tc = TrainConfig {
            prior,
            ..base.clone()
        };
        logs.push(train_with_eval(&tc, &data.train, None)?.log);
    }
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => cfg.output_dir().join(CONVERGENCE_FILE),
    };
    let mut w = create(&path)?;
    writeln!(w, "{}", convergence_header(&list))?;
    let rows = logs.iter().map(Vec::len).min().unwrap_or(0);
    for r in 0..rows {
        let mut line = logs[0][r].step.to_string();
        for log in &logs {
            let row = &log[r];
            line.push_str(&format!(",{},{}", row.loss, row.exact_loss.map(|v| v.to_string()).unwrap_or_default()));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(path)
}

/// Compare the learned log-partition with the exact one on held-out inputs.
/// Returns the Pearson correlation (`None` when a series is constant).
pub fn cmd_taudiag(checkpoint: &Path, data_arg: &DataArg, out: Option<&Path>) -> Result<Option<f64>, CliError> {
    let bundle = ModelBundle::load(checkpoint)?;
    if !bundle.model.is_unary() {
        return Err(CliError::Config("taudiag needs a unary model (closed-form log-partition)".into()));
    }
    let tau = bundle
        .tau
        .as_ref()
        .ok_or_else(|| CliError::Config("checkpoint has no log-partition network".into()))?;
    let data = load_eval_data(data_arg, &bundle)?;
    let diag = tau_vs_oracle(tau, &bundle.model, &data.xs)?;
    let path = match (out, data_arg) {
        (Some(p), _) => p.to_path_buf(),
        (None, DataArg::ConfigTestSplit(c)) => LoadedConfig::load(c)?.output_dir().join(TAUDIAG_FILE),
        (None, DataArg::File(_)) => PathBuf::from(TAUDIAG_FILE),
    };
    let mut w = create(&path)?;
    write_pairs_csv(&mut w, &diag.pairs)?;
    w.flush()?;
    match diag.pearson {
        Some(r) => println!("pearson {r}"),
        None => println!("pearson NaN (constant series)"),
    }
    Ok(diag.pearson)
}
