use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use mpenssar::io::{fmt_f64, write_matrix_csv, DataBundle};
use mpenssar::protocol::rmse;
use mpenssar::selection::{evaluate_bound, misselection_bound, theory_constants, TheoryInputs, DEFAULT_TAIL_TERMS};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{ConstantsArgs, EvaluateArgs, PredictArgs};
use crate::error::{CliError, Result};
use crate::fit::{FitRun, PREDICTIONS_FILE};
use crate::manifest::{read_text, write_text, Run};
use crate::simulate::read_truth;

fn label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let fit = FitRun::load(&args.fit)?;
    let data = args.data.clone().unwrap_or_else(|| fit.config.data.clone());
    let config = json!({ "fit": args.fit, "data": data });
    let mut run = Run::start(&args.out, "predict", config, BTreeMap::from([("split".to_string(), fit.config.seed)]))?;
    let outcome = (|| {
        let bundle = DataBundle::read(&data)?;
        let pred = fit.predict(&bundle)?;
        write_matrix_csv(&run.artifact(PREDICTIONS_FILE), &fit.test_ids(&bundle), "y", &pred)?;
        Ok(())
    })();
    run.finish(outcome)
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let fits = args.fit.iter().map(|d| FitRun::load(d)).collect::<Result<Vec<_>>>()?;
    let data = args.data.clone().unwrap_or_else(|| fits[0].config.data.clone());
    let config = json!({ "fit": args.fit, "data": data, "per_column_only": args.per_column_only });
    let seeds = fits
        .iter()
        .map(|f| (format!("split:{}", label(&f.dir)), f.config.seed))
        .collect();
    let mut run = Run::start(&args.out, "evaluate", config, seeds)?;
    let outcome = evaluate_into(&mut run, args, &fits, &data);
    run.finish(outcome)
}

fn evaluate_into(run: &mut Run, args: &EvaluateArgs, fits: &[FitRun], data: &Path) -> Result<()> {
    let bundle = DataBundle::read(data)?;
    let truth = read_truth(data)?;
    let mut metrics = String::from("fit,method,target,rmse\n");
    let mut summary = Vec::new();
    for fit in fits {
        let pred = fit.predict(&bundle)?;
        let y_test = bundle.y.select_rows(&fit.split.test);
        let rep = rmse(&pred, &y_test);
        let (name, method) = (label(&fit.dir), format!("{:?}", fit.method()).to_lowercase());
        for (j, v) in rep.per_column.iter().enumerate() {
            writeln!(metrics, "{name},{method},y{},{}", j + 1, fmt_f64(*v)).unwrap();
        }
        if !args.per_column_only {
            writeln!(metrics, "{name},{method},pooled,{}", fmt_f64(rep.pooled)).unwrap();
        }
        summary.push(json!({ "fit": name, "method": method, "rmse": rep }));
    }
    write_text(&run.artifact("metrics.csv"), &metrics)?;
    if let Some(truth) = truth {
        let r_true = truth.r_matrix()?;
        let mut entries = String::from("fit,method,row,col,r_hat,r_true,abs_error\n");
        let mut errs = String::from("fit,method,diagonal_mae,offdiagonal_mae\n");
        for fit in fits {
            let (r_hat, full) = fit.r_hat();
            if r_hat.shape() != r_true.shape() {
                return Err(CliError::Config(format!(
                    "R estimate is {:?}, truth is {:?}",
                    r_hat.shape(),
                    r_true.shape()
                )));
            }
            let (name, method) = (label(&fit.dir), format!("{:?}", fit.method()).to_lowercase());
            let q = r_true.nrows();
            let (mut diag, mut off) = (0.0, 0.0);
            for i in 0..q {
                for j in 0..q {
                    if i != j && !full {
                        continue;
                    }
                    let e = (r_hat[(i, j)] - r_true[(i, j)]).abs();
                    if i == j {
                        diag += e;
                    } else {
                        off += e;
                    }
                    writeln!(
                        entries,
                        "{name},{method},{},{},{},{},{}",
                        i + 1,
                        j + 1,
                        fmt_f64(r_hat[(i, j)]),
                        fmt_f64(r_true[(i, j)]),
                        fmt_f64(e)
                    )
                    .unwrap();
                }
            }
            let off = if full && q > 1 { fmt_f64(off / (q * q - q) as f64) } else { String::new() };
            writeln!(errs, "{name},{method},{},{off}", fmt_f64(diag / q as f64)).unwrap();
        }
        write_text(&run.artifact("r_errors.csv"), &entries)?;
        write_text(&run.artifact("r_summary.csv"), &errs)?;
    }
    run.set_results(json!(summary));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ConstantsFile {
    #[serde(flatten)]
    inputs: TheoryInputs,
    n: Option<f64>,
    tail_terms: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ConstantsOut {
    pub K: f64,
    pub K1: f64,
    pub K2: f64,
    pub K3: f64,
    pub K4: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BoundOut {
    pub n: f64,
    pub tail_terms: usize,
    /// Whether `n` clears `max(n1, n3)`.
    pub valid: bool,
    pub raw: f64,
    pub clamped: f64,
    pub remainder: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConstantsReport {
    pub inputs: TheoryInputs,
    pub constants: ConstantsOut,
    pub bound: Option<BoundOut>,
}

pub const CONSTANTS_FILE: &str = "constants.toml";

pub fn constants(args: &ConstantsArgs) -> Result<()> {
    let text = read_text(&args.config)?;
    let file: ConstantsFile =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let config = json!({ "inputs": file.inputs, "n": args.n.or(file.n), "tail_terms": file.tail_terms, "unchecked": args.unchecked });
    let mut run = Run::start(&args.out, "constants", config, BTreeMap::new())?;
    let outcome = (|| {
        let c = theory_constants(&file.inputs)?;
        let tail_terms = file.tail_terms.unwrap_or(DEFAULT_TAIL_TERMS);
        let bound = match args.n.or(file.n) {
            None => None,
            Some(n) => {
                let valid = n >= c.n1.max(c.n3);
                let b = if args.unchecked {
                    evaluate_bound(&c, n, tail_terms)
                } else {
                    misselection_bound(&c, n, tail_terms)?
                };
                Some(BoundOut {
                    n,
                    tail_terms,
                    valid,
                    raw: b.raw,
                    clamped: b.clamped,
                    remainder: b.remainder,
                })
            }
        };
        let report = ConstantsReport {
            inputs: c.inputs,
            constants: ConstantsOut {
                K: c.k,
                K1: c.k1,
                K2: c.k2,
                K3: c.k3,
                K4: c.k4,
                n1: c.n1,
                n2: c.n2,
                n3: c.n3,
            },
            bound,
        };
        let text = toml::to_string(&report).map_err(|e| CliError::Io(e.to_string()))?;
        write_text(&run.artifact(CONSTANTS_FILE), &text)
    })();
    run.finish(outcome)
}
