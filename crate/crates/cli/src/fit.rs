use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mpenssar::estimator::{predict_from_design, predict_projssar, MpenssarFit, ProjssarFit};
use mpenssar::io::{write_criterion_csv, write_matrix_csv, DataBundle};
use mpenssar::path::augment;
use mpenssar::protocol::{
    run_mpenssar, run_penssar, run_projssar, KpenChoice, Method, Prepared, ProtocolConfig, SplitData,
    DEFAULT_INERTIA_CAP, DEFAULT_LAMBDA_GRID,
};
use mpenssar::selection::DEFAULT_KAPPA;
use mpenssar::sig_matrix;
use mpenssar::spatial::{split_ordinary, split_spatial, SplitPlan, WeightSpec, DEFAULT_SPLIT_FRACTIONS};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{FitArgs, SplitArg, WeightsArg};
use crate::error::{io_err, CliError, Result};
use crate::manifest::{read_text, write_text, Run, RunManifest, Status};

pub const SPLIT_FILE: &str = "split.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SV_CLUSTERS: usize = 6;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitFile {
    method: Option<String>,
    split: Option<SplitArg>,
    seed: Option<u64>,
    m: Option<usize>,
    m_max: Option<usize>,
    lambda: Option<f64>,
    lambda_grid: Option<Vec<f64>>,
    kpen: Option<KpenValue>,
    kappa: Option<f64>,
    inertia_cap: Option<f64>,
    split_fractions: Option<[f64; 3]>,
    clusters: Option<usize>,
    weights: Option<WeightSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum KpenValue {
    Word(String),
    Number(f64),
}

fn parse_kpen(s: &str) -> Result<KpenChoice> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(KpenChoice::Auto);
    }
    s.parse::<f64>()
        .map(KpenChoice::Fixed)
        .map_err(|_| CliError::Config(format!("kpen: expected `auto` or a number, got `{s}`")))
}

/// Everything a fit run depends on, as stored in its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub data: PathBuf,
    pub method: Method,
    pub split: SplitArg,
    pub seed: u64,
    pub split_fractions: [f64; 3],
    pub clusters: usize,
    pub protocol: ProtocolConfig,
}

pub fn resolve(args: &FitArgs) -> Result<FitConfig> {
    let file: FitFile = match &args.config {
        Some(path) => toml::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => FitFile::default(),
    };
    let method = match args.method.as_deref().or(file.method.as_deref()) {
        Some(m) => m.parse::<Method>().map_err(|e| CliError::Config(format!("method: {e}")))?,
        None => Method::Mpenssar,
    };
    let kpen = match (&args.kpen, &file.kpen) {
        (Some(s), _) => parse_kpen(s)?,
        (None, Some(KpenValue::Word(s))) => parse_kpen(s)?,
        (None, Some(KpenValue::Number(v))) => KpenChoice::Fixed(*v),
        (None, None) => KpenChoice::Auto,
    };
    let mut weights = file.weights.unwrap_or_default();
    if args.weights.is_some() || args.neighbors.is_some() || args.no_normalize {
        let (kind_idw, k, normalize) = match weights {
            WeightSpec::Knn { k, normalize } => (false, k, normalize),
            WeightSpec::InverseDistance { min_neighbors, normalize } => (true, min_neighbors, normalize),
        };
        let idw = args.weights.map_or(kind_idw, |w| w == WeightsArg::Idw);
        let k = args.neighbors.unwrap_or(if idw && !kind_idw { 4 } else { k });
        let normalize = normalize && !args.no_normalize;
        weights = if idw {
            WeightSpec::InverseDistance { min_neighbors: k, normalize }
        } else {
            WeightSpec::Knn { k, normalize }
        };
    }
    let protocol = ProtocolConfig {
        lambda_grid: file.lambda_grid.unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec()),
        m_max: args.m_max.or(file.m_max),
        kappa: args.kappa.or(file.kappa).unwrap_or(DEFAULT_KAPPA),
        kpen,
        inertia_cap: file.inertia_cap.unwrap_or(DEFAULT_INERTIA_CAP),
        weights,
        fixed_m: args.m.or(file.m),
        fixed_lambda: args.lambda.or(file.lambda),
    };
    Ok(FitConfig {
        data: std::fs::canonicalize(&args.data).unwrap_or_else(|_| args.data.clone()),
        method,
        split: args.split.or(file.split).unwrap_or(SplitArg::Ov),
        seed: args.seed.or(file.seed).unwrap_or(0),
        split_fractions: file.split_fractions.unwrap_or(DEFAULT_SPLIT_FRACTIONS),
        clusters: file.clusters.unwrap_or(SV_CLUSTERS),
        protocol,
    })
}

pub fn make_split(cfg: &FitConfig, coords: &[[f64; 2]]) -> Result<SplitPlan> {
    Ok(match cfg.split {
        SplitArg::Ov => split_ordinary(coords.len(), cfg.split_fractions, cfg.seed)?,
        SplitArg::Sv => split_spatial(coords, cfg.clusters, cfg.seed)?,
    })
}

fn fit_file(j: usize) -> String {
    format!("fit_y{}.json", j + 1)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| io_err(path, e))
}

fn test_ids(bundle: &DataBundle, split: &SplitPlan) -> Vec<String> {
    split.test.iter().map(|&i| bundle.ids[i].clone()).collect()
}

pub fn run(args: &FitArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let config = serde_json::to_value(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let mut run = Run::start(&args.out, "fit", config, BTreeMap::from([("split".to_string(), cfg.seed)]))?;
    let outcome = fit_into(&mut run, &cfg);
    run.finish(outcome)
}

fn fit_into(run: &mut Run, cfg: &FitConfig) -> Result<()> {
    let bundle = DataBundle::read(&cfg.data)?;
    let split = make_split(cfg, &bundle.coords)?;
    write_json(&run.artifact(SPLIT_FILE), &split)?;
    let m_max = cfg.protocol.m_max.or(cfg.protocol.fixed_m);
    let prepared = Prepared::new(&bundle.paths, &bundle.coords, &bundle.y, m_max)?;
    let data = SplitData::new(&prepared, &split, &cfg.protocol.weights)?;
    let ids = test_ids(&bundle, &split);
    match cfg.method {
        Method::Mpenssar => {
            let out = run_mpenssar(&data, &cfg.protocol)?;
            write_text(&run.artifact("fit.json"), &(out.fit.to_json() + "\n"))?;
            if !out.criterion.is_empty() {
                write_criterion_csv(&run.artifact("criterion.csv"), &out.criterion)?;
            }
            write_json(&run.artifact("lambda_scores.json"), &out.scores)?;
            write_matrix_csv(&run.artifact(PREDICTIONS_FILE), &ids, "y", &out.pred_test)?;
            run.set_results(json!({
                "m": out.fit.m,
                "lambda": out.fit.lambda,
                "k_pen": out.k_pen,
                "validation_rmse": out.val_rmse,
                "test_rmse": out.test_rmse,
            }));
        }
        Method::Penssar => {
            let out = run_penssar(&data, &cfg.protocol)?;
            for (j, fit) in out.fits.iter().enumerate() {
                write_text(&run.artifact(fit_file(j)), &(fit.to_json() + "\n"))?;
            }
            write_matrix_csv(&run.artifact(PREDICTIONS_FILE), &ids, "y", &out.pred_test)?;
            run.set_results(json!({
                "m": out.fits.iter().map(|f| f.m).collect::<Vec<_>>(),
                "lambda": out.fits.iter().map(|f| f.lambda).collect::<Vec<_>>(),
                "validation_rmse": out.val_rmse,
                "test_rmse": out.test_rmse,
            }));
        }
        Method::Projssar => {
            let (out, fits) = run_projssar(&data, &cfg.protocol)?;
            for (j, fit) in fits.iter().enumerate() {
                write_json(&run.artifact(fit_file(j)), fit)?;
            }
            write_matrix_csv(&run.artifact(PREDICTIONS_FILE), &ids, "y", &out.pred_test)?;
            let components: Vec<_> = out
                .components
                .iter()
                .enumerate()
                .map(|(j, (k, k_max))| json!({ "response": j + 1, "components": k, "max_below_cap": k_max }))
                .collect();
            run.set_results(json!({
                "m": out.fits.iter().map(|f| f.m).collect::<Vec<_>>(),
                "components": components,
                "inertia_cap": cfg.protocol.inertia_cap,
                "validation_rmse": out.val_rmse,
                "test_rmse": out.test_rmse,
            }));
        }
    }
    Ok(())
}

pub enum Fitted {
    Joint(MpenssarFit),
    PerResponse(Vec<MpenssarFit>),
    Projected(Vec<ProjssarFit>),
}

/// A completed fit run read back from disk.
pub struct FitRun {
    pub dir: PathBuf,
    pub config: FitConfig,
    pub split: SplitPlan,
    pub fitted: Fitted,
}

impl FitRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::read(dir)?;
        if manifest.command != "fit" || manifest.status != Status::Completed {
            return Err(CliError::Config(format!("{} is not a completed fit run", dir.display())));
        }
        let config: FitConfig =
            serde_json::from_value(manifest.config).map_err(|e| io_err(&dir.join("manifest.json"), e))?;
        let split = read_json(&dir.join(SPLIT_FILE))?;
        let per_response = |dir: &Path| {
            let mut files = Vec::new();
            let mut j = 0;
            while dir.join(fit_file(j)).exists() {
                files.push(dir.join(fit_file(j)));
                j += 1;
            }
            files
        };
        let fitted = match config.method {
            Method::Mpenssar => Fitted::Joint(
                MpenssarFit::from_json(&read_text(&dir.join("fit.json"))?).map_err(|e| io_err(&dir.join("fit.json"), e))?,
            ),
            Method::Penssar => {
                Fitted::PerResponse(per_response(dir).iter().map(|f| read_json(f)).collect::<Result<_>>()?)
            }
            Method::Projssar => Fitted::Projected(per_response(dir).iter().map(|f| read_json(f)).collect::<Result<_>>()?),
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            split,
            fitted,
        })
    }

    pub fn q(&self) -> usize {
        match &self.fitted {
            Fitted::Joint(f) => f.q(),
            Fitted::PerResponse(f) => f.len(),
            Fitted::Projected(f) => f.len(),
        }
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    /// Spatial matrix estimate; per-response methods only fill the diagonal.
    pub fn r_hat(&self) -> (DMatrix<f64>, bool) {
        match &self.fitted {
            Fitted::Joint(f) => (f.r_hat.clone(), true),
            Fitted::PerResponse(f) => (DMatrix::from_diagonal(&f.iter().map(|f| f.r_hat[(0, 0)]).collect::<Vec<_>>().into()), false),
            Fitted::Projected(f) => (
                DMatrix::from_diagonal(&f.iter().map(|f| f.inner.r_hat[(0, 0)]).collect::<Vec<_>>().into()),
                false,
            ),
        }
    }

    /// Predictions for the split's test units, from training responses only.
    pub fn predict(&self, bundle: &DataBundle) -> Result<DMatrix<f64>> {
        if !self.split.is_partition(bundle.n()) {
            return Err(CliError::Config(format!(
                "split of {} units does not match a bundle of {} units",
                self.split.n(),
                bundle.n()
            )));
        }
        if self.q() != bundle.y.ncols() {
            return Err(CliError::Config(format!(
                "fit has {} responses, bundle has {}",
                self.q(),
                bundle.y.ncols()
            )));
        }
        let units: Vec<usize> = [self.split.train.as_slice(), &self.split.test].concat();
        let w = self.config.protocol.weights.build_subset(&bundle.coords, &units)?;
        let y_train = bundle.y.select_rows(&self.split.train);
        let test_paths: Vec<_> = self.split.test.iter().map(|&i| augment(&bundle.paths[i])).collect();
        let sig = |m: usize| sig_matrix(&test_paths, m);
        let n_test = self.split.test.len();
        Ok(match &self.fitted {
            Fitted::Joint(f) => predict_from_design(f, &sig(f.m)?, &w, &y_train)?,
            Fitted::PerResponse(fits) => {
                let mut out = DMatrix::zeros(n_test, fits.len());
                for (j, f) in fits.iter().enumerate() {
                    let p = predict_from_design(f, &sig(f.m)?, &w, &y_train.columns(j, 1).into_owned())?;
                    out.set_column(j, &p.column(0));
                }
                out
            }
            Fitted::Projected(fits) => {
                let mut out = DMatrix::zeros(n_test, fits.len());
                for (j, f) in fits.iter().enumerate() {
                    let p = predict_projssar(f, &sig(f.inner.m)?, &w, &y_train.columns(j, 1).into_owned())?;
                    out.set_column(j, &p.column(0));
                }
                out
            }
        })
    }

    pub fn test_ids(&self, bundle: &DataBundle) -> Vec<String> {
        test_ids(bundle, &self.split)
    }
}
