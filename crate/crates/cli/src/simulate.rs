use std::collections::BTreeMap;
use std::path::Path;

use mpenssar::io::{default_ids, write_matrix_csv, write_paths_csv, write_weights_csv, DataBundle};
use mpenssar::simulation::{builtin_r, default_sigma, replication_seed, simulate, Design, SimConfig, SimDataset};
use mpenssar::spatial::WeightSpec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::SimulateArgs;
use crate::error::{io_err, CliError, Result};
use crate::manifest::{read_text, write_text, Run};

pub const TRUTH_FILE: &str = "truth.toml";

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Preset(String),
    Rows(Vec<Vec<f64>>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimFile {
    grid_side: Option<usize>,
    n: Option<usize>,
    #[serde(alias = "P")]
    p: Option<usize>,
    #[serde(alias = "Q")]
    q: Option<usize>,
    design: Option<String>,
    #[serde(alias = "R")]
    r: Option<MatrixSpec>,
    #[serde(alias = "Sigma")]
    sigma: Option<Vec<Vec<f64>>>,
    n_times: Option<usize>,
    slope_range: Option<f64>,
    seed: Option<u64>,
    reps: Option<usize>,
    weights: Option<WeightSpec>,
}

pub fn rows_to_matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Config(format!("{field}: must be a non-empty rectangular array of rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Resolved simulation config and replication count.
pub fn resolve(args: &SimulateArgs) -> Result<(SimConfig, usize)> {
    let file: SimFile = match &args.config {
        Some(path) => toml::from_str(&read_text(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
        None => SimFile::default(),
    };
    let mut cfg = SimConfig::default();
    if let Some(v) = file.grid_side {
        cfg.grid_side = v;
    }
    if let Some(v) = file.n {
        cfg.n = v;
    }
    if let Some(v) = file.p {
        cfg.p = v;
    }
    if let Some(v) = file.q {
        cfg.q = v;
        cfg.sigma = default_sigma(v);
    }
    if let Some(d) = &file.design {
        cfg.design = d.parse::<Design>().map_err(|e| CliError::Config(format!("design: {e}")))?;
    }
    match &file.r {
        Some(MatrixSpec::Preset(name)) => cfg.r = builtin_r(name).map_err(|e| CliError::Config(format!("R: {e}")))?,
        Some(MatrixSpec::Rows(rows)) => cfg.r = rows_to_matrix("R", rows)?,
        None => {}
    }
    if let Some(rows) = &file.sigma {
        cfg.sigma = rows_to_matrix("Sigma", rows)?;
    }
    if let Some(v) = file.n_times {
        cfg.n_times = v;
    }
    if let Some(v) = file.slope_range {
        cfg.slope_range = v;
    }
    if let Some(w) = file.weights {
        cfg.weights = w;
    }
    cfg.seed = args.seed.or(file.seed).unwrap_or(0);
    let reps = args.reps.or(file.reps).unwrap_or(1);
    if reps == 0 {
        return Err(CliError::Config("reps: must be at least 1".into()));
    }
    cfg.validate()?;
    Ok((cfg, reps))
}

/// Generating quantities of one bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthManifest {
    pub design: Design,
    /// Decimal string, since TOML integers stop at `i64::MAX`.
    #[serde(with = "seed_text")]
    pub seed: u64,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub weights: WeightSpec,
}

mod seed_text {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

impl TruthManifest {
    pub fn r_matrix(&self) -> Result<DMatrix<f64>> {
        rows_to_matrix("R", &self.r)
    }
}

pub fn read_truth(dir: &Path) -> Result<Option<TruthManifest>> {
    let path = dir.join(TRUTH_FILE);
    if !path.exists() {
        return Ok(None);
    }
    toml::from_str(&read_text(&path)?).map(Some).map_err(|e| io_err(&path, e))
}

pub fn rep_dir_name(rep: usize) -> String {
    format!("rep_{:03}", rep + 1)
}

fn write_dataset(run: &mut Run, rel: &str, data: &SimDataset, cfg: &SimConfig) -> Result<()> {
    let dir = run.dir().join(rel);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let ids = default_ids(data.coords.len());
    let bundle = DataBundle {
        ids: ids.clone(),
        coords: data.coords.clone(),
        paths: data.fit_paths.clone(),
        y: data.y.clone(),
    };
    bundle.write(&dir)?;
    for f in ["coords.csv", "paths.csv", "y.csv"] {
        run.artifact(format!("{rel}/{f}"));
    }
    write_weights_csv(&run.artifact(format!("{rel}/weights.csv")), &data.w)?;
    write_matrix_csv(&run.artifact(format!("{rel}/theta.csv")), &ids, "theta", &data.theta)?;
    write_matrix_csv(&run.artifact(format!("{rel}/noise.csv")), &ids, "e", &data.noise)?;
    if let Some(z) = &data.paths_z {
        write_paths_csv(&run.artifact(format!("{rel}/paths_z.csv")), &ids, z)?;
    }
    let truth = TruthManifest {
        design: data.truth.design,
        seed: data.truth.seed,
        r: matrix_to_rows(&data.truth.r),
        sigma: matrix_to_rows(&data.truth.sigma),
        eta: matrix_to_rows(&data.truth.eta),
        weights: cfg.weights,
    };
    let text = toml::to_string(&truth).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(&run.artifact(format!("{rel}/{TRUTH_FILE}")), &text)
}

pub fn run(args: &SimulateArgs) -> Result<()> {
    let (cfg, reps) = resolve(args)?;
    let base = cfg.seed;
    let seeds: Vec<u64> = (0..reps).map(|r| replication_seed(base, r as u64)).collect();
    let mut seed_map = BTreeMap::from([("base".to_string(), base)]);
    for (r, s) in seeds.iter().enumerate() {
        seed_map.insert(rep_dir_name(r), *s);
    }
    let config = json!({ "simulation": cfg, "reps": reps });
    let mut run = Run::start(&args.out, "simulate", config, seed_map)?;
    let outcome = (|| {
        let mut residuals = Vec::new();
        for (rep, &seed) in seeds.iter().enumerate() {
            let data = simulate(&SimConfig { seed, ..cfg.clone() })?;
            residuals.push(data.identity_residual());
            write_dataset(&mut run, &rep_dir_name(rep), &data, &cfg)?;
        }
        run.set_results(json!({ "identity_residual": residuals }));
        Ok(())
    })();
    run.finish(outcome)
}
