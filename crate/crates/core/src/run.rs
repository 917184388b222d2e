//! Subcommand workflows over files: simulate, prior tables, fit, summarize,
//! score, and treatment effects. The binary is a thin argument parser over these.

use crate::config::{config_to_json, parse_config, RunConfig};
use crate::error::{Error, Result};
use crate::io::{self, ThetaFileSink, BASELINE, OBSERVATIONS, TRUTH};
use crate::model::Dataset;
use crate::reports::{self, PartitionLoss, TreatmentEffects, TREATMENT_EFFECT_COLUMNS};
use crate::sampler::{run_chain, ChainDiagnostics, ChainStore, Model, ThetaSink};
use crate::simulate::{generate_cohort, ScenarioConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "meta.json";
pub const MANIFEST_FORMAT: &str = "panelstate-run/1";

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set so that repeated
/// runs can produce identical manifests.
pub fn timestamp() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return v;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub retained_draws: usize,
    pub sweeps_completed: usize,
    pub proposals: u64,
    pub low_ess_proposals: u64,
    pub low_ess_days: u64,
    /// Absent when no proposal was made.
    pub min_ess: Option<f64>,
    pub fallback_allocations: u64,
    pub max_clusters: usize,
    pub delta_init_fallback: bool,
    pub error: Option<String>,
}

impl ChainSummary {
    fn new(store: &ChainStore, error: Option<String>) -> Self {
        let d = &store.diagnostics;
        Self {
            chain: store.chain_id,
            retained_draws: store.draws.len(),
            sweeps_completed: d.sweeps_completed,
            proposals: d.proposals,
            low_ess_proposals: d.low_ess_proposals,
            low_ess_days: d.low_ess_days,
            min_ess: d.min_ess.is_finite().then_some(d.min_ess),
            fallback_allocations: d.fallback_allocations,
            max_clusters: d.max_clusters,
            delta_init_fallback: d.delta_init_fallback,
            error,
        }
    }

    fn diagnostics(&self) -> ChainDiagnostics {
        ChainDiagnostics {
            sweeps_completed: self.sweeps_completed,
            proposals: self.proposals,
            low_ess_proposals: self.low_ess_proposals,
            low_ess_days: self.low_ess_days,
            min_ess: self.min_ess.unwrap_or(f64::INFINITY),
            fallback_allocations: self.fallback_allocations,
            max_clusters: self.max_clusters,
            delta_init_fallback: self.delta_init_fallback,
        }
    }
}

/// Run metadata, written before sampling starts and finalized afterwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub status: String,
    pub version: String,
    pub git_describe: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config_sha256: String,
    pub config: Value,
    pub covariates: Vec<String>,
    pub n_subjects: usize,
    /// SHA-256 of each input file, keyed by file name.
    pub inputs: BTreeMap<String, String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub chains: Vec<ChainSummary>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        io::write_atomic(&dir.join(MANIFEST), text.as_bytes())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        if m.format != MANIFEST_FORMAT {
            return Err(Error::data(format!(
                "{}: unsupported format `{}`",
                path.display(),
                m.format
            )));
        }
        Ok(m)
    }
}

/// Generate a synthetic cohort and write its inputs and truth to `out`.
pub fn simulate(scenario: &ScenarioConfig, out: &Path) -> Result<Dataset> {
    let (ds, truth) = generate_cohort(scenario)?;
    fs::create_dir_all(out)?;
    io::write_dataset(out, &ds)?;
    io::write_truth(&out.join(TRUTH), &truth)?;
    Ok(ds)
}

/// Estimate every subject's prior pattern table and write `g_probs.csv`.
pub fn prior_probs(data: &Path, config: &RunConfig, out: &Path) -> Result<()> {
    let ds = io::read_dataset(data)?;
    let dynamics = config.model.dynamics()?;
    let tables = crate::sampler::prior_tables(&ds, &config.model, &dynamics, config.mcmc.seed)?;
    fs::create_dir_all(out)?;
    io::write_g_probs(&out.join("g_probs.csv"), &ds, &tables)
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub data: PathBuf,
    pub out: PathBuf,
    pub config: RunConfig,
    pub force: bool,
    /// Worker threads; `None` uses one per core.
    pub threads: Option<usize>,
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Prepare an output directory, refusing to replace a non-empty one unless `force`.
pub fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() {
        let non_empty = fs::read_dir(out)?.next().is_some();
        if non_empty && !force {
            return Err(Error::config(
                "--out",
                format!("{} exists and is not empty (use --force to replace it)", out.display()),
            ));
        }
        if non_empty {
            fs::remove_dir_all(out)?;
        }
    }
    fs::create_dir_all(out)?;
    Ok(())
}

/// Run every chain and write the run directory. On a chain failure the
/// partial draws are still written and the manifest records the error.
pub fn fit(opts: &FitOptions) -> Result<RunManifest> {
    let cfg = &opts.config;
    let ds = io::read_dataset(&opts.data)?;
    // Model errors that depend on the data (δ prior dimension) surface before any output.
    cfg.model.delta_prior(ds.n_covariates())?;
    prepare_out_dir(&opts.out, opts.force)?;
    let out = &opts.out;

    let data_dir = out.join("data");
    fs::create_dir_all(&data_dir)?;
    let mut inputs = BTreeMap::new();
    for name in [OBSERVATIONS, BASELINE] {
        let bytes = fs::read(opts.data.join(name))?;
        inputs.insert(name.to_string(), sha256_hex(&bytes));
        fs::write(data_dir.join(name), &bytes)?;
    }
    let config_json = config_to_json(cfg);
    let config_text = serde_json::to_string(&config_json)?;
    fs::write(
        out.join("config.json"),
        serde_json::to_string_pretty(&config_json)? + "\n",
    )?;

    let mut manifest = RunManifest {
        format: MANIFEST_FORMAT.into(),
        status: "running".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_describe: env!("PANELSTATE_GIT_DESCRIBE").into(),
        seed: cfg.mcmc.seed,
        threads: opts.threads,
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: config_json,
        covariates: ds.covariate_names.clone(),
        n_subjects: ds.len(),
        inputs,
        started_unix: timestamp(),
        finished_unix: None,
        chains: Vec::new(),
    };
    manifest.write(out)?;

    let ids: Vec<String> = ds.records.iter().map(|r| r.id.clone()).collect();
    let theta_dir = out.join("theta");
    let settings = &cfg.mcmc;
    let results = in_pool(opts.threads, || -> Result<_> {
        let model = Model::new(&ds, &cfg.model, settings.seed)?;
        io::write_g_probs(&out.join("g_probs.csv"), &ds, &model.g_tables)?;
        (0..settings.n_chains)
            .into_par_iter()
            .map(|c| {
                let mut sink = ThetaFileSink::new(theta_dir.join(format!("chain_{c}")), ids.clone())?;
                let res = run_chain(&model, settings, c, Some(&mut sink as &mut dyn ThetaSink));
                Ok((res, sink))
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut stores = Vec::new();
    let mut parts = Vec::new();
    let mut first_error = None;
    for (c, (res, sink)) in results.into_iter().enumerate() {
        let (store, err) = match res {
            Ok(s) => (s, None),
            Err(f) => {
                log::error!(
                    "chain {c} stopped after {} sweeps: {}",
                    f.partial.diagnostics.sweeps_completed,
                    f.error
                );
                let msg = f.error.to_string();
                first_error.get_or_insert(f.error);
                (f.partial, Some(msg))
            }
        };
        let iterations = sink.draws.iter().map(|&k| store.draws[k].iteration).collect();
        parts.push((c, theta_dir.join(format!("chain_{c}")), sink.draws.clone(), iterations));
        manifest.chains.push(ChainSummary::new(&store, err));
        stores.push(store);
    }
    io::write_chain_outputs(out, &ds, &stores)?;
    io::merge_theta(&theta_dir, &ids, &parts)?;
    manifest.finished_unix = Some(timestamp());
    manifest.status = if first_error.is_some() { "aborted" } else { "complete" }.into();
    manifest.write(out)?;
    match first_error {
        Some(e) => Err(Error::Runtime(format!(
            "{e}; partial draws written to {}",
            out.display()
        ))),
        None => Ok(manifest),
    }
}

/// A run directory loaded back into memory.
pub struct RunData {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub config: RunConfig,
    pub dataset: Dataset,
    pub stores: Vec<ChainStore>,
}

pub fn load_run(dir: &Path) -> Result<RunData> {
    let manifest = RunManifest::read(dir)?;
    let config = parse_config(&manifest.config.to_string())?;
    let dataset = io::read_dataset(&dir.join("data"))?;
    let ids: Vec<String> = dataset.records.iter().map(|r| r.id.clone()).collect();
    let mut stores = io::read_chain_outputs(dir, &ids, config.model.n_patterns())?;
    for s in &mut stores {
        if let Some(c) = manifest.chains.iter().find(|c| c.chain == s.chain_id) {
            s.diagnostics = c.diagnostics();
        }
    }
    Ok(RunData {
        dir: dir.to_path_buf(),
        manifest,
        config,
        dataset,
        stores,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn write_matrix(path: &Path, ids: &[String], columns: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(rows) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn point_estimate(run: &RunData, loss: PartitionLoss) -> Result<(reports::SimilarityMatrix, reports::PointPartition)> {
    let sim = reports::similarity(&run.stores)?;
    let parts: Vec<&[usize]> = run
        .stores
        .iter()
        .flat_map(|s| s.draws.iter().map(|d| d.labels.as_slice()))
        .collect();
    let point = reports::point_partition(&sim, &parts, loss)?;
    Ok((sim, point))
}

/// Write the posterior summary tables of a run into `out`.
pub fn summarize(run: &RunData, loss: PartitionLoss, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let ids: Vec<String> = run.dataset.records.iter().map(|r| r.id.clone()).collect();
    let l = run.config.model.n_patterns();

    let post = reports::pattern_posterior(&run.stores)?;
    let cols: Vec<String> = (0..l).map(|k| format!("R{k}")).collect();
    write_matrix(&out.join("pattern_posterior.csv"), &ids, &cols, &post)?;

    let (sim, point) = point_estimate(run, loss)?;
    let rows: Vec<Vec<f64>> = (0..sim.len()).map(|i| sim.row(i).to_vec()).collect();
    write_matrix(&out.join("similarity.csv"), &ids, &ids, &rows)?;

    let mut w = csv_writer(&out.join("partition.csv"))?;
    w.write_record(["patient_id", "label"])?;
    for (id, lab) in ids.iter().zip(&point.labels) {
        w.write_record([id.as_str(), &lab.to_string()])?;
    }
    w.flush()?;

    let xi = reports::xi_posterior_mean(&run.stores)?;
    let cols: Vec<String> = (0..l).map(|k| format!("xi{k}")).collect();
    write_matrix(&out.join("xi_posterior_mean.csv"), &ids, &cols, &xi)?;

    let mut w = csv_writer(&out.join("diagnostics.csv"))?;
    w.write_record(["metric", "chain", "target", "value"])?;
    let rhat = reports::delta_rhat(&run.stores)?;
    for (name, r) in run.dataset.covariate_names.iter().zip(&rhat) {
        w.write_record(["rhat_delta", "all", name, &r.to_string()])?;
    }
    let loss_name = match loss {
        PartitionLoss::Binder => "binder",
        PartitionLoss::Vi => "vi",
    };
    w.write_record(["partition_loss", "all", loss_name, &point.loss.to_string()])?;
    w.write_record(["partition_draw", "all", loss_name, &point.draw.to_string()])?;
    let n_clusters = point.labels.iter().max().map_or(0, |m| m + 1);
    w.write_record(["partition_clusters", "all", loss_name, &n_clusters.to_string()])?;
    for s in &run.stores {
        let c = s.chain_id.to_string();
        let d = &s.diagnostics;
        let rates = s.acceptance_rates();
        let mean = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
        w.write_record(["acceptance_rate", &c, "all", &mean.to_string()])?;
        for (id, r) in ids.iter().zip(&rates) {
            w.write_record(["acceptance_rate", c.as_str(), id, &r.to_string()])?;
        }
        for (metric, v) in [
            ("retained_draws", s.draws.len().to_string()),
            ("sweeps_completed", d.sweeps_completed.to_string()),
            ("max_clusters", d.max_clusters.to_string()),
            ("min_ess", d.min_ess.to_string()),
            ("low_ess_proposals", d.low_ess_proposals.to_string()),
            ("fallback_allocations", d.fallback_allocations.to_string()),
        ] {
            w.write_record([metric, &c, "all", &v])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Cross-entropy of the run's pattern posterior against simulation truth,
/// overall and within each true pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub overall: f64,
    pub by_truth: BTreeMap<usize, (usize, f64)>,
}

pub fn score_posterior(ids: &[String], posterior: &[Vec<f64>], total_draws: usize, truth_path: &Path) -> Result<Score> {
    let truth = io::read_truth(truth_path)?;
    let map: BTreeMap<&str, usize> = truth.iter().map(|t| (t.id.as_str(), t.true_pattern)).collect();
    let labels = ids
        .iter()
        .map(|id| {
            map.get(id.as_str())
                .copied()
                .ok_or_else(|| Error::data(format!("{}: no truth for {id}", truth_path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let overall = reports::cross_entropy(posterior, &labels, total_draws)?;
    let mut groups: BTreeMap<usize, (Vec<Vec<f64>>, Vec<usize>)> = BTreeMap::new();
    for (row, &l) in posterior.iter().zip(&labels) {
        let g = groups.entry(l).or_default();
        g.0.push(row.clone());
        g.1.push(l);
    }
    let mut by_truth = BTreeMap::new();
    for (l, (rows, ls)) in groups {
        by_truth.insert(l, (ls.len(), reports::cross_entropy(&rows, &ls, total_draws)?));
    }
    Ok(Score { overall, by_truth })
}

/// Score a run and write `cross_entropy.txt` into `out`.
pub fn score(run: &RunData, truth: &Path, out: &Path) -> Result<Score> {
    let ids: Vec<String> = run.dataset.records.iter().map(|r| r.id.clone()).collect();
    let post = reports::pattern_posterior(&run.stores)?;
    let s = score_posterior(&ids, &post, reports::total_draws(&run.stores), truth)?;
    fs::create_dir_all(out)?;
    let mut f = fs::File::create(out.join("cross_entropy.txt"))?;
    writeln!(f, "cross_entropy\t{}", s.overall)?;
    writeln!(f, "n_subjects\t{}", ids.len())?;
    for (l, (n, h)) in &s.by_truth {
        writeln!(f, "cross_entropy_truth_{l}\t{h}\t{n}")?;
    }
    Ok(s)
}

/// Per-treatment slice summaries over every stored trajectory, overall and by
/// point-estimate cluster; writes `treatment_effects.csv`.
pub fn treatment_effects(run: &RunData, loss: PartitionLoss, out: &Path) -> Result<Vec<reports::TreatmentEffectRow>> {
    let theta_dir = run.dir.join("theta");
    let index = io::read_theta_index(&theta_dir)?;
    if index.is_empty() {
        return Err(Error::data(format!(
            "{}: run holds no trajectory snapshots",
            theta_dir.display()
        )));
    }
    let window = match &run.config.model.patterns {
        crate::events::PatternRule::Clinical(th) => th.r3_window,
        crate::events::PatternRule::MeanThreshold { .. } => crate::events::EventThresholds::default().r3_window,
    };
    let (_, point) = point_estimate(run, loss)?;
    let groups = point.labels.iter().map(|l| format!("cluster_{l}")).collect();
    let mut acc = TreatmentEffects::new(window, Some(groups));
    for (i, rec) in run.dataset.records.iter().enumerate() {
        let snaps = io::read_theta(&theta_dir.join(format!("{}.bin", rec.id)))?;
        if snaps.len() != index.len() {
            return Err(Error::data(format!(
                "{}: snapshot count differs from index.csv",
                rec.id
            )));
        }
        let timeline = rec.timeline();
        for (k, theta) in snaps.iter().enumerate() {
            if theta.days() != rec.days() {
                return Err(Error::data(format!(
                    "{}: snapshot length differs from the data",
                    rec.id
                )));
            }
            acc.add(i, rec, &theta.gamma(&timeline), k);
        }
    }
    let rows = acc.rows();
    fs::create_dir_all(out)?;
    let mut w = csv_writer(&out.join("treatment_effects.csv"))?;
    w.write_record(TREATMENT_EFFECT_COLUMNS)?;
    for r in &rows {
        w.write_record([
            r.group.clone(),
            r.treatment.clone(),
            r.t_pre.to_string(),
            r.t_post.to_string(),
            r.intercept.to_string(),
            r.slope.to_string(),
            r.prop_pre_lt_post.to_string(),
            r.prop_slope_lt_0.to_string(),
            r.n_slices.to_string(),
            r.n_excluded_single_day.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
