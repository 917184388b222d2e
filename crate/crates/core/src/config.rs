//! JSON run configuration: model hyperparameters, event rule, and MCMC settings.

use crate::clustering::PitmanYor;
use crate::error::{Error, Result};
use crate::events::{EventThresholds, PatternRule};
use crate::model::{DefaultMatrices, MissingPropagation, ModelConfig};
use crate::sampler::McmcSettings;
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use serde_json::{json, Value};
use std::path::Path;

pub const DEFAULT_PRESET: &str = "default";
/// Older spelling of [`DEFAULT_PRESET`], still accepted.
pub const DEFAULT_PRESET_ALIAS: &str = "appendix_b_default";

/// A matrix given as row-major nested arrays or by preset name.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum MatrixSpec {
    Preset(String),
    Rows(Vec<Vec<f64>>),
}

/// Dirichlet concentration: one value for every pattern, or one per pattern.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum ConcentrationSpec {
    Symmetric(f64),
    Each(Vec<f64>),
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsFile {
    rule: Option<String>,
    r1_mean_cut: Option<f64>,
    r2_high_cut: Option<f64>,
    r2_risk_cut: Option<f64>,
    r2_ratio_cut: Option<f64>,
    r3_window: Option<usize>,
    cut: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct McmcFile {
    n_chains: Option<usize>,
    n_iter: Option<usize>,
    burn_in: Option<usize>,
    thin: Option<usize>,
    seed: Option<u64>,
    theta_every: Option<usize>,
    full_theta: Option<bool>,
    sequential: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    p: Option<usize>,
    #[serde(rename = "G")]
    g: Option<MatrixSpec>,
    #[serde(rename = "W")]
    w: Option<MatrixSpec>,
    #[serde(rename = "G_star")]
    g_star: Option<MatrixSpec>,
    #[serde(rename = "S0")]
    s0: Option<MatrixSpec>,
    m0: Option<Vec<f64>>,
    delta_prior_mean: Option<Vec<f64>>,
    delta_prior_cov: Option<Vec<Vec<f64>>>,
    #[serde(rename = "M")]
    m: Option<f64>,
    sigma: Option<f64>,
    dirichlet_a: Option<ConcentrationSpec>,
    #[serde(rename = "L")]
    l: Option<usize>,
    n_particles: Option<usize>,
    prior_mc_draws: Option<usize>,
    g_smoothing: Option<f64>,
    missing_propagation: Option<String>,
    events: Option<EventsFile>,
    mcmc: Option<McmcFile>,
}

/// Everything a `fit` run needs besides data.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub mcmc: McmcSettings,
}

fn matrix(name: &str, spec: Option<MatrixSpec>, p: usize, preset: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match spec {
        None => Ok(preset.clone()),
        Some(MatrixSpec::Preset(s)) if s == DEFAULT_PRESET || s == DEFAULT_PRESET_ALIAS => Ok(preset.clone()),
        Some(MatrixSpec::Preset(s)) => Err(Error::config(
            name,
            format!("unknown preset `{s}` (use `{DEFAULT_PRESET}`)"),
        )),
        Some(MatrixSpec::Rows(rows)) => rows_to_matrix(name, &rows, Some(p)),
    }
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>], size: Option<usize>) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if let Some(p) = size {
        if n != p {
            return Err(Error::config(name, format!("must have {p} rows, got {n}")));
        }
    }
    if let Some((k, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
        return Err(Error::config(
            name,
            format!("row {k} has {} entries; the matrix must be {n}x{n}", r.len()),
        ));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn pattern_rule(events: EventsFile) -> Result<PatternRule> {
    let rule = events.rule.as_deref().unwrap_or("clinical");
    match rule {
        "clinical" => {
            if events.cut.is_some() {
                return Err(Error::config("events.cut", "only applies to rule `mean_threshold`"));
            }
            let d = EventThresholds::default();
            Ok(PatternRule::Clinical(EventThresholds {
                r1_mean_cut: events.r1_mean_cut.unwrap_or(d.r1_mean_cut),
                r2_high_cut: events.r2_high_cut.unwrap_or(d.r2_high_cut),
                r2_risk_cut: events.r2_risk_cut.unwrap_or(d.r2_risk_cut),
                r2_ratio_cut: events.r2_ratio_cut.unwrap_or(d.r2_ratio_cut),
                r3_window: events.r3_window.unwrap_or(d.r3_window),
            }))
        }
        "mean_threshold" => {
            let clinical = [
                events.r1_mean_cut,
                events.r2_high_cut,
                events.r2_risk_cut,
                events.r2_ratio_cut,
            ];
            if clinical.iter().any(Option::is_some) || events.r3_window.is_some() {
                return Err(Error::config(
                    "events",
                    "clinical thresholds do not apply to rule `mean_threshold`",
                ));
            }
            let cut = events
                .cut
                .ok_or_else(|| Error::config("events.cut", "required for rule `mean_threshold`"))?;
            Ok(PatternRule::MeanThreshold { cut })
        }
        other => Err(Error::config(
            "events.rule",
            format!("unknown rule `{other}` (clinical or mean_threshold)"),
        )),
    }
}

/// Parse and validate a JSON configuration; absent fields take their defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let file: ConfigFile = serde_json::from_str(text).map_err(|e| Error::config("(document)", e.to_string()))?;
    let p = file.p.unwrap_or(12);
    if p == 0 {
        return Err(Error::config("p", "must be at least 1"));
    }
    let defaults = DefaultMatrices::new(p);
    let patterns = pattern_rule(file.events.unwrap_or_default())?;
    let l = patterns.n_patterns();
    if let Some(given) = file.l {
        if given != l {
            return Err(Error::config(
                "L",
                format!("the event rule defines {l} patterns, got {given}"),
            ));
        }
    }
    let dirichlet_a = match file.dirichlet_a {
        None => vec![1.0 / 20.0; l],
        Some(ConcentrationSpec::Symmetric(a)) => vec![a; l],
        Some(ConcentrationSpec::Each(v)) => v,
    };
    let m0 = match file.m0 {
        None => DVector::zeros(p),
        Some(v) => DVector::from_vec(v),
    };
    let missing_propagation = match file.missing_propagation.as_deref() {
        None | Some("apply_transition") => MissingPropagation::ApplyTransition,
        Some("verbatim") => MissingPropagation::Verbatim,
        Some(other) => {
            return Err(Error::config(
                "missing_propagation",
                format!("unknown value `{other}` (apply_transition or verbatim)"),
            ))
        }
    };
    let base = ModelConfig::with_dimension(p);
    let model = ModelConfig {
        p,
        g: matrix("G", file.g, p, &defaults.g)?,
        w: matrix("W", file.w, p, &defaults.w)?,
        g_star: matrix("G_star", file.g_star, p, &defaults.g_star)?,
        s0: matrix("S0", file.s0, p, &defaults.s0)?,
        m0,
        delta_prior_mean: file.delta_prior_mean.map(DVector::from_vec),
        delta_prior_cov: file
            .delta_prior_cov
            .map(|rows| rows_to_matrix("delta_prior_cov", &rows, None))
            .transpose()?,
        pitman_yor: PitmanYor {
            m: file.m.unwrap_or(base.pitman_yor.m),
            sigma: file.sigma.unwrap_or(base.pitman_yor.sigma),
        },
        dirichlet_a,
        n_particles: file.n_particles.unwrap_or(base.n_particles),
        prior_mc_draws: file.prior_mc_draws.unwrap_or(base.prior_mc_draws),
        g_smoothing: file.g_smoothing.unwrap_or(base.g_smoothing),
        missing_propagation,
        patterns,
    };
    if let (Some(m), Some(c)) = (&model.delta_prior_mean, &model.delta_prior_cov) {
        if m.len() != c.nrows() {
            return Err(Error::config(
                "delta_prior_cov",
                "dimension differs from delta_prior_mean",
            ));
        }
    }
    model.validate()?;
    let mf = file.mcmc.unwrap_or_default();
    let d = McmcSettings::default();
    let mcmc = McmcSettings {
        n_chains: mf.n_chains.unwrap_or(d.n_chains),
        n_iter: mf.n_iter.unwrap_or(d.n_iter),
        burn_in: mf.burn_in.unwrap_or(d.burn_in),
        thin: mf.thin.unwrap_or(d.thin),
        seed: mf.seed.unwrap_or(d.seed),
        theta_every: mf.theta_every.unwrap_or(d.theta_every),
        full_theta: mf.full_theta.unwrap_or(d.full_theta),
        sequential: mf.sequential.unwrap_or(d.sequential),
    };
    mcmc.validate()?;
    Ok(RunConfig { model, mcmc })
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!(m[(i, j)])).collect()))
            .collect(),
    )
}

/// Fully explicit JSON form of a configuration; parsing it gives the same configuration.
pub fn config_to_json(cfg: &RunConfig) -> Value {
    let m = &cfg.model;
    let mut events = serde_json::Map::new();
    match &m.patterns {
        PatternRule::Clinical(th) => {
            events.insert("rule".into(), json!("clinical"));
            events.insert("r1_mean_cut".into(), json!(th.r1_mean_cut));
            events.insert("r2_high_cut".into(), json!(th.r2_high_cut));
            events.insert("r2_risk_cut".into(), json!(th.r2_risk_cut));
            events.insert("r2_ratio_cut".into(), json!(th.r2_ratio_cut));
            events.insert("r3_window".into(), json!(th.r3_window));
        }
        PatternRule::MeanThreshold { cut } => {
            events.insert("rule".into(), json!("mean_threshold"));
            events.insert("cut".into(), json!(cut));
        }
    }
    let s = &cfg.mcmc;
    json!({
        "p": m.p,
        "G": matrix_json(&m.g),
        "W": matrix_json(&m.w),
        "G_star": matrix_json(&m.g_star),
        "S0": matrix_json(&m.s0),
        "m0": m.m0.as_slice(),
        "delta_prior_mean": m.delta_prior_mean.as_ref().map(|v| v.as_slice().to_vec()),
        "delta_prior_cov": m.delta_prior_cov.as_ref().map(matrix_json),
        "M": m.pitman_yor.m,
        "sigma": m.pitman_yor.sigma,
        "dirichlet_a": m.dirichlet_a,
        "L": m.n_patterns(),
        "n_particles": m.n_particles,
        "prior_mc_draws": m.prior_mc_draws,
        "g_smoothing": m.g_smoothing,
        "missing_propagation": match m.missing_propagation {
            MissingPropagation::ApplyTransition => "apply_transition",
            MissingPropagation::Verbatim => "verbatim",
        },
        "events": Value::Object(events),
        "mcmc": {
            "n_chains": s.n_chains,
            "n_iter": s.n_iter,
            "burn_in": s.burn_in,
            "thin": s.thin,
            "seed": s.seed,
            "theta_every": s.theta_every,
            "full_theta": s.full_theta,
            "sequential": s.sequential,
        },
    })
}

/// Scenario files share the JSON conventions of the run configuration.
pub fn load_scenario(path: &Path) -> Result<crate::simulate::ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    let sc: crate::simulate::ScenarioConfig =
        serde_json::from_str(&text).map_err(|e| Error::config("(scenario)", e.to_string()))?;
    sc.validate()?;
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model.p, 12);
        assert_eq!(cfg.model.pitman_yor, PitmanYor { m: 10.0, sigma: -1.0 });
        assert_eq!(cfg.model.dirichlet_a, vec![0.05; 8]);
        let s = cfg.mcmc;
        assert_eq!((s.n_chains, s.n_iter, s.burn_in, s.thin), (5, 13_500, 1000, 25));
    }

    #[test]
    fn round_trip() {
        let text = r#"{"p": 3, "W": [[0.1,0,0],[0,0.2,0],[0,0,0.3]], "M": 4, "sigma": -2,
            "dirichlet_a": 0.5, "events": {"rule": "mean_threshold", "cut": 0.25},
            "mcmc": {"n_iter": 100, "burn_in": 10, "thin": 3}, "missing_propagation": "verbatim"}"#;
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.model.dirichlet_a, vec![0.5, 0.5]);
        assert_eq!(cfg.model.w[(2, 2)], 0.3);
        assert_eq!(cfg.model.g, DefaultMatrices::new(3).g);
        let again = parse_config(&config_to_json(&cfg).to_string()).unwrap();
        assert_eq!(again, cfg);
        let default_json = config_to_json(&RunConfig::default()).to_string();
        assert_eq!(parse_config(&default_json).unwrap(), RunConfig::default());
    }

    #[test]
    fn presets() {
        let cfg = parse_config(r#"{"G": "default", "S0": "appendix_b_default"}"#).unwrap();
        assert_eq!(cfg.model.g, DefaultMatrices::new(12).g);
        let err = parse_config(r#"{"G": "lag_chain"}"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "G"));
    }

    #[test]
    fn rejections_name_the_field() {
        let field = |text: &str| match parse_config(text).unwrap_err() {
            Error::Config { field, .. } => field,
            Error::NotPositiveDefinite { matrix, .. } => matrix,
            other => panic!("unexpected {other}"),
        };
        assert_eq!(field(r#"{"M": 9.5}"#), "M");
        assert_eq!(field(r#"{"p": 2, "W": [[-1, 0], [0, 1]]}"#), "W");
        assert_eq!(field(r#"{"unknown": 1}"#), "(document)");
        assert_eq!(field(r#"{"L": 2}"#), "L");
        assert_eq!(field(r#"{"mcmc": {"burn_in": 20000}}"#), "mcmc.burn_in");
        assert_eq!(field(r#"{"p": 2, "G": [[1, 0]]}"#), "G");
        assert_eq!(field(r#"{"dirichlet_a": [1, 1]}"#), "dirichlet_a");
        assert_eq!(field(r#"{"events": {"r3_window": 0}}"#), "events.r3_window");
        match parse_config(r#"{"p": 2, "W": [[-1, 0], [0, 1]]}"#).unwrap_err() {
            Error::NotPositiveDefinite { eigenvalue, .. } => assert_eq!(eigenvalue, -1.0),
            other => panic!("unexpected {other}"),
        }
    }
}
