//! File formats: input CSVs, simulation truth, run directories, and theta snapshots.

use crate::error::{Error, Result};
use crate::model::{Dataset, PatientRecord, Trajectory};
use crate::particle_filter::PriorPatternTable;
use crate::sampler::{ChainStore, Draw, ThetaSink};
use crate::simulate::{true_pattern, Clump, TruthRecord};
use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const OBSERVATIONS: &str = "observations.csv";
pub const BASELINE: &str = "baseline.csv";
pub const TRUTH: &str = "truth.csv";
pub const THETA_MAGIC: &[u8; 8] = b"PSTHETA1";

fn data_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::data(format!("{}: {msg}", path.display()))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn expect_header(path: &Path, rdr: &mut csv::Reader<File>, want: &[&str]) -> Result<csv::StringRecord> {
    let h = rdr.headers()?.clone();
    if h.len() < want.len() || want.iter().zip(h.iter()).any(|(a, b)| *a != b.trim()) {
        return Err(data_err(path, format!("header must start with `{}`", want.join(","))));
    }
    Ok(h)
}

fn parse_num<T: std::str::FromStr>(path: &Path, line: u64, field: &str, s: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| data_err(path, format!("line {line}: `{field}` value `{s}` is not a number")))
}

/// Read `observations.csv` and `baseline.csv` from `dir`. Subjects are
/// ordered by ascending id.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let obs_path = dir.join(OBSERVATIONS);
    let base_path = dir.join(BASELINE);

    let mut rdr = reader(&base_path)?;
    let header = expect_header(&base_path, &mut rdr, &["patient_id"])?;
    let covariates: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    if covariates.is_empty() {
        return Err(data_err(&base_path, "no covariate columns"));
    }
    let mut baseline: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].trim().to_string();
        let x = covariates
            .iter()
            .enumerate()
            .map(|(k, name)| parse_num(&base_path, line, name, rec.get(k + 1).unwrap_or("")))
            .collect::<Result<Vec<f64>>>()?;
        if baseline.insert(id.clone(), x).is_some() {
            return Err(data_err(&base_path, format!("duplicate patient_id {id}")));
        }
    }

    let mut rdr = reader(&obs_path)?;
    expect_header(&obs_path, &mut rdr, &["patient_id", "day", "y", "treatment"])?;
    let mut days: BTreeMap<String, BTreeMap<usize, (Option<bool>, String)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].trim().to_string();
        let day: usize = parse_num(&obs_path, line, "day", &rec[1])?;
        let y = match rec[2].trim() {
            "" => None,
            "0" => Some(false),
            "1" => Some(true),
            other => {
                return Err(data_err(
                    &obs_path,
                    format!("line {line}: y must be 0, 1 or empty, got `{other}`"),
                ))
            }
        };
        let treatment = rec[3].trim().to_string();
        if treatment.is_empty() {
            return Err(data_err(&obs_path, format!("line {line}: empty treatment")));
        }
        if days
            .entry(id.clone())
            .or_default()
            .insert(day, (y, treatment))
            .is_some()
        {
            return Err(data_err(&obs_path, format!("line {line}: day {day} repeated for {id}")));
        }
    }

    let mut records = Vec::with_capacity(days.len());
    for (id, series) in days {
        let x = baseline
            .remove(&id)
            .ok_or_else(|| data_err(&base_path, format!("no baseline row for {id}")))?;
        let n = series.len();
        if series.keys().copied().ne(1..=n) {
            return Err(data_err(&obs_path, format!("days of {id} must be contiguous from 1")));
        }
        let (y, treatment): (Vec<_>, Vec<_>) = series.into_values().unzip();
        records.push(PatientRecord::new(id, y, x, treatment)?);
    }
    if let Some(id) = baseline.keys().next() {
        return Err(data_err(&obs_path, format!("no observations for {id}")));
    }
    Dataset::new(covariates, records)
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    let mut w = writer(&dir.join(OBSERVATIONS))?;
    w.write_record(["patient_id", "day", "y", "treatment"])?;
    for r in &dataset.records {
        for (t, (y, tr)) in r.y.iter().zip(&r.treatment_id).enumerate() {
            let y = match y {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            w.write_record([r.id.as_str(), &(t + 1).to_string(), y, tr])?;
        }
    }
    w.flush()?;
    let mut w = writer(&dir.join(BASELINE))?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(dataset.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![r.id.clone()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of `truth.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthRow {
    pub id: String,
    pub cluster: u8,
    pub subtype: u8,
    pub true_pattern: usize,
    pub clumps: Vec<Clump>,
}

pub fn write_truth(path: &Path, truth: &[TruthRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["patient_id", "cluster", "subtype", "true_pattern", "clumps"])?;
    for t in truth {
        let clumps: Vec<String> = t.clumps.iter().map(|c| format!("{}:{}", c.start, c.len)).collect();
        w.write_record([
            t.id.clone(),
            t.cluster.to_string(),
            t.subtype.to_string(),
            true_pattern(t).to_string(),
            clumps.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthRow>> {
    let mut rdr = reader(path)?;
    expect_header(
        path,
        &mut rdr,
        &["patient_id", "cluster", "subtype", "true_pattern", "clumps"],
    )?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let clumps = rec[4]
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(|s| {
                let (a, b) = s
                    .split_once(':')
                    .ok_or_else(|| data_err(path, format!("line {line}: clump `{s}` is not start:len")))?;
                Ok(Clump {
                    start: parse_num(path, line, "clumps", a)?,
                    len: parse_num(path, line, "clumps", b)?,
                })
            })
            .collect::<Result<_>>()?;
        out.push(TruthRow {
            id: rec[0].trim().to_string(),
            cluster: parse_num(path, line, "cluster", &rec[1])?,
            subtype: parse_num(path, line, "subtype", &rec[2])?,
            true_pattern: parse_num(path, line, "true_pattern", &rec[3])?,
            clumps,
        });
    }
    Ok(out)
}

pub fn write_g_probs(path: &Path, dataset: &Dataset, tables: &[std::sync::Arc<PriorPatternTable>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["patient_id", "pattern", "probability"])?;
    for (r, t) in dataset.records.iter().zip(tables) {
        for (l, p) in t.probs.iter().enumerate() {
            w.write_record([r.id.as_str(), &l.to_string(), &p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write the retained draws of every chain as long-format CSVs.
pub fn write_chain_outputs(dir: &Path, dataset: &Dataset, stores: &[ChainStore]) -> Result<()> {
    let ids: Vec<&str> = dataset.records.iter().map(|r| r.id.as_str()).collect();

    let mut w = writer(&dir.join("delta.csv"))?;
    let mut header = vec!["chain".to_string(), "draw".into(), "iteration".into()];
    header.extend(dataset.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for s in stores {
        for (k, d) in s.draws.iter().enumerate() {
            let mut row = vec![s.chain_id.to_string(), k.to_string(), d.iteration.to_string()];
            row.extend(d.delta.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;

    let mut pat = writer(&dir.join("patterns.csv"))?;
    pat.write_record(["chain", "draw", "patient_id", "R"])?;
    let mut part = writer(&dir.join("partition.csv"))?;
    part.write_record(["chain", "draw", "patient_id", "label"])?;
    let mut atoms = writer(&dir.join("atoms.csv"))?;
    atoms.write_record(["chain", "draw", "cluster", "pattern", "xi"])?;
    for s in stores {
        let c = s.chain_id.to_string();
        for (k, d) in s.draws.iter().enumerate() {
            let k = k.to_string();
            for (i, id) in ids.iter().enumerate() {
                pat.write_record([c.as_str(), &k, id, &d.patterns[i].to_string()])?;
                part.write_record([c.as_str(), &k, id, &d.labels[i].to_string()])?;
            }
            for (h, atom) in d.atoms.iter().enumerate() {
                for (l, xi) in atom.iter().enumerate() {
                    atoms.write_record([c.as_str(), &k, &h.to_string(), &l.to_string(), &xi.to_string()])?;
                }
            }
        }
    }
    pat.flush()?;
    part.flush()?;
    atoms.flush()?;

    let mut w = writer(&dir.join("acceptance.csv"))?;
    w.write_record(["chain", "patient_id", "accepted", "proposed"])?;
    for s in stores {
        for (i, id) in ids.iter().enumerate() {
            w.write_record([
                &s.chain_id.to_string(),
                *id,
                &s.accepted[i].to_string(),
                &s.proposed[i].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn draw_mut<'a>(
    chains: &'a mut BTreeMap<usize, BTreeMap<usize, Draw>>,
    path: &Path,
    line: u64,
    c: &str,
    k: &str,
) -> Result<&'a mut Draw> {
    let chain: usize = parse_num(path, line, "chain", c)?;
    let draw: usize = parse_num(path, line, "draw", k)?;
    chains
        .get_mut(&chain)
        .and_then(|m| m.get_mut(&draw))
        .ok_or_else(|| data_err(path, format!("line {line}: draw {chain}/{draw} missing from delta.csv")))
}

/// Rebuild chain stores from the CSVs of a run directory. Diagnostics other
/// than acceptance counts live in the manifest and are left at defaults.
pub fn read_chain_outputs(dir: &Path, ids: &[String], n_patterns: usize) -> Result<Vec<ChainStore>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let n = ids.len();
    let subject = |path: &Path, id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| data_err(path, format!("unknown patient_id {id}")))
    };
    let mut chains: BTreeMap<usize, BTreeMap<usize, Draw>> = BTreeMap::new();

    let path = dir.join("delta.csv");
    let mut rdr = reader(&path)?;
    expect_header(&path, &mut rdr, &["chain", "draw", "iteration"])?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let chain: usize = parse_num(&path, line, "chain", &rec[0])?;
        let draw: usize = parse_num(&path, line, "draw", &rec[1])?;
        let delta = rec
            .iter()
            .skip(3)
            .map(|v| parse_num(&path, line, "delta", v))
            .collect::<Result<_>>()?;
        chains.entry(chain).or_default().insert(
            draw,
            Draw {
                iteration: parse_num(&path, line, "iteration", &rec[2])?,
                delta,
                patterns: vec![usize::MAX; n],
                labels: vec![usize::MAX; n],
                atoms: Vec::new(),
            },
        );
    }
    for (file, column) in [("patterns.csv", "R"), ("partition.csv", "label")] {
        let path = dir.join(file);
        let mut rdr = reader(&path)?;
        expect_header(&path, &mut rdr, &["chain", "draw", "patient_id", column])?;
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let i = subject(&path, rec[2].trim())?;
            let v: usize = parse_num(&path, line, column, &rec[3])?;
            let d = draw_mut(&mut chains, &path, line, &rec[0], &rec[1])?;
            if column == "R" {
                d.patterns[i] = v;
            } else {
                d.labels[i] = v;
            }
        }
    }
    let path = dir.join("atoms.csv");
    let mut rdr = reader(&path)?;
    expect_header(&path, &mut rdr, &["chain", "draw", "cluster", "pattern", "xi"])?;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let h: usize = parse_num(&path, line, "cluster", &rec[2])?;
        let l: usize = parse_num(&path, line, "pattern", &rec[3])?;
        let xi: f64 = parse_num(&path, line, "xi", &rec[4])?;
        if l >= n_patterns {
            return Err(data_err(&path, format!("line {line}: pattern {l} out of range")));
        }
        let d = draw_mut(&mut chains, &path, line, &rec[0], &rec[1])?;
        if d.atoms.len() <= h {
            d.atoms.resize(h + 1, vec![f64::NAN; n_patterns]);
        }
        d.atoms[h][l] = xi;
    }

    let mut stores: Vec<ChainStore> = Vec::new();
    for (chain, draws) in chains {
        let mut s = ChainStore::new(chain, ids.to_vec(), n_patterns);
        for (k, (draw, d)) in draws.into_iter().enumerate() {
            if k != draw {
                return Err(data_err(dir, format!("chain {chain}: draw {k} missing")));
            }
            if d.patterns.contains(&usize::MAX) || d.labels.contains(&usize::MAX) {
                return Err(data_err(
                    dir,
                    format!("chain {chain} draw {draw}: incomplete subject rows"),
                ));
            }
            if d.atoms.iter().flatten().any(|v| v.is_nan()) {
                return Err(data_err(dir, format!("chain {chain} draw {draw}: incomplete atoms")));
            }
            s.draws.push(d);
        }
        stores.push(s);
    }

    let path = dir.join("acceptance.csv");
    if path.exists() {
        let mut rdr = reader(&path)?;
        expect_header(&path, &mut rdr, &["chain", "patient_id", "accepted", "proposed"])?;
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let chain: usize = parse_num(&path, line, "chain", &rec[0])?;
            let i = subject(&path, rec[1].trim())?;
            if let Some(s) = stores.iter_mut().find(|s| s.chain_id == chain) {
                s.accepted[i] = parse_num(&path, line, "accepted", &rec[2])?;
                s.proposed[i] = parse_num(&path, line, "proposed", &rec[3])?;
            }
        }
    }
    Ok(stores)
}

fn theta_header(days: usize, p: usize) -> [u8; 16] {
    let mut h = [0u8; 16];
    h[..8].copy_from_slice(THETA_MAGIC);
    h[8..12].copy_from_slice(&(days as u32).to_le_bytes());
    h[12..].copy_from_slice(&(p as u32).to_le_bytes());
    h
}

fn theta_bytes(theta: &Trajectory) -> Vec<u8> {
    theta.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Appends each snapshot to `<dir>/<patient_id>.bin`; one sink per chain.
pub struct ThetaFileSink {
    dir: PathBuf,
    ids: Vec<String>,
    /// Retained draw indices that received snapshots, in order.
    pub draws: Vec<usize>,
}

impl ThetaFileSink {
    pub fn new(dir: PathBuf, ids: Vec<String>) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            ids,
            draws: Vec::new(),
        })
    }
}

impl ThetaSink for ThetaFileSink {
    fn push(&mut self, draw: usize, subject: usize, theta: &Trajectory) -> Result<()> {
        if self.draws.last() != Some(&draw) {
            self.draws.push(draw);
        }
        let path = self.dir.join(format!("{}.bin", self.ids[subject]));
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        if fresh {
            f.write_all(&theta_header(theta.days(), theta.dim()))?;
        }
        f.write_all(&theta_bytes(theta))?;
        Ok(())
    }
}

/// Concatenate per-chain snapshot files into `theta/<patient_id>.bin` (chains
/// in order) and write `theta/index.csv`; the per-chain directories are removed.
pub fn merge_theta(
    theta_dir: &Path,
    ids: &[String],
    chain_draws: &[(usize, PathBuf, Vec<usize>, Vec<usize>)],
) -> Result<()> {
    let mut w = writer(&theta_dir.join("index.csv"))?;
    w.write_record(["snapshot", "chain", "draw", "iteration"])?;
    let mut k = 0;
    for (chain, _, draws, iterations) in chain_draws {
        for (d, it) in draws.iter().zip(iterations) {
            w.write_record([k.to_string(), chain.to_string(), d.to_string(), it.to_string()])?;
            k += 1;
        }
    }
    w.flush()?;
    for id in ids {
        let mut out: Option<BufWriter<File>> = None;
        for (_, dir, draws, _) in chain_draws {
            if draws.is_empty() {
                continue;
            }
            let mut bytes = Vec::new();
            File::open(dir.join(format!("{id}.bin")))?.read_to_end(&mut bytes)?;
            let f = match &mut out {
                Some(f) => {
                    bytes.drain(..16);
                    f
                }
                None => out.insert(BufWriter::new(File::create(theta_dir.join(format!("{id}.bin")))?)),
            };
            f.write_all(&bytes)?;
        }
        if let Some(mut f) = out {
            f.flush()?;
        }
    }
    for (_, dir, _, _) in chain_draws {
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
    }
    Ok(())
}

/// Every snapshot stored in one theta file.
pub fn read_theta(path: &Path) -> Result<Vec<Trajectory>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| data_err(path, e))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..8] != THETA_MAGIC {
        return Err(data_err(path, "not a theta snapshot file"));
    }
    let days = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let p = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let size = days * p * 8;
    let body = &bytes[16..];
    if size == 0 || body.len() % size != 0 {
        return Err(data_err(path, "truncated theta snapshot file"));
    }
    body.chunks_exact(size)
        .map(|chunk| {
            let values = chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            Trajectory::from_values(days, p, values)
        })
        .collect()
}

/// `(chain, draw)` of each snapshot, in file order.
pub fn read_theta_index(theta_dir: &Path) -> Result<Vec<(usize, usize)>> {
    let path = theta_dir.join("index.csv");
    let mut rdr = reader(&path)?;
    expect_header(&path, &mut rdr, &["snapshot", "chain", "draw"])?;
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            Ok((
                parse_num(&path, line, "chain", &rec[1])?,
                parse_num(&path, line, "draw", &rec[2])?,
            ))
        })
        .collect()
}

/// Write `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate_cohort, ScenarioConfig};

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            n_per_cell: 2,
            horizon: 60,
            change_day: 31,
            clump_len_range: [3, 5],
            seed: 4,
            ..Default::default()
        }
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, truth) = generate_cohort(&small()).unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
        let tp = dir.path().join(TRUTH);
        write_truth(&tp, &truth).unwrap();
        let rows = read_truth(&tp).unwrap();
        for (r, t) in rows.iter().zip(&truth) {
            assert_eq!(
                (&r.id, r.cluster, r.subtype, &r.clumps),
                (&t.id, t.cluster, t.subtype, &t.clumps)
            );
            assert_eq!(r.true_pattern, true_pattern(t));
        }
    }

    #[test]
    fn bad_inputs_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(BASELINE), "patient_id,intercept\na,1\n").unwrap();
        let obs = dir.path().join(OBSERVATIONS);
        fs::write(&obs, "patient_id,day,y,treatment\na,1,1,A\na,3,0,A\n").unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 3, "{err}");
        fs::write(&obs, "patient_id,day,y,treatment\na,1,2,A\n").unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap_err().exit_code(), 3);
        fs::write(&obs, "patient_id,day,y,treatment\na,1,,A\na,2,1,B\nb,1,0,A\n").unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap_err().exit_code(), 3);
        fs::write(&obs, "patient_id,day,y,treatment\na,2,,B\na,1,1,A\n").unwrap();
        let ds = read_dataset(dir.path()).unwrap();
        assert_eq!(ds.records[0].y, vec![Some(true), None]);
        assert_eq!(ds.records[0].treatment_changes, vec![1, 2]);
    }

    #[test]
    fn chain_outputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (ds, _) = generate_cohort(&small()).unwrap();
        let ids: Vec<String> = ds.records.iter().map(|r| r.id.clone()).collect();
        let n = ids.len();
        let mut stores = Vec::new();
        for c in 0..2 {
            let mut s = ChainStore::new(c, ids.clone(), 8);
            for k in 0..3 {
                s.draws.push(Draw {
                    iteration: 10 * (k + 1),
                    delta: vec![-1.5 + k as f64 / 3.0, 0.1 * c as f64],
                    patterns: (0..n).map(|i| (i + k) % 8).collect(),
                    labels: (0..n).map(|i| i % 2).collect(),
                    atoms: vec![vec![0.125; 8], vec![1.0 / 3.0, 2.0 / 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
                });
            }
            s.accepted = (0..n as u64).collect();
            s.proposed = vec![30; n];
            stores.push(s);
        }
        write_chain_outputs(dir.path(), &ds, &stores).unwrap();
        let back = read_chain_outputs(dir.path(), &ids, 8).unwrap();
        assert_eq!(back, stores);
    }

    #[test]
    fn theta_files_merge_in_chain_order() {
        let dir = tempfile::tempdir().unwrap();
        let theta = dir.path().join("theta");
        let ids = vec!["a".to_string(), "b".to_string()];
        let traj = |v: f64| Trajectory::from_values(3, 2, (0..6).map(|k| v + k as f64).collect()).unwrap();
        let mut parts = Vec::new();
        for c in 0..2 {
            let cdir = theta.join(format!("chain_{c}"));
            let mut sink = ThetaFileSink::new(cdir.clone(), ids.clone()).unwrap();
            for d in [0, 10] {
                for i in 0..2 {
                    sink.push(d, i, &traj(100.0 * c as f64 + d as f64 + i as f64 / 2.0))
                        .unwrap();
                }
            }
            parts.push((c, cdir, sink.draws.clone(), vec![5, 55]));
        }
        merge_theta(&theta, &ids, &parts).unwrap();
        let snaps = read_theta(&theta.join("b.bin")).unwrap();
        let want: Vec<Trajectory> = [0.5, 10.5, 100.5, 110.5].iter().map(|v| traj(*v)).collect();
        assert_eq!(snaps, want);
        assert_eq!(
            read_theta_index(&theta).unwrap(),
            vec![(0, 0), (0, 10), (1, 0), (1, 10)]
        );
        assert!(!theta.join("chain_0").exists());
        let bytes = fs::read(theta.join("a.bin")).unwrap();
        assert_eq!(&bytes[..8], b"PSTHETA1");
        assert_eq!(bytes.len(), 16 + 4 * 6 * 8);
    }
}
