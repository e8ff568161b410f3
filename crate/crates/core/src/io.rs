//! Experiment configuration, CSV/JSON persistence and run manifests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::DiagnosticsConfig;
use crate::error::{Error, Result};
use crate::flow::{InitialKind, SolverConfig};
use crate::geometry::RescaledState;
use crate::harness::PerturbedRun;
use crate::tip_chart::TipProfile;

/// Gauge used by the pure-gauge round trip of the uniqueness command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeSeed {
    /// beta e^{tau0}
    pub beta_hat: f64,
    pub gamma: f64,
}

/// One flat schema shared by all subcommands; each reads the keys it needs.
/// Paths are relative to the workspace root, the directory holding the
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: InitialKind,
    #[serde(rename = "N")]
    pub n: usize,
    pub cfl: f64,
    pub tau_init: f64,
    pub tau_end: f64,
    pub theta: f64,
    pub cadence: f64,
    pub epsilon: f64,
    pub half_width: f64,
    pub z_max: f64,
    /// Soliton-region scale; None selects the Bryant far-field onset.
    pub l: Option<f64>,
    pub tau0: f64,
    pub gauge: Option<GaugeSeed>,
    pub perturbed: PerturbedRun,
    pub diagnostics: DiagnosticsConfig,
    pub seed: u64,
    pub battery_size: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            kind: s.kind,
            n: s.n,
            cfl: s.cfl,
            tau_init: s.tau_init,
            tau_end: s.tau_end,
            theta: s.theta,
            cadence: s.cadence,
            epsilon: s.epsilon,
            half_width: s.half_width,
            z_max: s.z_max,
            l: None,
            tau0: -400.0,
            gauge: None,
            perturbed: PerturbedRun::default(),
            diagnostics: DiagnosticsConfig::default(),
            seed: 7,
            battery_size: 100,
            output_dir: "out".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            kind: self.kind,
            n: self.n,
            cfl: self.cfl,
            tau_init: self.tau_init,
            tau_end: self.tau_end,
            theta: self.theta,
            cadence: self.cadence,
            epsilon: self.epsilon,
            half_width: self.half_width,
            z_max: self.z_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver().validate()?;
        let p = Path::new(&self.output_dir);
        if self.output_dir.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(Error::SchemaError(format!("output_dir: `{}` must be a relative path inside the workspace", self.output_dir)));
        }
        if !(self.theta > 0.0 && self.theta < 2f64.sqrt()) {
            return Err(Error::SchemaError(format!("theta: {} must lie in (0, sqrt 2)", self.theta)));
        }
        if let Some(l) = self.l {
            if !(l >= 1.0) {
                return Err(Error::SchemaError(format!("l: {l} must be at least 1")));
            }
        }
        if self.tau0 > -1.0 {
            return Err(Error::SchemaError(format!("tau0: {} must be at most -1", self.tau0)));
        }
        Ok(())
    }

    /// Output directory resolved against the workspace root.
    pub fn output_path(&self, root: &Path) -> PathBuf {
        root.join(&self.output_dir)
    }

    /// Canonical JSON of the effective config.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parse config text. Syntax errors carry line and column; schema errors
/// name the offending key (just the key for unknown keys).
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ParseError {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        // the path already ends in the key for unknown keys
        if inner.starts_with("unknown field") {
            Error::SchemaError(path)
        } else {
            Error::SchemaError(format!("{path}: {inner}"))
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    parse_config_str(&text)
}

/// Workspace root of a config file: its directory.
pub fn workspace_root(config_path: &Path) -> PathBuf {
    match config_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub fn emit_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    fs::write(path, cfg.to_json())?;
    Ok(())
}

const HASH_PREFIX: &str = "# config-sha256: ";

/// CSV with a config-hash comment line and a header row. Floats use the
/// shortest round-trip representation.
pub fn write_csv(path: &Path, config_hash: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut file = fs::File::create(path)?;
    writeln!(file, "{HASH_PREFIX}{config_hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for r in rows {
        if r.len() != header.len() {
            return Err(Error::InvalidParameter(format!("row of {} values for {} columns", r.len(), header.len())));
        }
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub config_hash: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::SchemaError(format!("missing column {name}")))?;
        Ok(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let config_hash = first
        .trim_end()
        .strip_prefix(HASH_PREFIX)
        .ok_or_else(|| Error::ParseError { line: 1, column: 1, msg: "missing config-hash comment".into() })?
        .to_string();
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| {
                f.parse::<f64>().map_err(|e| Error::ParseError { line: k + 3, column: c + 1, msg: e.to_string() })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(CsvTable { config_hash, header, rows })
}

/// Snapshot metadata stored next to its CSV. Infinite tips are stored as null.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub tau: f64,
    pub nodes: usize,
    pub sigma_minus: Option<f64>,
    pub sigma_plus: Option<f64>,
    pub csv: String,
    pub config_sha256: String,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Write `<stem>.csv` (sigma, u) and `<stem>.json` into `dir`.
pub fn write_rescaled_state(dir: &Path, stem: &str, state: &RescaledState, config_hash: &str) -> Result<SnapshotMeta> {
    let rows: Vec<Vec<f64>> = state.sigma.iter().zip(&state.u).map(|(s, u)| vec![*s, *u]).collect();
    let csv_name = format!("{stem}.csv");
    write_csv(&dir.join(&csv_name), config_hash, &["sigma", "u"], &rows)?;
    let meta = SnapshotMeta {
        tau: state.tau,
        nodes: state.u.len(),
        sigma_minus: finite(state.sigma_minus),
        sigma_plus: finite(state.sigma_plus),
        csv: csv_name,
        config_sha256: config_hash.into(),
    };
    write_json(&dir.join(format!("{stem}.json")), &meta)?;
    Ok(meta)
}

pub fn read_rescaled_state(dir: &Path, meta: &SnapshotMeta) -> Result<RescaledState> {
    let t = read_csv(&dir.join(&meta.csv))?;
    if t.config_hash != meta.config_sha256 {
        return Err(Error::SchemaError(format!("{}: config hash mismatch", meta.csv)));
    }
    let state = RescaledState {
        sigma: t.column("sigma")?,
        u: t.column("u")?,
        tau: meta.tau,
        sigma_plus: meta.sigma_plus.unwrap_or(f64::INFINITY),
        sigma_minus: meta.sigma_minus.unwrap_or(f64::NEG_INFINITY),
    };
    if state.u.len() != meta.nodes {
        return Err(Error::SchemaError(format!("{}: {} rows, expected {}", meta.csv, state.u.len(), meta.nodes)));
    }
    Ok(state)
}

/// Tip chart as CSV: u, Y, Psi, sigma, rho = u sqrt|tau|, Z = Y.
pub fn write_tip_profile(path: &Path, tp: &TipProfile, config_hash: &str) -> Result<()> {
    let sq = tp.tau.abs().sqrt();
    let rows: Vec<Vec<f64>> =
        (0..tp.u.len()).map(|i| vec![tp.u[i], tp.y[i], tp.psi[i], tp.sigma[i], tp.u[i] * sq, tp.y[i]]).collect();
    write_csv(path, config_hash, &["u", "Y", "Psi", "sigma", "rho", "Z"], &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Index of one run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub outcome: String,
    pub snapshots: Vec<SnapshotMeta>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Write every snapshot and the manifest into `dir`.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, states: &[RescaledState], outcome: &str) -> Result<RunManifest> {
    let hash = cfg.hash();
    let snapshots = states
        .iter()
        .enumerate()
        .map(|(k, s)| write_rescaled_state(dir, &format!("snapshot_{k:04}"), s, &hash))
        .collect::<Result<Vec<_>>>()?;
    let m = RunManifest { config_sha256: hash, config: cfg.clone(), outcome: outcome.into(), snapshots };
    write_json(&dir.join(MANIFEST_NAME), &m)?;
    Ok(m)
}

/// Load a manifest and its snapshots; the stored config must hash to the
/// recorded value.
pub fn load_run(manifest_path: &Path) -> Result<(RunManifest, Vec<RescaledState>)> {
    let text = fs::read_to_string(manifest_path)?;
    let m: RunManifest = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if m.config.hash() != m.config_sha256 {
        return Err(Error::SchemaError("config_sha256 does not match the stored config".into()));
    }
    if let Some(s) = m.snapshots.iter().find(|s| s.config_sha256 != m.config_sha256) {
        return Err(Error::SchemaError(format!("{}: written under a different config", s.csv)));
    }
    let dir = workspace_root(manifest_path);
    let states = m.snapshots.iter().map(|s| read_rescaled_state(&dir, s)).collect::<Result<Vec<_>>>()?;
    Ok((m, states))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_rescaled, ReferenceKind};
    use proptest::prelude::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(r#"{"kind":"cylinder","N":128}"#).unwrap();
        assert_eq!(c.n, 128);
        assert_eq!(c.kind, InitialKind::Cylinder);
        assert_eq!(c.cfl, 0.2);
        assert_eq!((c.tau_init, c.tau_end), (-20.0, -10.0));
        assert_eq!(c.output_dir, "out");
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse_config_str(r#"{"kind":"cylinder","foo":1}"#).unwrap_err();
        assert_eq!(e, Error::SchemaError("foo".into()));
        let e = parse_config_str(r#"{"perturbed":{"kapa":1}}"#).unwrap_err();
        assert_eq!(e, Error::SchemaError("perturbed.kapa".into()));
    }

    #[test]
    fn type_errors_name_the_key() {
        match parse_config_str(r#"{"N":"many"}"#).unwrap_err() {
            Error::SchemaError(m) => assert!(m.starts_with("N:"), "{m}"),
            e => panic!("{e:?}"),
        }
        match parse_config_str(r#"{"kind":"torus"}"#).unwrap_err() {
            Error::SchemaError(m) => assert!(m.starts_with("kind:"), "{m}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_config_str("{\n  \"N\": 128,\n  \"cfl\" 0.2\n}").unwrap_err();
        match e {
            Error::ParseError { line, column, .. } => assert_eq!((line, column), (3, 9)),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn semantic_validation() {
        assert!(matches!(parse_config_str(r#"{"N":8}"#), Err(Error::SchemaError(_))));
        assert!(matches!(parse_config_str(r#"{"output_dir":"/tmp/x"}"#), Err(Error::SchemaError(_))));
        assert!(matches!(parse_config_str(r#"{"output_dir":"../x"}"#), Err(Error::SchemaError(_))));
        assert!(matches!(parse_config_str(r#"{"theta":2.0}"#), Err(Error::SchemaError(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let c = ExperimentConfig { l: Some(3.5), gauge: Some(GaugeSeed { beta_hat: 1e-4, gamma: 0.5 }), ..Default::default() };
        emit_config(&c, &path).unwrap();
        let back = parse_config(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(workspace_root(&path), dir.path());
        assert_eq!(c.output_path(dir.path()), dir.path().join("out"));
    }

    #[test]
    fn csv_round_trip_and_hash_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![vec![0.1, 1.0 / 3.0], vec![-2.5e-17, 1e300]];
        write_csv(&path, "abc", &["a", "b"], &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config-sha256: abc\na,b\n"));
        let t = read_csv(&path).unwrap();
        assert_eq!(t.rows, rows);
        assert_eq!(t.column("b").unwrap(), vec![1.0 / 3.0, 1e300]);
        assert!(write_csv(&path, "abc", &["a"], &rows).is_err());
    }

    #[test]
    fn run_manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let states = vec![
            reference_rescaled(ReferenceKind::Cylinder, 65, -20.0, 5.0),
            reference_rescaled(ReferenceKind::Sphere, 65, -19.0, 0.0),
        ];
        write_run(dir.path(), &cfg, &states, "completed").unwrap();
        let (m, back) = load_run(&dir.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(m.config, cfg);
        assert_eq!(back, states);
        // a changed config no longer matches the snapshot hashes
        let mut m2 = m.clone();
        m2.config.n = 512;
        m2.config_sha256 = m2.config.hash();
        write_json(&dir.path().join(MANIFEST_NAME), &m2).unwrap();
        assert!(matches!(load_run(&dir.path().join(MANIFEST_NAME)), Err(Error::SchemaError(_))));
    }

    proptest! {
        #[test]
        fn emitted_configs_parse_back(n in 64usize..2048, cfl in 0.01f64..0.5, seed in any::<u64>(), theta in 0.01f64..1.0) {
            let c = ExperimentConfig { n, cfl, seed, theta, ..Default::default() };
            prop_assert_eq!(parse_config_str(&c.to_json()).unwrap(), c);
        }
    }
}
