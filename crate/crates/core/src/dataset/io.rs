//! JSON-lines dataset files.
//!
//! Line 1 is a header object; every following line is one point. Bases are
//! written as one `XZY...` string per snapshot and outcomes as one hex string
//! of `ceil(N/4)` digits per snapshot, qubit 1 in the most significant bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DataPoint, DatasetConfig, HybridDataset, Scope, Split, SystemKind, Tier};
use crate::error::{Error, Result};
use crate::shadows::{outcome_code, Basis, MeasurementRecord, Task};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u64,
    system: String,
    #[serde(rename = "N")]
    n_qubits: usize,
    n: usize,
    r: f64,
    m_l: usize,
    m_u: usize,
    n_val: usize,
    task: Task,
    seed: u64,
    n_test: usize,
    param_range: [f64; 2],
    use_params_as_features: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pauli_file: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct PointLine {
    id: u64,
    split: Split,
    params: Vec<f64>,
    m: usize,
    bases: Vec<String>,
    outcomes: Vec<String>,
    labels: Option<Vec<f64>>,
}

fn hex_width(n: usize) -> usize {
    n.div_ceil(4)
}

fn encode_record(rec: &MeasurementRecord) -> (Vec<String>, Vec<String>) {
    let n = rec.n_qubits();
    let width = hex_width(n);
    let mut bases = Vec::with_capacity(rec.m());
    let mut outcomes = Vec::with_capacity(rec.m());
    for j in 0..rec.m() {
        let snap = rec.snapshot(j);
        bases.push(snap.iter().map(|c| Basis::from_index(c >> 1).symbol()).collect());
        let value = snap.iter().fold(0u64, |acc, c| (acc << 1) | u64::from(c & 1));
        outcomes.push(format!("{value:0width$x}"));
    }
    (bases, outcomes)
}

fn decode_record(n: usize, bases: &[String], outcomes: &[String], line: usize) -> Result<MeasurementRecord> {
    let perr = |message: String| Error::Parse { line, message };
    if bases.len() != outcomes.len() {
        return Err(perr(format!("{} basis strings but {} outcome strings", bases.len(), outcomes.len())));
    }
    let width = hex_width(n);
    let mut codes = Vec::with_capacity(bases.len() * n);
    for (b, o) in bases.iter().zip(outcomes) {
        if b.len() != n {
            return Err(perr(format!("basis string {b:?} does not have length {n}")));
        }
        if o.len() != width {
            return Err(perr(format!("outcome string {o:?} does not have {width} hex digits")));
        }
        let value = u64::from_str_radix(o, 16).map_err(|e| perr(format!("bad outcome {o:?}: {e}")))?;
        if value >> n != 0 {
            return Err(perr(format!("outcome {o:?} has bits beyond qubit {n}")));
        }
        for (k, ch) in b.chars().enumerate() {
            let basis = Basis::from_symbol(ch).ok_or_else(|| perr(format!("unknown basis symbol {ch:?}")))?;
            let bit = ((value >> (n - 1 - k)) & 1) as u8;
            codes.push(outcome_code(basis, bit));
        }
    }
    MeasurementRecord::from_codes(n, codes).map_err(|e| perr(e.to_string()))
}

fn header_of(cfg: &DatasetConfig) -> Header {
    Header {
        version: FORMAT_VERSION,
        system: cfg.system.name().to_string(),
        n_qubits: cfg.n_qubits,
        n: cfg.n,
        r: cfg.r,
        m_l: cfg.m_l,
        m_u: cfg.m_u,
        n_val: cfg.n_val,
        task: cfg.task,
        seed: cfg.seed,
        n_test: cfg.n_test,
        param_range: [cfg.param_range.0, cfg.param_range.1],
        use_params_as_features: cfg.use_params_as_features,
        pauli_file: match &cfg.system {
            SystemKind::PauliFile(p) => Some(p.to_string_lossy().into_owned()),
            _ => None,
        },
    }
}

fn config_of(h: Header) -> Result<DatasetConfig> {
    let system = match h.system.as_str() {
        "xxz" => SystemKind::Xxz,
        "cluster_ising" => SystemKind::ClusterIsing,
        "pauli_file" => SystemKind::PauliFile(PathBuf::from(h.pauli_file.ok_or(Error::Parse {
            line: 1,
            message: "pauli_file system without a pauli_file path".into(),
        })?)),
        other => return Err(Error::Parse { line: 1, message: format!("unknown system {other:?}") }),
    };
    Ok(DatasetConfig {
        system,
        n_qubits: h.n_qubits,
        n: h.n,
        r: h.r,
        m_l: h.m_l,
        m_u: h.m_u,
        n_val: h.n_val,
        n_test: h.n_test,
        task: h.task,
        param_range: (h.param_range[0], h.param_range[1]),
        use_params_as_features: h.use_params_as_features,
        seed: h.seed,
    })
}

/// Serialize to any writer.
pub fn write_dataset<W: Write>(ds: &HybridDataset, mut out: W) -> Result<()> {
    let to_io = |e: serde_json::Error| Error::Io(e.into());
    serde_json::to_writer(&mut out, &header_of(&ds.config)).map_err(to_io)?;
    out.write_all(b"\n")?;
    for pt in ds.s_l.iter().chain(&ds.s_u).chain(&ds.s_val).chain(ds.raw_test()) {
        let (bases, outcomes) = encode_record(&pt.record);
        let line = PointLine {
            id: pt.id,
            split: pt.split,
            params: pt.params.clone(),
            m: pt.record.m(),
            bases,
            outcomes,
            labels: pt.labels.clone(),
        };
        serde_json::to_writer(&mut out, &line).map_err(to_io)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_dataset(ds: &HybridDataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

/// Parse from any reader. In [`Scope::Training`] test lines are validated
/// structurally but not retained.
pub fn read_dataset<R: Read>(input: R, scope: Scope) -> Result<HybridDataset> {
    let mut lines = BufReader::new(input).lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::Parse { line: 1, message: "empty file".into() }),
    };
    let raw: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    let version = raw
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or(Error::Parse { line: 1, message: "header has no integer version".into() })?;
    if version != FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: FORMAT_VERSION });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    let cfg = config_of(header)?;
    cfg.validate().map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;

    let mut ds = HybridDataset::from_parts(cfg.clone(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut test = Vec::new();
    let mut last_line = 1;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        last_line = line_no;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let perr = |message: String| Error::Parse { line: line_no, message };
        let pl: PointLine = serde_json::from_str(&text).map_err(|e| perr(e.to_string()))?;
        let record = decode_record(cfg.n_qubits, &pl.bases, &pl.outcomes, line_no)?;
        if record.m() != pl.m {
            return Err(perr(format!("m = {} but {} snapshots stored", pl.m, record.m())));
        }
        let (budget, visible, tier) = match pl.split {
            Split::L => (cfg.m_l, cfg.m_l, Tier::High),
            Split::U => (cfg.m_u, cfg.m_u, Tier::Low),
            Split::Val => (cfg.m_l, cfg.m_u, Tier::Low),
            Split::Test => (cfg.m_u, cfg.m_u, Tier::Low),
        };
        if pl.m != budget {
            return Err(perr(format!("{} point with m = {}, expected {budget}", pl.split.as_str(), pl.m)));
        }
        let expect_labels = pl.split != Split::U;
        if pl.labels.is_some() != expect_labels {
            return Err(perr(format!("{} point labels presence mismatch", pl.split.as_str())));
        }
        if let Some(l) = &pl.labels {
            if l.len() != cfg.n_qubits - 1 {
                return Err(perr(format!("label vector of length {}, expected {}", l.len(), cfg.n_qubits - 1)));
            }
        }
        let pt = DataPoint { id: pl.id, split: pl.split, tier, params: pl.params, record, visible, labels: pl.labels };
        match pt.split {
            Split::L => ds.s_l.push(pt),
            Split::U => ds.s_u.push(pt),
            Split::Val => ds.s_val.push(pt),
            Split::Test => test.push(pt),
        }
    }
    let counts = [
        ("L", ds.s_l.len(), cfg.n_labeled()),
        ("U", ds.s_u.len(), cfg.n_unlabeled()),
        ("val", ds.s_val.len(), cfg.n_val),
        ("test", test.len(), cfg.n_test),
    ];
    for (name, got, want) in counts {
        if got != want {
            return Err(Error::Parse {
                line: last_line,
                message: format!("file ends with {got} {name} points, header promises {want}"),
            });
        }
    }
    let mut ids: Vec<u64> = ds.s_l.iter().chain(&ds.s_u).chain(&ds.s_val).chain(&test).map(|p| p.id).collect();
    ids.sort_unstable();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Parse { line: last_line, message: "duplicate point ids".into() });
    }
    match scope {
        Scope::Full => {
            ds = HybridDataset::from_parts(ds.config, ds.s_l, ds.s_u, ds.s_val, test);
        }
        Scope::Training => ds.set_scope(Scope::Training),
    }
    Ok(ds)
}

pub fn load_dataset(path: &Path) -> Result<HybridDataset> {
    load_dataset_scoped(path, Scope::Full)
}

pub fn load_dataset_scoped(path: &Path, scope: Scope) -> Result<HybridDataset> {
    read_dataset(File::open(path)?, scope)
}

#[cfg(test)]
mod tests {
    use super::super::build_hybrid_dataset;
    use super::*;

    fn tiny() -> HybridDataset {
        let cfg = DatasetConfig {
            n: 10,
            r: 0.5,
            m_l: 16,
            m_u: 4,
            n_val: 3,
            n_test: 2,
            seed: 3,
            ..DatasetConfig::new(SystemKind::ClusterIsing, 5, Task::CorrZ)
        };
        build_hybrid_dataset(&cfg).unwrap()
    }

    fn bytes(ds: &HybridDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset(ds, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = tiny();
        let buf = bytes(&ds);
        let back = read_dataset(&buf[..], Scope::Full).unwrap();
        assert_eq!(back, ds);
        assert_eq!(bytes(&back), buf);
    }

    #[test]
    fn header_layout() {
        let buf = bytes(&tiny());
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with(r#"{"version":1,"system":"cluster_ising","N":5,"n":10,"r":0.5,"m_l":16,"m_u":4,"n_val":3,"task":"corr_z","seed":3"#), "{first}");
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(second["split"], "L");
        assert_eq!(second["outcomes"][0].as_str().unwrap().len(), 2);
        assert_eq!(second["bases"][0].as_str().unwrap().len(), 5);
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let buf = bytes(&tiny());
        let cut = &buf[..buf.len() - 40];
        assert!(matches!(read_dataset(cut, Scope::Full), Err(Error::Parse { .. })));
        // Cut on a line boundary: the count check fires.
        let text = String::from_utf8(buf.clone()).unwrap();
        let fewer: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(read_dataset(fewer.as_bytes(), Scope::Full), Err(Error::Parse { .. })));
        assert!(matches!(read_dataset(&b""[..], Scope::Full), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let text = String::from_utf8(bytes(&tiny())).unwrap().replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(read_dataset(text.as_bytes(), Scope::Full), Err(Error::Version { found: 2, expected: 1 })));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = String::from_utf8(bytes(&tiny())).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[3] = lines[3].replace("\"split\":\"L\"", "\"split\":\"Q\"");
        let broken = lines.join("\n");
        match read_dataset(broken.as_bytes(), Scope::Full) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_unlabeled_split_round_trips() {
        let ds = tiny();
        let mut cfg = ds.config.clone();
        cfg.n = ds.s_l.len();
        cfg.r = 0.99;
        // r * n rounds to n: no unlabeled points.
        let empty = HybridDataset::from_parts(cfg, ds.s_l.clone(), Vec::new(), ds.s_val.clone(), ds.raw_test().to_vec());
        let buf = bytes(&empty);
        assert_eq!(read_dataset(&buf[..], Scope::Full).unwrap(), empty);
    }

    #[test]
    fn training_scope_drops_test_points() {
        let buf = bytes(&tiny());
        let ds = read_dataset(&buf[..], Scope::Training).unwrap();
        assert!(ds.test_points().is_err());
        assert_eq!(ds.s_val.len(), 3);
    }
}
