//! Stage artifacts on disk.
//!
//! Everything except weight dumps is line-oriented text so runs diff
//! cleanly: a versioned header, `key = value` metadata, then one record per
//! line. Floats are written with Rust's shortest round-trip formatting, so
//! write-then-read reproduces values bit-exactly and artifact digests are
//! stable across reruns.

use std::fmt::Write as _;
use std::io::{Read, Write as _};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ilp::Policy;
use crate::indicator::IndicatorReport;
use crate::cost::LayerCostStats;

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn malformed(what: &'static str, path: &Path, detail: impl Into<String>) -> Error {
    Error::MalformedArtifact { what, path: path.to_path_buf(), detail: detail.into() }
}

/// Split artifact text into `key = value` pairs and data rows, skipping
/// comment lines. The first line must equal `header`.
fn parse_lines<'a>(text: &'a str, header: &str, what: &'static str, path: &Path) -> Result<(Vec<(&'a str, &'a str)>, Vec<&'a str>)> {
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first.trim() == header => {}
        other => return Err(malformed(what, path, format!("bad header {other:?}, expected '{header}'"))),
    }
    let mut pairs = Vec::new();
    let mut rows = Vec::new();
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            pairs.push((key.trim(), value.trim()));
        } else {
            rows.push(line);
        }
    }
    Ok((pairs, rows))
}

fn lookup<'a>(pairs: &[(&'a str, &'a str)], key: &str, what: &'static str, path: &Path) -> Result<&'a str> {
    pairs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| malformed(what, path, format!("missing key '{key}'")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &'static str, path: &Path) -> Result<T> {
    s.parse().map_err(|_| malformed(what, path, format!("cannot parse '{s}'")))
}

// ---------------------------------------------------------------------------
// indicator report

const INDICATORS_HEADER: &str = "# mpq indicators v1";

/// One record per (layer, kind, bit); the loss curve stays in memory.
pub fn write_indicator_report(report: &IndicatorReport, path: &Path) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{INDICATORS_HEADER}").unwrap();
    writeln!(text, "seed = {}", report.seed).unwrap();
    writeln!(text, "steps = {}", report.steps).unwrap();
    writeln!(text, "bits = {}", join(&report.bits)).unwrap();
    writeln!(text, "layers = {}", report.layer_names.len()).unwrap();
    writeln!(text, "# layer name kind bit value").unwrap();
    for (l, name) in report.layer_names.iter().enumerate() {
        for (kind, values) in [("w", &report.s_w[l]), ("a", &report.s_a[l])] {
            for (i, &bit) in report.bits.iter().enumerate() {
                writeln!(text, "{l} {name} {kind} {bit} {}", values[i]).unwrap();
            }
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_indicator_report(path: &Path) -> Result<IndicatorReport> {
    const WHAT: &str = "indicators";
    let text = std::fs::read_to_string(path)?;
    let (pairs, rows) = parse_lines(&text, INDICATORS_HEADER, WHAT, path)?;
    let seed = parse_num(lookup(&pairs, "seed", WHAT, path)?, WHAT, path)?;
    let steps = parse_num(lookup(&pairs, "steps", WHAT, path)?, WHAT, path)?;
    let bits: Vec<u32> = lookup(&pairs, "bits", WHAT, path)?
        .split(',')
        .map(|s| parse_num(s.trim(), WHAT, path))
        .collect::<Result<_>>()?;
    let layers: usize = parse_num(lookup(&pairs, "layers", WHAT, path)?, WHAT, path)?;
    let n = bits.len();
    if rows.len() != layers * 2 * n {
        return Err(malformed(WHAT, path, format!("{} records, expected {}", rows.len(), layers * 2 * n)));
    }
    let mut layer_names = vec![String::new(); layers];
    let mut s_w = vec![vec![f64::NAN; n]; layers];
    let mut s_a = vec![vec![f64::NAN; n]; layers];
    for row in rows {
        let fields: Vec<&str> = row.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(malformed(WHAT, path, format!("bad record '{row}'")));
        }
        let l: usize = parse_num(fields[0], WHAT, path)?;
        let bit: u32 = parse_num(fields[3], WHAT, path)?;
        let value: f64 = parse_num(fields[4], WHAT, path)?;
        let i = bits
            .iter()
            .position(|&b| b == bit)
            .ok_or_else(|| malformed(WHAT, path, format!("bit {bit} not in header")))?;
        if l >= layers {
            return Err(malformed(WHAT, path, format!("layer {l} out of range")));
        }
        layer_names[l] = fields[1].to_string();
        match fields[2] {
            "w" => s_w[l][i] = value,
            "a" => s_a[l][i] = value,
            other => return Err(malformed(WHAT, path, format!("bad kind '{other}'"))),
        }
    }
    Ok(IndicatorReport { layer_names, bits, s_w, s_a, seed, steps, loss_curve: Vec::new() })
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

// ---------------------------------------------------------------------------
// layer stats

const STATS_HEADER: &str = "# mpq layer stats v1";

pub fn write_layer_stats(stats: &[LayerCostStats], path: &Path) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{STATS_HEADER}").unwrap();
    writeln!(text, "layers = {}", stats.len()).unwrap();
    writeln!(text, "# layer name macs params").unwrap();
    for s in stats {
        writeln!(text, "{} {} {} {}", s.layer, s.name, s.macs, s.params).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_layer_stats(path: &Path) -> Result<Vec<LayerCostStats>> {
    const WHAT: &str = "layer stats";
    let text = std::fs::read_to_string(path)?;
    let (pairs, rows) = parse_lines(&text, STATS_HEADER, WHAT, path)?;
    let layers: usize = parse_num(lookup(&pairs, "layers", WHAT, path)?, WHAT, path)?;
    if rows.len() != layers {
        return Err(malformed(WHAT, path, format!("{} records, expected {layers}", rows.len())));
    }
    rows.iter()
        .map(|row| {
            let fields: Vec<&str> = row.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(malformed(WHAT, path, format!("bad record '{row}'")));
            }
            Ok(LayerCostStats {
                layer: parse_num(fields[0], WHAT, path)?,
                name: fields[1].to_string(),
                macs: parse_num(fields[2], WHAT, path)?,
                params: parse_num(fields[3], WHAT, path)?,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// policy

const POLICY_HEADER: &str = "# mpq policy v1";

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLayer {
    pub layer: usize,
    pub name: String,
    pub b_w: u32,
    pub b_a: u32,
}

/// The on-disk form of a solved policy. Wall time is reported on stdout and
/// in the run record, never here, so identical runs write identical bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFile {
    pub sense: String,
    pub objective: f64,
    pub total_bitops: u64,
    pub total_size_bits: u64,
    pub nodes_explored: u64,
    pub instance_digest: String,
    pub layers: Vec<PolicyLayer>,
}

impl PolicyFile {
    pub fn from_policy(policy: &Policy, layer_names: &[String]) -> Self {
        PolicyFile {
            sense: match policy.sense {
                crate::ilp::Sense::Minimize => "minimize".into(),
                crate::ilp::Sense::Maximize => "maximize".into(),
            },
            objective: policy.objective,
            total_bitops: policy.total_bitops,
            total_size_bits: policy.total_size_bits,
            nodes_explored: policy.nodes_explored,
            instance_digest: policy.instance_digest.clone(),
            layers: policy
                .choices
                .iter()
                .map(|c| PolicyLayer { layer: c.layer, name: layer_names[c.layer].clone(), b_w: c.b_w, b_a: c.b_a })
                .collect(),
        }
    }
}

pub fn write_policy(policy: &PolicyFile, path: &Path) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{POLICY_HEADER}").unwrap();
    writeln!(text, "sense = {}", policy.sense).unwrap();
    writeln!(text, "objective = {}", policy.objective).unwrap();
    writeln!(text, "total_bitops = {}", policy.total_bitops).unwrap();
    writeln!(text, "total_size_bits = {}", policy.total_size_bits).unwrap();
    writeln!(text, "nodes_explored = {}", policy.nodes_explored).unwrap();
    writeln!(text, "instance_digest = {}", policy.instance_digest).unwrap();
    writeln!(text, "layers = {}", policy.layers.len()).unwrap();
    writeln!(text, "# layer name b_w b_a").unwrap();
    for l in &policy.layers {
        writeln!(text, "{} {} {} {}", l.layer, l.name, l.b_w, l.b_a).unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_policy(path: &Path) -> Result<PolicyFile> {
    const WHAT: &str = "policy";
    let text = std::fs::read_to_string(path)?;
    let (pairs, rows) = parse_lines(&text, POLICY_HEADER, WHAT, path)?;
    let layers: usize = parse_num(lookup(&pairs, "layers", WHAT, path)?, WHAT, path)?;
    if rows.len() != layers {
        return Err(malformed(WHAT, path, format!("{} records, expected {layers}", rows.len())));
    }
    let layers = rows
        .iter()
        .map(|row| {
            let fields: Vec<&str> = row.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(malformed(WHAT, path, format!("bad record '{row}'")));
            }
            Ok(PolicyLayer {
                layer: parse_num(fields[0], WHAT, path)?,
                name: fields[1].to_string(),
                b_w: parse_num(fields[2], WHAT, path)?,
                b_a: parse_num(fields[3], WHAT, path)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyFile {
        sense: lookup(&pairs, "sense", WHAT, path)?.to_string(),
        objective: parse_num(lookup(&pairs, "objective", WHAT, path)?, WHAT, path)?,
        total_bitops: parse_num(lookup(&pairs, "total_bitops", WHAT, path)?, WHAT, path)?,
        total_size_bits: parse_num(lookup(&pairs, "total_size_bits", WHAT, path)?, WHAT, path)?,
        nodes_explored: parse_num(lookup(&pairs, "nodes_explored", WHAT, path)?, WHAT, path)?,
        instance_digest: lookup(&pairs, "instance_digest", WHAT, path)?.to_string(),
        layers,
    })
}

// ---------------------------------------------------------------------------
// raw weight dumps (the one binary artifact)

const WEIGHTS_MAGIC: &[u8; 8] = b"MPQW0001";

pub fn write_weights(tensors: &[(String, Vec<usize>, Vec<f64>)], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(WEIGHTS_MAGIC)?;
    out.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, shape, values) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in values {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_weights(path: &Path) -> Result<Vec<(String, Vec<usize>, Vec<f64>)>> {
    const WHAT: &str = "weights";
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(malformed(WHAT, path, "bad magic"));
    }
    let mut u32_buf = [0u8; 4];
    let mut read_u32 = |file: &mut dyn Read| -> Result<u32> {
        file.read_exact(&mut u32_buf)?;
        Ok(u32::from_le_bytes(u32_buf))
    };
    let count = read_u32(&mut file)?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut file)? as usize;
        let mut name = vec![0u8; name_len];
        file.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| malformed(WHAT, path, "non-utf8 tensor name"))?;
        let rank = read_u32(&mut file)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut file)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        let mut f64_buf = [0u8; 8];
        for _ in 0..numel {
            file.read_exact(&mut f64_buf)?;
            values.push(f64::from_le_bytes(f64_buf));
        }
        tensors.push((name, shape, values));
    }
    Ok(tensors)
}

// ---------------------------------------------------------------------------
// run record

const RECORD_HEADER: &str = "# mpq run record v1";

/// Append-only index of one pipeline run: config digest, artifact paths with
/// their digests, metrics and wall times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub config_digest: String,
    pub seed: u64,
    pub model: String,
    /// `(label, relative path, sha256)`
    pub artifacts: Vec<(String, PathBuf, String)>,
    /// `(name, value)`
    pub metrics: Vec<(String, f64)>,
    /// `(stage, milliseconds)`
    pub wall_ms: Vec<(String, u128)>,
}

impl RunRecord {
    pub fn add_artifact(&mut self, label: &str, dir: &Path, file: &str) -> Result<()> {
        let digest = file_sha256(&dir.join(file))?;
        self.artifacts.push((label.to_string(), PathBuf::from(file), digest));
        Ok(())
    }

    pub fn artifact(&self, label: &str) -> Option<&PathBuf> {
        self.artifacts.iter().find(|(l, _, _)| l == label).map(|(_, p, _)| p)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Every referenced artifact exists and hashes to its recorded digest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (_, file, digest) in &self.artifacts {
            let path = dir.join(file);
            if !path.exists() || &file_sha256(&path)? != digest {
                return Err(Error::DigestMismatch { path });
            }
        }
        Ok(())
    }
}

pub fn write_run_record(record: &RunRecord, path: &Path) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{RECORD_HEADER}").unwrap();
    writeln!(text, "config_digest = {}", record.config_digest).unwrap();
    writeln!(text, "seed = {}", record.seed).unwrap();
    writeln!(text, "model = {}", record.model).unwrap();
    for (label, file, digest) in &record.artifacts {
        writeln!(text, "artifact {label} {} {digest}", file.display()).unwrap();
    }
    for (name, value) in &record.metrics {
        writeln!(text, "metric {name} {value}").unwrap();
    }
    for (stage, ms) in &record.wall_ms {
        writeln!(text, "wall_ms {stage} {ms}").unwrap();
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_run_record(path: &Path) -> Result<RunRecord> {
    const WHAT: &str = "run record";
    let text = std::fs::read_to_string(path)?;
    let (pairs, rows) = parse_lines(&text, RECORD_HEADER, WHAT, path)?;
    let mut record = RunRecord {
        config_digest: lookup(&pairs, "config_digest", WHAT, path)?.to_string(),
        seed: parse_num(lookup(&pairs, "seed", WHAT, path)?, WHAT, path)?,
        model: lookup(&pairs, "model", WHAT, path)?.to_string(),
        ..Default::default()
    };
    for row in rows {
        let fields: Vec<&str> = row.split_whitespace().collect();
        match fields.as_slice() {
            ["artifact", label, file, digest] => {
                record.artifacts.push((label.to_string(), PathBuf::from(file), digest.to_string()));
            }
            ["metric", name, value] => record.metrics.push((name.to_string(), parse_num(value, WHAT, path)?)),
            ["wall_ms", stage, ms] => record.wall_ms.push((stage.to_string(), parse_num(ms, WHAT, path)?)),
            _ => return Err(malformed(WHAT, path, format!("bad record '{row}'"))),
        }
    }
    Ok(record)
}
