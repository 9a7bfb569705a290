//! Feature CSV format.
//!
//! One row per segment: the 34 feature columns (`fwd_*` then `bwd_*`),
//! followed by the meta columns `src, sport, dst, dport, proto, start_us,
//! end_us, n_pkts`. Floats are written in shortest round-trip form, so
//! identical extractions are byte-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use thiserror::Error;

use super::{feature_names, Endpoint, FeatureVector, SegmentMeta, FEATURE_DIM};

pub const META_NAMES: [&str; 8] = [
    "src", "sport", "dst", "dport", "proto", "start_us", "end_us", "n_pkts",
];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("empty feature file: no header row")]
    MissingHeader,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Parsed contents of a feature CSV.
pub struct FeatureFile {
    /// Names of the feature columns, in file order.
    pub names: Vec<String>,
    /// One feature row per segment.
    pub rows: Vec<Vec<f64>>,
    /// Segment metadata, present when all meta columns exist in the file.
    pub meta: Option<Vec<SegmentMeta>>,
}

pub fn write_feature_csv(path: impl AsRef<Path>, vectors: &[FeatureVector]) -> Result<(), CsvError> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    let names = feature_names();
    let header: Vec<&str> = names
        .iter()
        .map(|s| s.as_str())
        .chain(META_NAMES)
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for fv in vectors {
        let mut fields: Vec<String> = fv.values.iter().map(|v| format!("{v}")).collect();
        let m = &fv.meta;
        fields.push(m.src.ip.to_string());
        fields.push(m.src.port.to_string());
        fields.push(m.dst.ip.to_string());
        fields.push(m.dst.port.to_string());
        fields.push(m.protocol.to_string());
        fields.push(m.start_us.to_string());
        fields.push(m.end_us.to_string());
        fields.push(m.n_packets.to_string());
        writeln!(w, "{}", fields.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<FeatureFile, CsvError> {
    let file = File::open(path.as_ref())?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(CsvError::MissingHeader),
    };
    let columns: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let meta_at: Vec<Option<usize>> = META_NAMES
        .iter()
        .map(|name| columns.iter().position(|c| c == name))
        .collect();
    let has_meta = meta_at.iter().all(|m| m.is_some());
    let feature_cols: Vec<usize> = (0..columns.len())
        .filter(|i| !META_NAMES.contains(&columns[*i].as_str()))
        .collect();
    let names: Vec<String> = feature_cols.iter().map(|&i| columns[i].clone()).collect();

    let mut rows = Vec::new();
    let mut meta = Vec::new();
    for (line_idx, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let line_no = line_idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(CsvError::Parse {
                line: line_no,
                msg: format!("expected {} fields, found {}", columns.len(), fields.len()),
            });
        }
        let mut row = Vec::with_capacity(feature_cols.len());
        for &i in &feature_cols {
            let v: f64 = fields[i].parse().map_err(|_| CsvError::Parse {
                line: line_no,
                msg: format!("bad float '{}' in column {}", fields[i], columns[i]),
            })?;
            row.push(v);
        }
        rows.push(row);
        if has_meta {
            let at = |k: usize| fields[meta_at[k].expect("checked")];
            meta.push(parse_meta(
                [at(0), at(1), at(2), at(3), at(4), at(5), at(6), at(7)],
                line_no,
            )?);
        }
    }
    Ok(FeatureFile {
        names,
        rows,
        meta: if has_meta { Some(meta) } else { None },
    })
}

fn parse_meta(fields: [&str; 8], line: usize) -> Result<SegmentMeta, CsvError> {
    let err = |msg: String| CsvError::Parse { line, msg };
    let ip = |s: &str| -> Result<Ipv4Addr, CsvError> {
        s.parse().map_err(|_| err(format!("bad IPv4 address '{s}'")))
    };
    let num = |s: &str, what: &str| -> Result<i64, CsvError> {
        s.parse().map_err(|_| err(format!("bad {what} '{s}'")))
    };
    Ok(SegmentMeta {
        src: Endpoint {
            ip: ip(fields[0])?,
            port: num(fields[1], "port")? as u16,
        },
        dst: Endpoint {
            ip: ip(fields[2])?,
            port: num(fields[3], "port")? as u16,
        },
        protocol: num(fields[4], "protocol")? as u8,
        start_us: num(fields[5], "timestamp")?,
        end_us: num(fields[6], "timestamp")?,
        n_packets: num(fields[7], "packet count")? as usize,
    })
}

/// Restrict a parsed file to exactly the canonical 34 columns, in
/// canonical order. Errors when columns are missing.
pub fn canonical_rows(file: &FeatureFile) -> Result<Vec<Vec<f64>>, CsvError> {
    let wanted = feature_names();
    if file.names.len() == FEATURE_DIM && file.names.iter().zip(wanted.iter()).all(|(a, b)| a == b)
    {
        return Ok(file.rows.clone());
    }
    let mut order = Vec::with_capacity(FEATURE_DIM);
    for name in wanted.iter() {
        match file.names.iter().position(|c| c == name) {
            Some(i) => order.push(i),
            None => {
                return Err(CsvError::Parse {
                    line: 1,
                    msg: format!("missing feature column '{name}'"),
                })
            }
        }
    }
    Ok(file
        .rows
        .iter()
        .map(|row| order.iter().map(|&i| row[i]).collect())
        .collect())
}
