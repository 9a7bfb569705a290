//! Results CSV: segment meta columns plus verdict, distance, nearest
//! cluster and threshold.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use flowguard::detector::DetectionResult;
use flowguard::flowmetrics::{Endpoint, SegmentMeta};
use flowguard::Verdict;

pub const RESULTS_HEADER: &str =
    "src,sport,dst,dport,proto,start_us,end_us,n_pkts,verdict,distance,nearest_cluster,threshold";

pub struct ResultRow {
    pub meta: SegmentMeta,
    pub verdict: Verdict,
    pub distance: f64,
    #[allow(dead_code)] // part of the file format, unused downstream
    pub nearest_cluster: usize,
    pub threshold: f64,
}

pub fn write_results_csv(
    path: impl AsRef<Path>,
    meta: &[SegmentMeta],
    results: &[DetectionResult],
) -> std::io::Result<()> {
    debug_assert_eq!(meta.len(), results.len());
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "{RESULTS_HEADER}")?;
    for (m, r) in meta.iter().zip(results.iter()) {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            m.src.ip,
            m.src.port,
            m.dst.ip,
            m.dst.port,
            m.protocol,
            m.start_us,
            m.end_us,
            m.n_packets,
            r.verdict,
            r.distance,
            r.nearest_cluster,
            r.threshold
        )?;
    }
    w.flush()
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, String> {
    let file = File::open(path.as_ref()).map_err(|e| e.to_string())?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(header)) if header.trim() == RESULTS_HEADER => {}
        Some(Ok(other)) => return Err(format!("unexpected header '{other}'")),
        Some(Err(e)) => return Err(e.to_string()),
        None => return Err("empty results file".into()),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.is_empty() {
            continue;
        }
        let line_no = idx + 2;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(format!("line {line_no}: expected 12 fields, got {}", f.len()));
        }
        let err = |what: &str, raw: &str| format!("line {line_no}: bad {what} '{raw}'");
        let ip = |s: &str| -> Result<Ipv4Addr, String> {
            s.parse().map_err(|_| err("address", s))
        };
        let row = ResultRow {
            meta: SegmentMeta {
                src: Endpoint {
                    ip: ip(f[0])?,
                    port: f[1].parse().map_err(|_| err("port", f[1]))?,
                },
                dst: Endpoint {
                    ip: ip(f[2])?,
                    port: f[3].parse().map_err(|_| err("port", f[3]))?,
                },
                protocol: f[4].parse().map_err(|_| err("protocol", f[4]))?,
                start_us: f[5].parse().map_err(|_| err("timestamp", f[5]))?,
                end_us: f[6].parse().map_err(|_| err("timestamp", f[6]))?,
                n_packets: f[7].parse().map_err(|_| err("count", f[7]))?,
            },
            verdict: f[8].parse().map_err(|_| err("verdict", f[8]))?,
            distance: f[9].parse().map_err(|_| err("distance", f[9]))?,
            nearest_cluster: f[10].parse().map_err(|_| err("cluster", f[10]))?,
            threshold: f[11].parse().map_err(|_| err("threshold", f[11]))?,
        };
        // Detection invariant baked into the format.
        if (row.distance <= row.threshold) != (row.verdict == Verdict::Benign) {
            return Err(format!(
                "line {line_no}: verdict contradicts distance {} vs threshold {}",
                row.distance, row.threshold
            ));
        }
        rows.push(row);
    }
    Ok(rows)
}
