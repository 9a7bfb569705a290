//! Ground-truth labeling of flow segments and precision/recall/F1
//! computation, overall and per anomaly scenario.
//!
//! Labels come from ordered rule files: the first rule whose endpoints
//! match the segment's flow (in either orientation) and whose interval
//! shares any instant with the segment wins; unmatched segments are
//! benign. Effect-labeled traffic (consequences such as cessation) is
//! excluded from the counts by default — flagging it is neither clearly
//! right nor wrong.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Verdict;
use crate::flowmetrics::SegmentMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benign,
    Attack,
    AttackVector,
    Effect,
}

impl std::str::FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Label::Benign),
            "attack" => Ok(Label::Attack),
            "attack_vector" => Ok(Label::AttackVector),
            "effect" => Ok(Label::Effect),
            other => Err(format!(
                "unknown label '{other}' (benign|attack|attack_vector|effect)"
            )),
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Label::Benign => "benign",
            Label::Attack => "attack",
            Label::AttackVector => "attack_vector",
            Label::Effect => "effect",
        };
        f.write_str(s)
    }
}

/// One labeling rule; `None` endpoint fields are wildcards.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRule {
    pub src_ip: Option<Ipv4Addr>,
    pub dst_ip: Option<Ipv4Addr>,
    pub dst_port: Option<u16>,
    pub start_us: i64,
    pub end_us: i64,
    pub label: Label,
    pub scenario: String,
}

impl LabelRule {
    /// Overlap means any shared instant; endpoints match in either flow
    /// orientation.
    fn matches(&self, meta: &SegmentMeta) -> bool {
        let overlap = self.start_us <= meta.end_us && meta.start_us <= self.end_us;
        if !overlap {
            return false;
        }
        let direct = self.src_ip.is_none_or(|ip| ip == meta.src.ip)
            && self.dst_ip.is_none_or(|ip| ip == meta.dst.ip)
            && self.dst_port.is_none_or(|p| p == meta.dst.port);
        let flipped = self.src_ip.is_none_or(|ip| ip == meta.dst.ip)
            && self.dst_ip.is_none_or(|ip| ip == meta.src.ip)
            && self.dst_port.is_none_or(|p| p == meta.src.port);
        direct || flipped
    }
}

/// Ordered list of labeling rules.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSpec {
    pub rules: Vec<LabelRule>,
}

pub const LABEL_CSV_HEADER: &str = "src_ip,dst_ip,dst_port,start_us,end_us,label,scenario";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("label file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("results and labels differ in length: {results} vs {labels}")]
    LengthMismatch { results: usize, labels: usize },
}

impl LabelSpec {
    /// First matching rule wins; no match means benign.
    pub fn label_of(&self, meta: &SegmentMeta) -> (Label, Option<&str>) {
        for rule in &self.rules {
            if rule.matches(meta) {
                return (rule.label, Some(rule.scenario.as_str()));
            }
        }
        (Label::Benign, None)
    }

    pub fn from_csv(path: impl AsRef<Path>) -> Result<LabelSpec, EvalError> {
        let file = File::open(path.as_ref())?;
        let mut lines = BufReader::new(file).lines();
        match lines.next() {
            Some(header) => {
                let header = header?;
                if header.trim() != LABEL_CSV_HEADER {
                    return Err(EvalError::Parse {
                        line: 1,
                        msg: format!("expected header '{LABEL_CSV_HEADER}'"),
                    });
                }
            }
            None => {
                return Err(EvalError::Parse {
                    line: 1,
                    msg: "empty label file".into(),
                })
            }
        }
        let mut rules = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let line_no = idx + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(EvalError::Parse {
                    line: line_no,
                    msg: format!("expected 7 fields, found {}", fields.len()),
                });
            }
            let parse_err = |msg: String| EvalError::Parse { line: line_no, msg };
            let opt_ip = |s: &str| -> Result<Option<Ipv4Addr>, EvalError> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| parse_err(format!("bad IPv4 address '{s}'")))
                }
            };
            let start_us: i64 = fields[3]
                .parse()
                .map_err(|_| parse_err(format!("bad timestamp '{}'", fields[3])))?;
            let end_us: i64 = fields[4]
                .parse()
                .map_err(|_| parse_err(format!("bad timestamp '{}'", fields[4])))?;
            if start_us > end_us {
                return Err(parse_err(format!(
                    "start {start_us} is after end {end_us}"
                )));
            }
            rules.push(LabelRule {
                src_ip: opt_ip(fields[0])?,
                dst_ip: opt_ip(fields[1])?,
                dst_port: if fields[2].is_empty() {
                    None
                } else {
                    Some(fields[2].parse().map_err(|_| {
                        parse_err(format!("bad port '{}'", fields[2]))
                    })?)
                },
                start_us,
                end_us,
                label: fields[5]
                    .parse()
                    .map_err(|msg: String| parse_err(msg))?,
                scenario: fields[6].to_string(),
            });
        }
        Ok(LabelSpec { rules })
    }

    pub fn to_csv(&self, path: impl AsRef<Path>) -> Result<(), EvalError> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        writeln!(w, "{LABEL_CSV_HEADER}")?;
        for r in &self.rules {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.src_ip.map(|ip| ip.to_string()).unwrap_or_default(),
                r.dst_ip.map(|ip| ip.to_string()).unwrap_or_default(),
                r.dst_port.map(|p| p.to_string()).unwrap_or_default(),
                r.start_us,
                r.end_us,
                r.label,
                r.scenario
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Confusion counts and derived metrics for one scope.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricBlock {
    fn finalize(&mut self) {
        self.precision = ratio(self.tp, self.tp + self.fp);
        self.recall = ratio(self.tp, self.tp + self.fn_);
        self.f1 = if self.precision + self.recall > 0.0 {
            2.0 * self.precision * self.recall / (self.precision + self.recall)
        } else {
            0.0
        };
    }

    fn count(&mut self, truth_positive: bool, predicted_positive: bool) {
        match (truth_positive, predicted_positive) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, true) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// Overall and per-scenario metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: MetricBlock,
    pub per_scenario: BTreeMap<String, MetricBlock>,
    /// Effect-labeled segments excluded from every count.
    pub ignored_count: u64,
}

impl EvalReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(
            path.as_ref(),
            serde_json::to_string_pretty(self).expect("report serializes"),
        )
    }

    /// Human-readable fixed-width table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<12} {:>6} {:>6} {:>6} {:>6} {:>10} {:>8} {:>8}\n",
            "scope", "tp", "fp", "fn", "tn", "precision", "recall", "f1"
        ));
        let mut row = |name: &str, m: &MetricBlock| {
            out.push_str(&format!(
                "{:<12} {:>6} {:>6} {:>6} {:>6} {:>10.4} {:>8.4} {:>8.4}\n",
                name, m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f1
            ));
        };
        row("overall", &self.overall);
        for (scenario, block) in &self.per_scenario {
            row(scenario, block);
        }
        out.push_str(&format!("ignored (effect): {}\n", self.ignored_count));
        out
    }
}

/// Evaluation knobs; `effect_as_positive` flips effect-labeled segments
/// into the positive class instead of excluding them.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    pub effect_as_positive: bool,
}

/// Score detection verdicts against ground-truth labels. The positive
/// class is "anomaly"; ground truth is positive for attack and
/// attack_vector labels.
pub fn evaluate(
    verdicts: &[Verdict],
    labels: &[(Label, Option<String>)],
    options: EvalOptions,
) -> Result<EvalReport, EvalError> {
    if verdicts.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            results: verdicts.len(),
            labels: labels.len(),
        });
    }
    // true = positive ground truth, false = benign, None = ignored.
    let truth_of = |label: &Label| -> Option<bool> {
        match label {
            Label::Attack | Label::AttackVector => Some(true),
            Label::Effect if options.effect_as_positive => Some(true),
            Label::Effect => None,
            Label::Benign => Some(false),
        }
    };
    let mut overall = MetricBlock::default();
    let mut ignored = 0u64;
    let mut scenarios: Vec<String> = Vec::new();
    for (verdict, (label, scenario)) in verdicts.iter().zip(labels.iter()) {
        match truth_of(label) {
            Some(truth) => {
                overall.count(truth, *verdict == Verdict::Anomaly);
                if truth {
                    if let Some(s) = scenario {
                        if !scenarios.contains(s) {
                            scenarios.push(s.clone());
                        }
                    }
                }
            }
            None => ignored += 1,
        }
    }
    overall.finalize();

    // Scenario scope: its own positives plus every benign segment.
    let mut per_scenario = BTreeMap::new();
    for s in scenarios {
        let mut block = MetricBlock::default();
        for (verdict, (label, scenario)) in verdicts.iter().zip(labels.iter()) {
            let predicted = *verdict == Verdict::Anomaly;
            match truth_of(label) {
                Some(true) if scenario.as_deref() == Some(s.as_str()) => {
                    block.count(true, predicted)
                }
                Some(false) => block.count(false, predicted),
                _ => {}
            }
        }
        block.finalize();
        per_scenario.insert(s, block);
    }
    Ok(EvalReport {
        overall,
        per_scenario,
        ignored_count: ignored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowmetrics::Endpoint;

    fn meta(src: (u8, u16), dst: (u8, u16), start_s: f64, end_s: f64) -> SegmentMeta {
        SegmentMeta {
            src: Endpoint {
                ip: Ipv4Addr::new(10, 0, 0, src.0),
                port: src.1,
            },
            dst: Endpoint {
                ip: Ipv4Addr::new(10, 0, 0, dst.0),
                port: dst.1,
            },
            protocol: 6,
            start_us: (start_s * 1e6) as i64,
            end_us: (end_s * 1e6) as i64,
            n_packets: 1,
        }
    }

    fn rule(label: Label, start_s: f64, end_s: f64, scenario: &str) -> LabelRule {
        LabelRule {
            src_ip: Some(Ipv4Addr::new(10, 0, 0, 1)),
            dst_ip: Some(Ipv4Addr::new(10, 0, 0, 2)),
            dst_port: Some(2404),
            start_us: (start_s * 1e6) as i64,
            end_us: (end_s * 1e6) as i64,
            label,
            scenario: scenario.to_string(),
        }
    }

    #[test]
    fn interval_overlap_matches() {
        let spec = LabelSpec {
            rules: vec![rule(Label::Attack, 15.0, 30.0, "AN2")],
        };
        let (label, scenario) = spec.label_of(&meta((1, 1000), (2, 2404), 10.0, 20.0));
        assert_eq!(label, Label::Attack);
        assert_eq!(scenario, Some("AN2"));
    }

    #[test]
    fn unlisted_endpoints_default_to_benign() {
        let spec = LabelSpec {
            rules: vec![rule(Label::Attack, 0.0, 100.0, "AN2")],
        };
        let (label, scenario) = spec.label_of(&meta((7, 1000), (8, 2404), 10.0, 20.0));
        assert_eq!(label, Label::Benign);
        assert_eq!(scenario, None);
    }

    #[test]
    fn earlier_rule_wins() {
        let spec = LabelSpec {
            rules: vec![
                rule(Label::AttackVector, 0.0, 100.0, "AN7.4"),
                rule(Label::Attack, 0.0, 100.0, "AN2"),
            ],
        };
        let (label, _) = spec.label_of(&meta((1, 1000), (2, 2404), 10.0, 20.0));
        assert_eq!(label, Label::AttackVector);
    }

    #[test]
    fn flipped_orientation_matches_too() {
        let spec = LabelSpec {
            rules: vec![rule(Label::Attack, 0.0, 100.0, "AN2")],
        };
        // Segment whose sender is the rule's destination side.
        let (label, _) = spec.label_of(&meta((2, 2404), (1, 1000), 10.0, 20.0));
        assert_eq!(label, Label::Attack);
    }

    #[test]
    fn no_overlap_no_match() {
        let spec = LabelSpec {
            rules: vec![rule(Label::Attack, 30.0, 40.0, "AN2")],
        };
        let (label, _) = spec.label_of(&meta((1, 1000), (2, 2404), 10.0, 20.0));
        assert_eq!(label, Label::Benign);
        // Shared single instant counts as overlap.
        let (label, _) = spec.label_of(&meta((1, 1000), (2, 2404), 20.0, 30.0));
        assert_eq!(label, Label::Attack);
    }

    fn lab(label: Label, scenario: &str) -> (Label, Option<String>) {
        let s = if scenario.is_empty() {
            None
        } else {
            Some(scenario.to_string())
        };
        (label, s)
    }

    #[test]
    fn metric_arithmetic() {
        use Verdict::{Anomaly, Benign};
        let verdicts = vec![Anomaly, Anomaly, Anomaly, Benign, Benign];
        let labels = vec![
            lab(Label::Attack, "AN2"),
            lab(Label::Attack, "AN2"),
            lab(Label::Benign, ""),
            lab(Label::Attack, "AN2"),
            lab(Label::Benign, ""),
        ];
        let report = evaluate(&verdicts, &labels, EvalOptions::default()).unwrap();
        assert_eq!(report.overall.tp, 2);
        assert_eq!(report.overall.fp, 1);
        assert_eq!(report.overall.fn_, 1);
        assert_eq!(report.overall.tn, 1);
        assert!((report.overall.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.overall.recall - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.overall.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_benign_degenerates_to_zero_metrics() {
        use Verdict::Benign;
        let verdicts = vec![Benign, Benign, Benign];
        let labels = vec![
            lab(Label::Benign, ""),
            lab(Label::Benign, ""),
            lab(Label::Benign, ""),
        ];
        let report = evaluate(&verdicts, &labels, EvalOptions::default()).unwrap();
        assert_eq!(report.overall.precision, 0.0);
        assert_eq!(report.overall.recall, 0.0);
        assert_eq!(report.overall.tn, 3);
    }

    #[test]
    fn effect_segments_are_ignored_not_false_positives() {
        use Verdict::Anomaly;
        let verdicts = vec![Anomaly];
        let labels = vec![lab(Label::Effect, "AN5")];
        let report = evaluate(&verdicts, &labels, EvalOptions::default()).unwrap();
        assert_eq!(report.overall.fp, 0);
        assert_eq!(report.overall.tp, 0);
        assert_eq!(report.ignored_count, 1);

        // The sensitivity flag flips effect into a positive.
        let opts = EvalOptions {
            effect_as_positive: true,
        };
        let report = evaluate(&verdicts, &labels, opts).unwrap();
        assert_eq!(report.overall.tp, 1);
        assert_eq!(report.ignored_count, 0);
    }

    #[test]
    fn counts_partition_the_segments() {
        use Verdict::{Anomaly, Benign};
        let verdicts = vec![Anomaly, Benign, Anomaly, Benign, Anomaly];
        let labels = vec![
            lab(Label::Attack, "AN2"),
            lab(Label::AttackVector, "AN7.4"),
            lab(Label::Effect, "AN5"),
            lab(Label::Benign, ""),
            lab(Label::Benign, ""),
        ];
        let report = evaluate(&verdicts, &labels, EvalOptions::default()).unwrap();
        let m = &report.overall;
        assert_eq!(
            m.tp + m.fp + m.fn_ + m.tn + report.ignored_count,
            verdicts.len() as u64
        );
        // Scenario scopes: own positives plus all benign negatives.
        let an2 = &report.per_scenario["AN2"];
        assert_eq!(an2.tp, 1);
        assert_eq!(an2.fp, 1);
        assert_eq!(an2.tn, 1);
        let an74 = &report.per_scenario["AN7.4"];
        assert_eq!(an74.fn_, 1);
        let scenario_tp: u64 = report.per_scenario.values().map(|b| b.tp).sum();
        assert!(scenario_tp <= report.overall.tp);
    }

    #[test]
    fn permutation_leaves_metrics_unchanged() {
        use Verdict::{Anomaly, Benign};
        let verdicts = vec![Anomaly, Benign, Anomaly, Benign];
        let labels = vec![
            lab(Label::Attack, "AN6"),
            lab(Label::Benign, ""),
            lab(Label::Benign, ""),
            lab(Label::Attack, "AN6"),
        ];
        let report = evaluate(&verdicts, &labels, EvalOptions::default()).unwrap();
        let permuted_v = vec![Benign, Anomaly, Benign, Anomaly];
        let permuted_l = vec![
            lab(Label::Attack, "AN6"),
            lab(Label::Attack, "AN6"),
            lab(Label::Benign, ""),
            lab(Label::Benign, ""),
        ];
        let permuted = evaluate(&permuted_v, &permuted_l, EvalOptions::default()).unwrap();
        assert_eq!(report, permuted);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let err = evaluate(&[Verdict::Benign], &[], EvalOptions::default()).unwrap_err();
        assert!(matches!(err, EvalError::LengthMismatch { .. }));
    }

    #[test]
    fn label_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let spec = LabelSpec {
            rules: vec![
                rule(Label::Attack, 1.0, 2.0, "AN2"),
                LabelRule {
                    src_ip: Some(Ipv4Addr::new(10, 0, 9, 9)),
                    dst_ip: None,
                    dst_port: None,
                    start_us: 0,
                    end_us: 10,
                    label: Label::AttackVector,
                    scenario: "AN7.4".into(),
                },
            ],
        };
        spec.to_csv(&path).unwrap();
        let parsed = LabelSpec::from_csv(&path).unwrap();
        assert_eq!(parsed, spec);
    }
}
