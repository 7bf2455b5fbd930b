//! CSV rendering. Every subcommand writes one fixed schema to stdout.

use ldrisk::cgf::CgfPoint;
use ldrisk::legendre::{RatePoint, UpperBoundEstimate};
use ldrisk::{ExtendedReal, TailEstimate, Violation};

/// A record with a fixed column layout.
pub trait CsvRow {
    const HEADER: &'static [&'static str];

    fn cells(&self) -> Vec<String>;
}

/// Renders `v` with 17 significant digits, so it parses back to the same
/// `f64`. Infinities print as `inf` / `-inf`.
pub fn number(v: f64) -> String {
    if v.is_nan() {
        "nan".to_owned()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_owned()
    } else {
        format!("{v:.16e}")
    }
}

pub fn extended(v: ExtendedReal) -> String {
    number(v.to_f64())
}

/// Header row followed by one row per point, in input order.
pub fn emit_curve<R: CsvRow>(points: &[R]) -> String {
    let mut out = csv::Writer::from_writer(Vec::new());
    // Writing into a Vec cannot fail.
    out.write_record(R::HEADER).expect("in-memory write");
    for p in points {
        let cells = p.cells();
        debug_assert_eq!(cells.len(), R::HEADER.len());
        out.write_record(&cells).expect("in-memory write");
    }
    let bytes = out.into_inner().expect("in-memory flush");
    String::from_utf8(bytes).expect("cells are UTF-8")
}

impl CsvRow for CgfPoint {
    const HEADER: &'static [&'static str] = &["lambda", "value", "d1", "d2"];

    fn cells(&self) -> Vec<String> {
        vec![number(self.lambda), number(self.value), number(self.d1), number(self.d2)]
    }
}

impl CsvRow for RatePoint {
    const HEADER: &'static [&'static str] = &["x", "lambda_star", "rate", "status"];

    fn cells(&self) -> Vec<String> {
        vec![
            number(self.x),
            extended(self.lambda_star),
            extended(self.rate),
            self.status.as_str().to_owned(),
        ]
    }
}

impl CsvRow for UpperBoundEstimate {
    const HEADER: &'static [&'static str] = &["x", "upper_bound_exponent", "lambda"];

    fn cells(&self) -> Vec<String> {
        vec![number(self.x), number(self.value), number(self.lambda)]
    }
}

impl CsvRow for TailEstimate {
    const HEADER: &'static [&'static str] = &["estimate", "std_error", "method", "lambda_star"];

    fn cells(&self) -> Vec<String> {
        vec![
            number(self.estimate),
            number(self.std_error),
            self.method.name().to_owned(),
            number(self.method.lambda()),
        ]
    }
}

impl CsvRow for Violation {
    const HEADER: &'static [&'static str] = &["class", "clause", "detail"];

    fn cells(&self) -> Vec<String> {
        vec![self.class.clone(), self.clause.to_string(), self.detail.clone()]
    }
}

pub struct ExactRow {
    pub n: u64,
    pub x: f64,
    pub tail_probability: f64,
    pub log_rate: ExtendedReal,
}

impl CsvRow for ExactRow {
    const HEADER: &'static [&'static str] = &["n", "x", "tail_probability", "log_rate"];

    fn cells(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            number(self.x),
            number(self.tail_probability),
            extended(self.log_rate),
        ]
    }
}

pub struct MdpRow {
    pub n: u64,
    pub alpha: f64,
    pub c: f64,
    pub threshold_exact: f64,
    pub threshold_lower: f64,
    pub threshold_upper: f64,
    pub predicted_minus_log_prob: f64,
    pub correction_scale: f64,
}

impl CsvRow for MdpRow {
    const HEADER: &'static [&'static str] = &[
        "n",
        "alpha",
        "c",
        "threshold_exact",
        "threshold_lower",
        "threshold_upper",
        "predicted_minus_log_prob",
        "correction_scale",
    ];

    fn cells(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            number(self.alpha),
            number(self.c),
            number(self.threshold_exact),
            number(self.threshold_lower),
            number(self.threshold_upper),
            number(self.predicted_minus_log_prob),
            number(self.correction_scale),
        ]
    }
}

/// One subsequence point of the counterexample.
pub struct SubsequenceRow {
    pub section: &'static str,
    pub n: u64,
    pub unit_density: f64,
    pub log_rate: ExtendedReal,
    pub target: ExtendedReal,
}

impl CsvRow for SubsequenceRow {
    const HEADER: &'static [&'static str] = &["section", "n", "unit_density", "log_rate", "target"];

    fn cells(&self) -> Vec<String> {
        vec![
            self.section.to_owned(),
            self.n.to_string(),
            number(self.unit_density),
            extended(self.log_rate),
            extended(self.target),
        ]
    }
}

pub struct SummaryRow {
    pub unit_gap: f64,
    pub double_gap: f64,
    pub separation: f64,
    pub partial: bool,
}

impl CsvRow for SummaryRow {
    const HEADER: &'static [&'static str] = &["unit_gap", "double_gap", "separation", "partial"];

    fn cells(&self) -> Vec<String> {
        vec![
            number(self.unit_gap),
            number(self.double_gap),
            number(self.separation),
            self.partial.to_string(),
        ]
    }
}
