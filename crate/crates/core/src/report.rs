//! Experiment results: CSV table, JSON metadata sidecar and a log-log plot.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blaschke::UnitComplex;
use crate::experiments::{noise_floor, ArrayDiagnostics, ExperimentConfig, RateFit, TailReport};
use crate::stats::BoundTerms;
use crate::transfer::LindebergRatios;

/// Column order of the results table.
pub const CSV_HEADER: [&str; 9] = [
    "N",
    "sigma_N",
    "rho_N",
    "abs_b_N",
    "ks_sup",
    "rhs_bound",
    "mN_est",
    "VN2_est",
    "weak_law_moment",
];

pub const RESULTS_FILE: &str = "results.csv";
pub const METADATA_FILE: &str = "metadata.json";
pub const PLOT_FILE: &str = "ks_vs_N.svg";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unexpected header {0:?}")]
    Header(Vec<String>),
}

/// One line of the results table.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "sigma_N")]
    pub sigma_n: f64,
    #[serde(rename = "rho_N")]
    pub rho_n: f64,
    #[serde(rename = "abs_b_N")]
    pub abs_b_n: f64,
    pub ks_sup: f64,
    pub rhs_bound: f64,
    #[serde(rename = "mN_est")]
    pub mn_est: f64,
    #[serde(rename = "VN2_est")]
    pub vn2_est: f64,
    pub weak_law_moment: f64,
}

/// Per-row extras kept in the metadata sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowDiagnostics {
    #[serde(rename = "N")]
    pub n: usize,
    pub worst_alpha: UnitComplex,
    pub bound: BoundTerms,
    pub p_n: f64,
    pub q_n: f64,
    pub lindeberg: LindebergRatios,
    pub array: ArrayDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub config: ExperimentConfig,
    pub version: String,
    pub threads: usize,
    pub wall_time_secs: f64,
}

impl Metadata {
    pub fn new(config: ExperimentConfig) -> Self {
        Metadata {
            config,
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
            wall_time_secs: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub metadata: Metadata,
    pub rows: Vec<ReportRow>,
    pub diagnostics: Vec<RowDiagnostics>,
    pub fitted: Option<RateFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailReport>,
    pub warnings: Vec<String>,
}

impl ExperimentReport {
    pub fn new(
        config: ExperimentConfig,
        rows: Vec<ReportRow>,
        diagnostics: Vec<RowDiagnostics>,
        warnings: Vec<String>,
    ) -> Self {
        ExperimentReport {
            metadata: Metadata::new(config),
            rows,
            diagnostics,
            fitted: None,
            tail: None,
            warnings,
        }
    }

    /// Writes `results.csv`, `metadata.json` and `ks_vs_N.svg` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir)?;
        write_results_csv(&self.rows, fs::File::create(dir.join(RESULTS_FILE))?)?;
        fs::write(dir.join(METADATA_FILE), serde_json::to_string_pretty(self)?)?;
        fs::write(
            dir.join(PLOT_FILE),
            ks_vs_n_svg(&self.rows, Some(noise_floor(self.metadata.config.samples))),
        )?;
        Ok(())
    }
}

/// Fixed scientific notation with 16 fractional digits; round-trips exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_results_csv(rows: &[ReportRow], w: impl io::Write) -> Result<(), ReportError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            fmt_f64(r.sigma_n),
            fmt_f64(r.rho_n),
            fmt_f64(r.abs_b_n),
            fmt_f64(r.ks_sup),
            fmt_f64(r.rhs_bound),
            fmt_f64(r.mn_est),
            fmt_f64(r.vn2_est),
            fmt_f64(r.weak_law_moment),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_results_csv(r: impl io::Read) -> Result<Vec<ReportRow>, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(ReportError::Header(header));
    }
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

/// Reads the `samples` field out of a metadata sidecar.
pub fn samples_from_metadata(json: &str) -> Option<usize> {
    let v: serde_json::Value = serde_json::from_str(json).ok()?;
    v.pointer("/metadata/config/samples")?.as_u64().map(|s| s as usize)
}

/// Log-log scatter of `ks_sup` against `N`, with an optional horizontal
/// noise-floor line.
pub fn ks_vs_n_svg(rows: &[ReportRow], floor: Option<f64>) -> String {
    const W: f64 = 480.0;
    const H: f64 = 360.0;
    const PAD: f64 = 50.0;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.n > 0 && r.ks_sup > 0.0)
        .map(|r| ((r.n as f64).log10(), r.ks_sup.log10()))
        .collect();
    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    if let Some(f) = floor.filter(|f| *f > 0.0) {
        ys.push(f.log10());
    }
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if lo.is_finite() {
            (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
    let (y0, y1) = span(&mut ys.into_iter());
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{a} {b} L{a} {c} L{d} {c}" stroke="black" fill="none"/>"#,
        a = PAD,
        b = PAD,
        c = H - PAD,
        d = W - PAD
    );
    for e in x0 as i32..=x1 as i32 {
        let x = sx(e as f64);
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">1e{e}</text>"#,
            H - PAD + 16.0
        );
    }
    for e in y0 as i32..=y1 as i32 {
        let y = sy(e as f64);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{y:.1}" font-size="11" text-anchor="end">1e{e}</text>"#,
            PAD - 6.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">N</text>"#,
        W / 2.0,
        H - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">ks_sup</text>"#,
        H / 2.0,
        H / 2.0
    );
    if let Some(f) = floor.filter(|f| *f > 0.0) {
        let y = sy(f.log10());
        let _ = writeln!(
            s,
            r#"<line x1="{PAD}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
            W - PAD
        );
    }
    if pts.len() > 1 {
        let d: Vec<String> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{}{:.1} {:.1}", if i == 0 { "M" } else { "L" }, sx(p.0), sy(p.1)))
            .collect();
        let _ = writeln!(s, r#"<path d="{}" stroke="steelblue" fill="none"/>"#, d.join(" "));
    }
    for p in &pts {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#,
            sx(p.0),
            sy(p.1)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(n: usize, ks: f64) -> ReportRow {
        ReportRow {
            n,
            sigma_n: 1.0 / 3.0,
            rho_n: std::f64::consts::PI,
            abs_b_n: 1e-300,
            ks_sup: ks,
            rhs_bound: 2.5,
            mn_est: -0.0,
            vn2_est: 0.375,
            weak_law_moment: f64::MIN_POSITIVE,
        }
    }

    #[test]
    fn header_and_format() {
        let mut buf = Vec::new();
        write_results_csv(&[row(10, 0.1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "N,sigma_N,rho_N,abs_b_N,ks_sup,rhs_bound,mN_est,VN2_est,weak_law_moment"
        );
        let first = lines.next().unwrap();
        assert!(first.starts_with("10,3.3333333333333331e-1,"), "{first}");
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "N,sigma\n1,2\n";
        assert!(matches!(read_results_csv(text.as_bytes()), Err(ReportError::Header(_))));
    }

    #[test]
    fn svg_is_well_formed() {
        let rows = [row(10, 0.1), row(100, 0.03), row(1000, 0.01)];
        let svg = ks_vs_n_svg(&rows, Some(0.005));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("stroke-dasharray"));
        assert!(!svg.contains("NaN"));
        let empty = ks_vs_n_svg(&[], None);
        assert!(!empty.contains("NaN"));
    }

    #[test]
    fn metadata_samples_lookup() {
        let json = r#"{"metadata": {"config": {"samples": 1234}}}"#;
        assert_eq!(samples_from_metadata(json), Some(1234));
        assert_eq!(samples_from_metadata("{}"), None);
    }

    proptest! {
        #[test]
        fn csv_round_trip(vals in proptest::collection::vec((1usize..1_000_000, any::<f64>()), 1..20)) {
            let rows: Vec<ReportRow> = vals
                .iter()
                .filter(|(_, x)| x.is_finite())
                .map(|&(n, x)| ReportRow { n, sigma_n: x, ks_sup: x.abs(), ..row(n, 0.0) })
                .collect();
            let mut buf = Vec::new();
            write_results_csv(&rows, &mut buf).unwrap();
            let back = read_results_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), rows.len());
            for (a, b) in rows.iter().zip(&back) {
                prop_assert_eq!(a.sigma_n.to_bits(), b.sigma_n.to_bits());
                prop_assert_eq!(a.mn_est.to_bits(), b.mn_est.to_bits());
                prop_assert_eq!(a, b);
            }
        }
    }
}
