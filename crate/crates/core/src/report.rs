//! JSON reports with derived plain-text tables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bank::RetrievalStats;
use crate::error::{Error, Result};
use crate::kps::KpsReport;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Kps,
    Retrieval,
    Tradeoff,
}

impl ReportKind {
    pub fn file_stem(&self) -> &'static str {
        match self {
            ReportKind::Kps => "kps",
            ReportKind::Retrieval => "retrieval",
            ReportKind::Tradeoff => "tradeoff",
        }
    }
}

/// One cell of the guidance grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub music_scale: f64,
    pub text: bool,
    pub diversity: f64,
    pub bas: f64,
    pub prompt_rate: f64,
    pub null_rate: f64,
    pub lift: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffReport {
    pub rows: Vec<TradeoffRow>,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "G")]
    pub g: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub kind: ReportKind,
    pub version: String,
    pub config_digest: String,
    pub data: T,
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn signed_pct(x: f64) -> String {
    format!("{:+.1}", 100.0 * x)
}

/// Aligned table: first column left-aligned, the rest right-aligned.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

pub fn kps_table(report: &KpsReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .primitives
        .iter()
        .map(|r| {
            vec![
                r.primitive.clone(),
                r.family.label().to_string(),
                pct(r.rates.prompt_rate),
                pct(r.rates.null_rate),
                signed_pct(r.rates.lift),
            ]
        })
        .collect();
    for f in &report.families {
        rows.push(vec![
            format!("{} (family)", f.family.label()),
            f.members.join(", "),
            pct(f.rates.prompt_rate),
            pct(f.rates.null_rate),
            signed_pct(f.rates.lift),
        ]);
    }
    let m = &report.macro_average;
    rows.push(vec!["Macro-average".into(), String::new(), pct(m.prompt_rate), pct(m.null_rate), signed_pct(m.lift)]);
    let mut out = format!("KPS over R = {}, G = {} (seed {})\n", report.r, report.g, report.seed);
    out.push_str(&render_table(&["Primitive", "Family", "Prompt%", "Null%", "Lift%"], &rows));
    out
}

pub fn retrieval_table(stats: &RetrievalStats) -> String {
    let f = |x: f64| format!("{x:.4}");
    let rows: Vec<Vec<String>> = stats
        .directions
        .iter()
        .map(|d| {
            let s = &d.similarity;
            vec![
                d.direction.clone(),
                d.queries.to_string(),
                pct(d.acceptance_rate),
                pct(d.null_replaced_rate),
                f(s.min),
                f(s.p10),
                f(s.median),
                f(s.p90),
                f(s.max),
                f(s.mean),
            ]
        })
        .collect();
    let mut out = format!("Top-1 cosine similarity, threshold τ = {}\n", stats.threshold);
    out.push_str(&render_table(
        &["Direction", "Queries", "Accepted%", "Null%", "Min", "P10", "Median", "P90", "Max", "Mean"],
        &rows,
    ));
    out
}

pub fn tradeoff_table(report: &TradeoffReport) -> String {
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.music_scale),
                if r.text { "on" } else { "off" }.to_string(),
                format!("{:.4}", r.diversity),
                format!("{:.4}", r.bas),
                pct(r.prompt_rate),
                pct(r.null_rate),
                signed_pct(r.lift),
            ]
        })
        .collect();
    let mut out = format!("Guidance grid over R = {}, G = {}\n", report.r, report.g);
    out.push_str(&render_table(&["Music scale", "Text", "Div", "BAS", "Prompt%", "Null%", "KPS lift%"], &rows));
    out
}

fn check_rate(x: f64, what: &str) -> Result<()> {
    if !(x.is_finite() && (-1.0..=1.0).contains(&x)) {
        return Err(Error::Schema(format!("{what} = {x} is not a rate")));
    }
    Ok(())
}

/// Validate `data` against the schema of `kind` and render its table.
pub fn render(kind: ReportKind, data: &serde_json::Value) -> Result<String> {
    let schema = |e: serde_json::Error| Error::Schema(format!("{} report: {e}", kind.file_stem()));
    match kind {
        ReportKind::Kps => {
            let r: KpsReport = serde_json::from_value(data.clone()).map_err(schema)?;
            if r.primitives.is_empty() {
                return Err(Error::Schema("kps report has no primitive rows".into()));
            }
            for row in &r.primitives {
                check_rate(row.rates.prompt_rate, "prompt rate")?;
                check_rate(row.rates.null_rate, "null rate")?;
            }
            Ok(kps_table(&r))
        }
        ReportKind::Retrieval => {
            let r: RetrievalStats = serde_json::from_value(data.clone()).map_err(schema)?;
            if r.directions.is_empty() {
                return Err(Error::Schema("retrieval report has no directions".into()));
            }
            for d in &r.directions {
                check_rate(d.acceptance_rate, "acceptance rate")?;
            }
            Ok(retrieval_table(&r))
        }
        ReportKind::Tradeoff => {
            let r: TradeoffReport = serde_json::from_value(data.clone()).map_err(schema)?;
            if r.rows.is_empty() {
                return Err(Error::Schema("tradeoff report has no rows".into()));
            }
            for row in &r.rows {
                check_rate(row.prompt_rate, "prompt rate")?;
                check_rate(row.lift, "lift")?;
            }
            Ok(tradeoff_table(&r))
        }
    }
}

/// Write `<stem>.json` (wrapped with version and config digest) and `<stem>.txt` into `dir`.
pub fn emit_report(dir: &Path, kind: ReportKind, data: &serde_json::Value, config_digest: &str) -> Result<(PathBuf, PathBuf)> {
    write_report(&dir.join(format!("{}.json", kind.file_stem())), kind, data, config_digest)
}

/// As [`emit_report`] with an explicit JSON path; the table goes next to it with a `.txt` extension.
pub fn write_report(json_path: &Path, kind: ReportKind, data: &serde_json::Value, config_digest: &str) -> Result<(PathBuf, PathBuf)> {
    let table = render(kind, data)?;
    if let Some(dir) = json_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let envelope = Envelope { kind, version: VERSION.to_string(), config_digest: config_digest.to_string(), data };
    let txt_path = json_path.with_extension("txt");
    std::fs::write(json_path, serde_json::to_string_pretty(&envelope)? + "\n")?;
    std::fs::write(&txt_path, format!("{table}\nversion {VERSION}, config {config_digest}\n"))?;
    Ok((json_path.to_path_buf(), txt_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kps::{run_kps, KpsConfig, OracleGenerator};
    use crate::linalg::Mat;

    #[test]
    fn kps_table_has_macro_row() {
        let music = vec![Mat::zeros(4, 2)];
        let cfg = KpsConfig { r: 1, g: 1, ..KpsConfig::default() };
        let rep = run_kps(&OracleGenerator { fps: 30 }, &crate::kps::default_prompts(), &music, &cfg).unwrap();
        let t = render(ReportKind::Kps, &serde_json::to_value(&rep).unwrap()).unwrap();
        let header = t.lines().nth(1).unwrap();
        for col in ["Prompt%", "Null%", "Lift%"] {
            assert!(header.contains(col));
        }
        let last = t.lines().last().unwrap();
        assert!(last.starts_with("Macro-average"));
        assert!(last.ends_with("+100.0"));
    }

    #[test]
    fn schema_violations_are_reported() {
        let err = render(ReportKind::Retrieval, &serde_json::json!({"threshold": 0.8})).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
        let bad = serde_json::json!({"rows": [{"music_scale": 1.0, "text": true, "diversity": 0.0, "bas": 0.0,
            "prompt_rate": 3.0, "null_rate": 0.0, "lift": 0.0}], "R": 1, "G": 1});
        assert!(render(ReportKind::Tradeoff, &bad).is_err());
    }

    #[test]
    fn tradeoff_grid_has_six_rows() {
        let rows = [1.0, 2.0, 3.0]
            .iter()
            .flat_map(|&s| {
                [false, true].map(|text| TradeoffRow {
                    music_scale: s,
                    text,
                    diversity: 1.0,
                    bas: 0.5,
                    prompt_rate: 0.5,
                    null_rate: 0.25,
                    lift: if text { 0.25 } else { 0.0 },
                })
            })
            .collect();
        let t = tradeoff_table(&TradeoffReport { rows, r: 1, g: 1 });
        assert_eq!(t.lines().count(), 3 + 6);
        assert!(t.lines().nth(1).unwrap().contains("Div"));
    }
}
