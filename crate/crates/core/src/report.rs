//! Plot-ready CSV and JSON outputs.
//!
//! CSV floats carry 6 significant digits; JSON keeps full precision.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extrinsic::{XdpRecord, XnaSummary};
use crate::human_eval::QuestionReport;
use crate::intrinsic::{CcsMatrix, ConfusionMatrix, CultureMap, MetricReport};
use crate::io::write_atomic;
use crate::suite::ConfusionRun;

pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("nothing to report: {0}")]
    Empty(&'static str),
    #[error("value {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("grid has {rows} rows and {cols} columns but {labels} labels")]
    Shape {
        rows: usize,
        cols: usize,
        labels: usize,
    },
}

/// `%g`-style formatting with 6 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String, ReportError> {
    let mut w = csv::WriterBuilder::new()
        .flexible(false)
        .from_writer(Vec::new());
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Square or rectangular grid with a header of column labels and a leading
/// column of row labels.
pub fn grid_csv(
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<f64>],
) -> Result<String, ReportError> {
    if values.len() != row_labels.len() || values.iter().any(|r| r.len() != col_labels.len()) {
        return Err(ReportError::Shape {
            rows: values.len(),
            cols: values.first().map_or(0, Vec::len),
            labels: row_labels.len(),
        });
    }
    let mut rows = Vec::with_capacity(values.len() + 1);
    rows.push(
        std::iter::once(corner.to_string())
            .chain(col_labels.iter().cloned())
            .collect(),
    );
    for (label, r) in row_labels.iter().zip(values) {
        rows.push(
            std::iter::once(label.clone())
                .chain(r.iter().map(|&v| fmt_sig(v)))
                .collect(),
        );
    }
    csv_string(rows)
}

/// Rows are ground-truth languages, columns predicted ones.
pub fn confusion_csv(m: &ConfusionMatrix) -> Result<String, ReportError> {
    grid_csv("ground_truth", &m.labels, &m.labels, &m.rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CcsCsvs {
    pub raw: String,
    pub normalized: String,
    pub symmetrized: String,
}

pub fn ccs_csvs(m: &CcsMatrix) -> Result<CcsCsvs, ReportError> {
    let n = m.labels.len();
    let normalized: Vec<Vec<f64>> = m
        .normalized
        .values
        .chunks(n.max(1))
        .map(<[f64]>::to_vec)
        .collect();
    Ok(CcsCsvs {
        raw: grid_csv("images", &m.labels, &m.labels, &m.raw)?,
        normalized: grid_csv("images", &m.labels, &m.labels, &normalized)?,
        symmetrized: grid_csv("images", &m.labels, &m.labels, &m.symmetrized)?,
    })
}

/// One radar point: a language's XDP score on one dimension, averaged over
/// prompt templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub source: String,
    pub model: String,
    pub language: String,
    pub dimension: String,
    pub value: f64,
    pub templates: usize,
}

pub fn radar_points(records: &[XdpRecord]) -> Vec<RadarPoint> {
    let mut acc: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    for r in records {
        acc.entry((
            r.source.clone(),
            r.model.clone(),
            r.lang.clone(),
            r.score.dimension_id.clone(),
        ))
        .or_default()
        .push(r.score.value);
    }
    acc.into_iter()
        .map(|((source, model, language, dimension), v)| RadarPoint {
            source,
            model,
            language,
            dimension,
            value: v.iter().sum::<f64>() / v.len() as f64,
            templates: v.len(),
        })
        .collect()
}

pub fn radar_csv(points: &[RadarPoint]) -> Result<String, ReportError> {
    let mut rows = vec![[
        "source",
        "model",
        "language",
        "dimension",
        "value",
        "templates",
    ]
    .map(String::from)
    .to_vec()];
    for p in points {
        rows.push(vec![
            p.source.clone(),
            p.model.clone(),
            p.language.clone(),
            p.dimension.clone(),
            fmt_sig(p.value),
            p.templates.to_string(),
        ]);
    }
    csv_string(rows)
}

/// Per-template XDP breakdown.
pub fn xdp_csv(records: &[XdpRecord]) -> Result<String, ReportError> {
    let mut rows = vec![[
        "source",
        "model",
        "template",
        "language",
        "dimension",
        "value",
        "frac_d0",
        "frac_d1",
        "frac_cant",
    ]
    .map(String::from)
    .to_vec()];
    for r in records {
        rows.push(vec![
            r.source.clone(),
            r.model.clone(),
            r.pt.to_string(),
            r.lang.clone(),
            r.score.dimension_id.clone(),
            fmt_sig(r.score.value),
            fmt_sig(r.score.frac_d0),
            fmt_sig(r.score.frac_d1),
            fmt_sig(r.score.frac_cant),
        ]);
    }
    csv_string(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

/// Equal-width bins on [0, 1]; the last bin is closed on the right.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>, ReportError> {
    if bins == 0 {
        return Err(ReportError::Empty("bin count"));
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(ReportError::OutOfRange(v));
        }
        let i = ((v * bins as f64).floor() as usize).min(bins - 1);
        counts[i] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            lower: i as f64 / bins as f64,
            upper: (i + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}

pub fn histogram_csv(bins: &[HistogramBin]) -> Result<String, ReportError> {
    let mut rows = vec![["bin_lower", "bin_upper", "count"]
        .map(String::from)
        .to_vec()];
    for b in bins {
        rows.push(vec![
            fmt_sig(b.lower),
            fmt_sig(b.upper),
            b.count.to_string(),
        ]);
    }
    csv_string(rows)
}

pub fn culture_map_csv(map: &CultureMap) -> Result<String, ReportError> {
    let mut rows = vec![
        ["language", "x", "y", "group", "group_std_x", "group_std_y"]
            .map(String::from)
            .to_vec(),
    ];
    for p in &map.points {
        let stats = p
            .group
            .as_ref()
            .and_then(|g| map.groups.iter().find(|s| &s.name == g));
        rows.push(vec![
            p.language.clone(),
            fmt_sig(p.x),
            fmt_sig(p.y),
            p.group.clone().unwrap_or_default(),
            stats.map(|s| fmt_sig(s.std_x)).unwrap_or_default(),
            stats.map(|s| fmt_sig(s.std_y)).unwrap_or_default(),
        ]);
    }
    csv_string(rows)
}

/// One row per value, grouping columns first.
pub fn metric_csv(report: &MetricReport) -> Result<String, ReportError> {
    let mut rows = vec![[
        "model",
        "language",
        "template",
        "concept",
        "label",
        "value",
        "normalized",
    ]
    .map(String::from)
    .to_vec()];
    for v in &report.values {
        let g = &v.group;
        rows.push(vec![
            g.model.clone().unwrap_or_default(),
            g.language.clone().unwrap_or_default(),
            g.template.map(|t| t.to_string()).unwrap_or_default(),
            g.concept.clone().unwrap_or_default(),
            g.label.clone().unwrap_or_default(),
            fmt_sig(v.value),
            v.normalized.map(fmt_sig).unwrap_or_default(),
        ]);
    }
    csv_string(rows)
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// One row per (model, template) confusion matrix.
pub fn accuracy_csv(runs: &[ConfusionRun]) -> Result<String, ReportError> {
    let mut rows = vec![header(&[
        "model",
        "template",
        "accuracy",
        "correct",
        "rows",
        "tied_rows",
    ])];
    for r in runs {
        let ties: Vec<String> = r
            .accuracy
            .tied_rows
            .iter()
            .map(|i| r.matrix.labels[*i].clone())
            .collect();
        rows.push(vec![
            r.model.clone(),
            r.template.to_string(),
            fmt_sig(r.accuracy.accuracy),
            r.accuracy.correct.to_string(),
            r.accuracy.rows.to_string(),
            ties.join(" "),
        ]);
    }
    csv_string(rows)
}

/// Per-model XNA cells.
pub fn xna_csv(summary: &XnaSummary) -> Result<String, ReportError> {
    let mut rows = vec![header(&[
        "source", "model", "language", "order", "score", "correct", "total",
    ])];
    for c in &summary.cells {
        rows.push(vec![
            c.source.clone(),
            c.model.clone(),
            c.lang.clone(),
            summary.order.to_string(),
            fmt_sig(c.result.score),
            c.result.correct.to_string(),
            c.result.total.to_string(),
        ]);
    }
    csv_string(rows)
}

/// XNA averaged over models per (source, language).
pub fn xna_means_csv(summary: &XnaSummary) -> Result<String, ReportError> {
    let mut rows = vec![header(&["source", "language", "order", "mean", "models"])];
    for m in &summary.language_means {
        rows.push(vec![
            m.source.clone(),
            m.lang.clone(),
            summary.order.to_string(),
            fmt_sig(m.mean),
            m.models.to_string(),
        ]);
    }
    csv_string(rows)
}

pub fn human_eval_csv(reports: &[QuestionReport]) -> Result<String, ReportError> {
    let mut rows = vec![header(&[
        "question_id",
        "kappa",
        "p_bar",
        "p_bar_e",
        "items",
        "annotators",
        "categories",
        "degenerate",
        "agreement",
        "matches",
        "total",
    ])];
    for r in reports {
        let k = &r.kappa;
        let a = r.agreement.as_ref();
        rows.push(vec![
            r.question_id.clone(),
            k.kappa.map(fmt_sig).unwrap_or_default(),
            fmt_sig(k.p_bar),
            fmt_sig(k.p_bar_e),
            k.n_items.to_string(),
            k.n_annotators.to_string(),
            k.n_categories.to_string(),
            k.degenerate.to_string(),
            a.map(|a| fmt_sig(a.rate)).unwrap_or_default(),
            a.map(|a| a.matches.to_string()).unwrap_or_default(),
            a.map(|a| a.total.to_string()).unwrap_or_default(),
        ]);
    }
    csv_string(rows)
}

/// Writes `contents` atomically, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<(), ReportError> {
    let err = |source| ReportError::Write {
        path: path.display().to_string(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(err)?;
    }
    write_atomic(path, contents.as_bytes()).map_err(err)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, ReportError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    write_text(path, &to_json(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extrinsic::XdpScore;
    use crate::prompt::TemplateKind;
    use proptest::prelude::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1");
        assert_eq!(fmt_sig(0.693), "0.693");
        assert_eq!(fmt_sig(0.64565630622579), "0.645656");
        assert_eq!(fmt_sig(-75.1234567), "-75.1235");
        assert_eq!(fmt_sig(123456.7), "123457");
        assert_eq!(fmt_sig(999999.7), "1e+06");
        assert_eq!(fmt_sig(1234567.0), "1.23457e+06");
        assert_eq!(fmt_sig(0.0001), "0.0001");
        assert_eq!(fmt_sig(0.00001234), "1.234e-05");
        assert_eq!(fmt_sig(f64::NAN), "nan");
    }

    #[test]
    fn confusion_layout() {
        let m = ConfusionMatrix {
            labels: vec!["RU".into(), "EN".into()],
            rows: vec![vec![0.75, 0.25], vec![0.5, 0.5]],
        };
        assert_eq!(
            confusion_csv(&m).unwrap(),
            "ground_truth,RU,EN\nRU,0.75,0.25\nEN,0.5,0.5\n"
        );
        let bad = ConfusionMatrix {
            labels: vec!["RU".into()],
            rows: vec![vec![1.0, 0.0]],
        };
        assert!(confusion_csv(&bad).is_err());
    }

    #[test]
    fn radar_cardinality_and_pt_average() {
        let langs = ["EN", "ES", "DE", "FR", "RU", "EL", "AR", "IW", "ZH", "HI"];
        let mut records = Vec::new();
        for lang in langs {
            for d in 0..8 {
                for (i, pt) in [
                    TemplateKind::FullyTranslated,
                    TemplateKind::TranslatedConcept,
                ]
                .into_iter()
                .enumerate()
                {
                    records.push(XdpRecord {
                        source: "vqa".into(),
                        model: "sd".into(),
                        pt,
                        lang: lang.into(),
                        score: XdpScore {
                            dimension_id: format!("d{d}"),
                            value: 0.2 * i as f64,
                            frac_d0: 0.0,
                            frac_d1: 0.0,
                            frac_cant: 1.0,
                        },
                    });
                }
            }
        }
        let points = radar_points(&records);
        assert_eq!(points.len(), 80);
        assert!(points
            .iter()
            .all(|p| (p.value - 0.1).abs() < 1e-12 && p.templates == 2));
        let csv = radar_csv(&points).unwrap();
        assert_eq!(csv.lines().count(), 81);
        assert_eq!(xdp_csv(&records).unwrap().lines().count(), 161);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.05, 0.1, 0.95, 1.0, 0.693], HISTOGRAM_BINS).unwrap();
        assert_eq!(h[0].count, 2);
        assert_eq!(h[1].count, 1);
        assert_eq!(h[6].count, 1);
        assert_eq!(h[9].count, 2);
        assert!(matches!(
            histogram(&[1.5], 10),
            Err(ReportError::OutOfRange(_))
        ));
        let csv = histogram_csv(&h).unwrap();
        assert!(csv.starts_with("bin_lower,bin_upper,count\n0,0.1,2\n"));
    }

    proptest! {
        #[test]
        fn histogram_conserves_count(values in prop::collection::vec(0.0f64..=1.0, 0..200)) {
            let h = histogram(&values, HISTOGRAM_BINS).unwrap();
            prop_assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), values.len());
            for (b, v) in h.iter().zip(0..) {
                let expected = values.iter().filter(|&&x| {
                    let i = ((x * 10.0).floor() as usize).min(9);
                    i == v
                }).count();
                prop_assert_eq!(b.count, expected);
            }
        }

        #[test]
        fn sig_round_trips_to_six_digits(x in -1e7f64..1e7) {
            let s = fmt_sig(x);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - x).abs() <= x.abs() * 5e-6 + 1e-300);
        }
    }
}
