//! File formats: the dataset CSV, the analysis report, funnel coordinates,
//! grid files and simulation output.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::asymmetry::{funnel_points, PrecisionAxis};
use crate::error::{AnalysisError, IoError, TestError};
use crate::harness::{write_results_csv, SimResult, SummaryRow, TestVariantId};
use crate::measures::prepare_estimates;
use crate::model::{validate_dataset, CorrectionPolicy, MeasureId, MetaDataset, StudyTable};
use crate::sampler::{default_grid, GridSpec, SimCondition};

/// Version of the analysis report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const DATASET_HEADER: [&str; 5] = ["study_id", "tp", "fn", "fp", "tn"];

/// Reads the `study_id,tp,fn,fp,tn` format. Errors carry the 1-based line.
pub fn read_dataset<R: Read>(mut reader: R, label: &str) -> Result<MetaDataset, IoError> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    // Physical line of a record. The csv crate does not count skipped blank
    // lines, and a record's offset can point at the blank lines before it.
    let line_at = |byte: u64| {
        let bytes = text.as_bytes();
        let mut at = (byte as usize).min(bytes.len());
        while at < bytes.len() && matches!(bytes[at], b'\n' | b'\r') {
            at += 1;
        }
        1 + bytes[..at].iter().filter(|b| **b == b'\n').count() as u64
    };
    let csv_line = |e: &csv::Error| e.position().map_or(0, |p| line_at(p.byte()));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = rdr.records();
    let parse_err = |line: u64, message: String| IoError::Parse { line, message };

    let header = match records.next() {
        None => return Err(parse_err(1, "empty input; expected header study_id,tp,fn,fp,tn".into())),
        Some(r) => r.map_err(|e| parse_err(csv_line(&e), e.to_string()))?,
    };
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() != DATASET_HEADER.len()
        || fields.iter().zip(DATASET_HEADER).any(|(a, b)| !a.eq_ignore_ascii_case(b))
    {
        return Err(parse_err(
            1,
            format!("header is '{}'; expected study_id,tp,fn,fp,tn", fields.join(",")),
        ));
    }

    let mut studies = Vec::new();
    let mut ids = Vec::new();
    for record in records {
        let record = record.map_err(|e| parse_err(csv_line(&e), e.to_string()))?;
        let line = record.position().map_or(0, |p| line_at(p.byte()));
        if record.len() != 5 {
            return Err(parse_err(line, format!("expected 5 fields, found {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty study_id".into()));
        }
        let mut cells = [0i64; 4];
        for (i, cell) in cells.iter_mut().enumerate() {
            let raw = &record[i + 1];
            *cell = raw
                .parse()
                .map_err(|_| parse_err(line, format!("{} = '{raw}' is not an integer", DATASET_HEADER[i + 1])))?;
        }
        let table = StudyTable::from_signed(cells[0], cells[1], cells[2], cells[3])
            .map_err(|e| parse_err(line, format!("study '{id}': {e}")))?;
        studies.push(table);
        ids.push(id);
    }
    Ok(MetaDataset::with_ids(studies, ids, label))
}

pub fn read_dataset_file(path: &Path) -> Result<MetaDataset, IoError> {
    let file = fs::File::open(path)?;
    read_dataset(file, &path.display().to_string())
}

pub fn write_dataset<W: Write>(writer: W, dataset: &MetaDataset) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DATASET_HEADER)?;
    for (id, t) in dataset.study_ids.iter().zip(&dataset.studies) {
        w.write_record([id.clone(), t.x.to_string(), t.w.to_string(), t.y.to_string(), t.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One study's line in the analysis report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study_id: String,
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
    /// Absent when the study was excluded.
    pub value: Option<f64>,
    pub se: Option<f64>,
    pub continuity_corrected: bool,
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestReport {
    pub id: String,
    pub family: String,
    pub axis: String,
    pub weighting: String,
    pub estimator: Option<String>,
    pub sided: String,
    pub alpha: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub k0: Option<usize>,
    pub pooled_effect: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyzeReport {
    pub schema_version: u32,
    pub input: String,
    pub measure: String,
    pub correction: String,
    pub k: usize,
    pub k_analyzed: usize,
    pub studies: Vec<StudyReport>,
    pub test: TestReport,
    pub warnings: Vec<String>,
}

/// Computes the measure for every study and runs one test.
pub fn analyze(
    dataset: &MetaDataset,
    variant: &TestVariantId,
    alpha: f64,
    correction: CorrectionPolicy,
) -> Result<AnalyzeReport, AnalysisError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TestError::InvalidConfig(format!("alpha {alpha} outside (0, 1)")).into());
    }
    let dataset = validate_dataset(dataset.clone())?;
    let measure = variant.measure();
    let prepared = prepare_estimates(&dataset, measure, correction)?;
    let test = variant.test();
    let result = test.run(&prepared.estimates, variant.sided(), alpha)?;

    let mut warnings = Vec::new();
    for &i in &prepared.corrected {
        warnings.push(format!(
            "study '{}': zero cell, 0.5 added to every cell",
            dataset.study_ids[i]
        ));
    }
    if correction == CorrectionPolicy::Always {
        warnings.clear();
        warnings.push("0.5 added to every cell of every study".into());
    }
    for &i in &prepared.excluded {
        warnings.push(format!(
            "study '{}': excluded, {} has zero standard error",
            dataset.study_ids[i],
            measure.short()
        ));
    }
    warnings.extend(result.notes.iter().cloned());

    let mut studies: Vec<StudyReport> = dataset
        .study_ids
        .iter()
        .zip(&dataset.studies)
        .enumerate()
        .map(|(i, (id, t))| StudyReport {
            study_id: id.clone(),
            tp: t.x,
            fn_: t.w,
            fp: t.y,
            tn: t.z,
            value: None,
            se: None,
            continuity_corrected: prepared.corrected.contains(&i),
            excluded: prepared.excluded.contains(&i),
        })
        .collect();
    for (e, &i) in prepared.estimates.iter().zip(&prepared.kept) {
        studies[i].value = Some(e.value);
        studies[i].se = Some(e.se);
    }
    let estimator = test.estimator_token();
    Ok(AnalyzeReport {
        schema_version: REPORT_SCHEMA_VERSION,
        input: dataset.label.clone(),
        measure: measure.token().to_string(),
        correction: correction.token().to_string(),
        k: dataset.len(),
        k_analyzed: prepared.estimates.len(),
        studies,
        test: TestReport {
            id: variant.short_form(),
            family: test.family().to_string(),
            axis: test.axis_token().to_string(),
            weighting: test.weighting_token().to_string(),
            estimator: (!estimator.is_empty()).then(|| estimator.to_string()),
            sided: variant.sided().token().to_string(),
            alpha,
            statistic: result.statistic,
            p_value: result.p_value,
            reject: result.reject,
            k0: result.k0,
            pooled_effect: result.pooled_effect,
        },
        warnings,
    })
}

/// One point of a funnel plot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunnelRow {
    pub study_id: String,
    pub effect: f64,
    pub axis_value: f64,
}

/// Funnel coordinates of the studies with a usable estimate.
pub fn funnel_rows(
    dataset: &MetaDataset,
    measure: MeasureId,
    axis: PrecisionAxis,
    correction: CorrectionPolicy,
) -> Result<Vec<FunnelRow>, AnalysisError> {
    let dataset = validate_dataset(dataset.clone())?;
    let prepared = prepare_estimates(&dataset, measure, correction)?;
    Ok(funnel_points(&prepared.estimates, axis)
        .into_iter()
        .zip(&prepared.kept)
        .map(|((effect, axis_value), &i)| FunnelRow {
            study_id: dataset.study_ids[i].clone(),
            effect,
            axis_value,
        })
        .collect())
}

pub fn write_funnel_csv<W: Write>(writer: W, rows: &[FunnelRow]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["study_id", "effect", "axis_value"])?;
    for r in rows {
        w.write_record([r.study_id.clone(), r.effect.to_string(), r.axis_value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `default` or the path of a JSON grid file.
pub fn load_grid(source: &str) -> Result<Vec<SimCondition>, IoError> {
    if source == "default" {
        return Ok(default_grid());
    }
    let text = fs::read_to_string(source).map_err(|e| IoError::Grid(format!("{source}: {e}")))?;
    let spec: GridSpec = serde_json::from_str(&text).map_err(|e| IoError::Grid(format!("{source}: {e}")))?;
    let grid = spec.expand().map_err(|e| IoError::Grid(format!("{source}: {e}")))?;
    if grid.is_empty() {
        return Err(IoError::Grid(format!("{source}: grid has no conditions")));
    }
    Ok(grid)
}

/// Writes the results CSV through a temporary file in the same directory,
/// renamed into place on success and removed on failure.
pub fn write_results_file(path: &Path, results: &[SimResult]) -> Result<(), IoError> {
    let tmp = partial_path(path);
    let outcome = (|| -> Result<(), IoError> {
        let file = fs::File::create(&tmp)?;
        let mut buf = std::io::BufWriter::new(file);
        write_results_csv(&mut buf, results)?;
        buf.flush()?;
        buf.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if outcome.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    outcome
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Plain-text table of summary rows.
pub fn render_summary(rows: &[SummaryRow]) -> String {
    let keys: Vec<String> = rows.iter().map(|r| r.key_string()).collect();
    let width = keys.iter().map(|k| k.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>7}  {:>8}  {:>17}\n", "group", "rate", "reps", "wilson 95%");
    for (key, r) in keys.iter().zip(rows) {
        out.push_str(&format!(
            "{key:<width$}  {:>7.4}  {:>8}  [{:.4}, {:.4}]\n",
            r.mean_rate, r.reps, r.wilson.0, r.wilson.1
        ));
    }
    out
}
