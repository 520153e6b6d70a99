//! Dataset CSV, model JSON, report JSON and plot-data files.
//!
//! Floats are written in Rust's shortest round-trip form, so every f64
//! reads back bit for bit.

use std::fs;
use std::path::Path;

use pinode_core::datagen::{Dataset, Sample};
use pinode_core::diff::{Layer, MlpParams};
use pinode_core::evaluation::{PlotRow, PlotTable};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PlotFormat;
use crate::error::{Failure, Outcome};

pub const DATASET_COLUMNS: [&str; 6] = ["t", "x", "phi", "x_dot", "phi_dot", "u"];

fn ensure_parent(path: &Path) -> Outcome<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
        }
        _ => Ok(()),
    }
}

pub fn write_text(path: &Path, text: &str) -> Outcome<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn sha256_file(path: &Path) -> Outcome<String> {
    let bytes = fs::read(path).map_err(|e| Failure::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn comment_block(meta: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        for line in v.lines() {
            out.push_str(&format!("# {k}: {line}\n"));
        }
    }
    out
}

fn csv_body(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

/// Provenance and `sample_rate` go first as `#` comments, then `meta`.
pub fn dataset_to_csv(d: &Dataset, meta: &[(String, String)]) -> String {
    let mut all = vec![
        ("provenance".to_string(), d.provenance().to_string()),
        ("sample_rate".to_string(), d.sample_rate().to_string()),
    ];
    all.extend_from_slice(meta);
    let rows = d.samples().iter().map(|s| {
        [s.t, s.x, s.phi, s.x_dot, s.phi_dot, s.u]
            .iter()
            .map(f64::to_string)
            .collect()
    });
    comment_block(&all) + &csv_body(&DATASET_COLUMNS, rows)
}

pub fn write_dataset(path: &Path, d: &Dataset, meta: &[(String, String)]) -> Outcome<()> {
    write_text(path, &dataset_to_csv(d, meta))
}

/// `#` lines of the form `key: value`, in file order.
fn read_comments(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

fn column_indices(headers: &csv::StringRecord, wanted: &[&str]) -> Outcome<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| Failure::invalid(format!("missing column '{name}'")))
        })
        .collect()
}

fn parse_field(record: &csv::StringRecord, idx: usize, name: &str) -> Outcome<f64> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record
        .get(idx)
        .ok_or_else(|| Failure::invalid(format!("line {line}: missing value for column '{name}'")))?;
    raw.trim().parse::<f64>().map_err(|_| {
        Failure::invalid(format!(
            "line {line}, column '{name}': cannot parse '{raw}' as a number"
        ))
    })
}

/// Rows of a CSV with `#` comments, keyed by the named columns.
fn parse_table(text: &str, columns: &[&str]) -> Outcome<Vec<(csv::StringRecord, Vec<usize>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Failure::invalid(format!("unreadable header: {e}")))?
        .clone();
    if headers.is_empty() {
        return Err(Failure::invalid("no header row"));
    }
    let idx = column_indices(&headers, columns)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Failure::invalid(format!("malformed row: {e}")))?;
        rows.push((rec, idx.clone()));
    }
    Ok(rows)
}

pub fn dataset_from_csv(text: &str) -> Outcome<Dataset> {
    let rows = parse_table(text, &DATASET_COLUMNS)?;
    if rows.is_empty() {
        return Err(Failure::invalid("dataset has no rows"));
    }
    let mut samples = Vec::with_capacity(rows.len());
    for (rec, idx) in &rows {
        let v: Vec<f64> = DATASET_COLUMNS
            .iter()
            .zip(idx)
            .map(|(name, &i)| parse_field(rec, i, name))
            .collect::<Outcome<_>>()?;
        samples.push(Sample {
            t: v[0],
            x: v[1],
            phi: v[2],
            x_dot: v[3],
            phi_dot: v[4],
            u: v[5],
        });
    }
    let comments = read_comments(text);
    let lookup = |key: &str| comments.iter().find(|(k, _)| k == key).map(|(_, v)| v.clone());
    let sample_rate = match lookup("sample_rate") {
        Some(v) => v
            .parse::<f64>()
            .map_err(|_| Failure::invalid(format!("sample_rate comment '{v}' is not a number")))?,
        None if samples.len() >= 2 => 1.0 / (samples[1].t - samples[0].t),
        None => return Err(Failure::invalid("one sample and no sample_rate comment")),
    };
    Ok(Dataset::new(
        sample_rate,
        samples,
        lookup("provenance").unwrap_or_default(),
    )?)
}

pub fn read_dataset(path: &Path) -> Outcome<Dataset> {
    dataset_from_csv(&read_text(path)?).map_err(|e| e.context(path.display()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerDoc {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    layer_sizes: Vec<usize>,
    output_scale: f64,
    layers: Vec<LayerDoc>,
}

pub fn model_to_json(params: &MlpParams) -> String {
    let doc = ModelDoc {
        layer_sizes: params.layer_sizes().to_vec(),
        output_scale: params.output_scale(),
        layers: params
            .layers()
            .iter()
            .map(|l| LayerDoc {
                w: l.weights.chunks(l.cols).map(<[f64]>::to_vec).collect(),
                b: l.biases.clone(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

pub fn model_from_json(text: &str) -> Outcome<MlpParams> {
    let doc: ModelDoc =
        serde_json::from_str(text).map_err(|e| Failure::invalid(format!("model JSON: {e}")))?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (k, l) in doc.layers.into_iter().enumerate() {
        let rows = l.w.len();
        let cols = l.w.first().map_or(0, Vec::len);
        if l.w.iter().any(|r| r.len() != cols) {
            return Err(Failure::invalid(format!("layer {k}: ragged weight rows")));
        }
        layers.push(Layer {
            rows,
            cols,
            weights: l.w.concat(),
            biases: l.b,
        });
    }
    Ok(MlpParams::from_layers(&doc.layer_sizes, layers, doc.output_scale)?)
}

pub fn write_model(path: &Path, params: &MlpParams) -> Outcome<()> {
    write_text(path, &model_to_json(params))
}

pub fn read_model(path: &Path) -> Outcome<MlpParams> {
    model_from_json(&read_text(path)?).map_err(|e| e.context(path.display()))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Outcome<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub const PLOT_COLUMNS: [&str; 3] = ["series", "step_or_bin", "value"];

pub fn plot_to_csv(table: &PlotTable) -> String {
    let rows = table
        .rows
        .iter()
        .map(|r| vec![r.series.clone(), r.step_or_bin.to_string(), r.value.to_string()]);
    comment_block(&table.metadata) + &csv_body(&PLOT_COLUMNS, rows)
}

pub fn plot_to_json(table: &PlotTable) -> String {
    let metadata: serde_json::Map<String, serde_json::Value> = table
        .metadata
        .iter()
        .map(|(k, v)| (k.clone(), v.clone().into()))
        .collect();
    let rows: Vec<serde_json::Value> = table
        .rows
        .iter()
        .map(|r| serde_json::json!({"series": r.series, "step_or_bin": r.step_or_bin, "value": r.value}))
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({"metadata": metadata, "rows": rows}))
        .expect("plot serializes")
}

pub fn plot_from_csv(text: &str) -> Outcome<PlotTable> {
    let mut rows = Vec::new();
    for (rec, idx) in parse_table(text, &PLOT_COLUMNS)? {
        let line = rec.position().map_or(0, |p| p.line());
        let series = rec.get(idx[0]).unwrap_or_default().to_string();
        let step = rec
            .get(idx[1])
            .and_then(|s| s.trim().parse::<usize>().ok())
            .ok_or_else(|| Failure::invalid(format!("line {line}, column 'step_or_bin': not an index")))?;
        rows.push(PlotRow {
            series,
            step_or_bin: step,
            value: parse_field(&rec, idx[2], "value")?,
        });
    }
    Ok(PlotTable {
        metadata: read_comments(text),
        rows,
    })
}

pub fn write_plot(path: &Path, table: &PlotTable, format: PlotFormat) -> Outcome<()> {
    let text = match format {
        PlotFormat::Csv => plot_to_csv(table),
        PlotFormat::Json => plot_to_json(table),
    };
    write_text(path, &text)
}
