//! Line-delimited JSON trace files.
//!
//! The first line is a header naming the format version, dataset, depth `L`
//! and class count `K`; each further line holds one record with keys in a
//! fixed order. Probabilities are written at 9 significant digits so that
//! saving the same records twice produces identical bytes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::{ContextKind, ExampleRecord, LayerTrace, ProbVector};
use crate::error::{Error, Result};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub format_version: u32,
    pub dataset_name: String,
    pub num_layers: usize,
    pub num_classes: usize,
    pub producer: String,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    dataset: &'a str,
    context_kind: ContextKind,
    true_label: usize,
    icl_layer_probs: Vec<Vec<f64>>,
    zero_shot_final_probs: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    content_free_icl_layer_probs: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    content_free_zero_shot_probs: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordIn {
    id: String,
    dataset: String,
    context_kind: ContextKind,
    true_label: usize,
    icl_layer_probs: Vec<Vec<f64>>,
    zero_shot_final_probs: Vec<f64>,
    #[serde(default)]
    content_free_icl_layer_probs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    content_free_zero_shot_probs: Option<Vec<f64>>,
}

/// `x` rounded to 9 significant digits.
pub fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn rounded(p: &ProbVector) -> Vec<f64> {
    p.as_slice().iter().map(|&x| round_sig9(x)).collect()
}

fn rounded_trace(t: &LayerTrace) -> Vec<Vec<f64>> {
    t.layers().iter().map(rounded).collect()
}

fn header_for(records: &[ExampleRecord], producer: &str) -> Result<TraceHeader> {
    let first = records
        .first()
        .ok_or(Error::Empty("cannot save an empty record set"))?;
    let (l, k) = (first.num_layers(), first.num_classes());
    if let Some(r) = records
        .iter()
        .find(|r| r.num_layers() != l || r.num_classes() != k)
    {
        return Err(Error::Shape(format!(
            "record {} is {}x{}, but {} is {l}x{k}",
            r.id(),
            r.num_layers(),
            r.num_classes(),
            first.id()
        )));
    }
    Ok(TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        dataset_name: first.dataset().to_string(),
        num_layers: l,
        num_classes: k,
        producer: producer.to_string(),
    })
}

/// Canonical serialization of a record set.
pub fn write_records<W: Write>(
    records: &[ExampleRecord],
    producer: &str,
    mut out: W,
) -> Result<()> {
    let header = header_for(records, producer)?;
    let io = |e: std::io::Error| Error::io("<output>", e);
    serde_json::to_writer(&mut out, &header).map_err(|e| Error::Protocol(e.to_string()))?;
    out.write_all(b"\n").map_err(io)?;
    for r in records {
        let line = RecordOut {
            id: r.id(),
            dataset: r.dataset(),
            context_kind: r.context_kind(),
            true_label: r.true_label(),
            icl_layer_probs: rounded_trace(r.icl_trace()),
            zero_shot_final_probs: rounded(r.zero_shot_final()),
            content_free_icl_layer_probs: r.content_free_icl_trace().map(rounded_trace),
            content_free_zero_shot_probs: r.content_free_zero_shot().map(rounded),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Protocol(e.to_string()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn save_records(
    records: &[ExampleRecord],
    path: impl AsRef<Path>,
    producer: &str,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(records, producer, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn prob(
    line: usize,
    id: &str,
    field: &str,
    v: Vec<f64>,
    header: &TraceHeader,
) -> Result<ProbVector> {
    if v.len() != header.num_classes {
        return Err(parse_err(
            line,
            format!(
                "record {id}: {field} has {} classes, header says K = {}",
                v.len(),
                header.num_classes
            ),
        ));
    }
    ProbVector::new(v).map_err(|e| parse_err(line, format!("record {id}: {field}: {e}")))
}

fn trace(
    line: usize,
    id: &str,
    field: &str,
    rows: Vec<Vec<f64>>,
    header: &TraceHeader,
) -> Result<LayerTrace> {
    if rows.len() != header.num_layers {
        return Err(parse_err(
            line,
            format!(
                "record {id}: {field} has {} layers, header says L = {}",
                rows.len(),
                header.num_layers
            ),
        ));
    }
    let layers = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| prob(line, id, &format!("{field} layer {}", i + 1), row, header))
        .collect::<Result<Vec<_>>>()?;
    LayerTrace::new(layers).map_err(|e| parse_err(line, format!("record {id}: {field}: {e}")))
}

fn parse_record(line: usize, text: &str, header: &TraceHeader) -> Result<ExampleRecord> {
    let raw: RecordIn = serde_json::from_str(text)
        .map_err(|e| parse_err(line, format!("malformed record: {e}")))?;
    let id = raw.id;
    if raw.true_label >= header.num_classes {
        return Err(parse_err(
            line,
            format!(
                "record {id}: true_label {} is not below K = {}",
                raw.true_label, header.num_classes
            ),
        ));
    }
    let icl = trace(line, &id, "icl_layer_probs", raw.icl_layer_probs, header)?;
    let zs = prob(
        line,
        &id,
        "zero_shot_final_probs",
        raw.zero_shot_final_probs,
        header,
    )?;
    let cf_icl = raw
        .content_free_icl_layer_probs
        .map(|t| trace(line, &id, "content_free_icl_layer_probs", t, header))
        .transpose()?;
    let cf_zs = raw
        .content_free_zero_shot_probs
        .map(|p| prob(line, &id, "content_free_zero_shot_probs", p, header))
        .transpose()?;
    ExampleRecord::new(
        id,
        raw.dataset,
        raw.context_kind,
        raw.true_label,
        icl,
        zs,
        cf_icl,
        cf_zs,
    )
    .map_err(|e| parse_err(line, e.to_string()))
}

/// Parse and validate a trace stream. Errors carry the 1-based line number.
pub fn read_records<R: BufRead>(input: R) -> Result<(TraceHeader, Vec<ExampleRecord>)> {
    let mut lines = input.lines().enumerate().map(|(i, l)| (i + 1, l));
    let io = |e: std::io::Error| Error::io("<input>", e);
    let header = loop {
        match lines.next() {
            None => return Err(parse_err(1, "missing header line")),
            Some((_, l)) if l.as_ref().is_ok_and(|s| s.trim().is_empty()) => continue,
            Some((n, l)) => {
                let text = l.map_err(io)?;
                let h: TraceHeader = serde_json::from_str(&text)
                    .map_err(|e| parse_err(n, format!("malformed header: {e}")))?;
                if h.format_version != TRACE_FORMAT_VERSION {
                    return Err(parse_err(
                        n,
                        format!(
                            "format_version {} is not supported (expected {TRACE_FORMAT_VERSION})",
                            h.format_version
                        ),
                    ));
                }
                if h.num_layers < 2 || h.num_classes < 2 {
                    return Err(parse_err(
                        n,
                        "header needs num_layers >= 2 and num_classes >= 2",
                    ));
                }
                break h;
            }
        }
    };
    let mut records = Vec::new();
    for (n, l) in lines {
        let text = l.map_err(io)?;
        if text.trim().is_empty() {
            continue;
        }
        records.push(parse_record(n, &text, &header)?);
    }
    if records.is_empty() {
        return Err(Error::Empty("no records"));
    }
    Ok((header, records))
}

pub fn load_records_with_header(
    path: impl AsRef<Path>,
) -> Result<(TraceHeader, Vec<ExampleRecord>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<ExampleRecord>> {
    Ok(load_records_with_header(path)?.1)
}
