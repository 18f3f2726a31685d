//! File formats. JSON is canonical; CSV is offered for datasets and plot
//! data. Items are numbered from 1 in every file.

use std::fs;
use std::io::Write;
use std::path::Path;

use hazard_ctmc_core::{Dataset, ItemSet, ParamMatrix};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// `{"n", "theta", "item_names", "blocks"}`; `blocks` lists inclusive
/// 1-based `[first, last]` item ranges of a block-diagonal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub n: usize,
    pub theta: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_names: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<[usize; 2]>>,
}

impl ModelFile {
    pub fn from_model(theta: &ParamMatrix) -> Self {
        ModelFile {
            n: theta.n(),
            theta: (0..theta.n()).map(|i| theta.row(i).to_vec()).collect(),
            item_names: theta.item_names().map(<[String]>::to_vec),
            blocks: theta
                .blocks()
                .map(|bs| bs.iter().map(|b| [b.start + 1, b.end]).collect()),
        }
    }

    pub fn into_model(self) -> CliResult<ParamMatrix> {
        if self.theta.len() != self.n || self.theta.iter().any(|r| r.len() != self.n) {
            return Err(CliError::Data(format!("theta must be a {0} x {0} matrix", self.n)));
        }
        let mut m = ParamMatrix::from_rows(&self.theta).map_err(data_error)?;
        if let Some(names) = self.item_names {
            m = m.with_item_names(names).map_err(data_error)?;
        }
        if let Some(blocks) = self.blocks {
            let mut ranges = Vec::with_capacity(blocks.len());
            for [first, last] in blocks {
                if first == 0 || last < first {
                    return Err(CliError::Data(format!("invalid block [{first}, {last}]")));
                }
                ranges.push(first - 1..last);
            }
            m = m.with_blocks(ranges).map_err(data_error)?;
        }
        Ok(m)
    }
}

/// `{"n", "samples", "times", "item_names"}` with samples as sorted item lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFile {
    pub n: usize,
    pub samples: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_names: Option<Vec<String>>,
}

impl DatasetFile {
    pub fn from_dataset(data: &Dataset) -> Self {
        DatasetFile {
            n: data.n(),
            samples: data
                .samples()
                .iter()
                .map(|s| s.iter().map(|i| i + 1).collect())
                .collect(),
            times: data.times().map(<[f64]>::to_vec),
            item_names: data.item_names().map(<[String]>::to_vec),
        }
    }

    pub fn into_dataset(self) -> CliResult<Dataset> {
        let mut samples = Vec::with_capacity(self.samples.len());
        for (row, items) in self.samples.iter().enumerate() {
            let mut set = ItemSet::empty();
            for &item in items {
                if item == 0 || item > self.n {
                    return Err(CliError::Data(format!(
                        "sample {}: item {item} outside 1..={}",
                        row + 1,
                        self.n
                    )));
                }
                if set.contains(item - 1) {
                    return Err(CliError::Data(format!("sample {}: item {item} listed twice", row + 1)));
                }
                set.insert(item - 1);
            }
            samples.push(set);
        }
        let mut data = Dataset::new(self.n, samples, self.times).map_err(data_error)?;
        if let Some(names) = self.item_names {
            data = data.with_item_names(names).map_err(data_error)?;
        }
        Ok(data)
    }
}

fn data_error(err: hazard_ctmc_core::Error) -> CliError {
    match CliError::from(err) {
        CliError::Usage(m) => CliError::Data(m),
        other => other,
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn to_json_string<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &to_json_string(value)?)
}

pub fn read_model(path: &Path) -> CliResult<ParamMatrix> {
    read_json::<ModelFile>(path)?.into_model()
}

pub fn write_model(path: &Path, theta: &ParamMatrix) -> CliResult<()> {
    write_json(path, &ModelFile::from_model(theta))
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        dataset_from_csv(&text).map_err(|e| match e {
            CliError::Data(m) => CliError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    } else {
        read_json::<DatasetFile>(path)?.into_dataset()
    }
}

pub fn write_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    if is_csv(path) {
        write_text(path, &dataset_to_csv(data)?)
    } else {
        write_json(path, &DatasetFile::from_dataset(data))
    }
}

/// One row per sample with a 0/1 column per item, headed by the item names
/// (or `item1..itemN`), and a final `time` column when times are known.
pub fn dataset_to_csv(data: &Dataset) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = match data.item_names() {
        Some(names) => names.to_vec(),
        None => (1..=data.n()).map(|i| format!("item{i}")).collect(),
    };
    if data.times().is_some() {
        header.push("time".into());
    }
    w.write_record(&header).map_err(csv_error)?;
    for (row, s) in data.samples().iter().enumerate() {
        let mut rec: Vec<String> = (0..data.n()).map(|i| if s.contains(i) { "1" } else { "0" }.to_string()).collect();
        if let Some(t) = data.times() {
            rec.push(format_float(t[row]));
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    finish_csv(w)
}

pub fn dataset_from_csv(text: &str) -> CliResult<Dataset> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let has_time = header.last().is_some_and(|h| h == "time");
    let n = header.len() - usize::from(has_time);
    let mut samples = Vec::new();
    let mut times = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let mut set = ItemSet::empty();
        for i in 0..n {
            match rec.get(i).map(str::trim) {
                Some("1") => set.insert(i),
                Some("0") => {}
                other => {
                    return Err(CliError::Data(format!(
                        "row {}, column {}: expected 0 or 1, got {other:?}",
                        row + 1,
                        i + 1
                    )))
                }
            }
        }
        if has_time {
            let t = rec
                .get(n)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Data(format!("row {}: unreadable time", row + 1)))?;
            times.push(t);
        }
        samples.push(set);
    }
    let default_names = header[..n].iter().enumerate().all(|(i, h)| *h == format!("item{}", i + 1));
    let data = Dataset::new(n, samples, has_time.then_some(times)).map_err(data_error)?;
    if default_names {
        Ok(data)
    } else {
        data.with_item_names(header[..n].to_vec()).map_err(data_error)
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

/// CSV table from a header and rows of already-formatted cells.
pub fn csv_table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    finish_csv(w)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> CliResult<String> {
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Data(format!("csv: {e}"))
}

/// Optional float as a CSV cell (`NA` when absent).
pub fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".into(), format_float)
}
