use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, DatasetError, Instance, PredictionMatrix, TargetBounds};

fn open(path: &Path) -> Result<csv::Reader<File>, DatasetError> {
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn create(path: &Path) -> Result<csv::Writer<File>, DatasetError> {
    let file = File::create(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> DatasetError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => DatasetError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => DatasetError::Csv {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn header_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Header {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

type NumericTable = (Vec<String>, Vec<(String, Vec<f64>)>);

/// Reads the records of a CSV whose first column is `id`, returning the
/// remaining header names and every row as `(id, numeric cells)`.
fn read_numeric_table(path: &Path) -> Result<NumericTable, DatasetError> {
    let mut reader = open(path)?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.first().map(String::as_str) != Some("id") {
        return Err(header_err(path, "first column must be `id`"));
    }
    let columns = header[1..].to_vec();

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(path, e))?;
        if record.len() != header.len() {
            return Err(DatasetError::RowLength {
                path: path.to_path_buf(),
                row,
                expected: header.len(),
                found: record.len(),
            });
        }
        let id = record[0].to_string();
        let cells = record
            .iter()
            .skip(1)
            .zip(&columns)
            .map(|(cell, column)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| DatasetError::Parse {
                        path: path.to_path_buf(),
                        row,
                        column: column.clone(),
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((id, cells));
    }
    Ok((columns, rows))
}

/// Loads `id,<feature...>,target`. Rows keep file order.
pub fn load_dataset(path: &Path, bounds: TargetBounds) -> Result<Dataset, DatasetError> {
    let (columns, rows) = read_numeric_table(path)?;
    if columns.last().map(String::as_str) != Some("target") {
        return Err(header_err(path, "last column must be `target`"));
    }
    let feature_names = columns[..columns.len() - 1].to_vec();
    let instances = rows
        .into_iter()
        .map(|(id, mut cells)| {
            let target = cells.pop().expect("target column present");
            Instance {
                id,
                features: cells,
                target,
            }
        })
        .collect();
    Dataset::new(feature_names, instances, bounds)
}

/// Loads unlabelled query rows `id,<feature...>`; a trailing `target`
/// column, if present, is ignored.
pub fn load_queries(path: &Path) -> Result<Vec<(String, Vec<f64>)>, DatasetError> {
    let (columns, mut rows) = read_numeric_table(path)?;
    if columns.last().map(String::as_str) == Some("target") {
        rows.iter_mut().for_each(|(_, cells)| {
            cells.pop();
        });
    }
    Ok(rows)
}

/// Loads `id,<algorithm...>` and aligns rows to `dataset` order.
pub fn load_predictions(path: &Path, dataset: &Dataset) -> Result<PredictionMatrix, DatasetError> {
    let (algorithm_ids, rows) = read_numeric_table(path)?;
    if algorithm_ids.len() < 2 {
        return Err(DatasetError::TooFewAlgorithms(algorithm_ids.len()));
    }
    let mut values = Array2::<f64>::zeros((dataset.len(), algorithm_ids.len()));
    let mut seen = HashSet::with_capacity(rows.len());
    for (id, cells) in rows {
        let Some(i) = dataset.index_of(&id) else {
            return Err(DatasetError::UnknownInstance(id));
        };
        if !seen.insert(i) {
            return Err(DatasetError::DuplicateId(id));
        }
        values.row_mut(i).assign(&ndarray::ArrayView1::from(&cells));
    }
    if let Some(missing) = dataset.ids().enumerate().find(|(i, _)| !seen.contains(i)) {
        return Err(DatasetError::MissingInstance(missing.1.to_string()));
    }
    PredictionMatrix::new(algorithm_ids, values)
}

fn write_err(path: &Path) -> impl Fn(csv::Error) -> DatasetError + '_ {
    move |e| csv_err(path, e)
}

fn flush(path: &Path, mut w: csv::Writer<File>) -> Result<(), DatasetError> {
    w.flush().map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `id,<feature...>,target` with shortest round-trip decimal formatting.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut w = create(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(dataset.feature_names().iter().cloned());
    header.push("target".into());
    w.write_record(&header).map_err(write_err(path))?;
    for inst in dataset.instances() {
        let mut record = vec![inst.id.clone()];
        record.extend(inst.features.iter().map(f64::to_string));
        record.push(inst.target.to_string());
        w.write_record(&record).map_err(write_err(path))?;
    }
    flush(path, w)
}

pub fn save_predictions(
    dataset: &Dataset,
    predictions: &PredictionMatrix,
    path: &Path,
) -> Result<(), DatasetError> {
    predictions.check_aligned(dataset)?;
    let mut w = create(path)?;
    let mut header = vec!["id".to_string()];
    header.extend(predictions.algorithm_ids().iter().cloned());
    w.write_record(&header).map_err(write_err(path))?;
    for (i, inst) in dataset.instances().iter().enumerate() {
        let mut record = vec![inst.id.clone()];
        record.extend(predictions.row(i).iter().map(f64::to_string));
        w.write_record(&record).map_err(write_err(path))?;
    }
    flush(path, w)
}

/// Writes `id,persona`.
pub fn save_personas(dataset: &Dataset, personas: &[usize], path: &Path) -> Result<(), DatasetError> {
    let mut w = create(path)?;
    w.write_record(["id", "persona"]).map_err(write_err(path))?;
    for (inst, p) in dataset.instances().iter().zip(personas) {
        w.write_record([inst.id.as_str(), &p.to_string()])
            .map_err(write_err(path))?;
    }
    flush(path, w)
}

/// Reads `id,persona` aligned to `dataset` order.
pub fn load_personas(path: &Path, dataset: &Dataset) -> Result<Vec<usize>, DatasetError> {
    let (columns, rows) = read_numeric_table(path)?;
    if columns != ["persona"] {
        return Err(header_err(path, "expected header `id,persona`"));
    }
    let mut labels = vec![None; dataset.len()];
    for (id, cells) in rows {
        let i = dataset
            .index_of(&id)
            .ok_or_else(|| DatasetError::UnknownInstance(id.clone()))?;
        labels[i] = Some(cells[0] as usize);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| DatasetError::MissingInstance(dataset.get(i).id.clone())))
        .collect()
}
