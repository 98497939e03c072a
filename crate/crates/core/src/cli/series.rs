//! `series.csv` I/O and the on-disk run observer.

use std::fs::File;
use std::path::{Path, PathBuf};

use crate::cli::snapshot::{snapshot_name, write_snapshot};
use crate::diagnostics::{Column, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::grid::Field;
use crate::integrator::RunObserver;

/// Appends records to a CSV file, flushing after every row.
pub struct SeriesWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
    last_t: Option<f64>,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

impl SeriesWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(Column::ALL.iter().map(|c| c.name()))
            .and_then(|_| writer.flush().map_err(csv::Error::from))
            .map_err(|e| csv_error(path, e))?;
        Ok(SeriesWriter {
            path: path.to_path_buf(),
            writer,
            last_t: None,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        if let Some(last) = self.last_t {
            if !(record.t > last) {
                return Err(Error::InvalidArgument(format!(
                    "series times must increase, got {} after {last}",
                    record.t
                )));
            }
        }
        self.writer
            .write_record(record.values().iter().map(|v| v.to_string()))
            .map_err(|e| csv_error(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        self.last_t = Some(record.t);
        Ok(())
    }
}

/// Reads a series written by [`SeriesWriter`]. Columns are matched by name,
/// so reordered or partial files are accepted as long as `t` is present.
pub fn read_series(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let columns: Vec<Column> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.trim().parse::<Column>().map_err(|e| bad(e.to_string())))
        .collect::<Result<_>>()?;
    if !columns.contains(&Column::T) {
        return Err(bad("missing column `t`".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let mut r = DiagnosticsRecord::default();
        for (col, cell) in columns.iter().zip(rec.iter()) {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| bad(format!("row {}: `{cell}` is not a number in column {col}", row + 1)))?;
            r.set(*col, v);
        }
        out.push(r);
    }
    Ok(out)
}

/// Streams a run to `series.csv` and snapshot files.
pub struct DiskObserver {
    series: SeriesWriter,
    dir: PathBuf,
    prefix: String,
    pub rows: usize,
    pub snapshots: Vec<PathBuf>,
}

impl DiskObserver {
    pub fn create(dir: &Path, series_name: &str, prefix: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(DiskObserver {
            series: SeriesWriter::create(&dir.join(series_name))?,
            dir: dir.to_path_buf(),
            prefix: prefix.to_string(),
            rows: 0,
            snapshots: Vec::new(),
        })
    }

    pub fn series_path(&self) -> &Path {
        self.series.path()
    }
}

impl RunObserver for DiskObserver {
    fn on_record(&mut self, record: &DiagnosticsRecord) -> Result<()> {
        self.series.append(record)?;
        self.rows += 1;
        Ok(())
    }

    fn on_snapshot(&mut self, t: f64, phi: &Field) -> Result<()> {
        let path = self.dir.join(snapshot_name(&self.prefix, t));
        write_snapshot(&path, phi, t)?;
        self.snapshots.push(path);
        Ok(())
    }
}
