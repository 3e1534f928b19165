//! CSV and directory helpers. Every CSV starts with a `# config_hash=`
//! comment line followed by the header row.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{HarnessError, Result};

pub const HASH_PREFIX: &str = "# config_hash=";

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("creating {}: {e}", dir.display())))
}

pub struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, config_hash: &str, header: &[&str]) -> Result<Self> {
        let file = File::create(path).map_err(|e| HarnessError::Io(format!("creating {}: {e}", path.display())))?;
        let mut buf = BufWriter::new(file);
        writeln!(buf, "{HASH_PREFIX}{config_hash}")?;
        let mut writer = csv::Writer::from_writer(buf);
        writer.write_record(header)?;
        Ok(Self { path: path.to_path_buf(), writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(self) -> Result<PathBuf> {
        let mut inner = self.writer.into_inner().map_err(|e| HarnessError::Io(e.to_string()))?;
        inner.flush()?;
        Ok(self.path)
    }
}

/// Parsed CSV written by [`CsvOut`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub config_hash: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| HarnessError::Io(format!("opening {}: {e}", path.display())))?;
        let mut reader = BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let config_hash = first
            .trim_end()
            .strip_prefix(HASH_PREFIX)
            .ok_or_else(|| HarnessError::Io(format!("{} lacks a config hash line", path.display())))?
            .to_string();
        let mut csv = csv::Reader::from_reader(reader);
        let header = csv.headers()?.iter().map(String::from).collect();
        let rows = csv
            .records()
            .map(|r| r.map(|r| r.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { config_hash, header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column parsed as floats.
    pub fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column(name).ok_or_else(|| HarnessError::Io(format!("no column {name}")))?;
        self.rows
            .iter()
            .map(|r| r[i].parse::<f64>().map_err(|e| HarnessError::Io(format!("column {name}: {e}"))))
            .collect()
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_line_then_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut w = CsvOut::create(&path, "abc", &["x", "y"]).unwrap();
        w.row(["1", "0.5"]).unwrap();
        w.row([2.to_string(), 0.25.to_string()]).unwrap();
        w.finish().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# config_hash=abc\nx,y\n1,0.5\n2,0.25\n");
        let t = CsvTable::read(&path).unwrap();
        assert_eq!(t.config_hash, "abc");
        assert_eq!(t.f64s("y").unwrap(), vec![0.5, 0.25]);
    }
}
