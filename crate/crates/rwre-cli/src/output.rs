use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// All artifacts of a run land in one directory. JSON is pretty-printed
/// with a trailing newline; every CSV carries a header row and a
/// `<name>.schema.json` sidecar describing its columns, so the tables are
/// machine-readable without guessing.
pub struct OutDir {
    root: PathBuf,
}

#[derive(Serialize)]
pub struct Column {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: &'static str,
    pub description: String,
}

pub fn col(name: impl Into<String>, kind: &'static str, description: impl Into<String>) -> Column {
    Column {
        name: name.into(),
        kind,
        description: description.into(),
    }
}

#[derive(Serialize)]
struct CsvSchema<'a> {
    file: &'a str,
    columns: &'a [Column],
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| {
            CliError::Config(format!("cannot create output directory {}: {e}", root.display()))
        })?;
        Ok(OutDir {
            root: root.to_path_buf(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)
            .map_err(|e| CliError::Config(format!("cannot encode {name}: {e}")))?;
        bytes.push(b'\n');
        let path = self.path(name);
        fs::write(&path, bytes)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
    }

    /// Open `name` for writing with its header row already emitted, and
    /// drop the schema sidecar next to it.
    pub fn csv_writer(
        &self,
        name: &str,
        columns: &[Column],
    ) -> Result<csv::Writer<fs::File>, CliError> {
        let stem = name.strip_suffix(".csv").unwrap_or(name);
        self.write_json(
            &format!("{stem}.schema.json"),
            &CsvSchema {
                file: name,
                columns,
            },
        )?;

        let path = self.path(name);
        let file = fs::File::create(&path)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        let mut writer = csv::Writer::from_writer(file);
        writer
            .write_record(columns.iter().map(|c| c.name.as_str()))
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))?;
        Ok(writer)
    }
}

pub fn finish_csv(mut writer: csv::Writer<fs::File>, name: &str) -> Result<(), CliError> {
    writer
        .flush()
        .map_err(|e| CliError::Config(format!("cannot flush {name}: {e}")))
}

/// Shortest decimal that parses back to the same f64; deterministic, so
/// byte-identical reruns come for free.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        // RFC 4180 has no float lexicon; spell the IEEE specials out.
        format!("{x:?}")
    }
}
