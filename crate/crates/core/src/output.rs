//! CSV results with `#`-prefixed metadata, written atomically.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;

/// Builds CSV text: metadata lines, a header, then rows.
#[derive(Debug, Clone)]
pub struct CsvDocument {
    text: String,
}

impl CsvDocument {
    pub fn new<K: AsRef<str>, V: AsRef<str>>(metadata: &[(K, V)], header: &[&str]) -> Self {
        let mut text = String::new();
        for (k, v) in metadata {
            let _ = writeln!(text, "# {}: {}", k.as_ref(), v.as_ref());
        }
        let _ = writeln!(text, "{}", header.join(","));
        Self { text }
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// Shortest text that parses back to the same float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes `contents` to a temporary file next to `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file_name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn document_layout() {
        let mut d = CsvDocument::new(&[("seed", "3")], &["t", "value"]);
        d.row(&["1".into(), fmt_f64(0.1)]);
        assert_eq!(d.text(), "# seed: 3\nt,value\n1,0.1\n");
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "b\n");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
