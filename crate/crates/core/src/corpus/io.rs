//! Corpus files: UTF-8, one document per line, blank lines skipped.

use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};

pub fn write_docs<S: AsRef<str>>(path: &Path, docs: &[S]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).at(dir)?;
    }
    let mut out = String::new();
    for (i, d) in docs.iter().enumerate() {
        let d = d.as_ref();
        if d.contains('\n') {
            return Err(Error::data(format!("document {i} contains a newline")));
        }
        out.push_str(d);
        out.push('\n');
    }
    fs::write(path, out).at(path)
}

pub fn read_docs(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).at(path)?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_skips_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/docs.txt");
        write_docs(&p, &["a b .", "c ."]).unwrap();
        assert_eq!(read_docs(&p).unwrap(), ["a b .", "c ."]);
        fs::write(&p, "x\n\n y\n").unwrap();
        assert_eq!(read_docs(&p).unwrap(), ["x", " y"]);
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let err = read_docs(Path::new("/nonexistent/docs.txt")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("/nonexistent/docs.txt"));
    }
}
