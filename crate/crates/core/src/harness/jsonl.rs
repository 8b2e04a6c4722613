use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::HarnessError;

#[derive(Debug)]
pub struct JsonlRead<T> {
    pub items: Vec<T>,
    /// Byte length of the newline-terminated prefix.
    pub valid_len: u64,
    /// The file ended in an unterminated line (a write cut short).
    pub torn: bool,
}

/// Parses every newline-terminated line. An unterminated tail is reported as
/// torn and skipped; a bad terminated line is an error. A missing file reads
/// as empty.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<JsonlRead<T>, HarnessError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(HarnessError::io(path, e)),
    };
    let valid_len = text.rfind('\n').map_or(0, |i| i + 1);
    let mut items = Vec::new();
    for (i, line) in text[..valid_len].lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| HarnessError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(JsonlRead {
        items,
        valid_len: valid_len as u64,
        torn: valid_len < text.len(),
    })
}

/// Appends one JSON line with a single write and flushes it.
pub fn append_line<T: Serialize>(file: &mut File, item: &T) -> std::io::Result<()> {
    let mut line = serde_json::to_vec(item).map_err(std::io::Error::other)?;
    line.push(b'\n');
    file.write_all(&line)?;
    file.flush()
}

pub(crate) fn open_append(path: &Path, keep_len: u64) -> Result<File, HarnessError> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| HarnessError::io(path, e))?;
    // drop a torn tail before appending
    if file.metadata().map_err(|e| HarnessError::io(path, e))?.len() > keep_len {
        file.set_len(keep_len).map_err(|e| HarnessError::io(path, e))?;
    }
    Ok(file)
}

/// Writes via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| HarnessError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torn_tail_is_skipped_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\n2\n{\"a\":").unwrap();
        let r: JsonlRead<serde_json::Value> = read_jsonl(&p).unwrap();
        assert_eq!(r.items.len(), 2);
        assert!(r.torn);
        assert_eq!(r.valid_len, 4);
        let mut f = open_append(&p, r.valid_len).unwrap();
        append_line(&mut f, &3).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "1\n2\n3\n");
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "1\nnope\n3\n").unwrap();
        let err = read_jsonl::<serde_json::Value>(&p).unwrap_err();
        assert!(matches!(err, HarnessError::Corrupt { line: 2, .. }));
    }

    #[test]
    fn missing_file_is_empty() {
        let r = read_jsonl::<u32>(Path::new("/nonexistent/x.jsonl")).unwrap();
        assert!(r.items.is_empty() && !r.torn);
    }
}
