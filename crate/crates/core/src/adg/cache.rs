use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::AttributeDescriptions;
use crate::{Error, Result};

/// Append-only JSON-Lines store of descriptions keyed by sticker id.
pub struct DescriptionCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

struct Inner {
    records: HashMap<String, AttributeDescriptions>,
    file: Option<File>,
}

impl DescriptionCache {
    /// Opens (or creates) a cache file, loading any records already present.
    pub fn open(path: &Path) -> Result<Self> {
        let mut records = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: AttributeDescriptions = serde_json::from_str(&line).map_err(|e| {
                    Error::InvalidArgument(format!("{}:{}: {e}", path.display(), lineno + 1))
                })?;
                records.insert(record.id.clone(), record);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            inner: Mutex::new(Inner { records, file: Some(file) }),
        })
    }

    /// A cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self {
            path: None,
            inner: Mutex::new(Inner {
                records: HashMap::new(),
                file: None,
            }),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, id: &str) -> Option<AttributeDescriptions> {
        self.inner.lock().unwrap().records.get(id).cloned()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.inner.lock().unwrap().records.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Snapshot of all records.
    pub fn records(&self) -> HashMap<String, AttributeDescriptions> {
        self.inner.lock().unwrap().records.clone()
    }

    pub fn insert(&self, record: AttributeDescriptions) -> Result<()> {
        let mut inner = self.inner.lock().unwrap();
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record)?;
            line.push('\n');
            let path = self.path.as_deref().unwrap_or(Path::new("<cache>"));
            file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
            file.flush().map_err(|e| Error::io(path, e))?;
        }
        inner.records.insert(record.id.clone(), record);
        Ok(())
    }
}
