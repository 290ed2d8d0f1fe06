//! Keyed persistence of bandit snapshots between sessions.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::bandit::{BanditModel, SnapshotDocument};
use crate::error::{Error, Result};

pub trait SnapshotStore: Send + Sync {
    fn save(&self, key: &str, doc: &SnapshotDocument) -> Result<()>;
    /// `Ok(None)` when nothing is stored under `key`.
    fn load(&self, key: &str) -> Result<Option<SnapshotDocument>>;
    fn remove(&self, key: &str) -> Result<()>;
}

/// One JSON file per key. Writes go to a temporary file in the same
/// directory and are renamed into place.
#[derive(Clone, Debug)]
pub struct FileStore {
    dir: PathBuf,
}

/// Keys are file names: ASCII alphanumerics, `-`, `_` and `.`, not starting with a dot.
pub fn valid_key(key: &str) -> Result<()> {
    let ok = !key.is_empty()
        && key.len() <= 128
        && key
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        && !key.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!("invalid snapshot key {key:?}")))
    }
}

impl FileStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, key: &str) -> Result<PathBuf> {
        valid_key(key)?;
        Ok(self.dir.join(format!("{key}.json")))
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `contents` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let tmp = dir.join(format!(".{name}.{}.{n}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

impl SnapshotStore for FileStore {
    fn save(&self, key: &str, doc: &SnapshotDocument) -> Result<()> {
        let path = self.path_for(key)?;
        let text = serde_json::to_string(doc).expect("snapshot serializes");
        write_atomic(&path, text.as_bytes())
    }

    fn load(&self, key: &str) -> Result<Option<SnapshotDocument>> {
        let path = self.path_for(key)?;
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(Some(BanditModel::from_json(&text)?.snapshot()))
    }

    fn remove(&self, key: &str) -> Result<()> {
        let path = self.path_for(key)?;
        match fs::remove_file(&path) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    docs: Mutex<HashMap<String, SnapshotDocument>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SnapshotStore for MemoryStore {
    fn save(&self, key: &str, doc: &SnapshotDocument) -> Result<()> {
        valid_key(key)?;
        self.docs
            .lock()
            .expect("store lock")
            .insert(key.to_string(), doc.clone());
        Ok(())
    }

    fn load(&self, key: &str) -> Result<Option<SnapshotDocument>> {
        Ok(self.docs.lock().expect("store lock").get(key).cloned())
    }

    fn remove(&self, key: &str) -> Result<()> {
        self.docs.lock().expect("store lock").remove(key);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{Embedding, ProbVector, RewardSignal};

    fn trained() -> BanditModel {
        let mut m = BanditModel::new(3, 6, 1.0, 2).unwrap();
        let e = Embedding::new(vec![0.3, -0.2, 0.9]).unwrap();
        let p = ProbVector::new(vec![0.1, 0.2, 0.3, 0.1, 0.1, 0.2]).unwrap();
        m.pull(&e, &p).unwrap();
        m.apply_reward(RewardSignal::advance());
        m
    }

    #[test]
    fn file_roundtrip_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::new(dir.path()).unwrap();
        assert!(store.load("p1").unwrap().is_none());
        let doc = trained().snapshot();
        store.save("p1", &doc).unwrap();
        assert_eq!(store.load("p1").unwrap().unwrap(), doc);
        store.remove("p1").unwrap();
        assert!(store.load("p1").unwrap().is_none());
        let leftovers: Vec<_> = fs::read_dir(dir.path()).unwrap().collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn corrupt_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let store = FileStore::new(dir.path()).unwrap();
        fs::write(store.path_for("p").unwrap(), "{\"version\":1,").unwrap();
        assert!(store.load("p").is_err());
    }

    #[test]
    fn keys_are_checked() {
        let store = MemoryStore::new();
        let doc = trained().snapshot();
        assert!(store.save("../x", &doc).is_err());
        assert!(store.save("", &doc).is_err());
        store.save("user-3_s1", &doc).unwrap();
        assert_eq!(store.load("user-3_s1").unwrap(), Some(doc));
    }
}
