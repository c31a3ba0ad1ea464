//! File-backed persistence: one JSON file per profile, one directory per
//! session holding its metadata and JSON-lines logs.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use ifassist_core::assistance::DEFAULT_EPSILON;
use ifassist_core::{mixture_tables, ControlMapping, NoiseLevel, UserModelTables};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;

/// Noise level of the tables a profile starts with before calibration.
pub const DEFAULT_TABLE_NOISE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableSource {
    Default,
    Fitted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub tables: UserModelTables,
    pub internal_mapping_source: TableSource,
    pub distortion_source: TableSource,
    pub mapping: ControlMapping,
    pub epsilon: f64,
    pub created_at: f64,
    pub updated_at: f64,
}

impl UserProfile {
    pub fn new(id: String, mapping: ControlMapping, epsilon: f64, now: f64) -> Self {
        let level = NoiseLevel::new(DEFAULT_TABLE_NOISE).expect("in range");
        Self {
            id,
            tables: mixture_tables(level, level, &mapping),
            internal_mapping_source: TableSource::Default,
            distortion_source: TableSource::Default,
            mapping,
            epsilon,
            created_at: now,
            updated_at: now,
        }
    }

    pub fn default_epsilon() -> f64 {
        DEFAULT_EPSILON
    }
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        && !id.starts_with('.')
}

#[derive(Clone, Debug)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let root = root.into();
        fs::create_dir_all(root.join("profiles"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn profile_path(&self, id: &str) -> PathBuf {
        self.root.join("profiles").join(format!("{id}.json"))
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    pub fn load_profile(&self, id: &str) -> Result<Option<UserProfile>, ServiceError> {
        if !valid_id(id) {
            return Ok(None);
        }
        read_json_opt(&self.profile_path(id))
    }

    pub fn save_profile(&self, profile: &UserProfile) -> Result<(), ServiceError> {
        write_json_atomic(&self.profile_path(&profile.id), profile)
    }

    pub fn session_exists(&self, id: &str) -> bool {
        self.session_dir(id).exists()
    }

    pub fn write_session_file<T: Serialize>(
        &self,
        id: &str,
        name: &str,
        value: &T,
    ) -> Result<(), ServiceError> {
        let dir = self.session_dir(id);
        fs::create_dir_all(&dir)?;
        write_json_atomic(&dir.join(name), value)
    }

    pub fn read_session_file<T: DeserializeOwned>(
        &self,
        id: &str,
        name: &str,
    ) -> Result<Option<T>, ServiceError> {
        read_json_opt(&self.session_dir(id).join(name))
    }

    pub fn append_line<T: Serialize>(
        &self,
        id: &str,
        name: &str,
        value: &T,
    ) -> Result<(), ServiceError> {
        let dir = self.session_dir(id);
        fs::create_dir_all(&dir)?;
        let mut line = serde_json::to_vec(value)?;
        line.push(b'\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(name))?;
        file.write_all(&line)?;
        Ok(())
    }

    pub fn read_lines<T: DeserializeOwned>(
        &self,
        id: &str,
        name: &str,
    ) -> Result<Vec<T>, ServiceError> {
        let path = self.session_dir(id).join(name);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                out.push(serde_json::from_str(&line)?);
            }
        }
        Ok(out)
    }

    pub fn raw_lines(&self, id: &str, name: &str) -> Result<Vec<String>, ServiceError> {
        let path = self.session_dir(id).join(name);
        match fs::read_to_string(path) {
            Ok(text) => Ok(text.lines().map(str::to_owned).collect()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }
}

fn read_json_opt<T: DeserializeOwned>(path: &Path) -> Result<Option<T>, ServiceError> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), ServiceError> {
    let tmp = path.with_extension("json.tmp");
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let p = UserProfile::new("alice".into(), ControlMapping::default(), 0.7, 10.0);
        store.save_profile(&p).unwrap();
        assert_eq!(store.load_profile("alice").unwrap(), Some(p));
        assert_eq!(store.load_profile("bob").unwrap(), None);
        assert_eq!(store.load_profile("../etc").unwrap(), None);
    }

    #[test]
    fn id_rules() {
        assert!(valid_id("alice-01"));
        assert!(!valid_id(""));
        assert!(!valid_id("a/b"));
        assert!(!valid_id(".hidden"));
    }
}
