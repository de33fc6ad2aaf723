//! Directory-backed account store.
//!
//! ```text
//! <root>/manifest.json              allocation counter and account list
//! <root>/accounts/<number>.json     one AccountRecord per account
//! <root>/index.json                 the latest trained CNN index
//! ```
//!
//! Every file is replaced by writing a sibling temporary file, syncing it
//! and renaming it over the old one.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::align::Template;
use crate::auth::SvmEnsemble;
use crate::error::{Error, Result};
use crate::ident::CnnModel;
use crate::signal::Signal;

pub const STORE_VERSION: u32 = 1;

/// Template, ensemble and preprocessed registration signals of one field
/// (ID or passcode) of an account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub template: Template,
    pub ensemble: SvmEnsemble,
    /// Kept as negatives for later registrations and as index training data.
    pub registration: Vec<Signal>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountRecord {
    pub account_number: String,
    /// Class label of the account in the CNN index.
    pub label: u64,
    pub id: Enrollment,
    pub passcode: Enrollment,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub updated: u64,
}

/// A trained index and the accounts it covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexModel {
    pub model: CnnModel,
    pub accounts: Vec<String>,
    pub trained_at: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    next_label: u64,
    accounts: Vec<String>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn account_number(label: u64) -> String {
    format!("A{label:08}")
}

/// Writes `value` as JSON to `path` so that readers see either the old or
/// the new file, never a partial one.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let dir = path
        .parent()
        .ok_or_else(|| Error::Validation(format!("{} has no parent", path.display())))?;
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(value)?)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    manifest: Manifest,
}

impl Store {
    /// Opens the store at `root`, creating an empty one if needed.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("accounts"))?;
        let path = root.join("manifest.json");
        let manifest = if path.exists() {
            let m: Manifest = read_json(&path)?;
            if m.version != STORE_VERSION {
                return Err(Error::Malformed(format!(
                    "store version {} is not supported",
                    m.version
                )));
            }
            m
        } else {
            let m = Manifest {
                version: STORE_VERSION,
                next_label: 1,
                accounts: Vec::new(),
            };
            write_json_atomic(&path, &m)?;
            m
        };
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn accounts(&self) -> &[String] {
        &self.manifest.accounts
    }

    fn record_path(&self, number: &str) -> PathBuf {
        self.root.join("accounts").join(format!("{number}.json"))
    }

    /// Issues the next account number and label. The counter is persisted
    /// before returning, so a number is never issued twice.
    pub fn allocate(&mut self) -> Result<(String, u64)> {
        let label = self.manifest.next_label;
        self.manifest.next_label += 1;
        write_json_atomic(&self.root.join("manifest.json"), &self.manifest)?;
        Ok((account_number(label), label))
    }

    pub fn put(&mut self, record: &AccountRecord) -> Result<()> {
        write_json_atomic(&self.record_path(&record.account_number), record)?;
        if !self.manifest.accounts.contains(&record.account_number) {
            self.manifest.accounts.push(record.account_number.clone());
            write_json_atomic(&self.root.join("manifest.json"), &self.manifest)?;
        }
        Ok(())
    }

    pub fn get(&self, number: &str) -> Result<AccountRecord> {
        if !self.manifest.accounts.iter().any(|a| a == number) {
            return Err(Error::NotFound(format!("account {number}")));
        }
        read_json(&self.record_path(number))
    }

    pub fn load_all(&self) -> Result<Vec<AccountRecord>> {
        self.manifest.accounts.iter().map(|a| self.get(a)).collect()
    }

    pub fn save_index(&self, index: &IndexModel) -> Result<()> {
        write_json_atomic(&self.root.join("index.json"), index)
    }

    pub fn load_index(&self) -> Result<Option<IndexModel>> {
        let path = self.root.join("index.json");
        if !path.exists() {
            return Ok(None);
        }
        let index: IndexModel = read_json(&path)?;
        index.model.validate()?;
        Ok(Some(index))
    }
}
