//! On-disk workspace: `map.json`, `config.toml`, `records.jsonl` and a
//! `fixtures/` directory, with atomic map writes (write-temp-then-rename) and
//! a single-writer advisory lock.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distiller::LlmSettings;
use crate::evict::TagDelta;
use crate::map::{ContextMap, MapError};
use crate::policy::{PolicyConfig, UpdateRecord};

pub const MAP_FILE: &str = "map.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const ANSWERS_FILE: &str = "answers.jsonl";
pub const FIXTURES_DIR: &str = "fixtures";
const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("refusing to initialize non-empty directory {0}")]
    NotEmpty(PathBuf),
    #[error("{0} is not a workspace (missing {MAP_FILE})")]
    NotAWorkspace(PathBuf),
    #[error("workspace is locked by another process ({0} exists; delete it if stale)")]
    Locked(PathBuf),
    #[error("map load: {0}")]
    Map(#[from] MapError),
    #[error("config load: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Workspace config document. Field defaults match [`PolicyConfig::default`];
/// a missing file or missing fields fall back silently, a malformed file or
/// invalid tag delta is an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkspaceConfig {
    /// Budget used by `init`; map.json's budget is authoritative afterwards.
    pub budget: usize,
    pub evolve_steps: u64,
    pub per_item_cap: usize,
    pub step_char_limit: usize,
    pub fail_fast: bool,
    pub tag_delta: TagDelta,
    pub provider: ProviderConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub model: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Optional endpoint base; the PEEK_API_BASE env var takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub api_base: Option<String>,
}

impl Default for ProviderConfig {
    fn default() -> ProviderConfig {
        let llm = LlmSettings::default();
        ProviderConfig {
            model: llm.model,
            temperature: llm.temperature,
            api_base: None,
        }
    }
}

impl Default for WorkspaceConfig {
    fn default() -> WorkspaceConfig {
        let policy = PolicyConfig::default();
        WorkspaceConfig {
            budget: 1024,
            evolve_steps: policy.evolve_steps,
            per_item_cap: policy.per_item_cap,
            step_char_limit: policy.step_char_limit,
            fail_fast: policy.fail_fast,
            tag_delta: policy.tag_delta,
            provider: ProviderConfig::default(),
        }
    }
}

impl WorkspaceConfig {
    pub fn to_policy(&self) -> PolicyConfig {
        PolicyConfig {
            evolve_steps: self.evolve_steps,
            tag_delta: self.tag_delta,
            per_item_cap: self.per_item_cap,
            step_char_limit: self.step_char_limit,
            llm: LlmSettings {
                model: self.provider.model.clone(),
                temperature: self.provider.temperature,
            },
            fail_fast: self.fail_fast,
            retry_on_parse_error: true,
        }
    }
}

/// Handle to a workspace directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Creates a new workspace: empty map at `budget`, default config,
    /// empty records log and fixtures dir. Refuses a non-empty directory.
    pub fn init(root: impl Into<PathBuf>, budget: usize) -> Result<Workspace, WorkspaceError> {
        let root = root.into();
        if root.exists() {
            let mut entries = fs::read_dir(&root)
                .map_err(io_err(&root))?
                .filter_map(Result::ok);
            if entries.next().is_some() {
                return Err(WorkspaceError::NotEmpty(root));
            }
        } else {
            fs::create_dir_all(&root).map_err(io_err(&root))?;
        }

        let workspace = Workspace { root };
        let map = ContextMap::new(budget)?;
        workspace.store_map(&map)?;

        let config = WorkspaceConfig {
            budget,
            ..WorkspaceConfig::default()
        };
        let config_text =
            toml::to_string_pretty(&config).map_err(|e| WorkspaceError::Config(e.to_string()))?;
        fs::write(workspace.config_path(), config_text)
            .map_err(io_err(&workspace.config_path()))?;

        fs::write(workspace.records_path(), "").map_err(io_err(&workspace.records_path()))?;
        fs::create_dir_all(workspace.fixtures_dir()).map_err(io_err(&workspace.fixtures_dir()))?;
        Ok(workspace)
    }

    /// Opens an existing workspace; the map file must be present.
    pub fn open(root: impl Into<PathBuf>) -> Result<Workspace, WorkspaceError> {
        let root = root.into();
        if !root.join(MAP_FILE).is_file() {
            return Err(WorkspaceError::NotAWorkspace(root));
        }
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn map_path(&self) -> PathBuf {
        self.root.join(MAP_FILE)
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn records_path(&self) -> PathBuf {
        self.root.join(RECORDS_FILE)
    }

    pub fn answers_path(&self) -> PathBuf {
        self.root.join(ANSWERS_FILE)
    }

    pub fn fixtures_dir(&self) -> PathBuf {
        self.root.join(FIXTURES_DIR)
    }

    pub fn load_map(&self) -> Result<ContextMap, WorkspaceError> {
        let path = self.map_path();
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(ContextMap::from_json(&text)?)
    }

    /// Atomic write: serialize to a temp file in the same directory, fsync,
    /// then rename over map.json. A crash mid-write leaves the old map intact.
    pub fn store_map(&self, map: &ContextMap) -> Result<(), WorkspaceError> {
        let target = self.map_path();
        let tmp = self
            .root
            .join(format!(".{MAP_FILE}.tmp-{}", std::process::id()));
        {
            let mut file = File::create(&tmp).map_err(io_err(&tmp))?;
            file.write_all(map.to_json().as_bytes())
                .map_err(io_err(&tmp))?;
            file.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &target).map_err(io_err(&target))?;
        Ok(())
    }

    pub fn load_config(&self) -> Result<WorkspaceConfig, WorkspaceError> {
        let path = self.config_path();
        if !path.is_file() {
            return Ok(WorkspaceConfig::default());
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let config: WorkspaceConfig =
            toml::from_str(&text).map_err(|e| WorkspaceError::Config(e.to_string()))?;
        config
            .tag_delta
            .validate()
            .map_err(|e| WorkspaceError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Appends one update record, wrapped with a wall-clock timestamp. The
    /// timestamp lives only here so replayed stdout stays deterministic.
    pub fn append_record(&self, record: &UpdateRecord) -> Result<(), WorkspaceError> {
        #[derive(Serialize)]
        struct RecordLine<'a> {
            recorded_at_ms: u128,
            #[serde(flatten)]
            record: &'a UpdateRecord,
        }
        let recorded_at_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        let mut line = serde_json::to_string(&RecordLine {
            recorded_at_ms,
            record,
        })
        .expect("record serializes");
        line.push('\n');
        let path = self.records_path();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err(&path))?;
        file.write_all(line.as_bytes()).map_err(io_err(&path))?;
        Ok(())
    }

    /// Takes the single-writer advisory lock. Released on drop; a stale file
    /// from a crashed process must be deleted manually.
    pub fn lock(&self) -> Result<WorkspaceLock, WorkspaceError> {
        let path = self.root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut file) => {
                let _ = writeln!(file, "{}", std::process::id());
                Ok(WorkspaceLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(WorkspaceError::Locked(path))
            }
            Err(e) => Err(WorkspaceError::Io { path, source: e }),
        }
    }
}

pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_creates_the_expected_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ws");
        let ws = Workspace::init(&root, 1024).unwrap();
        assert!(ws.map_path().is_file());
        assert!(ws.config_path().is_file());
        assert!(ws.records_path().is_file());
        assert!(ws.fixtures_dir().is_dir());

        let map = ws.load_map().unwrap();
        assert_eq!(map.budget(), 1024);
        assert_eq!(map.item_count(), 0);

        let config = ws.load_config().unwrap();
        assert_eq!(config.budget, 1024);
        assert_eq!(config.evolve_steps, 1);
        assert_eq!(config.tag_delta, TagDelta::default());
    }

    #[test]
    fn init_refuses_non_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("junk.txt"), "x").unwrap();
        match Workspace::init(dir.path(), 1024) {
            Err(WorkspaceError::NotEmpty(_)) => {}
            other => panic!("expected NotEmpty, got {other:?}"),
        }
        assert!(!dir.path().join(MAP_FILE).exists());
    }

    #[test]
    fn store_map_round_trips_and_replaces_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path().join("ws"), 1024).unwrap();
        let mut map = ws.load_map().unwrap();
        map.increment_update_seq();
        ws.store_map(&map).unwrap();
        assert_eq!(ws.load_map().unwrap().update_seq(), 1);
        // no temp files left behind
        let leftovers: Vec<_> = std::fs::read_dir(ws.root())
            .unwrap()
            .filter_map(Result::ok)
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp-"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn lock_is_exclusive_and_released_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path().join("ws"), 1024).unwrap();
        let guard = ws.lock().unwrap();
        assert!(matches!(ws.lock(), Err(WorkspaceError::Locked(_))));
        drop(guard);
        ws.lock().unwrap();
    }

    #[test]
    fn missing_config_falls_back_to_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path().join("ws"), 512).unwrap();
        std::fs::remove_file(ws.config_path()).unwrap();
        let config = ws.load_config().unwrap();
        assert_eq!(config.per_item_cap, 80);
    }

    #[test]
    fn invalid_tag_delta_in_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path().join("ws"), 1024).unwrap();
        std::fs::write(
            ws.config_path(),
            "[tag_delta]\nhelpful = 0\nneutral = 0\nharmful = -1\nstale = -2\n",
        )
        .unwrap();
        assert!(matches!(ws.load_config(), Err(WorkspaceError::Config(_))));
    }

    #[test]
    fn open_requires_a_map_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            Workspace::open(dir.path()),
            Err(WorkspaceError::NotAWorkspace(_))
        ));
    }

    #[test]
    fn records_append_as_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::init(dir.path().join("ws"), 1024).unwrap();
        let record = UpdateRecord {
            cycle: 1,
            tokens_before: 140,
            tokens_after: 140,
            ..UpdateRecord::default()
        };
        ws.append_record(&record).unwrap();
        ws.append_record(&record).unwrap();
        let text = std::fs::read_to_string(ws.records_path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let parsed: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(parsed["cycle"], 1);
        assert!(parsed["recorded_at_ms"].is_number());
    }
}
