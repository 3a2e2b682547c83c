//! Session registry persisted between invocations.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vpd_core::sessionctx::SessionRegistry;

const STATE_VERSION: u32 = 1;

#[derive(Debug, Default, Serialize, Deserialize)]
struct StateFile {
    version: u32,
    registry: SessionRegistry,
}

/// The state file, held under an exclusive lock until dropped.
pub struct State {
    file: File,
    pub registry: SessionRegistry,
}

impl State {
    pub fn open(path: &Path) -> Result<State> {
        let mut file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(false)
            .open(path)
            .with_context(|| format!("opening state file {}", path.display()))?;
        file.lock()
            .with_context(|| format!("locking state file {}", path.display()))?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;
        let registry = if text.trim().is_empty() {
            SessionRegistry::new()
        } else {
            let s: StateFile = serde_json::from_str(&text)
                .with_context(|| format!("reading state file {}", path.display()))?;
            anyhow::ensure!(
                s.version == STATE_VERSION,
                "unsupported state file version {}",
                s.version
            );
            s.registry
        };
        Ok(State { file, registry })
    }

    pub fn save(&mut self) -> Result<()> {
        let s = StateFile {
            version: STATE_VERSION,
            registry: self.registry.clone(),
        };
        let text = serde_json::to_string_pretty(&s)?;
        self.file.seek(SeekFrom::Start(0))?;
        self.file.set_len(0)?;
        self.file.write_all(text.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.sync_all()?;
        Ok(())
    }
}
