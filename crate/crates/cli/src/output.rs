//! CSV tables with a JSON metadata sidecar.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

/// Write `rows` to `dir/name.csv` and `meta` to `dir/name.meta.json`.
pub fn write_table<R: Serialize, M: Serialize>(dir: &Path, name: &str, rows: &[R], meta: &M) -> anyhow::Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let meta_path = dir.join(format!("{name}.meta.json"));
    std::fs::write(&meta_path, serde_json::to_string_pretty(meta)?)
        .with_context(|| format!("writing {}", meta_path.display()))?;
    Ok(path)
}
