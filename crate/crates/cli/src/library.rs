//! Split libraries: optimized one-dimensional splits stored as JSON.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use gmtaylor_core::split1d::{optimize_split, Split1D};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitLibrary {
    pub format: u32,
    pub splits: Vec<Split1D>,
}

const FORMAT: u32 = 1;

impl SplitLibrary {
    /// Optimize one split per entry of `ns`.
    pub fn generate(ns: &[usize], p: f64) -> anyhow::Result<Self> {
        if ns.is_empty() {
            bail!("no split sizes given");
        }
        let splits = ns
            .iter()
            .map(|&n| optimize_split(n, p).with_context(|| format!("optimizing the N = {n} split")))
            .collect::<anyhow::Result<Vec<_>>>()?;
        Ok(Self { format: FORMAT, splits })
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let lib: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if lib.format != FORMAT {
            bail!("unsupported split library format {}", lib.format);
        }
        for s in &lib.splits {
            s.validate().with_context(|| format!("invalid N = {} split in {}", s.len(), path.display()))?;
        }
        Ok(lib)
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    /// The split with `n` components and spread `p`.
    pub fn get(&self, n: usize, p: f64) -> anyhow::Result<&Split1D> {
        self.splits
            .iter()
            .find(|s| s.len() == n && s.p() == p)
            .ok_or_else(|| anyhow!("split library has no entry for N = {n}, p = {p}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_record() {
        let lib = SplitLibrary::generate(&[1], 0.5).unwrap();
        assert!(lib.splits[0].is_identity());
        assert!(SplitLibrary::generate(&[], 0.5).is_err());
    }
}
