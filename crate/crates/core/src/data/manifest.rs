use std::fmt;
use std::str::FromStr;

use super::episode::Split;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub category_id: u32,
    pub k: usize,
    pub split: Split,
    pub seed: u64,
}

/// One line per category; every instance is reproducible from
/// `(seed, image settings)` alone.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_HEADER: &str = "category_id,k,split,seed";

impl Manifest {
    pub fn count(&self, split: Split) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(32 * (self.entries.len() + 1));
        s.push_str(MANIFEST_HEADER);
        s.push('\n');
        for e in &self.entries {
            s.push_str(&format!("{},{},{},{}\n", e.category_id, e.k, e.split, e.seed));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == MANIFEST_HEADER => {}
            other => {
                return Err(Error::Data(format!("bad manifest header {other:?}")));
            }
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let bad = || Error::Data(format!("manifest line {}: '{line}'", n + 2));
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            entries.push(ManifestEntry {
                category_id: f[0].parse().map_err(|_| bad())?,
                k: f[1].parse().map_err(|_| bad())?,
                split: f[2].parse().map_err(|_| bad())?,
                seed: f[3].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { entries })
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split '{s}'"))),
        }
    }
}
