use std::collections::{BTreeMap, BTreeSet};

use rust_decimal::Decimal;
use serde::Deserialize;
use thiserror::Error;

const BUNDLED: &str = include_str!("../../data/reference.json");

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("malformed reference data: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reference data: `{0}` has {1} family counts, expected {2}")]
    Shape(String, usize, usize),
    #[error("reference data: `{tool}` lists {count} fixes for family `{family}` which has {available} tasks")]
    Overflow { tool: String, family: String, count: usize, available: usize },
}

/// Published per-family repair counts for the ARepair suite, used as
/// comparison columns and as external fix-sets in overlap reports.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Reference {
    pub families: Vec<String>,
    pub family_sizes: Vec<usize>,
    pub external_tools: BTreeMap<String, Vec<usize>>,
    pub published_settings: BTreeMap<String, Vec<usize>>,
    /// model -> feedback level -> percentage
    pub published_correct_at_6: BTreeMap<String, BTreeMap<String, Decimal>>,
    pub discrepancies: Vec<String>,
}

impl Reference {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled reference data is valid")
    }

    pub fn parse(text: &str) -> Result<Self, ReferenceError> {
        let r: Reference = serde_json::from_str(text)?;
        let n = r.families.len();
        if r.family_sizes.len() != n {
            return Err(ReferenceError::Shape("family_sizes".into(), r.family_sizes.len(), n));
        }
        for (name, counts) in r.external_tools.iter().chain(&r.published_settings) {
            if counts.len() != n {
                return Err(ReferenceError::Shape(name.clone(), counts.len(), n));
            }
            for ((family, &size), &count) in r.families.iter().zip(&r.family_sizes).zip(counts) {
                if count > size {
                    return Err(ReferenceError::Overflow {
                        tool: name.clone(),
                        family: family.clone(),
                        count,
                        available: size,
                    });
                }
            }
        }
        Ok(r)
    }

    pub fn total(counts: &[usize]) -> usize {
        counts.iter().sum()
    }

    pub fn family_count(&self, tool: &str, family: &str) -> Option<usize> {
        let i = self.families.iter().position(|f| f == family)?;
        self.external_tools.get(tool).map(|c| c[i])
    }

    /// Per-family counts say how many tasks a tool fixed, not which ones.
    /// Turns each count `n` into the first `n` task ids of that family
    /// (in id order) so tools can take part in overlap reports.
    pub fn approximate_fix_sets(
        &self,
        task_ids: &BTreeSet<String>,
    ) -> Result<BTreeMap<String, BTreeSet<String>>, ReferenceError> {
        let mut by_family: BTreeMap<String, Vec<&String>> = BTreeMap::new();
        for id in task_ids {
            by_family.entry(crate::corpus::family_of(id)).or_default().push(id);
        }
        let mut out = BTreeMap::new();
        for (tool, counts) in &self.external_tools {
            let mut set = BTreeSet::new();
            for (family, &count) in self.families.iter().zip(counts) {
                let ids = by_family.get(family).map(Vec::as_slice).unwrap_or_default();
                if count > ids.len() {
                    return Err(ReferenceError::Overflow {
                        tool: tool.clone(),
                        family: family.clone(),
                        count,
                        available: ids.len(),
                    });
                }
                set.extend(ids[..count].iter().map(|s| s.to_string()));
            }
            out.insert(tool.clone(), set);
        }
        Ok(out)
    }
}
