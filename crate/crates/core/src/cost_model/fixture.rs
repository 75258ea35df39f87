//! Text format for architecture fixtures.
//!
//! ```text
//! # comment
//! [backbone]
//! in,out,h,w,kernel,convs
//! ...
//! [branch.1]        # empty section: generated from the backbone by policy
//! [branch.3]
//! in,out,h,w,kernel,convs   # explicit rows are used verbatim
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::{build_branch_schedule, Branch, ModuleSpec, RouteGraph, ScalePolicy};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BranchSection {
    pub attach_index: usize,
    /// `None` when the section has no rows.
    pub modules: Option<Vec<ModuleSpec>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchFixture {
    pub backbone: Vec<ModuleSpec>,
    pub branches: Vec<BranchSection>,
}

enum Section {
    None,
    Backbone,
    Branch(usize),
}

impl ArchFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse_str(&text, path)
    }

    pub fn parse_str(text: &str, origin: impl AsRef<Path>) -> Result<Self> {
        let origin: PathBuf = origin.as_ref().to_path_buf();
        let err = |line: usize, reason: String| Error::Parse {
            path: origin.clone(),
            line,
            reason,
        };

        let mut backbone = Vec::new();
        let mut saw_backbone = false;
        let mut branches: Vec<BranchSection> = Vec::new();
        let mut section = Section::None;

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let name = header
                    .strip_suffix(']')
                    .ok_or_else(|| err(lineno, format!("unterminated section header `{line}`")))?
                    .trim();
                section = if name == "backbone" {
                    if saw_backbone {
                        return Err(err(lineno, "duplicate [backbone] section".into()));
                    }
                    saw_backbone = true;
                    Section::Backbone
                } else if let Some(k) = name.strip_prefix("branch.") {
                    let k: usize = k
                        .parse()
                        .map_err(|_| err(lineno, format!("bad attach index in `[{name}]`")))?;
                    if branches.iter().any(|b| b.attach_index == k) {
                        return Err(err(lineno, format!("duplicate section [branch.{k}]")));
                    }
                    branches.push(BranchSection {
                        attach_index: k,
                        modules: None,
                    });
                    Section::Branch(branches.len() - 1)
                } else {
                    return Err(err(lineno, format!("unknown section `[{name}]`")));
                };
                continue;
            }

            let module = parse_row(line).map_err(|reason| err(lineno, reason))?;
            match section {
                Section::None => {
                    return Err(err(lineno, "row outside of any section".into()));
                }
                Section::Backbone => backbone.push(module),
                Section::Branch(i) => branches[i]
                    .modules
                    .get_or_insert_with(Vec::new)
                    .push(module),
            }
        }

        if backbone.is_empty() {
            return Err(err(0, "missing or empty [backbone] section".into()));
        }
        branches.sort_by_key(|b| b.attach_index);
        Ok(Self { backbone, branches })
    }

    /// Resolve generated branches with `policy` and validate the result.
    pub fn to_graph(&self, policy: &ScalePolicy) -> Result<RouteGraph> {
        let branches = self
            .branches
            .iter()
            .map(|sec| {
                let modules = match &sec.modules {
                    Some(rows) => rows.clone(),
                    None => build_branch_schedule(&self.backbone, sec.attach_index, policy)?,
                };
                Ok(Branch {
                    attach_index: sec.attach_index,
                    modules,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        RouteGraph::new(self.backbone.clone(), branches)
    }
}

fn parse_row(line: &str) -> std::result::Result<ModuleSpec, String> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 6 {
        return Err(format!(
            "expected 6 fields `in,out,h,w,kernel,convs`, found {}",
            fields.len()
        ));
    }
    let mut v = [0u32; 6];
    for (slot, f) in v.iter_mut().zip(&fields) {
        *slot = f
            .parse()
            .map_err(|_| format!("`{f}` is not a non-negative integer"))?;
    }
    ModuleSpec::new(v[0], v[1], v[2], v[3], v[4], v[5]).map_err(|e| e.to_string())
}
