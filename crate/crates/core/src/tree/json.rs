use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bounds, MarkingOracle, Tree};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexEntry {
    pub id: u64,
    #[serde(default)]
    pub children: Vec<u64>,
    #[serde(default)]
    pub marked: bool,
}

/// On-disk tree: `{"root": 0, "vertices": [{"id": 0, "children": [1, 2], "marked": false}, ...]}`.
///
/// `bounds` is optional; when absent the realized size, depth and degree are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeFile {
    pub root: u64,
    pub vertices: Vec<VertexEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
}

/// Validates a parsed tree file and converts it to the internal representation.
///
/// Returns the tree, its oracle and, for each internal id, the id used in the file.
pub fn tree_from_json(file: &TreeFile) -> Result<(Tree, MarkingOracle, Vec<u64>)> {
    let mut index: HashMap<u64, usize> = HashMap::with_capacity(file.vertices.len());
    for (i, entry) in file.vertices.iter().enumerate() {
        if index.insert(entry.id, i).is_some() {
            return Err(Error::InvalidTree(format!(
                "duplicate vertex id {}",
                entry.id
            )));
        }
    }
    let root = *index
        .get(&file.root)
        .ok_or_else(|| Error::InvalidTree(format!("root {} is not a listed vertex", file.root)))?;
    let children = file
        .vertices
        .iter()
        .map(|entry| {
            entry
                .children
                .iter()
                .map(|c| {
                    index.get(c).copied().ok_or_else(|| {
                        Error::InvalidTree(format!("vertex {} lists unknown child {c}", entry.id))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut tree, order) = Tree::from_children(root, &children)?;
    if let Some(bounds) = file.bounds {
        tree = tree.with_bounds(bounds)?;
    }
    let marked = order.iter().map(|&i| file.vertices[i].marked).collect();
    let ids = order.iter().map(|&i| file.vertices[i].id).collect();
    Ok((tree, MarkingOracle::new(marked), ids))
}

pub fn tree_to_json(tree: &Tree, f: &MarkingOracle) -> TreeFile {
    let vertices = tree
        .vertices()
        .map(|v| VertexEntry {
            id: v as u64,
            children: tree.children(v).iter().map(|&c| c as u64).collect(),
            marked: f.peek(v),
        })
        .collect();
    let bounds = (tree.bounds() != tree.realized_bounds()).then(|| tree.bounds());
    TreeFile {
        root: tree.root() as u64,
        vertices,
        bounds,
    }
}

pub fn read_tree_json(path: impl AsRef<Path>) -> Result<(Tree, MarkingOracle, Vec<u64>)> {
    let text = std::fs::read_to_string(path)?;
    let file: TreeFile = serde_json::from_str(&text)?;
    tree_from_json(&file)
}

pub fn write_tree_json(path: impl AsRef<Path>, tree: &Tree, f: &MarkingOracle) -> Result<()> {
    let text = serde_json::to_string_pretty(&tree_to_json(tree, f))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
