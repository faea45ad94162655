//! Rooted trees, the marking oracle, and the marked-set / solution-tree
//! extraction that every other module builds on.
//!
//! Vertices are dense indices `0..len` in breadth-first order, so the root is
//! always vertex `0` and a parent always precedes its children.

mod dpll;
mod generate;
mod json;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};

pub use dpll::{build_dpll_tree, Literal};
pub use generate::{build_path, build_random_tree, build_star};
pub use json::{
    read_tree_json, tree_from_json, tree_to_json, write_tree_json, TreeFile, VertexEntry,
};

use crate::error::{Error, Result};

pub type VertexId = usize;

/// Upper bounds `T` (size), `n` (depth) and `d` (degree) known to the algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub size: usize,
    pub depth: usize,
    pub degree: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tree {
    parent: Vec<Option<VertexId>>,
    children: Vec<Vec<VertexId>>,
    depth: Vec<usize>,
    bounds: Bounds,
}

impl Tree {
    /// Builds a tree from child lists indexed by arbitrary vertex labels.
    ///
    /// Returns the tree (relabelled breadth-first from `root`) together with
    /// the map from new ids to the original labels.
    pub fn from_children(root: usize, children: &[Vec<usize>]) -> Result<(Tree, Vec<usize>)> {
        let len = children.len();
        if root >= len {
            return Err(Error::InvalidTree(format!(
                "root {root} out of range 0..{len}"
            )));
        }
        let mut parent_of: Vec<Option<usize>> = vec![None; len];
        for (v, cs) in children.iter().enumerate() {
            for &c in cs {
                if c >= len {
                    return Err(Error::InvalidTree(format!(
                        "vertex {v} has unknown child {c}"
                    )));
                }
                if c == root {
                    return Err(Error::InvalidTree(format!(
                        "root {root} listed as a child of {v}"
                    )));
                }
                if let Some(p) = parent_of[c] {
                    return Err(Error::InvalidTree(format!(
                        "vertex {c} has two parents ({p} and {v})"
                    )));
                }
                parent_of[c] = Some(v);
            }
        }

        let mut order = Vec::with_capacity(len);
        let mut new_id = vec![usize::MAX; len];
        let mut queue = VecDeque::from([root]);
        new_id[root] = 0;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &c in &children[v] {
                if new_id[c] != usize::MAX {
                    return Err(Error::InvalidTree(format!("cycle through vertex {c}")));
                }
                new_id[c] = order.len() + queue.len();
                queue.push_back(c);
            }
        }
        if order.len() != len {
            let stray = (0..len).find(|&v| new_id[v] == usize::MAX).unwrap_or(0);
            return Err(Error::InvalidTree(format!(
                "vertex {stray} is not reachable from the root (forest or cycle)"
            )));
        }

        let relabelled: Vec<Vec<usize>> = order
            .iter()
            .map(|&old| children[old].iter().map(|&c| new_id[c]).collect())
            .collect();
        Ok((Tree::from_bfs_children(relabelled), order))
    }

    /// Child lists must already be in breadth-first order rooted at `0`.
    pub(crate) fn from_bfs_children(children: Vec<Vec<VertexId>>) -> Tree {
        let len = children.len();
        let mut parent = vec![None; len];
        let mut depth = vec![0; len];
        for v in 0..len {
            for &c in &children[v] {
                debug_assert!(c > v, "child ids must follow their parent in BFS order");
                parent[c] = Some(v);
                depth[c] = depth[v] + 1;
            }
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        let max_degree = (0..len)
            .map(|v| children[v].len() + usize::from(v != 0))
            .max()
            .unwrap_or(0);
        Tree {
            parent,
            children,
            depth,
            bounds: Bounds {
                size: len,
                depth: max_depth.max(1),
                degree: max_degree.max(1),
            },
        }
    }

    /// Replaces the realized bounds with looser caller-supplied ones.
    pub fn with_bounds(mut self, bounds: Bounds) -> Result<Tree> {
        let realized = self.realized_bounds();
        if bounds.size < realized.size
            || bounds.depth < realized.depth
            || bounds.degree < realized.degree
        {
            return Err(Error::InvalidArgument(format!(
                "bounds {bounds:?} are tighter than the realized tree {realized:?}"
            )));
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn root(&self) -> VertexId {
        0
    }

    pub fn len(&self) -> usize {
        self.children.len()
    }

    pub fn is_empty(&self) -> bool {
        self.children.is_empty()
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        self.parent[v]
    }

    pub fn children(&self, v: VertexId) -> &[VertexId] {
        &self.children[v]
    }

    pub fn depth(&self, v: VertexId) -> usize {
        self.depth[v]
    }

    /// `d_v`: number of neighbours (children plus the parent, if any).
    pub fn degree(&self, v: VertexId) -> usize {
        self.children[v].len() + usize::from(self.parent[v].is_some())
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    pub fn realized_bounds(&self) -> Bounds {
        let max_depth = self.depth.iter().copied().max().unwrap_or(0);
        let max_degree = self.vertices().map(|v| self.degree(v)).max().unwrap_or(0);
        Bounds {
            size: self.len(),
            depth: max_depth.max(1),
            degree: max_degree.max(1),
        }
    }

    pub fn vertices(&self) -> std::ops::Range<VertexId> {
        0..self.len()
    }

    /// True if `v` lies in the subtree rooted at `ancestor` (inclusive).
    pub fn is_descendant(&self, v: VertexId, ancestor: VertexId) -> bool {
        let mut cur = Some(v);
        while let Some(u) = cur {
            if u == ancestor {
                return true;
            }
            if self.depth[u] <= self.depth[ancestor] {
                return false;
            }
            cur = self.parent[u];
        }
        false
    }

    /// Path `P(from, to)` listed from `from` down to `to`; `to` must be a descendant.
    pub fn path(&self, from: VertexId, to: VertexId) -> Vec<VertexId> {
        let mut path = vec![to];
        let mut cur = to;
        while cur != from {
            cur = self.parent[cur].expect("target is not a descendant of the path start");
            path.push(cur);
        }
        path.reverse();
        path
    }

    /// Vertices of `T(v)` in breadth-first order.
    pub fn subtree_vertices(&self, v: VertexId) -> Vec<VertexId> {
        let mut out = vec![v];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.children[out[i]]);
            i += 1;
        }
        out
    }

    /// Extracts `T(v)` as a standalone tree rooted at `v`.
    ///
    /// The size and degree bounds carry over; the depth bound shrinks by `ℓ_v`.
    /// Returns the subtree and the map from subtree ids to ids in `self`.
    pub fn subtree(&self, v: VertexId) -> (Tree, Vec<VertexId>) {
        let order = self.subtree_vertices(v);
        let mut local = vec![usize::MAX; self.len()];
        for (i, &u) in order.iter().enumerate() {
            local[u] = i;
        }
        let children = order
            .iter()
            .map(|&u| self.children[u].iter().map(|&c| local[c]).collect())
            .collect();
        let mut sub = Tree::from_bfs_children(children);
        sub.bounds = Bounds {
            size: self.bounds.size.max(sub.len()),
            depth: self
                .bounds
                .depth
                .saturating_sub(self.depth[v])
                .max(sub.bounds.depth),
            degree: self.bounds.degree.max(sub.bounds.degree),
        };
        (sub, order)
    }
}

/// The predicate `f` with a query counter.
#[derive(Debug)]
pub struct MarkingOracle {
    marked: Vec<bool>,
    queries: AtomicU64,
}

impl Clone for MarkingOracle {
    fn clone(&self) -> Self {
        MarkingOracle {
            marked: self.marked.clone(),
            queries: AtomicU64::new(self.query_count()),
        }
    }
}

impl PartialEq for MarkingOracle {
    fn eq(&self, other: &Self) -> bool {
        self.marked == other.marked
    }
}

impl MarkingOracle {
    pub fn new(marked: Vec<bool>) -> Self {
        MarkingOracle {
            marked,
            queries: AtomicU64::new(0),
        }
    }

    pub fn unmarked(len: usize) -> Self {
        Self::new(vec![false; len])
    }

    /// Evaluates `f(v)` and counts the query.
    pub fn query(&self, v: VertexId) -> bool {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.marked[v]
    }

    /// Reads `f(v)` without counting; for ground-truth computations only.
    pub fn peek(&self, v: VertexId) -> bool {
        self.marked[v]
    }

    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    pub fn set(&mut self, v: VertexId, marked: bool) {
        self.marked[v] = marked;
    }

    pub fn unmark(&mut self, v: VertexId) {
        self.marked[v] = false;
    }

    pub fn len(&self) -> usize {
        self.marked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.marked.is_empty()
    }

    pub fn marked_vertices(&self) -> Vec<VertexId> {
        (0..self.marked.len()).filter(|&v| self.marked[v]).collect()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.marked
    }

    /// Ensures `f(root) = 0`: a marked root is reported and then unmarked.
    pub fn normalize_root(&mut self, tree: &Tree) -> Option<VertexId> {
        let root = tree.root();
        if self.marked.get(root).copied().unwrap_or(false) {
            self.marked[root] = false;
            Some(root)
        } else {
            None
        }
    }
}

/// The shallowest marked vertices `M` and the per-subtree sets `M(v)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkedSet {
    members: Vec<VertexId>,
    is_member: Vec<bool>,
    per_subtree: Vec<Vec<VertexId>>,
}

impl MarkedSet {
    pub fn members(&self) -> &[VertexId] {
        &self.members
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.is_member[v]
    }

    /// `M(v) = M ∩ V(T(v))`.
    pub fn under(&self, v: VertexId) -> &[VertexId] {
        &self.per_subtree[v]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Stable fingerprint of the member set, used to key caches.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &m in &self.members {
            h ^= m as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^ (self.members.len() as u64)
    }
}

/// Computes `M`, counting one oracle query per vertex examined.
///
/// Descendants of a marked vertex are never examined.
pub fn shallowest_marked(tree: &Tree, f: &MarkingOracle) -> MarkedSet {
    collect_marked(tree, |v| f.query(v))
}

/// Same as [`shallowest_marked`] without touching the query counter.
pub fn shallowest_marked_uncounted(tree: &Tree, f: &MarkingOracle) -> MarkedSet {
    collect_marked(tree, |v| f.peek(v))
}

fn collect_marked(tree: &Tree, mut is_marked: impl FnMut(VertexId) -> bool) -> MarkedSet {
    let len = tree.len();
    let mut members = Vec::new();
    let mut is_member = vec![false; len];
    let mut stack = vec![tree.root()];
    while let Some(v) = stack.pop() {
        if is_marked(v) {
            is_member[v] = true;
            members.push(v);
        } else {
            stack.extend(tree.children(v).iter().rev());
        }
    }
    members.sort_unstable();

    let mut per_subtree = vec![Vec::new(); len];
    for &m in &members {
        let mut cur = Some(m);
        while let Some(u) = cur {
            per_subtree[u].push(m);
            cur = tree.parent(u);
        }
    }
    MarkedSet {
        members,
        is_member,
        per_subtree,
    }
}

/// `T̃`: the union of root-to-`m` paths over `m ∈ M`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolutionTree {
    vertices: Vec<VertexId>,
    contains: Vec<bool>,
    marked: MarkedSet,
}

impl SolutionTree {
    pub fn new(tree: &Tree, marked: &MarkedSet) -> Result<SolutionTree> {
        if marked.is_empty() {
            return Err(Error::NoSolutionTree);
        }
        let contains: Vec<bool> = tree
            .vertices()
            .map(|v| !marked.under(v).is_empty())
            .collect();
        let vertices = tree.vertices().filter(|&v| contains[v]).collect();
        Ok(SolutionTree {
            vertices,
            contains,
            marked: marked.clone(),
        })
    }

    /// Vertices of `T̃` in breadth-first order (root first).
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.contains[v]
    }

    pub fn marked(&self) -> &MarkedSet {
        &self.marked
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Children of `v` that belong to `T̃`.
    pub fn children<'a>(
        &'a self,
        tree: &'a Tree,
        v: VertexId,
    ) -> impl Iterator<Item = VertexId> + 'a {
        let leaf = self.marked.contains(v);
        tree.children(v)
            .iter()
            .copied()
            .filter(move |&c| !leaf && self.contains[c])
    }

    /// Leaves of `T̃`; equal to `M` by construction.
    pub fn leaves(&self, tree: &Tree) -> Vec<VertexId> {
        self.vertices
            .iter()
            .copied()
            .filter(|&v| self.children(tree, v).next().is_none())
            .collect()
    }
}

pub fn solution_tree(tree: &Tree, marked: &MarkedSet) -> Result<SolutionTree> {
    SolutionTree::new(tree, marked)
}
