use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MarkingOracle, Tree};
use crate::error::{Error, Result};

/// Root joined to `num_leaves` leaves; the first `num_marked` leaves are marked.
pub fn build_star(num_leaves: usize, num_marked: usize) -> Result<(Tree, MarkingOracle)> {
    if num_leaves == 0 {
        return Err(Error::InvalidArgument(
            "a star needs at least one leaf".into(),
        ));
    }
    if num_marked > num_leaves {
        return Err(Error::InvalidArgument(format!(
            "cannot mark {num_marked} of {num_leaves} leaves"
        )));
    }
    let mut children = vec![Vec::new(); num_leaves + 1];
    children[0] = (1..=num_leaves).collect();
    let tree = Tree::from_bfs_children(children);
    let marked = (0..=num_leaves)
        .map(|v| v >= 1 && v <= num_marked)
        .collect();
    Ok((tree, MarkingOracle::new(marked)))
}

/// `r → v₁ → … → v_n`, with `v_n` marked iff `mark_leaf`.
pub fn build_path(num_edges: usize, mark_leaf: bool) -> Result<(Tree, MarkingOracle)> {
    if num_edges == 0 {
        return Err(Error::InvalidArgument(
            "a path needs at least one edge".into(),
        ));
    }
    let children = (0..=num_edges)
        .map(|v| {
            if v < num_edges {
                vec![v + 1]
            } else {
                Vec::new()
            }
        })
        .collect();
    let tree = Tree::from_bfs_children(children);
    let mut marked = vec![false; num_edges + 1];
    marked[num_edges] = mark_leaf;
    Ok((tree, MarkingOracle::new(marked)))
}

/// Seeded random tree with exactly `target` vertices and maximum degree `d`.
///
/// Growth alternates between extending the newest vertex (long chains) and
/// attaching to a uniformly chosen vertex with spare capacity (bushy parts).
/// Every non-root vertex is marked independently with probability `mark_prob`.
pub fn build_random_tree(
    target: usize,
    d: usize,
    mark_prob: f64,
    seed: u64,
) -> Result<(Tree, MarkingOracle)> {
    if target < 2 {
        return Err(Error::InvalidArgument(
            "random trees need at least 2 vertices".into(),
        ));
    }
    if d < 2 {
        return Err(Error::InvalidArgument(
            "random trees need degree bound d >= 2".into(),
        ));
    }
    if !(0.0..=1.0).contains(&mark_prob) {
        return Err(Error::InvalidArgument(format!(
            "mark probability {mark_prob} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    // vertices that can still take a child; the root may have d children, others d - 1
    let mut open: Vec<usize> = vec![0];
    let capacity = |v: usize| if v == 0 { d } else { d - 1 };

    while children.len() < target {
        let newest = children.len() - 1;
        let parent = if rng.gen_bool(0.5) && children[newest].len() < capacity(newest) {
            newest
        } else {
            open[rng.gen_range(0..open.len())]
        };
        let child = children.len();
        children.push(Vec::new());
        children[parent].push(child);
        if children[parent].len() >= capacity(parent) {
            open.retain(|&u| u != parent);
        }
        open.push(child);
    }

    let marks: Vec<bool> = (0..target)
        .map(|v| v != 0 && rng.gen_bool(mark_prob))
        .collect();
    let (tree, order) = Tree::from_children(0, &children)?;
    let marked = order.iter().map(|&old| marks[old]).collect();
    Ok((tree, MarkingOracle::new(marked)))
}
