use std::collections::HashSet;

use super::{MarkingOracle, Tree};
use crate::error::{Error, Result};

/// DIMACS-style literal: `+v` is variable `v`, `-v` its negation. Zero is invalid.
pub type Literal = i32;

const MAX_DPLL_VERTICES: usize = 1 << 20;

/// Backtracking tree of a CNF formula under a fixed variable order.
///
/// A vertex is a partial assignment of a prefix of `var_order`; its children
/// extend it by the next variable (true first) and are pruned as soon as some
/// clause has every literal assigned false. Total assignments that survive are
/// marked. The tree is materialized eagerly, one `h` expansion per vertex.
pub fn build_dpll_tree(cnf: &[Vec<Literal>], var_order: &[u32]) -> Result<(Tree, MarkingOracle)> {
    let mut seen = HashSet::new();
    for &v in var_order {
        if v == 0 || !seen.insert(v) {
            return Err(Error::InvalidArgument(format!(
                "variable order repeats or contains 0: {v}"
            )));
        }
    }
    for clause in cnf {
        for &lit in clause {
            if lit == 0 {
                return Err(Error::InvalidArgument("literal 0 in clause".into()));
            }
            if !seen.contains(&lit.unsigned_abs()) {
                return Err(Error::InvalidArgument(format!(
                    "variable {} missing from the variable order",
                    lit.unsigned_abs()
                )));
            }
        }
    }

    let position = |var: u32| {
        var_order
            .iter()
            .position(|&v| v == var)
            .expect("validated above")
    };
    // clause literals as (position in order, required value)
    let clauses: Vec<Vec<(usize, bool)>> = cnf
        .iter()
        .map(|c| {
            c.iter()
                .map(|&lit| (position(lit.unsigned_abs()), lit > 0))
                .collect()
        })
        .collect();
    let violated = |assignment: &[bool]| {
        clauses.iter().any(|c| {
            c.iter()
                .all(|&(pos, want)| pos < assignment.len() && assignment[pos] != want)
        })
    };

    let mut assignments: Vec<Vec<bool>> = vec![Vec::new()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut head = 0;
    while head < assignments.len() {
        if assignments[head].len() < var_order.len() && !violated(&assignments[head]) {
            for value in [true, false] {
                let mut next = assignments[head].clone();
                next.push(value);
                if !violated(&next) {
                    if assignments.len() >= MAX_DPLL_VERTICES {
                        return Err(Error::ResourceLimit(format!(
                            "backtracking tree exceeds {MAX_DPLL_VERTICES} vertices"
                        )));
                    }
                    let id = assignments.len();
                    assignments.push(next);
                    children.push(Vec::new());
                    children[head].push(id);
                }
            }
        }
        head += 1;
    }

    let marked = assignments
        .iter()
        .map(|a| a.len() == var_order.len() && !violated(a))
        .collect();
    Ok((
        Tree::from_bfs_children(children),
        MarkingOracle::new(marked),
    ))
}
