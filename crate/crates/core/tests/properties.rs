use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use qbacktrack::algorithms::{find_marked, EstimateResConfig, Outcome};
use qbacktrack::descent::{descent_bound, exact_hitting_times, vertex_bound, DescentChain};
use qbacktrack::estimation::{
    gate_level_pe, pe_distribution, pe_distribution_with_register, pe_kernel, total_variation,
};
use qbacktrack::resistance::{kappa_assignment, resistance_profile};
use qbacktrack::tree::{
    build_random_tree, shallowest_marked_uncounted, solution_tree, tree_to_json, MarkingOracle,
    Tree, VertexId,
};
use qbacktrack::walk::{phi_m_state, phi_state, WalkOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A tree from a parent list (`parents[i] < i + 1` is the parent of vertex `i + 1`)
/// plus one mark bit per vertex; the root is never marked.
fn instance(parents: &[usize], marks: &[bool]) -> (Tree, MarkingOracle) {
    let n = parents.len() + 1;
    let mut children = vec![Vec::new(); n];
    for (i, &p) in parents.iter().enumerate() {
        children[p].push(i + 1);
    }
    let (tree, labels) = Tree::from_children(0, &children).unwrap();
    let marked = labels.iter().map(|&l| l != 0 && marks[l]).collect();
    (tree, MarkingOracle::new(marked))
}

fn arb_instance(max: usize) -> impl Strategy<Value = (Tree, MarkingOracle)> {
    (2..=max)
        .prop_flat_map(|n| {
            let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
            (
                parents,
                prop::collection::vec(prop::bool::weighted(0.25), n),
            )
        })
        .prop_map(|(p, m)| instance(&p, &m))
}

fn arb_marked_instance(max: usize) -> impl Strategy<Value = (Tree, MarkingOracle)> {
    arb_instance(max).prop_filter("needs a marked vertex", |(_, f)| {
        !f.marked_vertices().is_empty()
    })
}

/// Solves `a·x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// Resistance from `v` to `M(v)`, by a
/// grounded Laplacian solve on the subtree.
fn laplacian_resistance(tree: &Tree, f: &MarkingOracle, v: VertexId) -> f64 {
    let sub: Vec<VertexId> = tree.subtree_vertices(v);
    // sinks are the marked vertices of T(v) with no marked proper ancestor in the whole tree
    let mut sink = vec![false; tree.len()];
    let mut any = false;
    for &u in &sub {
        let path = tree.path(tree.root(), u);
        sink[u] = f.peek(u) && path[..path.len() - 1].iter().all(|&w| !f.peek(w));
        any |= sink[u];
    }
    if !any {
        return f64::INFINITY;
    }
    if sink[v] {
        return 0.0;
    }
    // vertices strictly below a sink are cut off from v and are dropped
    let free: Vec<VertexId> = sub
        .iter()
        .copied()
        .filter(|&u| !sink[u] && tree.path(v, u).iter().all(|&w| !sink[w]))
        .collect();
    let index = |u: VertexId| free.iter().position(|&w| w == u);
    let mut a = vec![vec![0.0; free.len()]; free.len()];
    for (i, &u) in free.iter().enumerate() {
        let mut neighbours: Vec<VertexId> = tree.children(u).to_vec();
        if u != v {
            neighbours.push(tree.parent(u).unwrap());
        }
        for w in neighbours {
            a[i][i] += 1.0;
            if let Some(j) = index(w) {
                a[i][j] -= 1.0;
            }
        }
    }
    let mut b = vec![0.0; free.len()];
    b[0] = 1.0;
    solve(a, b)[0]
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resistance_matches_laplacian_at_every_vertex((tree, f) in arb_instance(24)) {
        let marked = shallowest_marked_uncounted(&tree, &f);
        let rp = resistance_profile(&tree, &marked);
        for v in tree.vertices() {
            let oracle = laplacian_resistance(&tree, &f, v);
            let got = rp.eta_bar(v);
            if oracle.is_infinite() {
                prop_assert!(got.is_infinite(), "vertex {v}: {got} vs ∞");
            } else {
                prop_assert!(rel(got, oracle) <= 1e-9, "vertex {v}: {got} vs {oracle}");
            }
        }
    }

    #[test]
    fn root_resistance_lies_in_its_interval((tree, f) in arb_marked_instance(30)) {
        let marked = shallowest_marked_uncounted(&tree, &f);
        let eta = resistance_profile(&tree, &marked).root();
        let k = marked.len() as f64;
        let dr = tree.children(tree.root()).len() as f64;
        let n = tree.bounds().depth as f64;
        prop_assert!(eta >= (1.0 / k).max(1.0 / dr) - 1e-12);
        prop_assert!(eta <= n + 1e-12);
    }

    #[test]
    fn kappa_recovers_resistance((tree, f) in arb_marked_instance(30)) {
        let marked = shallowest_marked_uncounted(&tree, &f);
        let rp = resistance_profile(&tree, &marked);
        let st = solution_tree(&tree, &marked).unwrap();
        let ka = kappa_assignment(&tree, &st, &rp);
        let r = tree.root();
        prop_assert!(rel(1.0 / ka.root().powi(2), rp.root()) <= 1e-9);
        for &v in st.vertices() {
            let energy: f64 = st.vertices().iter().filter(|&&w| tree.is_descendant(w, v)).map(|&w| ka.get(w).powi(2)).sum();
            let eta_v = energy / ka.get(v).powi(2) - 1.0;
            prop_assert!(rel(eta_v, rp.eta_bar(v)) <= 1e-9, "vertex {v}: {eta_v} vs {}", rp.eta_bar(v));
        }
        let norm: f64 = tree.vertices().filter(|&v| v != r).map(|v| ka.get(v).powi(2)).sum();
        prop_assert!((norm - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn kappa_ignores_child_order(parents in (3usize..20).prop_flat_map(|n| (1..n).map(|i| 0..i).collect::<Vec<_>>()),
                                 seed in any::<u64>()) {
        let n = parents.len() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let marks: Vec<bool> = (0..n).map(|i| i != 0 && rand::Rng::gen_bool(&mut rng, 0.3)).collect();
        prop_assume!(marks.iter().any(|&m| m));
        let mut forward = vec![Vec::new(); n];
        for (i, &p) in parents.iter().enumerate() {
            forward[p].push(i + 1);
        }
        let backward: Vec<Vec<usize>> = forward.iter().map(|c| c.iter().rev().copied().collect()).collect();
        let mut by_label = Vec::new();
        for children in [&forward, &backward] {
            let (tree, labels) = Tree::from_children(0, children).unwrap();
            let f = MarkingOracle::new(labels.iter().map(|&l| marks[l]).collect());
            let marked = shallowest_marked_uncounted(&tree, &f);
            let rp = resistance_profile(&tree, &marked);
            let st = solution_tree(&tree, &marked).unwrap();
            let ka = kappa_assignment(&tree, &st, &rp);
            let mut kappa = vec![0.0; n];
            for (v, &l) in labels.iter().enumerate() {
                kappa[l] = ka.get(v);
            }
            by_label.push(kappa);
        }
        for (a, b) in by_label[0].iter().zip(&by_label[1]) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn walk_is_orthogonal_and_fixes_phi_m((tree, f) in arb_marked_instance(20), scale in 0.1f64..10.0) {
        let marked = shallowest_marked_uncounted(&tree, &f);
        let rp = resistance_profile(&tree, &marked);
        prop_assume!(!marked.contains(tree.root()));
        let eta = rp.root() * scale;
        let op = WalkOperator::new(&tree, &marked, eta).unwrap();
        let o = op.matrix();
        let id = DMatrix::<f64>::identity(tree.len(), tree.len());
        prop_assert!((o.transpose() * o - &id).norm() <= 1e-12);
        let (ra, rb) = (op.reflection_a(), op.reflection_b());
        prop_assert!((&ra * &ra - &id).norm() <= 1e-12);
        prop_assert!((&rb * &rb - &id).norm() <= 1e-12);

        let mut combo = DVector::zeros(tree.len());
        for (i, &m) in marked.members().iter().enumerate() {
            let phi = phi_m_state(&tree, &marked, m, eta).unwrap();
            prop_assert!((op.apply(&phi) - &phi).norm() <= 1e-10);
            combo += phi * (i as f64 + 0.5);
        }
        prop_assert!((op.apply(&combo) - &combo).norm() <= 1e-10 * combo.norm().max(1.0));

        let st = solution_tree(&tree, &marked).unwrap();
        let ka = kappa_assignment(&tree, &st, &rp);
        let phi = phi_state(&tree, &st, &ka, eta);
        prop_assert!((phi.norm() - 1.0).abs() <= 1e-12);
        prop_assert!((op.apply(&phi) - &phi).norm() <= 1e-10);
        prop_assert!((phi[tree.root()] - (eta.sqrt() * ka.root()).atan().sin()).abs() <= 1e-12);
    }

    #[test]
    fn kernel_is_normalized(m in 2u64..400, theta in -PI / 2.0..PI / 2.0) {
        let total: f64 = (0..m).map(|w| pe_kernel(w, theta, m).norm_sqr()).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12, "M = {m}, θ = {theta}: {total}");
    }

    #[test]
    fn pe_outcomes_are_distributions((tree, f) in arb_instance(16), m in 2u64..80, eta in 0.05f64..5.0) {
        let op = qbacktrack::walk::build_walk_operator(&tree, &f, eta).unwrap();
        let sd = op.decompose().unwrap();
        let input = DVector::from_fn(tree.len(), |i, _| if i == tree.root() { 1.0 } else { 0.0 });
        let out = pe_distribution_with_register(&sd, &input, m, true).unwrap();
        let joint = out.joint.unwrap();
        prop_assert!((joint.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(joint.iter().all(|&p| p >= -1e-15));
        if out.p_zero > 0.0 {
            prop_assert!((out.conditional_zero.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn backends_agree((tree, f) in arb_instance(12), s in 1u32..6, eta in 0.05f64..5.0) {
        let op = qbacktrack::walk::build_walk_operator(&tree, &f, eta).unwrap();
        let sd = op.decompose().unwrap();
        let input = DVector::from_fn(tree.len(), |i, _| if i == tree.root() { 1.0 } else { 0.0 });
        let a = pe_distribution(&sd, &input, s, true).unwrap().joint.unwrap();
        let b = gate_level_pe(&op, &input, s).unwrap().joint.unwrap();
        prop_assert!(total_variation(&a, &b) <= 1e-10);
    }

    #[test]
    fn descent_chain_is_stochastic_and_bounded((tree, f) in arb_marked_instance(24)) {
        let dc = DescentChain::new(&tree, &f).unwrap();
        let st = dc.solution().clone();
        let marked = st.marked().clone();
        for &v in st.vertices().iter().filter(|&&v| !marked.contains(v)) {
            let row: f64 = tree.vertices().map(|u| dc.transition(v, u)).sum();
            prop_assert!((row - 1.0).abs() <= 1e-12, "row {v} sums to {row}");
        }

        // E = 1 + P·E on the transient vertices, solved densely
        let transient: Vec<VertexId> = st.vertices().iter().copied().filter(|&v| !marked.contains(v)).collect();
        let mut a = vec![vec![0.0; transient.len()]; transient.len()];
        for (i, &v) in transient.iter().enumerate() {
            a[i][i] += 1.0;
            for (j, &u) in transient.iter().enumerate() {
                a[i][j] -= dc.transition(v, u);
            }
        }
        let expected = solve(a, vec![1.0; transient.len()]);
        let ht = exact_hitting_times(&dc);
        for (i, &v) in transient.iter().enumerate() {
            prop_assert!(rel(ht.get(v), expected[i]) <= 1e-9);
            prop_assert!(ht.get(v) <= vertex_bound(&dc, v) + 1e-9);
        }
        for &m in marked.members() {
            prop_assert_eq!(ht.get(m), 0.0);
        }
        let bound = descent_bound(&dc, &ht);
        prop_assert!(!bound.violated);
        let k = marked.len() as f64;
        prop_assert!(ht.root() <= (k * (dc.profile().root() + 1.0)).log2() + 1e-12);
    }

    #[test]
    fn unmarking_exposes_shallowest_descendants((tree, f) in arb_marked_instance(30), pick in any::<prop::sample::Index>()) {
        let marked = shallowest_marked_uncounted(&tree, &f);
        let m = marked.members()[pick.index(marked.len())];
        let mut g = f.clone();
        g.unmark(m);
        let after = shallowest_marked_uncounted(&tree, &g);
        let exposed: Vec<VertexId> = tree
            .subtree_vertices(m)
            .into_iter()
            .filter(|&w| w != m && g.peek(w) && tree.path(m, w)[1..tree.path(m, w).len() - 1].iter().all(|&u| !g.peek(u)))
            .collect();
        let mut expected: Vec<VertexId> = marked.members().iter().copied().filter(|&u| u != m).chain(exposed).collect();
        expected.sort_unstable();
        let mut got = after.members().to_vec();
        got.sort_unstable();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn random_trees_are_pure(size in 2usize..200, d in 2usize..6, p in 0.0f64..0.3, seed in any::<u64>()) {
        let (t1, f1) = build_random_tree(size, d, p, seed).unwrap();
        let (t2, f2) = build_random_tree(size, d, p, seed).unwrap();
        prop_assert_eq!(&t1, &t2);
        prop_assert_eq!(tree_to_json(&t1, &f1), tree_to_json(&t2, &f2));
        prop_assert!(t1.vertices().all(|v| t1.degree(v) <= d));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn find_marked_only_returns_marked_vertices((tree, f) in arb_marked_instance(10), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rec = find_marked(&tree, &f, EstimateResConfig::default(), &mut rng).unwrap();
        match rec.outcome {
            Outcome::Vertex(v) => prop_assert!(f.peek(v), "returned unmarked vertex {v}"),
            Outcome::NoMarkedVertex => {}
            other => prop_assert!(false, "unexpected outcome {other:?}"),
        }
    }
}
