//! Structural invariants of graphs, scores and circuits under random inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;
use rolecirc_core::attribution::{eap_ig_scores, extract_circuit, score_graph, IgConfig};
use rolecirc_core::dataset::RoleCrossPair;
use rolecirc_core::emergence::fit_piecewise;
use rolecirc_core::graph::{
    build_graph, induced_node_set, node_importance, Circuit, EdgeKey, EdgeKind, NodeId, NodeKind,
};
use rolecirc_core::metrics::{coverage_k, gini, jaccard, topk_mass};
use rolecirc_core::model::{init_model, ModelConfig};

/// Every node whose output a reader at `layer` sees at `pos`.
fn upstream(
    layers: usize,
    heads: usize,
    layer: usize,
    pos: usize,
    same_heads: bool,
) -> Vec<NodeId> {
    let mut v = vec![NodeId::input(pos)];
    for l in 0..layer.min(layers) {
        for h in 0..heads {
            v.push(NodeId::head(l, h, pos));
        }
        v.push(NodeId::mlp(l, pos));
    }
    if same_heads {
        for h in 0..heads {
            v.push(NodeId::head(layer, h, pos));
        }
    }
    v
}

/// The edge set enumerated from the residual-stream reading rule.
fn expected_edges(layers: usize, heads: usize, t: usize) -> BTreeSet<EdgeKey> {
    let mut out = BTreeSet::new();
    let mut add = |src: NodeId, dst: NodeId, kind: EdgeKind| {
        out.insert(EdgeKey { src, dst, kind });
    };
    for i in 0..t {
        for l in 0..layers {
            for h in 0..heads {
                let dst = NodeId::head(l, h, i);
                for s in upstream(layers, heads, l, i, false) {
                    add(s, dst, EdgeKind::Q);
                }
                for j in 0..=i {
                    for s in upstream(layers, heads, l, j, false) {
                        add(s, dst, EdgeKind::K);
                        add(s, dst, EdgeKind::V);
                    }
                }
            }
            for s in upstream(layers, heads, l, i, true) {
                add(s, NodeId::mlp(l, i), EdgeKind::Flow);
            }
        }
        for s in upstream(layers, heads, layers, i, false) {
            add(s, NodeId::logits(layers, i), EdgeKind::Flow);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graph_matches_reading_rule(layers in 1usize..4, heads in 1usize..4, t in 1usize..7) {
        let g = build_graph(&ModelConfig::tiny(layers, heads, 12, 8), t).unwrap();
        prop_assert_eq!(g.nodes.len(), t * (2 + layers * (heads + 1)));
        let keys: Vec<EdgeKey> = g.edges.iter().map(|e| e.key()).collect();
        let unique: BTreeSet<EdgeKey> = keys.iter().copied().collect();
        prop_assert_eq!(unique.len(), keys.len());
        prop_assert_eq!(unique, expected_edges(layers, heads, t));
        prop_assert!(g.topological_order().is_some());
        let nodes: BTreeSet<NodeId> = g.nodes.iter().copied().collect();
        for e in &g.edges {
            prop_assert!(nodes.contains(&e.src) && nodes.contains(&e.dst));
            prop_assert!(e.src != e.dst);
            prop_assert!(e.src < e.dst);
            prop_assert!(e.src.position <= e.dst.position);
            match e.kind {
                EdgeKind::Q | EdgeKind::K | EdgeKind::V => {
                    prop_assert_eq!(e.dst.kind, NodeKind::AttnHead)
                }
                EdgeKind::Flow => {
                    prop_assert!(matches!(e.dst.kind, NodeKind::Mlp | NodeKind::Logits));
                    prop_assert_eq!(e.src.position, e.dst.position);
                }
            }
            if e.kind == EdgeKind::Q {
                prop_assert_eq!(e.src.position, e.dst.position);
            }
            prop_assert_eq!(e.score, 0.0);
        }
    }

    #[test]
    fn too_long_sequences_are_rejected(extra in 1usize..5) {
        let cfg = ModelConfig::tiny(1, 1, 4, 8);
        prop_assert!(build_graph(&cfg, cfg.max_seq_len + extra).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn scored_graph_has_unit_mass_and_a_bounded_circuit(
        seed in 0u64..1000,
        clean in proptest::collection::vec(0usize..12, 2..6),
        flips in proptest::collection::vec(any::<bool>(), 6),
        k in 1usize..400,
    ) {
        let cfg = ModelConfig::tiny(2, 2, 8, 12);
        let ckpt = init_model(&cfg, seed).unwrap();
        let corrupt: Vec<usize> = clean
            .iter()
            .zip(&flips)
            .map(|(&t, &f)| if f { (t + 5) % 12 } else { t })
            .collect();
        prop_assume!(corrupt != clean);
        let pair = RoleCrossPair {
            clean_text: String::new(),
            corrupt_text: String::new(),
            clean_tokens: clean,
            corrupt_tokens: corrupt,
            target_clean: 1,
            target_corrupt: 2,
            role_clean: "a".into(),
            role_corrupt: "b".into(),
        };
        let table = eap_ig_scores(&ckpt, &pair, &IgConfig::default()).unwrap();
        let mut g = score_graph(&cfg, &table, "m").unwrap();
        let mass: f64 = g.edges.iter().map(|e| e.score_norm.abs()).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);

        let c = extract_circuit(&mut g, k);
        prop_assert_eq!(c.len(), k.min(g.edges.len()));
        prop_assert!(c.edges.iter().all(|&i| i < g.edges.len()));
        let floor = c.edges.iter().map(|&i| g.edges[i].score_norm.abs()).fold(f64::INFINITY, f64::min);
        for (i, e) in g.edges.iter().enumerate() {
            prop_assert_eq!(e.in_circuit, c.contains(i));
            if !c.contains(i) {
                prop_assert!(e.score_norm.abs() <= floor);
            }
        }

        let imp = node_importance(&g, &c);
        let total: f64 = imp.values().sum();
        let circuit_mass: f64 = c.edges.iter().map(|&i| g.edges[i].score_norm.abs()).sum();
        prop_assert!((total - circuit_mass).abs() < 1e-12);
        let touched = induced_node_set(&g, &c, false);
        for (n, v) in &imp {
            if *v > 0.0 {
                prop_assert!(touched.contains(n));
            }
        }
        prop_assert!(node_importance(&g, &Circuit::empty()).values().all(|v| *v == 0.0));
    }
}

proptest! {
    #[test]
    fn sparsity_measures_are_bounded(x in proptest::collection::vec(0.0f64..10.0, 1..30)) {
        prop_assume!(x.iter().any(|v| *v > 0.0));
        let n = x.len();
        let g = gini(&x).unwrap();
        prop_assert!((0.0..=1.0 - 1.0 / n as f64 + 1e-12).contains(&g));
        let mut last = 0.0;
        for k in 0..=n {
            let m = topk_mass(&x, k).unwrap();
            prop_assert!(m + 1e-15 >= last);
            last = m;
        }
        prop_assert_eq!(topk_mass(&x, n).unwrap(), 1.0);
        prop_assert!(coverage_k(&x, 1.0).unwrap() <= n);
        prop_assert!(coverage_k(&x, 0.5).unwrap() <= coverage_k(&x, 0.9).unwrap());
    }

    #[test]
    fn jaccard_is_a_bounded_symmetric_similarity(
        a in proptest::collection::btree_set(0u8..20, 0..10),
        b in proptest::collection::btree_set(0u8..20, 0..10),
    ) {
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert_eq!(jaccard(&a, &a), 1.0);
    }

    #[test]
    fn noiseless_broken_line_is_recovered(
        split in 3usize..17,
        s1 in -2.0f64..2.0,
        delta in 0.5f64..2.0,
        up in any::<bool>(),
    ) {
        let s2 = if up { s1 + delta } else { s1 - delta };
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let c = split as f64;
        let y: Vec<f64> = x.iter().map(|&v| s1 * v + (s2 - s1) * (v - c).max(0.0)).collect();
        let cp = fit_piecewise(&x, &y, 3).unwrap();
        prop_assert!((cp.t_hat - c).abs() <= 1.0);
        prop_assert!(cp.r_squared > 0.999);
    }
}
