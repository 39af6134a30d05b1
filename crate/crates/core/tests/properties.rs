use std::collections::BTreeMap;

use proptest::prelude::*;

use unsafe_focus::coverage::{apply_trace, Event, FnIdx, FunctionTable};
use unsafe_focus::fuzzer::{run_trial, TrialConfig};
use unsafe_focus::{
    a12, compute_blocklist, mann_whitney_u, merge, parse_edgelist, scan_source, target_by_name, BlockList,
    BlockMode, CallGraph, CoverageMap, ExecutionTrace, FunctionId, GuardTable, SampleSet, UnsafeManifest,
};

fn fid(i: u8) -> FunctionId {
    FunctionId::new(format!("f{i}")).unwrap()
}

prop_compose! {
    fn graph()(nodes in prop::collection::vec(0u8..10, 0..6),
               edges in prop::collection::vec((0u8..10, 0u8..10), 0..20),
               indirect in prop::collection::vec(0u8..10, 0..3)) -> CallGraph {
        let mut g = CallGraph::new();
        nodes.into_iter().for_each(|n| g.add_node(fid(n)));
        edges.into_iter().for_each(|(a, b)| g.add_edge(fid(a), fid(b)));
        indirect.into_iter().for_each(|n| g.add_indirect_site(fid(n)));
        g
    }
}

fn manifest(ids: &[u8]) -> UnsafeManifest {
    ids.iter().map(|&i| fid(i)).collect()
}

proptest! {
    #[test]
    fn merge_is_associative_commutative_idempotent(a in graph(), b in graph(), c in graph()) {
        let ab_c = merge([&merge([&a, &b]), &c]);
        let a_bc = merge([&a, &merge([&b, &c])]);
        prop_assert_eq!(&ab_c, &a_bc);
        prop_assert_eq!(merge([&a, &b]), merge([&b, &a]));
        prop_assert_eq!(merge([&a, &a]), a.clone());
    }

    #[test]
    fn edgelist_round_trip(g in graph()) {
        // isolated nodes have no edge-list representation
        let text = g.to_edgelist();
        let back = parse_edgelist(&text).unwrap();
        prop_assert_eq!(back.to_edgelist(), text);
        prop_assert_eq!(back.edges(), g.edges());
        prop_assert_eq!(back.indirect_sites(), g.indirect_sites());
    }

    #[test]
    fn reverse_preserves_counts(g in graph()) {
        let r = g.reverse();
        prop_assert_eq!(r.node_count(), g.node_count());
        prop_assert_eq!(r.edge_count(), g.edge_count());
        prop_assert_eq!(r.reverse(), g);
    }

    #[test]
    fn more_unsafe_never_blocks_more(g in graph(), m in prop::collection::vec(0u8..10, 0..4), extra in 0u8..10) {
        let small = compute_blocklist(&g, &manifest(&m), BlockMode::Standard);
        let mut bigger = m.clone();
        bigger.push(extra);
        let big = compute_blocklist(&g, &manifest(&bigger), BlockMode::Standard);
        prop_assert!(big.blocked().is_subset(small.blocked()));
    }

    #[test]
    fn more_edges_never_block_more(g in graph(), m in prop::collection::vec(0u8..10, 0..4), a in 0u8..10, b in 0u8..10) {
        let before = compute_blocklist(&g, &manifest(&m), BlockMode::Standard);
        let mut g2 = g.clone();
        g2.add_edge(fid(a), fid(b));
        let after = compute_blocklist(&g2, &manifest(&m), BlockMode::Standard);
        let old_nodes_after: std::collections::BTreeSet<_> =
            after.blocked().iter().filter(|f| g.contains(f.as_str())).cloned().collect();
        prop_assert!(old_nodes_after.is_subset(before.blocked()));
    }

    #[test]
    fn conservative_mode_blocks_a_subset(g in graph(), m in prop::collection::vec(0u8..10, 0..4)) {
        let std_ = compute_blocklist(&g, &manifest(&m), BlockMode::Standard);
        let cons = compute_blocklist(&g, &manifest(&m), BlockMode::ConservativeIndirect);
        prop_assert!(cons.blocked().is_subset(std_.blocked()));
    }

    #[test]
    fn unsafe_in_comments_and_strings_is_ignored(
        bodies in prop::collection::vec(any::<bool>(), 1..6),
        decoys in prop::collection::vec(0usize..5, 0..10),
    ) {
        let decoy_text = [
            "// unsafe",
            "/* unsafe { } */",
            "let _s = \"unsafe\";",
            "let _unsafe_flag = 1;",
            "let _r = r#\"unsafe\"#;",
        ];
        let mut plain = String::new();
        let mut noisy = String::new();
        for (i, is_unsafe) in bodies.iter().enumerate() {
            let body = if *is_unsafe { "unsafe { op() };" } else { "op();" };
            plain.push_str(&format!("fn g{i}() {{\n    {body}\n}}\n"));
            noisy.push_str(&format!("fn g{i}() {{\n"));
            for d in decoys.iter().skip(i % 3) {
                noisy.push_str(&format!("    {}\n", decoy_text[*d]));
            }
            noisy.push_str(&format!("    {body}\n}}\n"));
        }
        let a = scan_source([("a.rs", plain.as_str())]).unwrap();
        let b = scan_source([("a.rs", noisy.as_str())]).unwrap();
        prop_assert_eq!(&a.manifest, &b.manifest);
        prop_assert_eq!(a.manifest.len(), bodies.iter().filter(|b| **b).count());
    }

    #[test]
    fn apply_trace_is_order_insensitive(
        events in prop::collection::vec((0u32..4, 0u32..5), 0..300),
        blocked in prop::collection::vec(0u8..4, 0..3),
        seed in any::<u64>(),
    ) {
        let table: BTreeMap<FunctionId, u32> = (0..4u8).map(|i| (fid(i), 5)).collect();
        let table = FunctionTable::from(&table);
        let bl = BlockList::from_symbols(blocked.iter().map(|&i| fid(i)), BlockMode::Standard);
        let gt = GuardTable::allocate(&table, &bl, 256).unwrap();
        let mut trace = ExecutionTrace {
            events: events.iter().map(|&(f, e)| Event { function: FnIdx(f), edge: e }).collect(),
            ..Default::default()
        };
        let mut m1 = CoverageMap::new(256);
        apply_trace(&mut m1, &gt, &trace).unwrap();

        use rand::{seq::SliceRandom, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        trace.events.shuffle(&mut rng);
        let mut m2 = CoverageMap::new(256);
        apply_trace(&mut m2, &gt, &trace).unwrap();
        prop_assert_eq!(m1.as_slice(), m2.as_slice());
    }

    #[test]
    fn a12_symmetry_and_rank_invariance(
        x in prop::collection::vec(0u32..50, 1..20),
        y in prop::collection::vec(0u32..50, 1..20),
    ) {
        let sx = SampleSet::new(x.iter().map(|&v| f64::from(v)).collect()).unwrap();
        let sy = SampleSet::new(y.iter().map(|&v| f64::from(v)).collect()).unwrap();
        prop_assert!((a12(&sx, &sy) + a12(&sy, &sx) - 1.0).abs() < 1e-12);

        // strictly increasing transform keeps every comparison
        let tx = SampleSet::new(x.iter().map(|&v| f64::from(v).powi(3) + 7.0).collect()).unwrap();
        let ty = SampleSet::new(y.iter().map(|&v| f64::from(v).powi(3) + 7.0).collect()).unwrap();
        prop_assert_eq!(a12(&sx, &sy), a12(&tx, &ty));
        prop_assert_eq!(mann_whitney_u(&sx, &sy).p_value, mann_whitney_u(&tx, &ty).p_value);
        prop_assert_eq!(mann_whitney_u(&sx, &sy).p_value, mann_whitney_u(&sy, &sx).p_value);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn empty_blocklist_equals_none(seed in any::<u64>()) {
        let t = target_by_name("gatekeeper").unwrap();
        let mut cfg = TrialConfig::new(&t, seed, 3_000);
        cfg.blocklist = None;
        let a = run_trial(&t, &cfg).unwrap().to_json();
        cfg.blocklist = Some(BlockList::empty());
        let b = run_trial(&t, &cfg).unwrap().to_json();
        prop_assert_eq!(a, b);
    }
}
