use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdinv::analysis::critical_path;
use spdinv::scheduler::{
    build_dag, execute, execute_in_order, execute_sequential, HazardKind, TaskDag,
};
use spdinv::taskgen::{gen_inversion, AccessMode, LoopOrder, Placement, TaskStream, VariantConfig};
use spdinv::{generate_spd, TileMatrix};

fn variant() -> impl Strategy<Value = VariantConfig> {
    (any::<bool>(), 0usize..8, any::<bool>()).prop_map(|(oop, l, pipelined)| VariantConfig {
        placement: if oop { Placement::OutOfPlace } else { Placement::InPlace },
        loops: LoopOrder::all()[l],
        pipelined,
        workers: 1,
    })
}

/// Kahn's algorithm picking uniformly among ready tasks.
fn random_topological_order(dag: &TaskDag, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indeg: Vec<usize> = (0..dag.len()).map(|v| dag.preds(v).len()).collect();
    let mut ready: Vec<usize> = (0..dag.len()).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(dag.len());
    while !ready.is_empty() {
        let u = ready.swap_remove(rng.gen_range(0..ready.len()));
        order.push(u);
        for &v in dag.succs(u) {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(v);
            }
        }
    }
    order
}

fn input(t: usize, b: usize, seed: u64) -> TileMatrix {
    TileMatrix::from_dense(&generate_spd(t * b, seed).unwrap(), b).unwrap()
}

fn stream(t: usize, cfg: &VariantConfig) -> TaskStream {
    gen_inversion(t, cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Any topological order of the DAG reproduces the stream order result
    /// bit for bit.
    #[test]
    fn topological_replay_is_bitwise_stable(t in 1usize..=5, cfg in variant(), seed in any::<u64>()) {
        let s = stream(t, &cfg);
        let dag = build_dag(&s);
        let order = random_topological_order(&dag, seed);
        prop_assert_eq!(order.len(), s.len());
        let a = input(t, 3, 1);
        let reference = execute_sequential(&s, a.clone()).unwrap();
        let replay = execute_in_order(&s, a, &order).unwrap();
        prop_assert_eq!(reference, replay);
    }

    #[test]
    fn threaded_execution_is_bitwise_stable(t in 1usize..=5, cfg in variant(), workers in 1usize..=6) {
        let s = stream(t, &cfg);
        let a = input(t, 4, 2);
        let reference = execute_sequential(&s, a.clone()).unwrap();
        prop_assert_eq!(reference, execute(&s, a, workers).unwrap());
    }

    /// Every conflicting pair of accesses is ordered by the DAG, and every
    /// hazard edge is justified by a conflicting pair.
    #[test]
    fn dag_orders_all_conflicts(t in 1usize..=5, cfg in variant()) {
        let s = stream(t, &cfg);
        let dag = build_dag(&s);
        let tasks = s.tasks();
        let reach: Vec<Vec<bool>> = (0..dag.len()).map(|u| dag.reachable_from(u)).collect();
        for i in 0..tasks.len() {
            for j in i + 1..tasks.len() {
                for x in &tasks[i].accesses {
                    for y in &tasks[j].accesses {
                        if x.tile == y.tile && HazardKind::classify(x.mode, y.mode).is_some() {
                            prop_assert!(reach[i][j], "{} -> {} on {}", tasks[i].label(), tasks[j].label(), x.tile);
                        }
                    }
                }
            }
        }
        for e in dag.hazard_edges() {
            prop_assert!(e.from < e.to);
            let mode = |id: usize| tasks[id].accesses.iter().find(|a| a.tile == e.tile).map(|a| a.mode);
            let (m1, m2) = (mode(e.from).unwrap(), mode(e.to).unwrap());
            prop_assert_eq!(HazardKind::classify(m1, m2), Some(e.kind));
            prop_assert_ne!(e.kind, HazardKind::Waw);
        }
    }

    /// Pipelining only drops constraints: each edge of the merged DAG is
    /// implied by the barriered one.
    #[test]
    fn pipelined_edges_are_implied_by_barriers(t in 1usize..=6, oop in any::<bool>(), l in 0usize..8) {
        let base = VariantConfig {
            placement: if oop { Placement::OutOfPlace } else { Placement::InPlace },
            loops: LoopOrder::all()[l],
            pipelined: true,
            workers: 1,
        };
        let piped = stream(t, &base);
        let barred = stream(t, &VariantConfig { pipelined: false, ..base });
        prop_assert_eq!(piped.tasks(), barred.tasks());
        let p = build_dag(&piped);
        let b = build_dag(&barred);
        for u in 0..p.len() {
            let reach = b.reachable_from(u);
            for &v in p.succs(u) {
                prop_assert!(reach[v]);
            }
        }
        prop_assert!(critical_path(&p).critical_path <= critical_path(&b).critical_path);
    }

    #[test]
    fn pruning_preserves_reachability_and_length(t in 1usize..=5, cfg in variant()) {
        let dag = build_dag(&stream(t, &cfg));
        let pruned = dag.pruned();
        prop_assert!(pruned.edge_count() <= dag.edge_count());
        for u in 0..dag.len() {
            prop_assert_eq!(dag.reachable_from(u), pruned.reachable_from(u));
        }
        let (full, thin) = (critical_path(&dag), critical_path(&pruned));
        prop_assert_eq!(full.critical_path, thin.critical_path);
        prop_assert_eq!(full.critical_path_with_copies, thin.critical_path_with_copies);
    }
}

#[test]
fn read_only_pairs_are_not_hazards() {
    assert_eq!(HazardKind::classify(AccessMode::Read, AccessMode::Read), None);
    assert_eq!(HazardKind::classify(AccessMode::Read, AccessMode::ReadWrite), Some(HazardKind::War));
    assert_eq!(HazardKind::classify(AccessMode::ReadWrite, AccessMode::Read), Some(HazardKind::Raw));
    assert_eq!(
        HazardKind::classify(AccessMode::ReadWrite, AccessMode::ReadWrite),
        Some(HazardKind::Raw)
    );
}

#[test]
fn repeated_threaded_runs_agree() {
    let cfg = VariantConfig {
        placement: Placement::OutOfPlace,
        ..VariantConfig::default()
    };
    let s = stream(6, &cfg);
    let a = input(6, 4, 3);
    let reference = execute(&s, a.clone(), 1).unwrap();
    for _ in 0..20 {
        assert_eq!(execute(&s, a.clone(), 8).unwrap(), reference);
    }
}
