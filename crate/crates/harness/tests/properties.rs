use collab_harness::exec::Exec;
use collab_harness::fuzz::{run_fuzz, FuzzConfig};
use collab_harness::oracle::subjects;
use collab_harness::sim::{Latency, NetConfig, Partition, Topology};
use collab_harness::workload::Target;
use proptest::prelude::*;

fn only(t: Target) -> Vec<(Target, u32)> {
    vec![(t, 1)]
}

#[test]
fn same_seed_gives_identical_reports() {
    let cfg = FuzzConfig { replicas: 4, ops: 800, seed: 99, merge_every: Some(100), ..FuzzConfig::default() };
    let a = serde_json::to_string(&run_fuzz(&cfg).unwrap().report).unwrap();
    let b = serde_json::to_string(&run_fuzz(&cfg).unwrap().report).unwrap();
    assert_eq!(a, b);
}

#[test]
fn nested_lists_converge() {
    let cfg = FuzzConfig {
        replicas: 5,
        ops: 2000,
        seed: 3,
        mix: only(Target::Nested),
        merge_every: Some(300),
        ..FuzzConfig::default()
    };
    let r = run_fuzz(&cfg).unwrap().report;
    assert!(r.passed(), "{:?}", r.failure);
}

#[test]
fn recipe_converges_with_every_op_kind() {
    let cfg = FuzzConfig {
        replicas: 4,
        ops: 3000,
        seed: 8,
        mix: only(Target::Recipe),
        net: NetConfig { dup_prob: 0.2, ..NetConfig::default() },
        ..FuzzConfig::default()
    };
    let r = run_fuzz(&cfg).unwrap().report;
    assert!(r.passed(), "{:?}", r.failure);
    for k in [
        "recipe.title",
        "recipe.instrs",
        "recipe.scale",
        "list.insert",
        "list.delete",
        "list.move",
        "list.archive",
        "ingredient.text",
        "ingredient.amount",
        "ingredient.units",
    ] {
        assert!(r.op_counts.get(k).copied().unwrap_or(0) > 0, "{k} never ran");
    }
}

#[test]
fn converges_across_drops_and_partitions() {
    let net = NetConfig {
        latency: Latency::Uniform(5, 50),
        dup_prob: 0.05,
        drop_prob: 0.2,
        partitions: vec![Partition { start: 500, end: 3000, groups: vec![vec![0, 1], vec![2, 3]] }],
        topology: Topology::Mesh,
    };
    let cfg = FuzzConfig { replicas: 4, ops: 1500, seed: 21, net, ..FuzzConfig::default() };
    let r = run_fuzz(&cfg).unwrap().report;
    assert!(r.passed(), "{:?}", r.failure);
    assert!(r.net.dropped > 0);
}

#[test]
fn scale_num_and_list_confluence_at_six_ops() {
    for s in subjects().iter().filter(|s| ["scale_num", "list", "var"].contains(&s.name())) {
        let r = s.check(300, 6, 17, Exec::Sequential).unwrap();
        assert!(r.pass(), "{}: {:?}", r.name, r.first_failure);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn relay_no_vc_converges(seed in any::<u64>(), replicas in 2usize..7, dup in 0.0f64..0.3, lo in 0u64..50, span in 0u64..200) {
        let cfg = FuzzConfig {
            replicas,
            ops: 600,
            seed,
            no_vc: true,
            net: NetConfig { latency: Latency::Uniform(lo, lo + span), dup_prob: dup, topology: Topology::Relay, ..NetConfig::default() },
            merge_every: Some(150),
            ..FuzzConfig::default()
        };
        let r = run_fuzz(&cfg).unwrap().report;
        prop_assert!(r.passed(), "{:?}", r.failure);
        prop_assert_eq!(r.max_deps, 0);
    }

    #[test]
    fn mesh_full_converges(seed in any::<u64>(), replicas in 2usize..6, dup in 0.0f64..0.3) {
        let cfg = FuzzConfig {
            replicas,
            ops: 600,
            seed,
            net: NetConfig { dup_prob: dup, ..NetConfig::default() },
            merge_every: Some(200),
            checkpoint_every: Some(250),
            ..FuzzConfig::default()
        };
        let r = run_fuzz(&cfg).unwrap().report;
        prop_assert!(r.passed(), "{:?}", r.failure);
        prop_assert!(r.max_deps < replicas);
    }
}
