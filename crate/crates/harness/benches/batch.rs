use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use collab_harness::exec::Exec;
use collab_harness::fuzz::{run_fuzz, FuzzConfig};
use collab_harness::oracle::subjects;

fn modes() -> Vec<Exec> {
    #[allow(unused_mut)]
    let mut m = vec![Exec::Sequential];
    #[cfg(feature = "parallel")]
    m.push(Exec::Parallel);
    m
}

fn fuzz_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("fuzz_8_seeds");
    g.sample_size(10);
    for exec in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &exec, |b, &exec| {
            b.iter(|| {
                let cfgs: Vec<FuzzConfig> =
                    (0..8).map(|seed| FuzzConfig { replicas: 4, ops: 400, seed, ..FuzzConfig::default() }).collect();
                let reports = exec.map(cfgs, |cfg| run_fuzz(&cfg).map(|o| o.report.passed()));
                assert!(reports.into_iter().all(|r| r.unwrap()));
            })
        });
    }
    g.finish();
}

fn oracle_batch(c: &mut Criterion) {
    let mut g = c.benchmark_group("oracle_list_200_dags");
    g.sample_size(10);
    let all = subjects();
    let list = all.iter().find(|s| s.name() == "list").expect("list subject");
    for exec in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(exec.name()), &exec, |b, &exec| {
            b.iter(|| assert!(list.check(200, 5, 1, exec).unwrap().pass()))
        });
    }
    g.finish();
}

criterion_group!(benches, fuzz_batch, oracle_batch);
criterion_main!(benches);
