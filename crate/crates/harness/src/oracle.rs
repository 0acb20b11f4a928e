//! Brute-force confluence oracle: every linear extension of a small causal
//! DAG of envelopes must produce the same state.

use std::collections::BTreeSet;

use collab_kernel::collections::CSet;
use collab_kernel::primitives::CTotalOrder;
use collab_kernel::{
    CCounter, CIngredient, CList, CRecipe, CScaleNum, CText, CValueList, CVar, Collab, Document, Handle, Init,
    MessageEnvelope, Mode, ReplicaId, Result,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::exec::Exec;
use crate::workload::{self, Nested, Rng8};
use crate::HarnessError;

/// Largest DAG the enumerator accepts (7! orders).
pub const MAX_ORACLE_OPS: usize = 7;

/// Envelopes plus their happened-before relation. `preds[i]` holds indices
/// `< i` only, so index order is itself a linear extension.
#[derive(Clone, Debug, Default)]
pub struct Dag {
    /// Delivered before the DAG, in this order.
    pub prelude: Vec<MessageEnvelope>,
    pub envelopes: Vec<MessageEnvelope>,
    pub preds: Vec<BTreeSet<usize>>,
    /// User-level ops that produced the envelopes.
    pub ops: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub orders: usize,
    pub digests: BTreeSet<String>,
    /// Observed state after the first extension (index order).
    pub canonical: serde_json::Value,
}

impl Verdict {
    pub fn pass(&self) -> bool {
        self.digests.len() == 1
    }
}

/// Visits every linear extension of `preds`.
pub fn linear_extensions(preds: &[BTreeSet<usize>], mut visit: impl FnMut(&[usize])) {
    fn go(preds: &[BTreeSet<usize>], placed: &mut Vec<bool>, order: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if order.len() == preds.len() {
            visit(order);
            return;
        }
        for i in 0..preds.len() {
            if !placed[i] && preds[i].iter().all(|&p| placed[p]) {
                placed[i] = true;
                order.push(i);
                go(preds, placed, order, visit);
                order.pop();
                placed[i] = false;
            }
        }
    }
    go(preds, &mut vec![false; preds.len()], &mut Vec::new(), &mut visit);
}

/// A CRDT type under test: how to build it, seed it, and drive it.
pub struct Subject<C: Collab> {
    pub name: &'static str,
    pub make: fn(&Init) -> C,
    pub prelude: fn(&mut Document, &Handle<C>, &mut Rng8) -> Result<()>,
    pub op: fn(&mut Document, &Handle<C>, &mut Rng8) -> Result<&'static str>,
}

const ROOT: &str = "x";

fn observer_id() -> ReplicaId {
    ReplicaId::new("observer").expect("valid id")
}

impl<C: Collab> Subject<C> {
    fn replica(&self, id: ReplicaId) -> Result<(Document, Handle<C>)> {
        let mut doc = Document::new(id, Mode::Full);
        let h = doc.register(ROOT, self.make)?;
        Ok((doc, h))
    }

    /// Applies every linear extension of `dag` to a fresh replica.
    pub fn enumerate_orders(&self, dag: &Dag) -> std::result::Result<Verdict, HarnessError> {
        if dag.envelopes.len() > MAX_ORACLE_OPS {
            return Err(HarnessError::Config(format!(
                "{} envelopes exceed the oracle limit of {MAX_ORACLE_OPS}",
                dag.envelopes.len()
            )));
        }
        let mut digests = BTreeSet::new();
        let mut canonical = None;
        let mut orders = 0;
        let mut failure = None;
        linear_extensions(&dag.preds, |order| {
            if failure.is_some() {
                return;
            }
            let run = || -> std::result::Result<Document, HarnessError> {
                let (mut doc, _) = self.replica(observer_id())?;
                for env in dag.prelude.iter().chain(order.iter().map(|&i| &dag.envelopes[i])) {
                    let out = doc.receive(env.clone())?;
                    if out.len() != 1 {
                        return Err(HarnessError::Protocol(format!(
                            "{} not causally ready in oracle order",
                            env.sender
                        )));
                    }
                }
                Ok(doc)
            };
            match run() {
                Ok(doc) => {
                    orders += 1;
                    digests.insert(doc.digest().to_hex());
                    canonical.get_or_insert_with(|| doc.observe());
                }
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(Verdict { orders, digests, canonical: canonical.unwrap_or_default() }),
        }
    }

    /// Random ops on 2–3 replicas with random partial syncs in between.
    pub fn sample(&self, rng: &mut Rng8, max_ops: usize) -> std::result::Result<Dag, HarnessError> {
        loop {
            let dag = self.try_sample(rng, max_ops)?;
            if dag.envelopes.len() <= MAX_ORACLE_OPS {
                return Ok(dag);
            }
        }
    }

    fn try_sample(&self, rng: &mut Rng8, max_ops: usize) -> std::result::Result<Dag, HarnessError> {
        let k = rng.gen_range(2..=3);
        let mut reps = (0..k).map(|_| self.replica(ReplicaId::random(rng))).collect::<Result<Vec<_>>>()?;
        let mut dag = Dag::default();
        {
            let (doc, h) = &mut reps[0];
            (self.prelude)(doc, h, rng)?;
            dag.prelude = doc.take_outbox();
        }
        for (doc, _) in reps.iter_mut().skip(1) {
            for env in &dag.prelude {
                doc.receive(env.clone())?;
            }
        }
        let mut known: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); k];
        let n = rng.gen_range(1..=max_ops);
        for _ in 0..n {
            if dag.envelopes.len() >= MAX_ORACLE_OPS {
                break;
            }
            let r = rng.gen_range(0..k);
            if rng.gen_bool(0.5) {
                let mut want: BTreeSet<usize> =
                    (0..dag.envelopes.len()).filter(|i| !known[r].contains(i) && rng.gen_bool(0.5)).collect();
                for i in want.clone() {
                    want.extend(dag.preds[i].iter().copied().filter(|p| !known[r].contains(p)));
                }
                for i in want {
                    reps[r].0.receive(dag.envelopes[i].clone())?;
                    known[r].insert(i);
                }
            }
            let (doc, h) = &mut reps[r];
            (self.op)(doc, h, rng)?;
            for env in doc.take_outbox() {
                let i = dag.envelopes.len();
                dag.envelopes.push(env);
                dag.preds.push(known[r].clone());
                known[r].insert(i);
            }
            dag.ops += 1;
        }
        Ok(dag)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TypeReport {
    pub name: &'static str,
    pub dags: usize,
    pub orders: usize,
    pub max_envelopes: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl TypeReport {
    pub fn pass(&self) -> bool {
        self.failures == 0
    }
}

/// Object-safe view of a [`Subject`].
pub trait Confluence: Sync {
    fn name(&self) -> &'static str;
    fn check(
        &self,
        dags: usize,
        max_ops: usize,
        seed: u64,
        exec: Exec,
    ) -> std::result::Result<TypeReport, HarnessError>;
}

impl<C: Collab> Confluence for Subject<C> {
    fn name(&self) -> &'static str {
        self.name
    }

    fn check(
        &self,
        dags: usize,
        max_ops: usize,
        seed: u64,
        exec: Exec,
    ) -> std::result::Result<TypeReport, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..dags).map(|_| rng.gen()).collect();
        // Documents are not Send: each item samples and replays on its own.
        let results = exec.map(seeds, |s| {
            let dag = self.sample(&mut ChaCha8Rng::seed_from_u64(s), max_ops)?;
            let v = self.enumerate_orders(&dag)?;
            Ok::<_, HarnessError>((s, dag.envelopes.len(), v))
        });
        let mut report =
            TypeReport { name: self.name, dags, orders: 0, max_envelopes: 0, failures: 0, first_failure: None };
        for r in results {
            let (s, envs, v) = r?;
            report.orders += v.orders;
            report.max_envelopes = report.max_envelopes.max(envs);
            if !v.pass() {
                report.failures += 1;
                report.first_failure.get_or_insert_with(|| format!("dag seed {s}: {} digests", v.digests.len()));
            }
        }
        Ok(report)
    }
}

fn no_prelude<C>(_: &mut Document, _: &Handle<C>, _: &mut Rng8) -> Result<()> {
    Ok(())
}

type Flat = CList<CCounter>;

fn new_flat(init: &Init) -> Flat {
    CList::new(init, |i, _| Ok(CCounter::new(i)))
}

fn flat_op(doc: &mut Document, h: &Handle<Flat>, rng: &mut Rng8) -> Result<&'static str> {
    workload::list_op(doc, h, rng, |_| Vec::new(), workload::counter_op)
}

fn two_entries<C: Collab>(doc: &mut Document, h: &Handle<CList<C>>, args: &[u8]) -> Result<()> {
    h.insert(doc, 0, args)?;
    h.insert(doc, 1, args)?;
    Ok(())
}

/// Every built-in and example type.
pub fn subjects() -> Vec<Box<dyn Confluence>> {
    vec![
        Box::new(Subject { name: "counter", make: CCounter::new, prelude: no_prelude, op: workload::counter_op }),
        Box::new(Subject::<CVar<i64>> {
            name: "var",
            make: |i| CVar::new(i, 0),
            prelude: no_prelude,
            op: workload::var_op,
        }),
        Box::new(Subject {
            name: "total_order",
            make: CTotalOrder::new,
            prelude: |doc, h, _| h.create_position(doc, None, None).map(drop),
            op: workload::order_op,
        }),
        Box::new(Subject::<CText> {
            name: "text",
            make: CValueList::new,
            prelude: |doc, h, _| h.insert_str(doc, 0, "ab"),
            op: workload::text_op,
        }),
        Box::new(Subject::<CValueList<i64>> {
            name: "value_list",
            make: CValueList::new,
            prelude: |doc, h, _| h.insert(doc, 0, vec![1, 2]),
            op: workload::values_op,
        }),
        Box::new(Subject::<CSet<CCounter>> {
            name: "set",
            make: |i| CSet::new(i, |i, _| Ok(CCounter::new(i))),
            prelude: |doc, h, _| h.add(doc, &[]).map(drop),
            op: workload::set_op,
        }),
        Box::new(Subject::<Flat> {
            name: "list",
            make: new_flat,
            prelude: |doc, h, _| two_entries(doc, h, &[]),
            op: flat_op,
        }),
        Box::new(Subject::<CScaleNum> {
            name: "scale_num",
            make: |i| CScaleNum::new(i, 100.0),
            prelude: no_prelude,
            op: workload::scale_num_op,
        }),
        Box::new(Subject::<CIngredient> {
            name: "ingredient",
            make: |i| CIngredient::new(i, 100.0).expect("finite amount"),
            prelude: |doc, h, _| h.text().insert_str(doc, 0, "milk"),
            op: workload::ingredient_op,
        }),
        Box::new(Subject::<CRecipe> {
            name: "recipe",
            make: CRecipe::new,
            prelude: |doc, h, _| {
                h.add_ingredient(doc, 0, "", 90.0)?;
                h.add_ingredient(doc, 1, "", 200.0).map(drop)
            },
            op: workload::recipe_op,
        }),
        Box::new(Subject::<Nested> {
            name: "nested_list",
            make: workload::new_nested,
            prelude: |doc, h, _| {
                two_entries(doc, h, &[])?;
                two_entries(doc, &h.at(doc, 0)?, &[])
            },
            op: workload::nested_op,
        }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(preds: &[BTreeSet<usize>]) -> usize {
        let mut n = 0;
        linear_extensions(preds, |_| n += 1);
        n
    }

    #[test]
    fn extension_counts() {
        assert_eq!(count(&[]), 1);
        assert_eq!(count(&vec![BTreeSet::new(); 3]), 6);
        let chain = vec![BTreeSet::new(), BTreeSet::from([0]), BTreeSet::from([0, 1])];
        assert_eq!(count(&chain), 1);
        let vee = vec![BTreeSet::new(), BTreeSet::from([0]), BTreeSet::from([0])];
        assert_eq!(count(&vee), 2);
    }

    fn two_ops<C: Collab>(
        s: &Subject<C>,
        a: fn(&mut Document, &Handle<C>),
        b: fn(&mut Document, &Handle<C>),
    ) -> Verdict {
        let (mut da, ha) = s.replica(ReplicaId::new("aaaa").unwrap()).unwrap();
        let (mut db, hb) = s.replica(ReplicaId::new("bbbb").unwrap()).unwrap();
        a(&mut da, &ha);
        b(&mut db, &hb);
        let mut dag = Dag::default();
        for env in da.take_outbox().into_iter().chain(db.take_outbox()) {
            dag.envelopes.push(env);
            dag.preds.push(BTreeSet::new());
        }
        s.enumerate_orders(&dag).unwrap()
    }

    #[test]
    fn single_op_one_order() {
        let s = Subject { name: "counter", make: CCounter::new, prelude: no_prelude, op: workload::counter_op };
        let v = two_ops(&s, |d, h| drop(h.add(d, 1).unwrap()), |_, _| {});
        assert_eq!(v.orders, 1);
        assert!(v.pass());
    }

    #[test]
    fn concurrent_var_sets() {
        let s =
            Subject::<CVar<i64>> { name: "var", make: |i| CVar::new(i, 0), prelude: no_prelude, op: workload::var_op };
        let v = two_ops(&s, |d, h| drop(h.set(d, 1).unwrap()), |d, h| drop(h.set(d, 2).unwrap()));
        assert_eq!((v.orders, v.digests.len()), (2, 1));
    }

    #[test]
    fn scale_anomaly_oracle() {
        let s = Subject::<CScaleNum> {
            name: "scale_num",
            make: |i| CScaleNum::new(i, 100.0),
            prelude: no_prelude,
            op: workload::scale_num_op,
        };
        let v = two_ops(&s, |d, h| drop(h.set(d, 90.0).unwrap()), |d, h| drop(h.scale(d, 0.5).unwrap()));
        assert_eq!((v.orders, v.digests.len()), (2, 1));
        assert_eq!(v.canonical["x"], serde_json::json!(45.0));
    }

    #[test]
    fn rejects_oversized_dags() {
        let s = Subject { name: "counter", make: CCounter::new, prelude: no_prelude, op: workload::counter_op };
        let (mut d, h) = s.replica(ReplicaId::new("aaaa").unwrap()).unwrap();
        let mut dag = Dag::default();
        for _ in 0..8 {
            h.add(&mut d, 1).unwrap();
        }
        for env in d.take_outbox() {
            dag.preds.push((0..dag.envelopes.len()).collect());
            dag.envelopes.push(env);
        }
        assert!(s.enumerate_orders(&dag).is_err());
    }

    #[test]
    fn every_subject_confluent_on_a_few_dags() {
        for s in subjects() {
            let r = s.check(20, 5, 7, Exec::Sequential).unwrap();
            assert!(r.pass(), "{}: {:?}", r.name, r.first_failure);
        }
    }
}
