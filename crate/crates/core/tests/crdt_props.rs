//! Observable-level properties of the built-in types.

use std::collections::BTreeSet;

use collab_kernel::{CCounter, CSet, CText, CValueList, CVar, Document, Handle, MessageEnvelope, Mode, ReplicaId};
use proptest::prelude::*;

struct Rep {
    doc: Document,
    list: Handle<CValueList<i64>>,
    text: Handle<CText>,
    var: Handle<CVar<String>>,
    counter: Handle<CCounter>,
}

fn rep(i: usize) -> Rep {
    let mut doc = Document::new(ReplicaId::new(format!("rep{i}")).unwrap(), Mode::Full);
    let list = doc.register("list", CValueList::new).unwrap();
    let text = doc.register("text", CValueList::new).unwrap();
    let var = doc.register("var", |i| CVar::new(i, String::new())).unwrap();
    let counter = doc.register("counter", CCounter::new).unwrap();
    Rep { doc, list, text, var, counter }
}

#[derive(Clone, Debug)]
enum Act {
    Insert(usize, usize),
    Delete(usize, usize, usize),
    Type(usize, usize, char),
    Erase(usize, usize),
    Set(usize, u8),
    Add(usize),
    Sync(usize, usize),
    Load(usize, usize),
}

fn act() -> impl Strategy<Value = Act> {
    prop_oneof![
        4 => (0..3usize, any::<usize>()).prop_map(|(r, i)| Act::Insert(r, i)),
        2 => (0..3usize, any::<usize>(), 1..3usize).prop_map(|(r, i, n)| Act::Delete(r, i, n)),
        3 => (0..3usize, any::<usize>(), proptest::char::range('a', 'e')).prop_map(|(r, i, c)| Act::Type(r, i, c)),
        1 => (0..3usize, any::<usize>()).prop_map(|(r, i)| Act::Erase(r, i)),
        1 => (0..3usize, any::<u8>()).prop_map(|(r, v)| Act::Set(r, v)),
        1 => (0..3usize).prop_map(Act::Add),
        3 => (0..3usize, 0..3usize).prop_map(|(a, b)| Act::Sync(a, b)),
        1 => (0..3usize, 0..3usize).prop_map(|(a, b)| Act::Load(a, b)),
    ]
}

struct Sim {
    reps: Vec<Rep>,
    /// Everything each replica has sent, in order.
    sent: Vec<Vec<MessageEnvelope>>,
    next_value: i64,
    inserted: BTreeSet<i64>,
    deleted: BTreeSet<i64>,
}

impl Sim {
    fn new() -> Sim {
        Sim {
            reps: (0..3).map(rep).collect(),
            sent: vec![Vec::new(); 3],
            next_value: 0,
            inserted: BTreeSet::new(),
            deleted: BTreeSet::new(),
        }
    }

    fn collect(&mut self, r: usize) {
        let out = self.reps[r].doc.take_outbox();
        self.sent[r].extend(out);
    }

    fn apply(&mut self, a: &Act) {
        match *a {
            Act::Insert(r, i) => {
                let R { doc, list, .. } = split(&mut self.reps[r]);
                let len = doc.get(list).unwrap().len();
                self.next_value += 1;
                list.insert(doc, i % (len + 1), vec![self.next_value]).unwrap();
                self.inserted.insert(self.next_value);
                self.collect(r);
            }
            Act::Delete(r, i, n) => {
                let R { doc, list, .. } = split(&mut self.reps[r]);
                let cur = doc.get(list).unwrap().to_vec();
                if cur.is_empty() {
                    return;
                }
                let at = i % cur.len();
                let n = n.min(cur.len() - at);
                list.delete(doc, at, n).unwrap();
                self.deleted.extend(&cur[at..at + n]);
                self.collect(r);
            }
            Act::Type(r, i, c) => {
                let R { doc, text, .. } = split(&mut self.reps[r]);
                let len = doc.get(text).unwrap().len();
                text.insert(doc, i % (len + 1), vec![c]).unwrap();
                self.collect(r);
            }
            Act::Erase(r, i) => {
                let R { doc, text, .. } = split(&mut self.reps[r]);
                let len = doc.get(text).unwrap().len();
                if len > 0 {
                    text.delete(doc, i % len, 1).unwrap();
                    self.collect(r);
                }
            }
            Act::Set(r, v) => {
                let R { doc, var, .. } = split(&mut self.reps[r]);
                var.set(doc, format!("v{v}")).unwrap();
                self.collect(r);
            }
            Act::Add(r) => {
                let R { doc, counter, .. } = split(&mut self.reps[r]);
                counter.add(doc, 1).unwrap();
                self.collect(r);
            }
            Act::Sync(from, to) => {
                if from != to {
                    for env in self.sent[from].clone() {
                        self.reps[to].doc.receive(env).unwrap();
                    }
                }
            }
            Act::Load(from, to) => {
                if from != to {
                    let s = self.reps[from].doc.save();
                    self.reps[to].doc.load(&s).unwrap();
                }
            }
        }
    }

    fn sync_all(&mut self) {
        for from in 0..3 {
            for to in 0..3 {
                self.apply(&Act::Sync(from, to));
            }
        }
    }
}

struct R<'a> {
    doc: &'a mut Document,
    list: &'a Handle<CValueList<i64>>,
    text: &'a Handle<CText>,
    var: &'a Handle<CVar<String>>,
    counter: &'a Handle<CCounter>,
}

fn split(r: &mut Rep) -> R<'_> {
    R { doc: &mut r.doc, list: &r.list, text: &r.text, var: &r.var, counter: &r.counter }
}

fn digest_after_loads(base: usize, saves: &[&Vec<u8>]) -> String {
    let mut d = rep(base).doc;
    for s in saves {
        d.load(s).unwrap();
    }
    d.digest().to_hex()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn list_no_duplication_no_loss(acts in prop::collection::vec(act(), 1..60)) {
        let mut sim = Sim::new();
        for a in &acts {
            sim.apply(a);
        }
        sim.sync_all();
        let expect: Vec<i64> = sim.inserted.difference(&sim.deleted).copied().collect();
        for r in &sim.reps {
            let mut got = r.doc.get(&r.list).unwrap().to_vec();
            let n = got.len();
            got.sort_unstable();
            got.dedup();
            prop_assert_eq!(n, got.len(), "duplicate values");
            prop_assert_eq!(&got, &expect);
            prop_assert_eq!(r.doc.digest(), sim.reps[0].doc.digest());
        }
    }

    #[test]
    fn merges_commute_associate_and_are_idempotent(acts in prop::collection::vec(act(), 1..50)) {
        let mut sim = Sim::new();
        for a in &acts {
            sim.apply(a);
        }
        let saves: Vec<Vec<u8>> = sim.reps.iter().map(|r| r.doc.save()).collect();
        let (a, b, c) = (&saves[0], &saves[1], &saves[2]);
        let abc = digest_after_loads(9, &[a, b, c]);
        for order in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            prop_assert_eq!(&digest_after_loads(9, &order), &abc);
        }
        // (a ⊔ b) ⊔ c via an intermediate save.
        let mut ab = rep(8).doc;
        ab.load(a).unwrap();
        ab.load(b).unwrap();
        let ab_save = ab.save();
        prop_assert_eq!(&digest_after_loads(9, &[&ab_save, c]), &abc);
        prop_assert_eq!(&digest_after_loads(9, &[a, b, c, c, a]), &abc);
        // Merging the full op history gives the same state.
        sim.sync_all();
        prop_assert_eq!(sim.reps[0].doc.digest().to_hex(), abc);
    }

    #[test]
    fn local_echo_matches_remote_delivery(acts in prop::collection::vec(act(), 1..40), last in act()) {
        let mut sim = Sim::new();
        for a in &acts {
            sim.apply(a);
        }
        sim.sync_all();
        let before = sim.sent[0].len();
        let last = match last {
            Act::Insert(_, i) => Act::Insert(0, i),
            Act::Delete(_, i, n) => Act::Delete(0, i, n),
            Act::Type(_, i, c) => Act::Type(0, i, c),
            Act::Erase(_, i) => Act::Erase(0, i),
            Act::Set(_, v) => Act::Set(0, v),
            _ => Act::Add(0),
        };
        sim.apply(&last);
        for env in sim.sent[0][before..].iter().cloned() {
            sim.reps[1].doc.receive(env).unwrap();
        }
        prop_assert_eq!(sim.reps[0].doc.digest(), sim.reps[1].doc.digest());
        for (r, rep) in sim.reps.iter().enumerate() {
            for h in [rep.list.path(), rep.text.path(), rep.var.path(), rep.counter.path()] {
                prop_assert!(rep.doc.resolve(h).is_ok(), "replica {} cannot route to {:?}", r, h);
            }
        }
    }
}

#[test]
fn deleted_child_ops_are_ignored_everywhere() {
    let mk = |id: &str| {
        let mut d = Document::new(ReplicaId::new(id).unwrap(), Mode::Full);
        let s = d.register("set", |i| CSet::new(i, |i, _| Ok(CCounter::new(i)))).unwrap();
        (d, s)
    };
    let (mut a, sa) = mk("a");
    let (mut b, sb) = mk("b");
    let child = sa.add(&mut a, &[]).unwrap();
    for env in a.take_outbox() {
        b.receive(env).unwrap();
    }
    let name = child.path().last().unwrap().clone();
    sa.delete(&mut a, &name).unwrap();
    let child_b: Handle<CCounter> = sb.child(&name);
    child_b.add(&mut b, 5).unwrap();
    child_b.add(&mut b, 1).unwrap();
    let (from_a, from_b) = (a.take_outbox(), b.take_outbox());
    for env in from_b {
        a.receive(env).unwrap();
    }
    for env in from_a {
        b.receive(env).unwrap();
    }
    assert!(!a.get(&sa).unwrap().has(&name));
    assert!(!b.get(&sb).unwrap().has(&name));
    assert_eq!(a.digest(), b.digest());
}
