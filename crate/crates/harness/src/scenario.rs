//! Two-replica recipe scenarios with fixed concurrent schedules.

use collab_kernel::{CRecipe, Document, Handle, Mode, ReplicaId, Unit};
use serde::Serialize;

use crate::HarnessError;

type Result<T> = std::result::Result<T, HarnessError>;

pub const SCENARIOS: [&str; 5] = ["scale-anomaly", "move-vs-edit", "delete-wins", "update-wins", "archive-restore"];

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub passed: bool,
    pub transcript: Vec<String>,
    /// Expected vs actual, when an assertion failed.
    pub diff: Option<String>,
    /// Final ingredient rows on each replica.
    pub alice: Vec<Row>,
    pub bob: Vec<Row>,
}

/// One ingredient as displayed: text, amount, units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub text: String,
    pub amount: f64,
    pub units: String,
}

impl std::fmt::Display for Row {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {}", self.text, self.amount, self.units)
    }
}

struct Pair {
    a: Document,
    b: Document,
    h: Handle<CRecipe>,
    transcript: Vec<String>,
}

impl Pair {
    fn new() -> Result<Pair> {
        let mut a = Document::new(ReplicaId::new("alice")?, Mode::Full);
        let mut b = Document::new(ReplicaId::new("bob")?, Mode::Full);
        let h = a.register("recipe", CRecipe::new)?;
        b.register("recipe", CRecipe::new)?;
        Ok(Pair { a, b, h, transcript: Vec::new() })
    }

    /// Delivers everything each side has sent to the other.
    fn exchange(&mut self) -> Result<()> {
        let from_a = self.a.take_outbox();
        let from_b = self.b.take_outbox();
        for env in from_a {
            self.b.receive(env)?;
        }
        for env in from_b {
            self.a.receive(env)?;
        }
        Ok(())
    }

    fn rows(doc: &Document, h: &Handle<CRecipe>) -> Result<Vec<Row>> {
        let list = doc.get(&h.ingredients())?;
        Ok(list
            .values()
            .map(|i| Row {
                text: i.text().as_string(),
                amount: i.amount().value(),
                units: i.units().as_str().to_owned(),
            })
            .collect())
    }

    fn both(&self) -> Result<(Vec<Row>, Vec<Row>)> {
        Ok((Self::rows(&self.a, &self.h)?, Self::rows(&self.b, &self.h)?))
    }

    fn log(&mut self, what: &str) -> Result<()> {
        let (a, b) = self.both()?;
        let show = |rows: &[Row]| rows.iter().map(Row::to_string).collect::<Vec<_>>().join(", ");
        self.transcript.push(format!("{what}: alice [{}] | bob [{}]", show(&a), show(&b)));
        Ok(())
    }

    fn setup(&mut self, items: &[(&str, f64)]) -> Result<()> {
        for (i, (text, amount)) in items.iter().enumerate() {
            self.h.add_ingredient(&mut self.a, i, text, *amount)?;
        }
        self.exchange()?;
        self.log("initial")
    }

    fn index_of(&self, doc: &Document, text: &str) -> Result<usize> {
        Self::rows(doc, &self.h)?
            .iter()
            .position(|r| r.text == text)
            .ok_or_else(|| HarnessError::Protocol(format!("no ingredient {text}")))
    }
}

fn rows(items: &[(&str, f64)]) -> Vec<Row> {
    items
        .iter()
        .map(|(t, a)| Row { text: (*t).to_owned(), amount: *a, units: Unit::Grams.as_str().to_owned() })
        .collect()
}

fn finish(name: &str, mut p: Pair, expected: Vec<Row>) -> Result<ScenarioReport> {
    p.log("final")?;
    let (a, b) = p.both()?;
    let diff = [("alice", &a), ("bob", &b)]
        .into_iter()
        .filter(|(_, got)| **got != expected)
        .map(|(who, got)| format!("{who}: expected {expected:?}, got {got:?}"))
        .collect::<Vec<_>>();
    let diff = (!diff.is_empty()).then(|| diff.join("\n"));
    Ok(ScenarioReport {
        name: name.to_owned(),
        passed: diff.is_none(),
        transcript: p.transcript,
        diff,
        alice: a,
        bob: b,
    })
}

fn scale_anomaly() -> Result<ScenarioReport> {
    let mut p = Pair::new()?;
    p.setup(&[("flour", 500.0), ("milk", 100.0)])?;
    let milk = p.index_of(&p.a, "milk")?;
    p.h.ingredients().at(&p.a, milk)?.amount().set(&mut p.a, 90.0)?;
    p.h.scale_recipe(&mut p.b, 0.5)?;
    p.log("concurrent: alice sets milk to 90, bob halves the recipe")?;
    p.exchange()?;
    finish("scale-anomaly", p, rows(&[("flour", 250.0), ("milk", 45.0)]))
}

fn move_vs_edit() -> Result<ScenarioReport> {
    let mut p = Pair::new()?;
    p.setup(&[("flour", 500.0), ("milk", 300.0), ("Bredd crumbs", 50.0)])?;
    let list = p.h.ingredients();
    let at = p.index_of(&p.a, "Bredd crumbs")?;
    list.move_entry(&mut p.a, at, 0)?;
    let text = list.at(&p.b, p.index_of(&p.b, "Bredd crumbs")?)?.text();
    text.delete(&mut p.b, 3, 1)?;
    text.insert_str(&mut p.b, 3, "a")?;
    p.log("concurrent: alice moves Bredd to the top, bob fixes the typo")?;
    p.exchange()?;
    finish("move-vs-edit", p, rows(&[("Bread crumbs", 50.0), ("flour", 500.0), ("milk", 300.0)]))
}

fn delete_wins() -> Result<ScenarioReport> {
    let mut p = Pair::new()?;
    p.setup(&[("flour", 500.0), ("Bredd", 50.0)])?;
    let list = p.h.ingredients();
    let at = p.index_of(&p.a, "Bredd")?;
    list.delete(&mut p.a, at)?;
    let text = list.at(&p.b, p.index_of(&p.b, "Bredd")?)?.text();
    text.delete(&mut p.b, 3, 1)?;
    text.insert_str(&mut p.b, 3, "a")?;
    p.log("concurrent: alice deletes Bredd, bob edits it")?;
    p.exchange()?;
    finish("delete-wins", p, rows(&[("flour", 500.0)]))
}

fn update_wins() -> Result<ScenarioReport> {
    let mut p = Pair::new()?;
    p.setup(&[("flour", 500.0), ("Bredd", 50.0)])?;
    let list = p.h.ingredients();
    let at = p.index_of(&p.a, "Bredd")?;
    list.archive(&mut p.a, at)?;
    let text = list.at(&p.b, p.index_of(&p.b, "Bredd")?)?.text();
    text.delete(&mut p.b, 3, 1)?;
    text.insert_str(&mut p.b, 3, "a")?;
    p.log("concurrent: alice archives Bredd, bob edits it")?;
    p.exchange()?;
    finish("update-wins", p, rows(&[("flour", 500.0), ("Bread", 50.0)]))
}

fn archive_restore() -> Result<ScenarioReport> {
    let mut p = Pair::new()?;
    p.setup(&[("flour", 500.0), ("milk", 300.0), ("salt", 5.0)])?;
    let list = p.h.ingredients();
    let name = list.archive(&mut p.a, 1)?;
    p.exchange()?;
    p.log("alice archives milk")?;
    let hidden = p.both()?;
    if hidden.0.len() != 2 || hidden.1.len() != 2 {
        return finish("archive-restore", p, rows(&[("flour", 500.0), ("salt", 5.0)]));
    }
    list.restore(&mut p.b, &name)?;
    p.exchange()?;
    finish("archive-restore", p, rows(&[("flour", 500.0), ("milk", 300.0), ("salt", 5.0)]))
}

pub fn run_scenario(name: &str) -> Result<ScenarioReport> {
    let report = match name {
        "scale-anomaly" => scale_anomaly(),
        "move-vs-edit" => move_vs_edit(),
        "delete-wins" => delete_wins(),
        "update-wins" => update_wins(),
        "archive-restore" => archive_restore(),
        other => {
            return Err(HarnessError::Config(format!("unknown scenario {other:?}; expected one of {SCENARIOS:?}")))
        }
    }?;
    Ok(report)
}
