//! Random operation generators, one per component type.
//!
//! Every generator performs exactly one applicable local operation (falling
//! back to an insert-like op when the target is empty) and returns its label.

use collab_kernel::collections::CSet;
use collab_kernel::primitives::CTotalOrder;
use collab_kernel::{
    CCounter, CIngredient, CList, CRecipe, CScaleNum, CText, CValueList, CVar, Collab, Document, Handle, Init, Result,
    Unit,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type Rng8 = ChaCha8Rng;

pub fn counter_op(doc: &mut Document, h: &Handle<CCounter>, rng: &mut Rng8) -> Result<&'static str> {
    let n = *[-3i64, -1, 1, 2, 5].choose(rng).expect("non-empty");
    h.add(doc, n)?;
    Ok("counter.add")
}

pub fn var_op(doc: &mut Document, h: &Handle<CVar<i64>>, rng: &mut Rng8) -> Result<&'static str> {
    h.set(doc, rng.gen_range(0..4))?;
    Ok("var.set")
}

fn random_text(rng: &mut Rng8) -> String {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| (b'a' + rng.gen_range(0..26u8)) as char).collect()
}

pub fn text_op(doc: &mut Document, h: &Handle<CText>, rng: &mut Rng8) -> Result<&'static str> {
    let len = doc.get(h)?.len();
    if len == 0 || rng.gen_bool(0.65) {
        let at = rng.gen_range(0..=len);
        h.insert_str(doc, at, &random_text(rng))?;
        Ok("text.insert")
    } else {
        let at = rng.gen_range(0..len);
        let n = rng.gen_range(1..=(len - at).min(3));
        h.delete(doc, at, n)?;
        Ok("text.delete")
    }
}

pub fn values_op(doc: &mut Document, h: &Handle<CValueList<i64>>, rng: &mut Rng8) -> Result<&'static str> {
    let len = doc.get(h)?.len();
    if len == 0 || rng.gen_bool(0.6) {
        let at = rng.gen_range(0..=len);
        let vals = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(-50..50)).collect();
        h.insert(doc, at, vals)?;
        Ok("values.insert")
    } else {
        h.delete(doc, rng.gen_range(0..len), 1)?;
        Ok("values.delete")
    }
}

pub fn order_op(doc: &mut Document, h: &Handle<CTotalOrder>, rng: &mut Rng8) -> Result<&'static str> {
    let order = doc.get(h)?.positions();
    let at = rng.gen_range(0..=order.len());
    let prev = at.checked_sub(1).map(|i| order[i].clone());
    let next = order.get(at).cloned();
    h.create_position(doc, prev.as_ref(), next.as_ref())?;
    Ok("order.create")
}

pub fn scale_num_op(doc: &mut Document, h: &Handle<CScaleNum>, rng: &mut Rng8) -> Result<&'static str> {
    if rng.gen_bool(0.5) {
        h.set(doc, *[50.0, 90.0, 120.0, 300.0].choose(rng).expect("non-empty"))?;
        Ok("scale_num.set")
    } else {
        h.scale(doc, *[0.5, 2.0].choose(rng).expect("non-empty"))?;
        Ok("scale_num.scale")
    }
}

pub fn set_op(doc: &mut Document, h: &Handle<CSet<CCounter>>, rng: &mut Rng8) -> Result<&'static str> {
    let names: Vec<String> = doc.get(h)?.names().map(str::to_owned).collect();
    if names.is_empty() || rng.gen_bool(0.3) {
        h.add(doc, &[])?;
        return Ok("set.add");
    }
    let name = names.choose(rng).expect("non-empty");
    if rng.gen_bool(0.25) {
        h.delete(doc, name)?;
        Ok("set.delete")
    } else {
        counter_op(doc, &h.child(name), rng)?;
        Ok("set.child")
    }
}

/// List op; `child` performs an op on an element.
pub fn list_op<C: Collab>(
    doc: &mut Document,
    h: &Handle<CList<C>>,
    rng: &mut Rng8,
    args: impl Fn(&mut Rng8) -> Vec<u8>,
    child: impl Fn(&mut Document, &Handle<C>, &mut Rng8) -> Result<&'static str>,
) -> Result<&'static str> {
    let list = doc.get(h)?;
    let len = list.len();
    let archived: Vec<String> = list.entry_names().filter(|n| list.is_archived(n)).map(str::to_owned).collect();
    let roll = rng.gen_range(0..100);
    if len == 0 || roll < 20 {
        if !archived.is_empty() && roll < 4 {
            h.restore(doc, archived.choose(rng).expect("non-empty"))?;
            return Ok("list.restore");
        }
        let a = args(rng);
        h.insert(doc, rng.gen_range(0..=len), &a)?;
        return Ok("list.insert");
    }
    match roll {
        20..=27 => {
            h.delete(doc, rng.gen_range(0..len))?;
            Ok("list.delete")
        }
        28..=39 => {
            h.move_entry(doc, rng.gen_range(0..len), rng.gen_range(0..=len))?;
            Ok("list.move")
        }
        40..=47 => {
            h.archive(doc, rng.gen_range(0..len))?;
            Ok("list.archive")
        }
        _ => {
            let e = h.at(doc, rng.gen_range(0..len))?;
            child(doc, &e, rng)
        }
    }
}

pub fn ingredient_op(doc: &mut Document, h: &Handle<CIngredient>, rng: &mut Rng8) -> Result<&'static str> {
    match rng.gen_range(0..3) {
        0 => text_op(doc, &h.text(), rng).map(|_| "ingredient.text"),
        1 => scale_num_op(doc, &h.amount(), rng).map(|_| "ingredient.amount"),
        _ => {
            h.units().set(doc, *Unit::ALL.choose(rng).expect("non-empty"))?;
            Ok("ingredient.units")
        }
    }
}

pub fn ingredient_args(rng: &mut Rng8) -> Vec<u8> {
    CIngredient::args(*[100.0, 200.0, 250.0].choose(rng).expect("non-empty"))
}

pub fn recipe_op(doc: &mut Document, h: &Handle<CRecipe>, rng: &mut Rng8) -> Result<&'static str> {
    match rng.gen_range(0..20) {
        0..=1 => {
            let title = ["Bread", "Porridge", "Cake", "Soup"].choose(rng).expect("non-empty").to_string();
            h.title().set(doc, title)?;
            Ok("recipe.title")
        }
        2..=4 => text_op(doc, &h.instructions(), rng).map(|_| "recipe.instrs"),
        5 => {
            h.scale_recipe(doc, *[0.5, 2.0].choose(rng).expect("non-empty"))?;
            Ok("recipe.scale")
        }
        _ => list_op(doc, &h.ingredients(), rng, ingredient_args, ingredient_op),
    }
}

pub type Nested = CList<CList<CCounter>>;

pub fn new_nested(init: &Init) -> Nested {
    CList::new(init, |init, _| Ok(CList::new(init, |init, _| Ok(CCounter::new(init)))))
}

pub fn nested_op(doc: &mut Document, h: &Handle<Nested>, rng: &mut Rng8) -> Result<&'static str> {
    list_op(doc, h, rng, |_| Vec::new(), |doc, inner, rng| list_op(doc, inner, rng, |_| Vec::new(), counter_op))
}

/// The components every fuzzed replica hosts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Recipe,
    Counter,
    Var,
    Set,
    Nested,
    Values,
    Order,
}

impl Target {
    pub const ALL: [Target; 7] =
        [Target::Recipe, Target::Counter, Target::Var, Target::Set, Target::Nested, Target::Values, Target::Order];
}

/// Handles into a fuzz document.
#[derive(Clone, Debug)]
pub struct FuzzDoc {
    pub recipe: Handle<CRecipe>,
    pub counter: Handle<CCounter>,
    pub var: Handle<CVar<i64>>,
    pub set: Handle<CSet<CCounter>>,
    pub nested: Handle<Nested>,
    pub values: Handle<CValueList<i64>>,
    pub order: Handle<CTotalOrder>,
}

impl FuzzDoc {
    pub fn register(doc: &mut Document) -> Result<FuzzDoc> {
        Ok(FuzzDoc {
            recipe: doc.register("recipe", CRecipe::new)?,
            counter: doc.register("counter", CCounter::new)?,
            var: doc.register("var", |i| CVar::new(i, 0i64))?,
            set: doc.register("set", |i| CSet::new(i, |i, _| Ok(CCounter::new(i))))?,
            nested: doc.register("nested", new_nested)?,
            values: doc.register("values", CValueList::new)?,
            order: doc.register("order", CTotalOrder::new)?,
        })
    }

    pub fn op(&self, target: Target, doc: &mut Document, rng: &mut Rng8) -> Result<&'static str> {
        match target {
            Target::Recipe => recipe_op(doc, &self.recipe, rng),
            Target::Counter => counter_op(doc, &self.counter, rng),
            Target::Var => var_op(doc, &self.var, rng),
            Target::Set => set_op(doc, &self.set, rng),
            Target::Nested => nested_op(doc, &self.nested, rng),
            Target::Values => values_op(doc, &self.values, rng),
            Target::Order => order_op(doc, &self.order, rng),
        }
    }

    /// Cached list views equal views rebuilt from CRDT state.
    pub fn check_views(&self, doc: &Document) -> std::result::Result<(), String> {
        fn check<C: Collab>(doc: &Document, h: &Handle<CList<C>>) -> std::result::Result<(), String> {
            let l = doc.get(h).map_err(|e| e.to_string())?;
            let rebuilt = l.rebuild_view().map_err(|e| e.to_string())?;
            if rebuilt != l.visible_names() {
                return Err(format!("view of {:?} differs from rebuild", h));
            }
            Ok(())
        }
        check(doc, &self.recipe.ingredients())?;
        check(doc, &self.nested)?;
        let outer = doc.get(&self.nested).map_err(|e| e.to_string())?;
        for i in 0..outer.len() {
            check(doc, &self.nested.at(doc, i).map_err(|e| e.to_string())?)?;
        }
        let instrs = doc.get(&self.recipe.instructions()).map_err(|e| e.to_string())?;
        if instrs.rebuilt() != instrs.to_vec() {
            return Err("instructions view differs from rebuild".into());
        }
        Ok(())
    }
}
