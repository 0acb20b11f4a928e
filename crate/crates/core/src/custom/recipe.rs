use serde_json::Value as Json;

use crate::collab::{CObject, Collab, Init, MergeContext, UpdateMeta};
use crate::collections::CList;
use crate::document::{Document, Handle};
use crate::encoding::{Reader, Writer};
use crate::error::{Error, Result};
use crate::primitives::{CText, CVar, Value};
use crate::runtime::SaveNode;

use super::scale_num::CScaleNum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Unit {
    Grams,
    Milliliters,
    Cups,
    Pieces,
}

impl Unit {
    pub const ALL: [Unit; 4] = [Unit::Grams, Unit::Milliliters, Unit::Cups, Unit::Pieces];

    pub fn as_str(self) -> &'static str {
        match self {
            Unit::Grams => "GRAMS",
            Unit::Milliliters => "MILLILITERS",
            Unit::Cups => "CUPS",
            Unit::Pieces => "PIECES",
        }
    }
}

impl Value for Unit {
    fn encode(&self, w: &mut Writer) {
        w.u8(*self as u8);
    }

    fn decode(r: &mut Reader<'_>) -> Result<Self> {
        let b = r.u8()?;
        Unit::ALL.get(b as usize).copied().ok_or_else(|| Error::decode(format!("bad unit {b}")))
    }

    fn to_json(&self) -> Json {
        Json::String(self.as_str().to_owned())
    }
}

/// Forwards the component contract to an inner [`CObject`].
macro_rules! object_collab {
    ($t:ty) => {
        impl Collab for $t {
            fn receive(&mut self, path: &[String], payload: &[u8], meta: &UpdateMeta<'_>) -> Result<()> {
                self.obj.receive(path, payload, meta)
            }

            fn save(&self) -> SaveNode {
                self.obj.save()
            }

            fn load(&mut self, save: &SaveNode, cx: &MergeContext<'_>) -> Result<()> {
                self.obj.load(save, cx)
            }

            fn observe(&self) -> Json {
                self.obj.observe()
            }

            fn check_route(&self, path: &[String]) -> Result<()> {
                self.obj.check_route(path)
            }

            fn child(&self, name: &str) -> Option<&dyn Collab> {
                self.obj.child(name)
            }
        }
    };
}

/// One recipe ingredient: free text, a scalable amount, and units.
pub struct CIngredient {
    obj: CObject,
}

impl CIngredient {
    pub fn new(init: &Init, amount: f64) -> Result<Self> {
        let obj = CObject::builder()
            .register("text", CText::new(init))?
            .register("amount", CScaleNum::new(init, amount))?
            .register("units", CVar::new(init, Unit::Grams))?
            .build();
        Ok(CIngredient { obj })
    }

    /// Creation arguments: the initial amount.
    pub fn args(amount: f64) -> Vec<u8> {
        let mut w = Writer::new();
        w.f64(amount);
        w.finish()
    }

    pub fn from_args(init: &Init, args: &[u8]) -> Result<Self> {
        let mut r = Reader::new(args);
        let amount = r.f64()?;
        r.expect_end()?;
        if !amount.is_finite() {
            return Err(Error::decode("non-finite initial amount"));
        }
        Self::new(init, amount)
    }

    pub fn text(&self) -> &CText {
        self.obj.get("text").expect("registered")
    }

    pub fn amount(&self) -> &CScaleNum {
        self.obj.get("amount").expect("registered")
    }

    pub fn units(&self) -> Unit {
        *self.obj.get::<CVar<Unit>>("units").expect("registered").get()
    }
}

object_collab!(CIngredient);

impl Handle<CIngredient> {
    pub fn text(&self) -> Handle<CText> {
        self.child("text")
    }

    pub fn amount(&self) -> Handle<CScaleNum> {
        self.child("amount")
    }

    pub fn units(&self) -> Handle<CVar<Unit>> {
        self.child("units")
    }
}

/// A recipe: title, ingredient list, and instructions.
pub struct CRecipe {
    obj: CObject,
}

impl CRecipe {
    pub fn new(init: &Init) -> Self {
        let obj = CObject::builder()
            .register("title", CVar::new(init, String::new()))
            .and_then(|b| b.register("ingrs", CList::new(init, CIngredient::from_args)))
            .and_then(|b| b.register("instrs", CText::new(init)))
            .expect("fixed, distinct names")
            .build();
        CRecipe { obj }
    }

    pub fn title(&self) -> &str {
        self.obj.get::<CVar<String>>("title").expect("registered").get()
    }

    pub fn ingredients(&self) -> &CList<CIngredient> {
        self.obj.get("ingrs").expect("registered")
    }

    pub fn instructions(&self) -> &CText {
        self.obj.get("instrs").expect("registered")
    }
}

object_collab!(CRecipe);

impl Handle<CRecipe> {
    pub fn title(&self) -> Handle<CVar<String>> {
        self.child("title")
    }

    pub fn ingredients(&self) -> Handle<CList<CIngredient>> {
        self.child("ingrs")
    }

    pub fn instructions(&self) -> Handle<CText> {
        self.child("instrs")
    }

    /// Inserts an ingredient with the given text and amount.
    pub fn add_ingredient(
        &self,
        doc: &mut Document,
        index: usize,
        text: &str,
        amount: f64,
    ) -> Result<Handle<CIngredient>> {
        let ing = self.ingredients().insert(doc, index, &CIngredient::args(amount))?;
        if !text.is_empty() {
            ing.text().insert_str(doc, 0, text)?;
        }
        Ok(ing)
    }

    /// Scales every ingredient currently visible here. Ingredients inserted
    /// concurrently elsewhere are not scaled.
    pub fn scale_recipe(&self, doc: &mut Document, factor: f64) -> Result<()> {
        CScaleNum::scale_payload(factor)?;
        let list = self.ingredients();
        let n = doc.get(&list)?.len();
        for i in 0..n {
            list.at(doc, i)?.amount().scale(doc, factor)?;
        }
        Ok(())
    }
}
