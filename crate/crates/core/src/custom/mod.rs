//! Application-specific components built on the kernel.

mod recipe;
mod scale_num;

pub use recipe::{CIngredient, CRecipe, Unit};
pub use scale_num::CScaleNum;
