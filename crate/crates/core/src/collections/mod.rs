//! Dynamic composition: children created and deleted at runtime.

mod list;
mod set;

pub use list::{CList, CListEntry};
pub use set::{CSet, Factory, SetEvent};
