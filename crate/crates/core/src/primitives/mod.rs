//! Built-in leaf components.

mod counter;
mod cvar;
mod local_list;
mod position;
mod text;
mod total_order;
mod value;

pub use counter::CCounter;
pub use cvar::{CVar, LwwTag};
pub use local_list::LocalList;
pub use position::{Anchor, Creation, PosKey, Position, PositionTree, Side, WaypointId, WaypointRecord};
pub use text::{CText, CValueList};
pub use total_order::CTotalOrder;
pub use value::Value;
