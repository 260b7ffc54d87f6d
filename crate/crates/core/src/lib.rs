//! Global field-of-view alignment of multi-modal 3D volumes.
//!
//! A dense patch-correspondence field is computed with randomized PatchMatch
//! under an edge-alignment patch distance, then reduced to one translation by
//! taking per-axis histogram modes of the shifts inside a region of interest.

pub mod aggregate;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod kv;
pub mod mask;
pub mod metric;
pub mod patchmatch;
pub mod phantom;
pub mod volume;

pub use aggregate::{estimate_detailed, estimate_global_shift, Estimate, GlobalShift};
pub use error::{Error, Result};
pub use mask::{BinaryMask, SearchBox};
pub use metric::{MetricKind, PatchSpec};
pub use patchmatch::{PMParams, ShiftField};
pub use phantom::{generate, Phantom, PhantomSpec};
pub use volume::{Grid, Volume};
