//! Network components for AU detection with self-adjusting graph correlation
//! learning over landmark-anchored regions.

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod head;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod msfl;
pub mod params;
pub mod sacl;
pub mod template;
pub mod trace;

pub use config::{DatasetKind, GcnType, Interpolation, Metric, ModelConfig, RoiSource};
pub use error::{CoreError, Result};
pub use losses::LossConfig;
pub use model::{ForwardOutput, Network};
pub use params::{Ctx, ParamKind, ParamStore};
pub use trace::GraphTrace;
