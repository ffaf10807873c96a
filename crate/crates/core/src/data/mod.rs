//! Record parsing, feature encoding, splitting, windowing, and the
//! synthetic traffic generator.

pub mod record;
pub mod schema;
pub mod split;
pub mod synth;
pub mod window;

pub use record::{classify_label, parse_records, RawRecord, TrafficClass};
pub use schema::FeatureSchema;
pub use split::{stratified_split, SplitIndices};
pub use synth::{generate as generate_synthetic, SynthConfig};
pub use window::{build_windows, window_indices, WindowBatch, WindowSource, WindowedDataset};
