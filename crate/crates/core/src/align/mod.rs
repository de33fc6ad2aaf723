//! DTW alignment and account templates.

mod dtw;
mod template;

pub use dtw::{dtw_align, dtw_distance, AlignedSignal, DtwConfig};
pub use template::{build_template, update_template, Template, SIGMA_FLOOR};
