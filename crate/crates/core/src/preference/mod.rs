//! Preference sources and storage.

mod objective;
mod store;

pub use objective::{
    bt_probability, deflate_size, label_from_objective, quantize, quantize_image, Objective,
    ObjectiveKind, TemplateBank,
};
pub use store::{
    decode_pair, encode_pair, now_millis, LabelSource, PrefStore, PreferenceRecord,
};
