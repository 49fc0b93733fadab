//! Tensor files, dataset manifests, and the blind-detection settings built
//! from them.

mod manifest;
mod tensor;

pub use manifest::{
    build_bad_setting, one_class_split, BadSetting, DatasetManifest, ImageRecord, Label, Split,
    MANIFEST_SCHEMA_VERSION,
};
pub use tensor::{
    decode_tensor, encode_tensor, read_f32, read_mask, read_tensor, write_mask, write_tensor,
    DType, Mask, Tensor, TensorData, MAGIC, VERSION,
};
