//! Procedural avatar engines and the realistic face renderer.

mod avatar;
mod face;
mod oracle;
mod realistic;
mod schema;
mod vector;

pub use avatar::{
    engine_color, render_attributes_flat, render_avatar, render_avatar_with_mask, resolve,
    ENGINE_BACKGROUND,
};
pub use face::{
    asset_index, sample_face_attributes, FaceAttributes, Layer, Layout, ENGINE_HAIR, ENGINE_SKIN,
    HAIR_STYLE_NAMES, HEAD_TYPES, NUM_BROW_STYLES, NUM_GLASSES_STYLES, NUM_HAIR_COLORS,
    NUM_HAIR_STYLES, NUM_SKIN_TONES, REAL_HAIR, REAL_SKIN,
};
pub use oracle::attribute_oracle;
pub use realistic::render_realistic;
pub use schema::{AttributeDef, AttributeKind, EngineSchema};
pub use vector::{sample_vector, AttrValue, AvatarVector};
