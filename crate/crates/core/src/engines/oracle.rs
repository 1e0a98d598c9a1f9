//! Ground-truth avatar vectors for realistic faces, used only for evaluation.

use super::avatar::render_attributes_flat;
use super::face::*;
use super::schema::{AttributeKind, EngineSchema};
use super::vector::{AttrValue, AvatarVector};
use crate::error::{Error, Result};
use crate::image::Label;

fn dist2(a: [u8; 3], b: [u8; 3]) -> i64 {
    (0..3).map(|i| (a[i] as i64 - b[i] as i64).pow(2)).sum()
}

/// Index in `0..card` whose mapped palette entry is nearest to `target`.
fn nearest_color(target: [u8; 3], card: usize, palette: &[[u8; 3]]) -> usize {
    (0..card)
        .min_by_key(|&i| dist2(target, palette[asset_index(i, card, palette.len())]))
        .unwrap_or(0)
}

fn hair_mask(style: usize) -> super::super::image::SegmentationMap {
    let a = FaceAttributes {
        hair_style: style,
        ..FaceAttributes::default()
    };
    render_attributes_flat(&a, 64).1
}

/// Hair index in `0..card` whose silhouette best overlaps `style` (IoU).
fn nearest_hair(style: usize, card: usize) -> usize {
    let target = hair_mask(style);
    let mut best = (0, -1.0);
    for i in 0..card {
        let iou = target.iou(
            &hair_mask(asset_index(i, card, NUM_HAIR_STYLES)),
            Label::Hair,
        );
        if iou > best.1 {
            best = (i, iou);
        }
    }
    best.0
}

/// Maps face attributes to the best-matching engine parameters.
///
/// Works for any schema whose attribute names the renderer understands;
/// the built-in engines are fully covered.
pub fn attribute_oracle(schema: &EngineSchema, a: &FaceAttributes) -> Result<AvatarVector> {
    let mut values = Vec::with_capacity(schema.attributes.len());
    for def in &schema.attributes {
        let card = def.cardinality().unwrap_or(0);
        let v = match (def.name.as_str(), def.kind) {
            ("skin_tone", AttributeKind::Discrete { .. }) => AttrValue::Discrete(Some(
                nearest_color(REAL_SKIN[a.skin_tone], card, &ENGINE_SKIN),
            )),
            ("hair_color", AttributeKind::Discrete { .. }) => AttrValue::Discrete(Some(
                nearest_color(REAL_HAIR[a.hair_color], card, &ENGINE_HAIR),
            )),
            ("hair_type", AttributeKind::Discrete { .. }) => {
                AttrValue::Discrete(Some(nearest_hair(a.hair_style, card)))
            }
            ("glasses", AttributeKind::Discrete { .. }) => {
                AttrValue::Discrete(a.glasses.map(|g| {
                    (0..card)
                        .find(|&i| asset_index(i, card, NUM_GLASSES_STYLES) == g)
                        .unwrap_or(0)
                }))
            }
            ("brow_type", AttributeKind::Discrete { .. }) => AttrValue::Discrete(Some(
                (0..card)
                    .min_by_key(|&i| {
                        (asset_index(i, card, NUM_BROW_STYLES) as i64 - a.brow_style as i64).abs()
                    })
                    .unwrap_or(0),
            )),
            ("head_type", AttributeKind::Discrete { .. }) => AttrValue::Discrete(Some(
                (0..card)
                    .min_by(|&i, &j| {
                        let d = |k: usize| {
                            let (w, l) = HEAD_TYPES[asset_index(k, card, NUM_HEAD_TYPES)];
                            (w - a.head_width).powi(2) + (l - a.head_length).powi(2)
                        };
                        d(i).total_cmp(&d(j))
                    })
                    .unwrap_or(0),
            )),
            ("head_width", AttributeKind::Continuous) => AttrValue::Continuous(a.head_width),
            ("head_length", AttributeKind::Continuous) => AttrValue::Continuous(a.head_length),
            ("eye_size", AttributeKind::Continuous) => AttrValue::Continuous(a.eye_size),
            ("mouth_width", AttributeKind::Continuous) => AttrValue::Continuous(a.mouth_width),
            (other, _) => {
                return Err(Error::InvalidSchema(format!(
                    "attribute oracle has no mapping for {other:?} in schema {}",
                    schema.name
                )))
            }
        };
        // a non-optional attribute cannot be ABSENT; fall back to asset 0
        values.push(match v {
            AttrValue::Discrete(None) if !def.optional => AttrValue::Discrete(Some(0)),
            v => v,
        });
    }
    let out = AvatarVector { values };
    out.validate(schema)?;
    Ok(out)
}
