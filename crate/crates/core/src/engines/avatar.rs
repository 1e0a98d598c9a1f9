//! Flat-shaded avatar engine: solid palette colors, hard edges, a dark head
//! outline. Callers see only vector in, image out.

use super::face::*;
use super::schema::EngineSchema;
use super::vector::AvatarVector;
use crate::error::Result;
use crate::image::{ImageTensor, Label, SegmentationMap};

pub const ENGINE_BACKGROUND: [u8; 3] = [200, 214, 230];
const OUTLINE: [u8; 3] = [40, 34, 38];
const MOUTH: [u8; 3] = [206, 82, 92];
const SCLERA: [u8; 3] = [250, 250, 250];
const IRIS: [u8; 3] = [58, 42, 36];
const BROW: [u8; 3] = [60, 44, 38];
const GLASSES: [u8; 3] = [24, 24, 28];
const OUTLINE_WIDTH: f64 = 0.018;

/// Interprets a validated vector as renderable face attributes.
pub fn resolve(schema: &EngineSchema, p: &AvatarVector) -> FaceAttributes {
    let mut a = FaceAttributes::default();
    let mut head_type = None;
    for (def, v) in schema.attributes.iter().zip(&p.values) {
        use super::vector::AttrValue::*;
        let card = def.cardinality().unwrap_or(0);
        match (def.name.as_str(), *v) {
            ("skin_tone", Discrete(Some(k))) => a.skin_tone = asset_index(k, card, NUM_SKIN_TONES),
            ("hair_type", Discrete(Some(k))) => {
                a.hair_style = asset_index(k, card, NUM_HAIR_STYLES)
            }
            ("hair_color", Discrete(Some(k))) => {
                a.hair_color = asset_index(k, card, NUM_HAIR_COLORS)
            }
            ("glasses", Discrete(k)) => {
                a.glasses = k.map(|k| asset_index(k, card, NUM_GLASSES_STYLES))
            }
            ("brow_type", Discrete(Some(k))) => {
                a.brow_style = asset_index(k, card, NUM_BROW_STYLES)
            }
            ("head_type", Discrete(Some(k))) => {
                head_type = Some(asset_index(k, card, NUM_HEAD_TYPES))
            }
            ("head_width", Continuous(x)) => a.head_width = x,
            ("head_length", Continuous(x)) => a.head_length = x,
            ("eye_size", Continuous(x)) => a.eye_size = x,
            ("mouth_width", Continuous(x)) => a.mouth_width = x,
            _ => {}
        }
    }
    if let Some(t) = head_type {
        (a.head_width, a.head_length) = HEAD_TYPES[t];
    }
    a
}

fn scaled(c: [u8; 3], f: f64) -> [u8; 3] {
    [
        (c[0] as f64 * f).round() as u8,
        (c[1] as f64 * f).round() as u8,
        (c[2] as f64 * f).round() as u8,
    ]
}

/// Color of `layer` in the flat engine style.
pub fn engine_color(a: &FaceAttributes, layer: Option<Layer>) -> [u8; 3] {
    match layer {
        None => ENGINE_BACKGROUND,
        Some(Layer::Outline) => OUTLINE,
        Some(Layer::Neck | Layer::Head) => ENGINE_SKIN[a.skin_tone],
        Some(Layer::Nose) => scaled(ENGINE_SKIN[a.skin_tone], 0.86),
        Some(Layer::Mouth) => MOUTH,
        Some(Layer::Sclera) => SCLERA,
        Some(Layer::Iris) => IRIS,
        Some(Layer::Brow) => BROW,
        Some(Layer::Hair) => ENGINE_HAIR[a.hair_color],
        Some(Layer::Glasses) => GLASSES,
    }
}

/// Renders face attributes in the engine style, with the engine's debug mask.
pub fn render_attributes_flat(a: &FaceAttributes, res: usize) -> (ImageTensor, SegmentationMap) {
    let layout = Layout::new(a, (0.0, 0.0), OUTLINE_WIDTH);
    let mut img = ImageTensor::filled(res, res, [0.0; 3]);
    let mut seg = SegmentationMap::filled(res, res, Label::Background);
    for y in 0..res {
        let v = (y as f64 + 0.5) / res as f64;
        for x in 0..res {
            let u = (x as f64 + 0.5) / res as f64;
            let top = top_layer(layout.layers_at(u, v));
            let c = engine_color(a, top);
            for (ch, &val) in c.iter().enumerate() {
                img.set(ch, y, x, val as f32 / 255.0);
            }
            seg.set(y, x, top.map(|l| l.label()).unwrap_or(Label::Background));
        }
    }
    (img, seg)
}

/// Renders a vector, returning the image and the engine's debug segmentation.
pub fn render_avatar_with_mask(
    schema: &EngineSchema,
    p: &AvatarVector,
    res: usize,
) -> Result<(ImageTensor, SegmentationMap)> {
    p.validate(schema)?;
    Ok(render_attributes_flat(&resolve(schema, p), res))
}

pub fn render_avatar(schema: &EngineSchema, p: &AvatarVector, res: usize) -> Result<ImageTensor> {
    render_avatar_with_mask(schema, p, res).map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::super::vector::{sample_vector, AttrValue};
    use super::*;
    use crate::image::quantize;
    use std::collections::HashSet;

    #[test]
    fn deterministic_bytes() {
        let s = EngineSchema::engine_a();
        for seed in 0..5 {
            let p = sample_vector(&s, seed);
            let a = render_avatar(&s, &p, 64).unwrap();
            let b = render_avatar(&s, &p, 64).unwrap();
            assert_eq!(a.to_rgb8(), b.to_rgb8());
        }
    }

    #[test]
    fn skin_mask_mean_is_palette_entry() {
        let s = EngineSchema::engine_a();
        for k in 0..8 {
            let mut p = sample_vector(&s, 40 + k as u64);
            p.values[0] = AttrValue::Discrete(Some(k));
            let (img, seg) = render_avatar_with_mask(&s, &p, 64).unwrap();
            let mut sum = [0.0f64; 3];
            let mut n = 0;
            for y in 0..64 {
                for x in 0..64 {
                    if seg.get(y, x) == Label::Skin {
                        let px = img.pixel(y, x);
                        for c in 0..3 {
                            sum[c] += px[c] as f64;
                        }
                        n += 1;
                    }
                }
            }
            assert!(n > 0);
            for c in 0..3 {
                let mean = sum[c] / n as f64;
                assert!(
                    (mean - ENGINE_SKIN[k][c] as f64 / 255.0).abs() <= 1.0 / 255.0,
                    "tone {k} ch {c}"
                );
            }
        }
    }

    #[test]
    fn glasses_change_is_confined_to_their_box() {
        let s = EngineSchema::engine_a();
        for seed in 0..10 {
            let mut p = sample_vector(&s, seed);
            p.values[3] = AttrValue::Discrete(None);
            let (without, _) = render_avatar_with_mask(&s, &p, 64).unwrap();
            p.values[3] = AttrValue::Discrete(Some(0));
            let (with, seg) = render_avatar_with_mask(&s, &p, 64).unwrap();
            let (mut y0, mut y1, mut x0, mut x1) = (64, 0, 64, 0);
            for y in 0..64 {
                for x in 0..64 {
                    if seg.get(y, x) == Label::Glasses {
                        (y0, y1, x0, x1) = (y0.min(y), y1.max(y), x0.min(x), x1.max(x));
                    }
                }
            }
            assert!(y0 <= y1, "glasses drawn");
            let mut changed = 0;
            for y in 0..64 {
                for x in 0..64 {
                    if with.pixel(y, x) != without.pixel(y, x) {
                        changed += 1;
                        assert!(
                            (y0..=y1).contains(&y) && (x0..=x1).contains(&x),
                            "({y},{x}) outside box"
                        );
                    }
                }
            }
            assert!(changed > 0);
        }
    }

    #[test]
    fn flat_palette_color_count() {
        let s = EngineSchema::engine_a();
        for seed in 0..50 {
            let img = render_avatar(&s, &sample_vector(&s, seed), 64).unwrap();
            let rgb = img.to_rgb8();
            let colors: HashSet<&[u8]> = rgb.chunks(3).collect();
            assert!(colors.len() <= 64, "{} colors", colors.len());
            assert!(colors.len() >= 4);
        }
        assert_eq!(
            quantize(ENGINE_SKIN[3][0] as f32 / 255.0),
            ENGINE_SKIN[3][0]
        );
    }

    #[test]
    fn invalid_vector_rejected() {
        let s = EngineSchema::engine_b();
        let mut p = sample_vector(&s, 0);
        p.values[2] = AttrValue::Discrete(Some(99));
        assert!(render_avatar(&s, &p, 64).is_err());
    }

    #[test]
    fn engine_b_head_types_change_shape() {
        let s = EngineSchema::engine_b();
        let mut p = sample_vector(&s, 3);
        let mut areas = Vec::new();
        for t in 0..4 {
            p.values[0] = AttrValue::Discrete(Some(t));
            let (_, seg) = render_avatar_with_mask(&s, &p, 64).unwrap();
            areas.push(seg.count(Label::Skin) + seg.count(Label::Hair));
        }
        let distinct: HashSet<_> = areas.iter().collect();
        assert!(distinct.len() >= 3, "{areas:?}");
    }
}
