//! Face description shared by the stylized engines and the realistic renderer.
//!
//! Both renderers rasterize the same analytic layout (head ellipse, eyes,
//! brows, nose, mouth, hair silhouette, glasses frames) so that shared
//! attributes mean the same thing in both domains; they differ only in how
//! layers are shaded.

use rand::Rng;

use crate::image::Label;
use crate::rng;

pub const NUM_SKIN_TONES: usize = 8;
pub const NUM_HAIR_STYLES: usize = 12;
pub const NUM_HAIR_COLORS: usize = 6;
pub const NUM_GLASSES_STYLES: usize = 2;
pub const NUM_BROW_STYLES: usize = 4;
pub const NUM_HEAD_TYPES: usize = 6;

pub const HAIR_STYLE_NAMES: [&str; NUM_HAIR_STYLES] = [
    "bald",
    "buzz",
    "crop",
    "crop-fringe",
    "side-part",
    "bob",
    "bob-fringe",
    "long",
    "long-fringe",
    "afro",
    "bun",
    "mohawk",
];

/// Stylized engine palette, sRGB 0..255.
pub const ENGINE_SKIN: [[u8; 3]; NUM_SKIN_TONES] = [
    [255, 226, 200],
    [246, 206, 170],
    [232, 184, 144],
    [214, 160, 118],
    [190, 134, 94],
    [160, 106, 70],
    [122, 78, 50],
    [86, 56, 38],
];

pub const ENGINE_HAIR: [[u8; 3]; NUM_HAIR_COLORS] = [
    [32, 30, 34],
    [92, 56, 30],
    [160, 108, 62],
    [236, 200, 112],
    [186, 64, 34],
    [184, 184, 192],
];

/// Base albedo of the realistic renderer (less saturated than the engine palette).
pub const REAL_SKIN: [[u8; 3]; NUM_SKIN_TONES] = [
    [242, 220, 202],
    [232, 200, 172],
    [216, 178, 148],
    [198, 156, 124],
    [174, 132, 102],
    [146, 106, 80],
    [112, 80, 60],
    [80, 58, 46],
];

pub const REAL_HAIR: [[u8; 3]; NUM_HAIR_COLORS] = [
    [38, 34, 36],
    [88, 60, 42],
    [148, 108, 74],
    [214, 184, 124],
    [160, 72, 46],
    [176, 174, 176],
];

/// `(head_width, head_length)` of each head-shape asset.
pub const HEAD_TYPES: [(f64, f64); NUM_HEAD_TYPES] = [
    (0.2, 0.2),
    (0.8, 0.2),
    (0.2, 0.8),
    (0.8, 0.8),
    (0.5, 0.5),
    (0.5, 0.95),
];

pub fn rgb(c: [u8; 3]) -> [f64; 3] {
    [
        c[0] as f64 / 255.0,
        c[1] as f64 / 255.0,
        c[2] as f64 / 255.0,
    ]
}

/// Ground-truth semantic attributes of a face.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FaceAttributes {
    pub skin_tone: usize,
    pub hair_style: usize,
    pub hair_color: usize,
    pub glasses: Option<usize>,
    pub brow_style: usize,
    pub head_width: f64,
    pub head_length: f64,
    pub eye_size: f64,
    pub mouth_width: f64,
}

impl FaceAttributes {
    pub fn is_valid(&self) -> bool {
        self.skin_tone < NUM_SKIN_TONES
            && self.hair_style < NUM_HAIR_STYLES
            && self.hair_color < NUM_HAIR_COLORS
            && self.glasses.is_none_or(|g| g < NUM_GLASSES_STYLES)
            && self.brow_style < NUM_BROW_STYLES
            && [
                self.head_width,
                self.head_length,
                self.eye_size,
                self.mouth_width,
            ]
            .iter()
            .all(|x| (0.0..=1.0).contains(x))
    }

    pub fn is_bald(&self) -> bool {
        self.hair_style == 0
    }
}

impl Default for FaceAttributes {
    fn default() -> Self {
        FaceAttributes {
            skin_tone: 0,
            hair_style: 2,
            hair_color: 0,
            glasses: None,
            brow_style: 0,
            head_width: 0.5,
            head_length: 0.5,
            eye_size: 0.5,
            mouth_width: 0.5,
        }
    }
}

/// Uniformly random attributes (glasses present with probability 0.5).
pub fn sample_face_attributes(seed: u64) -> FaceAttributes {
    let mut r = rng::rng(seed);
    FaceAttributes {
        skin_tone: r.random_range(0..NUM_SKIN_TONES),
        hair_style: r.random_range(0..NUM_HAIR_STYLES),
        hair_color: r.random_range(0..NUM_HAIR_COLORS),
        glasses: if r.random_bool(0.5) {
            Some(r.random_range(0..NUM_GLASSES_STYLES))
        } else {
            None
        },
        brow_style: r.random_range(0..NUM_BROW_STYLES),
        head_width: r.random(),
        head_length: r.random(),
        eye_size: r.random(),
        mouth_width: r.random(),
    }
}

/// Drawing layers, in painter's order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Layer {
    Outline = 0,
    Neck,
    Head,
    Nose,
    Mouth,
    Sclera,
    Iris,
    Brow,
    Hair,
    Glasses,
}

pub const NUM_LAYERS: usize = 10;

impl Layer {
    pub const ALL: [Layer; NUM_LAYERS] = [
        Layer::Outline,
        Layer::Neck,
        Layer::Head,
        Layer::Nose,
        Layer::Mouth,
        Layer::Sclera,
        Layer::Iris,
        Layer::Brow,
        Layer::Hair,
        Layer::Glasses,
    ];

    pub fn label(self) -> Label {
        match self {
            Layer::Outline => Label::Background,
            Layer::Neck | Layer::Head => Label::Skin,
            Layer::Nose => Label::Nose,
            Layer::Mouth => Label::Mouth,
            Layer::Sclera | Layer::Iris => Label::Eyes,
            Layer::Brow => Label::Brow,
            Layer::Hair => Label::Hair,
            Layer::Glasses => Label::Glasses,
        }
    }

    #[inline]
    pub fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

/// Resolved geometry in normalized image coordinates (`u` right, `v` down).
#[derive(Clone, Debug)]
pub struct Layout {
    pub cx: f64,
    pub cy: f64,
    pub hw: f64,
    pub hh: f64,
    pub eye_r: f64,
    pub eye_dx: f64,
    pub eye_y: f64,
    pub brow_y: f64,
    pub nose_y: f64,
    pub mouth_y: f64,
    pub mouth_hw: f64,
    pub hair_style: usize,
    pub glasses: Option<usize>,
    pub brow_style: usize,
    /// Outline ring width (0 disables it).
    pub outline: f64,
}

impl Layout {
    pub fn new(a: &FaceAttributes, offset: (f64, f64), outline: f64) -> Self {
        let hw = 0.20 + 0.08 * a.head_width;
        let hh = 0.25 + 0.08 * a.head_length;
        let cy = 0.53 + offset.1;
        let eye_r = 0.028 + 0.022 * a.eye_size;
        let eye_y = cy - 0.22 * hh;
        Layout {
            cx: 0.5 + offset.0,
            cy,
            hw,
            hh,
            eye_r,
            eye_dx: 0.42 * hw,
            eye_y,
            brow_y: eye_y - eye_r - 0.02,
            nose_y: cy + 0.12 * hh,
            mouth_y: cy + 0.52 * hh,
            mouth_hw: 0.05 + 0.06 * a.mouth_width,
            hair_style: a.hair_style,
            glasses: a.glasses,
            brow_style: a.brow_style,
            outline,
        }
    }

    #[inline]
    fn ell(&self, dx: f64, dy: f64, ex: f64, ey: f64) -> bool {
        let a = dx / (self.hw + ex);
        let b = dy / (self.hh + ey);
        a * a + b * b <= 1.0
    }

    fn hair(&self, dx: f64, dy: f64) -> bool {
        let hh = self.hh;
        let face = self.ell(dx, dy, 0.0, 0.0);
        let cap = |line: f64| self.ell(dx, dy, 0.03, 0.035) && dy < line * hh;
        let framed = |line: f64, ex: f64, ey: f64, bottom: f64| {
            self.ell(dx, dy, ex, ey) && dy < bottom * hh && !(face && dy > line * hh)
        };
        let long = |line: f64| {
            let upper = self.ell(dx, dy, 0.055, 0.05) && dy < 0.0;
            let hang = dx.abs() < self.hw + 0.055 && (0.0..hh + 0.10).contains(&dy);
            let neck = dx.abs() < 0.45 * self.hw && dy > 0.5 * hh;
            (upper || hang) && !(face && dy > line * hh) && !neck
        };
        match self.hair_style {
            0 => false,
            1 => self.ell(dx, dy, 0.012, 0.015) && dy < -0.62 * hh,
            2 => cap(-0.58),
            3 => cap(-0.48),
            4 => self.ell(dx, dy, 0.03, 0.035) && dy < (-0.58 + 0.25 * dx / self.hw) * hh,
            5 => framed(-0.58, 0.055, 0.05, 0.25),
            6 => framed(-0.48, 0.055, 0.05, 0.25),
            7 => long(-0.58),
            8 => long(-0.48),
            9 => framed(-0.55, 0.10, 0.09, 0.15),
            10 => {
                let bx = dx;
                let by = dy + hh + 0.045;
                cap(-0.58) || bx * bx + by * by <= 0.055 * 0.055
            }
            _ => self.ell(dx, dy, 0.03, 0.06) && dy < -0.58 * hh && dx.abs() < 0.045,
        }
    }

    fn glasses(&self, u: f64, v: f64, style: usize) -> bool {
        let t = 0.011;
        let r = self.eye_r * 1.4 + 0.02;
        let ly = self.eye_y;
        let mut hit = false;
        for side in [-1.0, 1.0] {
            let lx = self.cx + side * self.eye_dx;
            let (dx, dy) = (u - lx, v - ly);
            hit |= if style == 0 {
                ((dx * dx + dy * dy).sqrt() - r).abs() < t
            } else {
                let (a, b) = (r * 1.1, r * 0.8);
                let m = (dx.abs() / a).max(dy.abs() / b);
                (m - 1.0).abs() * b.min(a) < t
            };
        }
        let inner = self.eye_dx - r;
        let bridge = (v - ly).abs() < 0.008 && (u - self.cx).abs() < inner + t;
        let outer = self.eye_dx + r;
        let ax = (u - self.cx).abs();
        let arm = (v - ly + 0.004).abs() < 0.007 && ax > outer && ax < self.hw + 0.004;
        hit || bridge || arm
    }

    fn brow(&self, u: f64, v: f64) -> bool {
        let half = 0.045;
        let mut hit = false;
        for side in [-1.0, 1.0] {
            let bx = self.cx + side * self.eye_dx;
            let t = (u - bx) / half;
            if t.abs() > 1.0 {
                continue;
            }
            let (thick, lift) = match self.brow_style {
                0 => (0.008, 0.0),
                1 => (0.014, 0.0),
                2 => (0.010, 0.018 * (1.0 - t * t)),
                _ => (0.010, 0.014 * (t * side + 1.0) * 0.5),
            };
            hit |= (v - (self.brow_y - lift)).abs() < thick;
        }
        hit
    }

    /// Bitmask of layers covering point `(u, v)`.
    pub fn layers_at(&self, u: f64, v: f64) -> u16 {
        let (dx, dy) = (u - self.cx, v - self.cy);
        let mut m = 0u16;
        let head = self.ell(dx, dy, 0.0, 0.0);
        if head {
            m |= Layer::Head.bit();
        } else if self.outline > 0.0 && self.ell(dx, dy, self.outline, self.outline) {
            m |= Layer::Outline.bit();
        }
        if dx.abs() < 0.45 * self.hw && dy > 0.5 * self.hh {
            m |= Layer::Neck.bit();
        }
        if head {
            let (nx, ny) = (dx / 0.022, (v - self.nose_y) / 0.035);
            if nx * nx + ny * ny <= 1.0 {
                m |= Layer::Nose.bit();
            }
            let (mx, my) = (dx / self.mouth_hw, (v - self.mouth_y) / 0.022);
            if mx * mx + my * my <= 1.0 {
                m |= Layer::Mouth.bit();
            }
            for side in [-1.0, 1.0] {
                let ex = u - (self.cx + side * self.eye_dx);
                let ey = v - self.eye_y;
                let (sx, sy) = (ex / (self.eye_r * 1.4), ey / self.eye_r);
                if sx * sx + sy * sy <= 1.0 {
                    m |= Layer::Sclera.bit();
                    let ir = self.eye_r * 0.65;
                    if ex * ex + ey * ey <= ir * ir {
                        m |= Layer::Iris.bit();
                    }
                }
            }
            if self.brow(u, v) {
                m |= Layer::Brow.bit();
            }
        }
        if self.hair(dx, dy) {
            m |= Layer::Hair.bit();
        }
        if let Some(style) = self.glasses {
            if self.glasses(u, v, style) {
                m |= Layer::Glasses.bit();
            }
        }
        m
    }
}

/// Topmost layer in a mask, if any.
pub fn top_layer(mask: u16) -> Option<Layer> {
    if mask == 0 {
        None
    } else {
        Layer::ALL.get(15 - mask.leading_zeros() as usize).copied()
    }
}

/// Maps an attribute index to one of `assets` choices, spreading a smaller
/// cardinality evenly over the asset list.
pub fn asset_index(index: usize, cardinality: usize, assets: usize) -> usize {
    if cardinality == assets {
        index
    } else if cardinality < assets {
        if cardinality <= 1 {
            0
        } else {
            ((index as f64) * (assets - 1) as f64 / (cardinality - 1) as f64).round() as usize
        }
    } else {
        index % assets
    }
}
