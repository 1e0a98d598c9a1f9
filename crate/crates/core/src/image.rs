//! Image and segmentation containers plus 8-bit PNG persistence.
//!
//! Segmentation PNGs are single-channel 8-bit with `value = label * 32`
//! (background 0, skin 32, hair 64, eyes 96, mouth 128, nose 160,
//! brow 192, glasses 224).

use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

pub const NUM_LABELS: usize = 8;

/// Semantic part label. The discriminant is the part-block index of a latent code.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Skin = 1,
    Hair = 2,
    Eyes = 3,
    Mouth = 4,
    Nose = 5,
    Brow = 6,
    Glasses = 7,
}

impl Label {
    pub const ALL: [Label; NUM_LABELS] = [
        Label::Background,
        Label::Skin,
        Label::Hair,
        Label::Eyes,
        Label::Mouth,
        Label::Nose,
        Label::Brow,
        Label::Glasses,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Label::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Background => "background",
            Label::Skin => "skin",
            Label::Hair => "hair",
            Label::Eyes => "eyes",
            Label::Mouth => "mouth",
            Label::Nose => "nose",
            Label::Brow => "brow",
            Label::Glasses => "glasses",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        Label::ALL.iter().copied().find(|l| l.name() == s)
    }
}

/// Planar RGB image (`[3, H, W]`) with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), 3 * height * width);
        ImageTensor {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let mut data = vec![0.0; 3 * height * width];
        for (c, v) in rgb.iter().enumerate() {
            data[c * height * width..(c + 1) * height * width].fill(*v);
        }
        ImageTensor {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn is_valid(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// 8-bit interleaved RGB, the persisted representation.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let hw = self.height * self.width;
        let mut out = Vec::with_capacity(3 * hw);
        for i in 0..hw {
            for c in 0..3 {
                out.push(quantize(self.data[c * hw + i]));
            }
        }
        out
    }

    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Self {
        let hw = height * width;
        assert_eq!(rgb.len(), 3 * hw);
        let mut data = vec![0.0; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                data[c * hw + i] = rgb[3 * i + c] as f32 / 255.0;
            }
        }
        ImageTensor {
            height,
            width,
            data,
        }
    }

    /// Round-trips through 8-bit storage.
    pub fn quantized(&self) -> ImageTensor {
        ImageTensor::from_rgb8(self.height, self.width, &self.to_rgb8())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::new(
            &[1, 3, self.height, self.width],
            self.data.iter().map(|&v| lit(v as f64)).collect(),
        )
    }

    /// Splits an `[N, 3, H, W]` tensor into images, clamping to `[0, 1]`.
    pub fn batch_from_tensor<T: Scalar>(t: &Tensor<T>) -> Vec<ImageTensor> {
        let s = t.shape();
        assert!(s.len() == 4 && s[1] == 3, "expected [N,3,H,W], got {s:?}");
        let per = 3 * s[2] * s[3];
        t.data()
            .chunks(per)
            .map(|c| {
                ImageTensor::new(
                    s[2],
                    s[3],
                    c.iter()
                        .map(|v| (v.to_f64().unwrap_or(0.0) as f32).clamp(0.0, 1.0))
                        .collect(),
                )
            })
            .collect()
    }

    pub fn batch_to_tensor<T: Scalar>(images: &[&ImageTensor]) -> Tensor<T> {
        assert!(!images.is_empty());
        let (h, w) = (images[0].height, images[0].width);
        let mut data = Vec::with_capacity(images.len() * 3 * h * w);
        for im in images {
            assert_eq!((im.height, im.width), (h, w), "mixed image sizes in batch");
            data.extend(im.data.iter().map(|&v| lit::<T>(v as f64)));
        }
        Tensor::new(&[images.len(), 3, h, w], data)
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn mse(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            / self.data.len() as f64
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(
            path,
            self.width,
            self.height,
            png::ColorType::Rgb,
            &self.to_rgb8(),
        )
    }

    pub fn load_png(path: &Path) -> Result<ImageTensor> {
        let (w, h, ct, bytes) = read_png(path)?;
        if ct != png::ColorType::Rgb {
            return Err(Error::Format(format!(
                "{}: expected RGB PNG",
                path.display()
            )));
        }
        Ok(ImageTensor::from_rgb8(h, w, &bytes))
    }

    /// Box-filter resize (integer factors) or nearest-neighbour otherwise.
    pub fn resize(&self, height: usize, width: usize) -> ImageTensor {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = ImageTensor::filled(height, width, [0.0; 3]);
        if self.height % height == 0 && self.width % width == 0 {
            let (fy, fx) = (self.height / height, self.width / width);
            let inv = 1.0 / (fy * fx) as f32;
            for c in 0..3 {
                for y in 0..height {
                    for x in 0..width {
                        let mut s = 0.0;
                        for dy in 0..fy {
                            for dx in 0..fx {
                                s += self.get(c, y * fy + dy, x * fx + dx);
                            }
                        }
                        out.set(c, y, x, s * inv);
                    }
                }
            }
        } else {
            for c in 0..3 {
                for y in 0..height {
                    for x in 0..width {
                        let sy = (y * self.height) / height;
                        let sx = (x * self.width) / width;
                        out.set(c, y, x, self.get(c, sy, sx));
                    }
                }
            }
        }
        out
    }
}

/// Compact 8-bit interleaved RGB image for large in-memory datasets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Rgb8Image {
    pub fn from_image(img: &ImageTensor) -> Self {
        Rgb8Image {
            height: img.height,
            width: img.width,
            data: img.to_rgb8(),
        }
    }

    pub fn to_image(&self) -> ImageTensor {
        ImageTensor::from_rgb8(self.height, self.width, &self.data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(
            path,
            self.width,
            self.height,
            png::ColorType::Rgb,
            &self.data,
        )
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let (w, h, ct, data) = read_png(path)?;
        if ct != png::ColorType::Rgb {
            return Err(Error::Format(format!(
                "{}: expected RGB PNG",
                path.display()
            )));
        }
        Ok(Rgb8Image {
            height: h,
            width: w,
            data,
        })
    }
}

#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-pixel semantic labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    labels: Vec<Label>,
}

impl SegmentationMap {
    pub fn new(height: usize, width: usize, labels: Vec<Label>) -> Self {
        assert_eq!(labels.len(), height * width);
        SegmentationMap {
            height,
            width,
            labels,
        }
    }

    pub fn filled(height: usize, width: usize, l: Label) -> Self {
        SegmentationMap {
            height,
            width,
            labels: vec![l; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> Label {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, l: Label) {
        self.labels[y * self.width + x] = l;
    }

    pub fn count(&self, l: Label) -> usize {
        self.labels.iter().filter(|&&x| x == l).count()
    }

    pub fn fraction(&self, l: Label) -> f64 {
        self.count(l) as f64 / self.labels.len() as f64
    }

    pub fn agreement(&self, other: &SegmentationMap) -> f64 {
        let same = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.labels.len() as f64
    }

    pub fn iou(&self, other: &SegmentationMap, l: Label) -> f64 {
        let mut inter = 0usize;
        let mut uni = 0usize;
        for (a, b) in self.labels.iter().zip(&other.labels) {
            let (x, y) = (*a == l, *b == l);
            inter += (x && y) as usize;
            uni += (x || y) as usize;
        }
        if uni == 0 {
            1.0
        } else {
            inter as f64 / uni as f64
        }
    }

    /// `[1, 8, H, W]` one-hot encoding.
    pub fn one_hot<T: Scalar>(&self) -> Tensor<T> {
        let hw = self.height * self.width;
        let mut data = vec![T::zero(); NUM_LABELS * hw];
        for (i, l) in self.labels.iter().enumerate() {
            data[l.index() * hw + i] = T::one();
        }
        Tensor::new(&[1, NUM_LABELS, self.height, self.width], data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.labels.iter().map(|l| (l.index() * 32) as u8).collect();
        write_png(
            path,
            self.width,
            self.height,
            png::ColorType::Grayscale,
            &bytes,
        )
    }

    pub fn load_png(path: &Path) -> Result<SegmentationMap> {
        let (w, h, ct, bytes) = read_png(path)?;
        if ct != png::ColorType::Grayscale {
            return Err(Error::Format(format!(
                "{}: expected grayscale PNG",
                path.display()
            )));
        }
        let labels = bytes
            .iter()
            .map(|&b| {
                if b % 32 != 0 {
                    return Err(Error::Format(format!("bad segmentation value {b}")));
                }
                Label::from_index((b / 32) as usize)
                    .ok_or_else(|| Error::Format(format!("bad segmentation value {b}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SegmentationMap::new(h, w, labels))
    }
}

fn write_png(path: &Path, w: usize, h: usize, ct: png::ColorType, bytes: &[u8]) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(f), w as u32, h as u32);
    enc.set_color(ct);
    enc.set_depth(png::BitDepth::Eight);
    let mut wr = enc
        .write_header()
        .map_err(|e| Error::Format(format!("png header: {e}")))?;
    wr.write_image_data(bytes)
        .map_err(|e| Error::Format(format!("png write: {e}")))?;
    Ok(())
}

fn read_png(path: &Path) -> Result<(usize, usize, png::ColorType, Vec<u8>)> {
    let f = std::fs::File::open(path)?;
    let dec = png::Decoder::new(BufReader::new(f));
    let mut reader = dec
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: expected 8-bit PNG",
            path.display()
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((
        info.width as usize,
        info.height as usize,
        info.color_type,
        buf,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut im = ImageTensor::filled(4, 5, [0.2, 0.5, 1.0]);
        im.set(1, 2, 3, 0.0);
        let p = dir.path().join("a.png");
        im.save_png(&p).unwrap();
        assert_eq!(ImageTensor::load_png(&p).unwrap(), im.quantized());
        let mut seg = SegmentationMap::filled(4, 5, Label::Skin);
        seg.set(3, 4, Label::Glasses);
        let q = dir.path().join("s.png");
        seg.save_png(&q).unwrap();
        assert_eq!(SegmentationMap::load_png(&q).unwrap(), seg);
    }

    #[test]
    fn labels_round_trip_names() {
        for l in Label::ALL {
            assert_eq!(Label::parse(l.name()), Some(l));
            assert_eq!(Label::from_index(l.index()), Some(l));
        }
    }
}
