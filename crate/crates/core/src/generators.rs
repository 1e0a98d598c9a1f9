//! Part-compositional generator and segmentation-aware discriminator.
//!
//! The latent code is a list of per-part blocks (background, skin, hair,
//! eyes, mouth, nose, brow, glasses). Each block is mapped to W by its own
//! small MLP, then decoded by its own synthesis MLP into a pseudo-depth map
//! and a feature map. A softmax over parts turns the depth maps into soft
//! masks that sum to one at every pixel; the masks composite the features,
//! and a 1x1 render convolution over `[features, masks]` produces RGB.
//! The segmentation is the per-pixel argmax of the masks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{no_grad, Var};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Label, SegmentationMap, NUM_LABELS};
use crate::nn::{conv, conv_weight, linear, linear_weight, ParamSet, LRELU};
use crate::rng;
use crate::scalar::{lit, Scalar};
use crate::tensor::{ConvGeom, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Z,
    W,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Realistic,
    Avatar,
}

/// Shape hyperparameters shared by both domains.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArch {
    pub resolution: usize,
    pub num_parts: usize,
    pub latent_dim: usize,
    pub mapping_hidden: usize,
    pub synth_hidden: usize,
    /// Side of the low-resolution pseudo-depth grid.
    pub depth_grid: usize,
    /// Side of the low-resolution feature grid.
    pub feature_grid: usize,
    pub feature_channels: usize,
    /// Output channels of the stride-2 discriminator convolutions.
    pub disc_channels: Vec<usize>,
}

impl Default for ModelArch {
    fn default() -> Self {
        ModelArch::desk()
    }
}

impl ModelArch {
    /// 64x64, eight 16-d part blocks.
    pub fn desk() -> Self {
        ModelArch {
            resolution: 64,
            num_parts: NUM_LABELS,
            latent_dim: 16,
            mapping_hidden: 32,
            synth_hidden: 64,
            depth_grid: 32,
            feature_grid: 16,
            feature_channels: 3,
            disc_channels: vec![16, 32, 64, 64],
        }
    }

    /// 32x32, four parts; small enough for f64 finite-difference checks.
    pub fn toy() -> Self {
        ModelArch {
            resolution: 32,
            num_parts: 4,
            latent_dim: 8,
            mapping_hidden: 8,
            synth_hidden: 12,
            depth_grid: 8,
            feature_grid: 8,
            feature_channels: 3,
            disc_channels: vec![4, 8],
        }
    }

    pub fn latent_size(&self) -> usize {
        self.num_parts * self.latent_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model architecture: {m}")));
        if self.num_parts < 2 || self.num_parts > NUM_LABELS {
            return bad("num_parts must be in 2..=8");
        }
        if self.latent_dim == 0
            || self.mapping_hidden == 0
            || self.synth_hidden == 0
            || self.feature_channels == 0
        {
            return bad("all widths must be positive");
        }
        if self.depth_grid == 0 || self.feature_grid == 0 || self.depth_grid > self.resolution {
            return bad("grid sizes must be in 1..=resolution");
        }
        if self.disc_channels.is_empty() || self.resolution % (1 << self.disc_channels.len()) != 0 {
            return bad("resolution must be divisible by 2^(discriminator layers)");
        }
        Ok(())
    }

    fn disc_final_side(&self) -> usize {
        self.resolution >> self.disc_channels.len()
    }
}

/// Per-part latent blocks, flattened part-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub space: Space,
    pub num_parts: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl LatentCode {
    pub fn zeros(space: Space, num_parts: usize, dim: usize) -> Self {
        LatentCode {
            space,
            num_parts,
            dim,
            values: vec![0.0; num_parts * dim],
        }
    }

    /// Standard-normal Z-space sample.
    pub fn sample_z(arch: &ModelArch, seed: u64) -> Self {
        let mut r = rng::rng(seed);
        Self::sample_z_with(arch, &mut r)
    }

    pub fn sample_z_with(arch: &ModelArch, r: &mut ChaCha8Rng) -> Self {
        let n = arch.latent_size();
        LatentCode {
            space: Space::Z,
            num_parts: arch.num_parts,
            dim: arch.latent_dim,
            values: (0..n).map(|_| StandardNormal.sample(r)).collect(),
        }
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn expect(&self, space: Space, arch: &ModelArch) -> Result<()> {
        if self.space != space {
            return Err(Error::WrongSpace {
                expected: space,
                found: self.space,
            });
        }
        if self.num_parts != arch.num_parts || self.dim != arch.latent_dim {
            return Err(Error::Config(format!(
                "latent is {}x{}, model expects {}x{}",
                self.num_parts, self.dim, arch.num_parts, arch.latent_dim
            )));
        }
        Ok(())
    }

    /// Stacks codes into a `[B, parts*dim]` tensor.
    pub fn stack<T: Scalar>(codes: &[&LatentCode]) -> Tensor<T> {
        let n = codes.first().map(|c| c.values.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(codes.len() * n);
        for c in codes {
            assert_eq!(c.values.len(), n);
            data.extend(c.values.iter().map(|&v| lit::<T>(v)));
        }
        Tensor::new(&[codes.len(), n], data)
    }

    pub fn unstack<T: Scalar>(
        t: &Tensor<T>,
        space: Space,
        num_parts: usize,
        dim: usize,
    ) -> Vec<LatentCode> {
        let n = num_parts * dim;
        t.data()
            .chunks(n)
            .map(|row| LatentCode {
                space,
                num_parts,
                dim,
                values: row.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
            })
            .collect()
    }

    /// Euclidean distance.
    pub fn distance(&self, other: &LatentCode) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

// Parameter layout: per part, 3 mapping then 8 synthesis tensors, then the
// two render tensors.
const PER_PART: usize = 11;
const MAPPING_PER_PART: usize = 3;

fn part_index(part: usize, j: usize) -> usize {
    part * PER_PART + j
}

/// Generator weights for one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub arch: ModelArch,
    pub domain: Domain,
    pub params: ParamSet<T>,
}

/// Graph outputs of one synthesis pass.
pub struct SynthOut<T: Scalar> {
    /// `[B, 3, R, R]` in `[0, 1]`.
    pub image: Var<T>,
    /// `[B, P, R, R]`, summing to one over parts.
    pub masks: Var<T>,
}

/// Non-graph result of [`Generator::generate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub image: ImageTensor,
    pub seg: SegmentationMap,
    /// `P x R x R` soft masks.
    pub masks: Vec<f32>,
}

impl Generated {
    pub fn soft_mask(&self, part: usize) -> &[f32] {
        let n = self.image.height() * self.image.width();
        &self.masks[part * n..(part + 1) * n]
    }
}

impl<T: Scalar> Generator<T> {
    pub fn init(arch: &ModelArch, domain: Domain, seed: u64) -> Self {
        arch.validate().expect("invalid model architecture");
        let mut r = rng::rng(seed);
        let a = arch;
        let (d, hm, hs) = (a.latent_dim, a.mapping_hidden, a.synth_hidden);
        let gd = a.depth_grid * a.depth_grid;
        let gf = a.feature_channels * a.feature_grid * a.feature_grid;
        let mut p = ParamSet::new();
        for k in 0..a.num_parts {
            p.push(format!("map{k}.w1"), linear_weight(d, hm, 1.0, &mut r));
            p.push(format!("map{k}.w2"), linear_weight(hm, d, 1.0, &mut r));
            p.push(format!("map{k}.b"), Tensor::zeros(&[1, d]));
            p.push(format!("syn{k}.w1"), linear_weight(d, hs, 1.0, &mut r));
            p.push(format!("syn{k}.b1"), Tensor::zeros(&[1, hs]));
            p.push(format!("syn{k}.w2"), linear_weight(hs, hs, 1.0, &mut r));
            p.push(format!("syn{k}.b2"), Tensor::zeros(&[1, hs]));
            p.push(format!("syn{k}.wd"), linear_weight(hs, gd, 0.5, &mut r));
            p.push(format!("syn{k}.bd"), Tensor::zeros(&[1, gd]));
            p.push(format!("syn{k}.wf"), linear_weight(hs, gf, 0.5, &mut r));
            p.push(format!("syn{k}.bf"), Tensor::zeros(&[1, gf]));
        }
        let cin = a.feature_channels + a.num_parts;
        p.push("render.w", conv_weight(3, cin, 1, 1.0, &mut r));
        p.push("render.b", Tensor::zeros(&[1, 3, 1, 1]));
        Generator {
            arch: arch.clone(),
            domain,
            params: p,
        }
    }

    /// Indices of the mapping-network tensors within `params`.
    pub fn mapping_indices(&self) -> Vec<usize> {
        (0..self.arch.num_parts)
            .flat_map(|k| (0..MAPPING_PER_PART).map(move |j| part_index(k, j)))
            .collect()
    }

    /// Indices of everything except the mapping network.
    pub fn synthesis_indices(&self) -> Vec<usize> {
        let m = self.mapping_indices();
        (0..self.params.len()).filter(|i| !m.contains(i)).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            arch: self.arch.clone(),
            domain: self.domain,
            params: self.params.cast(),
        }
    }

    /// Copy of these weights tagged with another domain.
    pub fn with_domain(&self, domain: Domain) -> Self {
        Generator {
            domain,
            ..self.clone()
        }
    }

    /// Graph mapping of a `[B, P*D]` Z batch; each block goes through its
    /// own MLP, `w_k = b_k + W2_k lrelu(W1_k z_k)`.
    pub fn mapping_graph(arch: &ModelArch, vars: &[Var<T>], z: &Var<T>) -> Var<T> {
        let d = arch.latent_dim;
        let slope = lit(LRELU);
        let blocks: Vec<Var<T>> = (0..arch.num_parts)
            .map(|k| {
                let zk = z.slice(1, k * d, d);
                let h = zk.matmul(&vars[part_index(k, 0)]).leaky_relu(slope);
                linear(&h, &vars[part_index(k, 1)], &vars[part_index(k, 2)])
            })
            .collect();
        Var::concat(&blocks, 1)
    }

    /// Graph synthesis of a `[B, P*D]` W batch.
    pub fn synthesis_graph(arch: &ModelArch, vars: &[Var<T>], w: &Var<T>) -> SynthOut<T> {
        let a = arch;
        let (d, b) = (a.latent_dim, w.shape()[0]);
        let (gd, gf, c, res) = (
            a.depth_grid,
            a.feature_grid,
            a.feature_channels,
            a.resolution,
        );
        let slope = lit(LRELU);
        let mut depths = Vec::with_capacity(a.num_parts);
        let mut feats = Vec::with_capacity(a.num_parts);
        for k in 0..a.num_parts {
            let wk = w.slice(1, k * d, d);
            let h = linear(&wk, &vars[part_index(k, 3)], &vars[part_index(k, 4)]).leaky_relu(slope);
            let h = linear(&h, &vars[part_index(k, 5)], &vars[part_index(k, 6)]).leaky_relu(slope);
            depths.push(
                linear(&h, &vars[part_index(k, 7)], &vars[part_index(k, 8)])
                    .reshape(&[b, 1, gd, gd]),
            );
            feats.push(
                linear(&h, &vars[part_index(k, 9)], &vars[part_index(k, 10)])
                    .reshape(&[b, c, gf, gf]),
            );
        }
        let depth = Var::concat(&depths, 1);
        let depth = if gd == res {
            depth
        } else {
            depth.upsample(res, res)
        };
        let masks = depth.softmax(1);
        let feat = Var::concat(&feats, 1);
        let feat = if gf == res {
            feat
        } else {
            feat.upsample(res, res)
        };
        let comp = masks
            .reshape(&[b, a.num_parts, 1, res, res])
            .mul(&feat.reshape(&[b, a.num_parts, c, res, res]))
            .sum_axis(1)
            .reshape(&[b, c, res, res]);
        let render_in = Var::concat(&[comp, masks.clone()], 1);
        let n = a.num_parts * PER_PART;
        let image = conv(
            &render_in,
            &vars[n],
            &vars[n + 1],
            ConvGeom { stride: 1, pad: 0 },
        )
        .sigmoid();
        SynthOut { image, masks }
    }

    /// Maps one Z code to W.
    pub fn map_z_to_w(&self, z: &LatentCode) -> Result<LatentCode> {
        Ok(self.map_batch(&[z])?.remove(0))
    }

    pub fn map_batch(&self, zs: &[&LatentCode]) -> Result<Vec<LatentCode>> {
        for z in zs {
            z.expect(Space::Z, &self.arch)?;
        }
        let out = no_grad(|| {
            let vars = self.params.constants();
            let z = Var::constant(LatentCode::stack::<T>(zs));
            Self::mapping_graph(&self.arch, &vars, &z).value().clone()
        });
        Ok(LatentCode::unstack(
            &out,
            Space::W,
            self.arch.num_parts,
            self.arch.latent_dim,
        ))
    }

    pub fn generate(&self, w: &LatentCode) -> Result<Generated> {
        Ok(self.generate_batch(&[w])?.remove(0))
    }

    pub fn generate_batch(&self, ws: &[&LatentCode]) -> Result<Vec<Generated>> {
        for w in ws {
            w.expect(Space::W, &self.arch)?;
        }
        let (img, masks) = no_grad(|| {
            let vars = self.params.constants();
            let w = Var::constant(LatentCode::stack::<T>(ws));
            let out = Self::synthesis_graph(&self.arch, &vars, &w);
            (out.image.value().clone(), out.masks.value().clone())
        });
        Ok(outputs_to_generated(&img, &masks))
    }
}

impl<T: Scalar> Generator<T> {
    pub fn header(&self, seed: u64) -> serde_json::Value {
        serde_json::json!({
            "kind": "generator",
            "arch": self.arch,
            "domain": self.domain,
            "seed": seed,
        })
    }

    pub fn save(&self, path: &std::path::Path, seed: u64) -> Result<()> {
        crate::checkpoint::save(path, &self.header(seed), &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (h, params) = crate::checkpoint::load(path)?;
        crate::checkpoint::expect_kind(&h, "generator")?;
        let arch: ModelArch = serde_json::from_value(h["arch"].clone())?;
        let domain: Domain = serde_json::from_value(h["domain"].clone())?;
        let g = Generator {
            arch,
            domain,
            params,
        };
        let fresh = Generator::<T>::init(&g.arch, domain, 0);
        if fresh.params.names() != g.params.names()
            || fresh
                .params
                .tensors()
                .iter()
                .zip(g.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Format(
                "generator checkpoint does not match its architecture".into(),
            ));
        }
        Ok(g)
    }
}

impl<T: Scalar> Discriminator<T> {
    pub fn save(&self, path: &std::path::Path, seed: u64) -> Result<()> {
        let h = serde_json::json!({"kind": "discriminator", "arch": self.arch, "seed": seed});
        crate::checkpoint::save(path, &h, &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (h, params) = crate::checkpoint::load(path)?;
        crate::checkpoint::expect_kind(&h, "discriminator")?;
        let arch: ModelArch = serde_json::from_value(h["arch"].clone())?;
        Ok(Discriminator { arch, params })
    }
}

/// Converts `[B,3,R,R]` images and `[B,P,R,R]` masks to per-sample results.
pub fn outputs_to_generated<T: Scalar>(img: &Tensor<T>, masks: &Tensor<T>) -> Vec<Generated> {
    let images = ImageTensor::batch_from_tensor(img);
    let (p, r) = (masks.shape()[1], masks.shape()[2]);
    let n = r * r;
    images
        .into_iter()
        .enumerate()
        .map(|(i, image)| {
            let m: Vec<f32> = masks.data()[i * p * n..(i + 1) * p * n]
                .iter()
                .map(|v| v.to_f32().unwrap_or(f32::NAN))
                .collect();
            let labels = (0..n)
                .map(|px| {
                    let mut best = 0;
                    for k in 1..p {
                        if m[k * n + px] > m[best * n + px] {
                            best = k;
                        }
                    }
                    Label::from_index(best).expect("part index is a label")
                })
                .collect();
            Generated {
                image,
                seg: SegmentationMap::new(r, r, labels),
                masks: m,
            }
        })
        .collect()
}

/// With probability `prob`, replaces the blocks from a random interior
/// crossover point onward with `w2`'s blocks.
pub fn mix_styles(w1: &LatentCode, w2: &LatentCode, prob: f64, seed: u64) -> LatentCode {
    let mut r = rng::rng(seed);
    match crossover_point(w1.num_parts, prob, &mut r) {
        Some(c) => {
            let mut out = w1.clone();
            out.values[c * w1.dim..].copy_from_slice(&w2.values[c * w2.dim..]);
            out
        }
        None => w1.clone(),
    }
}

/// First block taken from the second code, or `None` when no mixing happens.
pub fn crossover_point(num_parts: usize, prob: f64, r: &mut impl Rng) -> Option<usize> {
    if num_parts < 2 || prob <= 0.0 || !r.random_bool(prob.min(1.0)) {
        return None;
    }
    Some(r.random_range(1..num_parts))
}

/// Channel-wise mean over pixels labeled `s`; `None` flags an empty region.
pub fn region_mean_color(img: &ImageTensor, seg: &SegmentationMap, s: Label) -> Option<[f64; 3]> {
    assert_eq!((img.height(), img.width()), (seg.height(), seg.width()));
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            if seg.get(y, x) == s {
                let p = img.pixel(y, x);
                for c in 0..3 {
                    sum[c] += p[c] as f64;
                }
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum.map(|v| v / n as f64))
}

/// Discriminator over `[image, segmentation masks]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub arch: ModelArch,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn init(arch: &ModelArch, seed: u64) -> Self {
        arch.validate().expect("invalid model architecture");
        let mut r = rng::rng(seed);
        let mut p = ParamSet::new();
        let mut cin = 3 + arch.num_parts;
        for (i, &c) in arch.disc_channels.iter().enumerate() {
            p.push(format!("conv{i}.w"), conv_weight(c, cin, 3, 1.0, &mut r));
            p.push(format!("conv{i}.b"), Tensor::zeros(&[1, c, 1, 1]));
            cin = c;
        }
        let s = arch.disc_final_side();
        p.push("fc.w", linear_weight(cin * s * s, 1, 1.0, &mut r));
        p.push("fc.b", Tensor::zeros(&[1, 1]));
        Discriminator {
            arch: arch.clone(),
            params: p,
        }
    }

    /// Builds the discriminator input from `[0,1]` images and masks.
    pub fn input(image: &Var<T>, masks: &Var<T>) -> Var<T> {
        let centered = image.scale(lit(2.0)).add_scalar(lit(-1.0));
        Var::concat(&[centered, masks.clone()], 1)
    }

    /// Logits `[B, 1]` for an input built by [`Discriminator::input`].
    pub fn graph(arch: &ModelArch, vars: &[Var<T>], x: &Var<T>) -> Var<T> {
        let slope = lit(LRELU);
        let mut h = x.clone();
        for i in 0..arch.disc_channels.len() {
            h = conv(
                &h,
                &vars[2 * i],
                &vars[2 * i + 1],
                ConvGeom { stride: 2, pad: 1 },
            )
            .leaky_relu(slope);
        }
        let b = h.shape()[0];
        let flat = h.reshape(&[b, h.value().numel() / b]);
        let n = 2 * arch.disc_channels.len();
        linear(&flat, &vars[n], &vars[n + 1])
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }
}

/// One-hot masks `[B, P, R, R]` of real segmentations.
pub fn one_hot_batch<T: Scalar>(segs: &[&SegmentationMap], num_parts: usize) -> Tensor<T> {
    let r = segs[0].height();
    let n = r * r;
    let mut data = vec![T::zero(); segs.len() * num_parts * n];
    for (i, s) in segs.iter().enumerate() {
        for (px, l) in s.labels().iter().enumerate() {
            let k = l.index().min(num_parts - 1);
            data[(i * num_parts + k) * n + px] = T::one();
        }
    }
    Tensor::new(&[segs.len(), num_parts, r, r], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad;

    fn toy() -> (ModelArch, Generator<f64>) {
        let a = ModelArch::toy();
        let g = Generator::init(&a, Domain::Avatar, 3);
        (a, g)
    }

    #[test]
    fn zero_z_maps_to_bias() {
        let (a, mut g) = toy();
        for k in 0..a.num_parts {
            let i = part_index(k, 2);
            let bias: Vec<f64> = (0..a.latent_dim)
                .map(|j| 0.1 * (k * 10 + j) as f64)
                .collect();
            g.params.tensors_mut()[i] = Tensor::new(&[1, a.latent_dim], bias);
        }
        let z = LatentCode::zeros(Space::Z, a.num_parts, a.latent_dim);
        let w1 = g.map_z_to_w(&z).unwrap();
        let w2 = g.map_z_to_w(&z).unwrap();
        assert_eq!(w1, w2);
        assert_eq!(w1.space, Space::W);
        for k in 0..a.num_parts {
            for j in 0..a.latent_dim {
                assert!((w1.block(k)[j] - 0.1 * (k * 10 + j) as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mapping_is_block_independent() {
        let (a, g) = toy();
        let z = LatentCode::sample_z(&a, 1);
        let w = g.map_z_to_w(&z).unwrap();
        for k in 0..a.num_parts {
            let mut z2 = z.clone();
            z2.block_mut(k).iter_mut().for_each(|v| *v += 0.7);
            let w2 = g.map_z_to_w(&z2).unwrap();
            for j in 0..a.num_parts {
                if j == k {
                    assert_ne!(w.block(j), w2.block(j));
                } else {
                    assert_eq!(w.block(j), w2.block(j));
                }
            }
        }
    }

    #[test]
    fn wrong_space_rejected() {
        let (a, g) = toy();
        let z = LatentCode::sample_z(&a, 1);
        assert!(matches!(g.generate(&z), Err(Error::WrongSpace { .. })));
        let w = g.map_z_to_w(&z).unwrap();
        assert!(matches!(g.map_z_to_w(&w), Err(Error::WrongSpace { .. })));
    }

    #[test]
    fn generate_deterministic_and_masks_normalized() {
        let (a, g) = toy();
        let w = g.map_z_to_w(&LatentCode::sample_z(&a, 4)).unwrap();
        let o1 = g.generate(&w).unwrap();
        let o2 = g.generate(&w).unwrap();
        assert_eq!(o1, o2);
        assert!(o1.image.is_valid());
        let n = a.resolution * a.resolution;
        for px in 0..n {
            let s: f64 = (0..a.num_parts).map(|k| o1.soft_mask(k)[px] as f64).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn synthesis_gradient_matches_finite_differences() {
        let (a, g) = toy();
        let w0 = g.map_z_to_w(&LatentCode::sample_z(&a, 8)).unwrap();
        let w0 = LatentCode::stack::<f64>(&[&w0]);
        let vars = g.params.constants();
        let probe =
            crate::nn::randn::<f64>(&[1, 3, a.resolution, a.resolution], 1.0, &mut rng::rng(2));
        let f = |w: &Var<f64>| {
            Generator::synthesis_graph(&a, &vars, w)
                .image
                .mul(&Var::constant(probe.clone()))
                .sum()
        };
        let wv = Var::leaf(w0.clone());
        let gw = grad(&f(&wv), &[&wv], false)[0].clone().unwrap();
        let mut r = rng::rng(5);
        for _ in 0..10 {
            let dir = crate::nn::randn::<f64>(w0.shape(), 1.0, &mut r);
            let eps = 1e-5;
            let shifted = |s: f64| {
                let t = w0.zip_bcast(&dir, |a, b| a + s * b);
                f(&Var::constant(t)).item()
            };
            let num = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
            let ana: f64 = gw
                .value()
                .data()
                .iter()
                .zip(dir.data())
                .map(|(a, b)| a * b)
                .sum();
            assert!(
                (num - ana).abs() <= 1e-3 * num.abs().max(1e-6),
                "{num} vs {ana}"
            );
        }
    }

    #[test]
    fn mix_styles_cases() {
        let a = ModelArch::desk();
        let w1 = LatentCode::sample_z(&a, 1);
        let w2 = LatentCode::sample_z(&a, 2);
        assert_eq!(mix_styles(&w1, &w2, 0.0, 9), w1);
        for seed in 0..50 {
            let m = mix_styles(&w1, &w2, 1.0, seed);
            let from1 = (0..a.num_parts)
                .filter(|&k| m.block(k) == w1.block(k))
                .count();
            let from2 = (0..a.num_parts)
                .filter(|&k| m.block(k) == w2.block(k))
                .count();
            assert_eq!(from1 + from2, a.num_parts);
            assert!(from1 >= 1 && from2 >= 1);
        }
        // Binomial(10_000, 0.3): sd = 45.8 counts, the band is +-6.5 sd.
        let mixed = (0..10_000)
            .filter(|&s| mix_styles(&w1, &w2, 0.3, s) != w1)
            .count();
        let f = mixed as f64 / 10_000.0;
        assert!((0.27..=0.33).contains(&f), "{f}");
    }

    #[test]
    fn region_mean_color_cases() {
        let img = ImageTensor::filled(4, 4, [0.5, 0.5, 0.5]);
        let mut seg = SegmentationMap::filled(4, 4, Label::Background);
        seg.set(1, 1, Label::Skin);
        assert_eq!(
            region_mean_color(&img, &seg, Label::Skin),
            Some([0.5, 0.5, 0.5])
        );
        assert_eq!(region_mean_color(&img, &seg, Label::Hair), None);

        let mut img = ImageTensor::filled(2, 2, [1.0, 0.0, 0.0]);
        for x in 0..2 {
            img.set(0, 1, x, 0.0);
            img.set(2, 1, x, 1.0);
        }
        let seg = SegmentationMap::filled(2, 2, Label::Hair);
        let m = region_mean_color(&img, &seg, Label::Hair).unwrap();
        assert!((m[0] - 0.5).abs() < 1e-12 && m[1] == 0.0 && (m[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (_, g) = toy();
        let path = dir.path().join("g.ckpt");
        g.save(&path, 3).unwrap();
        assert_eq!(Generator::<f64>::load(&path).unwrap(), g);
        let g32 = Generator::<f32>::load(&path).unwrap();
        assert_eq!(g32, g.cast::<f32>());
    }

    #[test]
    fn discriminator_output_shape() {
        let a = ModelArch::toy();
        let d = Discriminator::<f64>::init(&a, 1);
        let x = Var::constant(Tensor::zeros(&[
            2,
            3 + a.num_parts,
            a.resolution,
            a.resolution,
        ]));
        let out = Discriminator::graph(&a, &d.params.constants(), &x);
        assert_eq!(out.shape(), &[2, 1]);
    }
}
