//! Synthetic paired data: sampled avatar vectors, their engine renders
//! inverted into the shared latent space, realistic faces generated from
//! those codes, and semantically augmented copies.
//!
//! On-disk layout of a dataset directory:
//!
//! ```text
//! manifest.json   metadata and one record per sample (see `Manifest`)
//! images/NNNNNN.png   8-bit RGB realistic image of sample NNNNNN
//! latents.bin     "AVTRLATS", u32 version, u32 count, u32 parts, u32 dim,
//!                 then count * parts * dim little-endian f64 W values
//! ```
//!
//! `content_hash` in the manifest is the SHA-256 of, in order: every PNG
//! file's bytes by sample id, `latents.bin`, and the manifest serialized
//! with `content_hash` set to the empty string.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engines::{render_avatar, sample_vector, AvatarVector, EngineSchema};
use crate::error::{Error, Result};
use crate::generators::{Generator, LatentCode, Space};
use crate::image::{ImageTensor, Label, Rgb8Image};
use crate::inversion::{
    invert_batch, InversionConfig, InversionLoss, InversionResult, PerceptualMetric,
};
use crate::rng;
use crate::scalar::Scalar;

/// `w_k ← (1 − λ)·w_k + λ·n` for block `part`; other blocks are untouched.
pub fn blend_block(w: &LatentCode, part: Label, lambda: f64, noise: &[f64]) -> LatentCode {
    let mut out = w.clone();
    if lambda == 0.0 {
        return out;
    }
    for (v, n) in out.block_mut(part.index()).iter_mut().zip(noise) {
        *v = (1.0 - lambda) * *v + lambda * n;
    }
    out
}

/// Replaces part of block `part` with on-manifold noise: a fresh normal z
/// mapped through `g`'s mapping network.
pub fn semantic_augment<T: Scalar>(
    g: &Generator<T>,
    w: &LatentCode,
    part: Label,
    lambda: f64,
    seed: u64,
) -> Result<LatentCode> {
    if w.space != Space::W {
        return Err(Error::WrongSpace {
            expected: Space::W,
            found: w.space,
        });
    }
    if part.index() >= w.num_parts {
        return Err(Error::Config(format!(
            "latent has no {} block",
            part.name()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!(
            "augmentation strength {lambda} outside [0, 1]"
        )));
    }
    if lambda == 0.0 {
        return Ok(w.clone());
    }
    let n = g.map_z_to_w(&LatentCode::sample_z(&g.arch, seed))?;
    Ok(blend_block(w, part, lambda, n.block(part.index())))
}

/// Image-level locality of augmenting `part`: mean absolute pixel change
/// outside and inside `region`, where a pixel is inside when `g`'s hard
/// segmentation gives it a `region` label before or after. Returns
/// `(outside, inside)`.
pub fn augmentation_locality<T: Scalar>(
    g: &Generator<T>,
    w: &LatentCode,
    part: Label,
    region: &[Label],
    lambda: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    let w2 = semantic_augment(g, w, part, lambda, seed)?;
    let out = g.generate_batch(&[w, &w2])?;
    let (a, b) = (&out[0], &out[1]);
    let (mut inside, mut n_in, mut outside, mut n_out) = (0.0, 0usize, 0.0, 0usize);
    for y in 0..a.image.height() {
        for x in 0..a.image.width() {
            let (pa, pb) = (a.image.pixel(y, x), b.image.pixel(y, x));
            let d = (0..3).map(|c| (pa[c] - pb[c]).abs() as f64).sum::<f64>() / 3.0;
            if region.contains(&a.seg.get(y, x)) || region.contains(&b.seg.get(y, x)) {
                inside += d;
                n_in += 1;
            } else {
                outside += d;
                n_out += 1;
            }
        }
    }
    Ok((outside / n_out.max(1) as f64, inside / n_in.max(1) as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartStrength {
    pub part: Label,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationPolicy {
    /// Augmented copies cycle through these parts in order.
    pub parts: Vec<PartStrength>,
    pub copies: usize,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy {
            parts: vec![
                PartStrength {
                    part: Label::Background,
                    lambda: 1.0,
                },
                PartStrength {
                    part: Label::Hair,
                    lambda: 0.3,
                },
                PartStrength {
                    part: Label::Glasses,
                    lambda: 0.06,
                },
            ],
            copies: 10,
        }
    }
}

impl AugmentationPolicy {
    pub fn none() -> Self {
        AugmentationPolicy {
            parts: Vec::new(),
            copies: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parts.iter().any(|p| !(0.0..=1.0).contains(&p.lambda)) {
            return Err(Error::Config(
                "augmentation strengths must be in [0, 1]".into(),
            ));
        }
        if self.copies > 0 && self.parts.is_empty() {
            return Err(Error::Config(
                "augmentation copies requested but no parts listed".into(),
            ));
        }
        Ok(())
    }

    /// Part used by copy `j`, skipping parts the generator does not have.
    fn part_for(&self, j: usize, num_parts: usize) -> Option<PartStrength> {
        let usable: Vec<PartStrength> = self
            .parts
            .iter()
            .copied()
            .filter(|p| p.part.index() < num_parts)
            .collect();
        (!usable.is_empty()).then(|| usable[j % usable.len()])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub part: Label,
    pub lambda: f64,
    pub noise_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub vector: AvatarVector,
    /// Realistic image as stored on disk.
    pub image: Rgb8Image,
    pub w: LatentCode,
    /// Index of the base sample this one derives from.
    pub source: usize,
    pub augmentation: Option<Augmentation>,
    /// Inversion losses, present on base samples.
    pub inversion: Option<InversionLoss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityFilter {
    /// Base samples whose final image MSE exceeds this percentile of the
    /// run's own base samples are dropped with their augmented copies.
    pub percentile: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductionConfig {
    pub base_samples: usize,
    pub policy: AugmentationPolicy,
    pub inversion: InversionConfig,
    pub quality_filter: Option<QualityFilter>,
    pub seed: u64,
}

impl Default for ProductionConfig {
    fn default() -> Self {
        ProductionConfig {
            base_samples: 2000,
            policy: AugmentationPolicy::default(),
            inversion: InversionConfig::default(),
            quality_filter: None,
            seed: 0,
        }
    }
}

/// Provenance recorded in the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub schema_hash: String,
    pub avatar_generator_hash: String,
    pub real_generator_hash: String,
    pub metric_seed: u64,
    pub seed: u64,
    pub resolution: usize,
    pub policy: Option<AugmentationPolicy>,
    pub inversion: Option<InversionConfig>,
    /// Vector draws whose inversion aborted.
    pub skipped: Vec<usize>,
    /// Base samples removed by the quality filter.
    pub filtered: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: EngineSchema,
    pub meta: DatasetMeta,
    pub samples: Vec<PairedSample>,
}

impl Dataset {
    pub fn base_samples(&self) -> impl Iterator<Item = &PairedSample> {
        self.samples.iter().filter(|s| s.augmentation.is_none())
    }

    /// Keeps base samples for which `keep(source)` holds, and their copies.
    pub fn filter_sources(&self, keep: impl Fn(usize) -> bool) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            meta: self.meta.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| keep(s.source))
                .cloned()
                .collect(),
        }
    }

    /// The same base samples without augmented copies.
    pub fn without_augmentation(&self) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            meta: DatasetMeta {
                policy: Some(AugmentationPolicy::none()),
                ..self.meta.clone()
            },
            samples: self.base_samples().cloned().collect(),
        }
    }
}

fn generate_quantized<T: Scalar>(g: &Generator<T>, ws: &[&LatentCode]) -> Result<Vec<Rgb8Image>> {
    Ok(g.generate_batch(ws)?
        .into_iter()
        .map(|o| Rgb8Image::from_image(&o.image))
        .collect())
}

/// Builds the paired dataset.
///
/// Vectors are drawn from `derive(seed, i)` for `i = 0, 1, ...`; a draw whose
/// inversion aborts is skipped and replaced by the next draw. More than 5%
/// skips relative to `base_samples` fails the run.
#[allow(clippy::too_many_arguments)]
pub fn produce_pairs<T: Scalar>(
    schema: &EngineSchema,
    g_avatar: &Generator<T>,
    g_real: &Generator<T>,
    metric: &PerceptualMetric<T>,
    cfg: &ProductionConfig,
    w_init: &LatentCode,
    w_mean: &LatentCode,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<Dataset> {
    cfg.policy.validate()?;
    cfg.inversion.validate()?;
    if g_avatar.arch != g_real.arch {
        return Err(Error::Config(
            "avatar and realistic generators differ in architecture".into(),
        ));
    }
    let res = g_avatar.arch.resolution;
    let n = cfg.base_samples;
    let max_skips = n / 20;
    let mut skipped = Vec::new();
    let mut base: Vec<(AvatarVector, InversionResult)> = Vec::with_capacity(n);
    let mut draw = 0usize;
    while base.len() < n {
        let want = (n - base.len()).min(cfg.inversion.batch_size);
        let ids: Vec<usize> = (draw..draw + want).collect();
        draw += want;
        let vectors: Vec<AvatarVector> = ids
            .iter()
            .map(|&i| sample_vector(schema, rng::derive(cfg.seed, i as u64)))
            .collect();
        let targets = vectors
            .iter()
            .map(|p| render_avatar(schema, p, res))
            .collect::<Result<Vec<_>>>()?;
        let trefs: Vec<&ImageTensor> = targets.iter().collect();
        match invert_batch(
            g_avatar,
            metric,
            &trefs,
            &cfg.inversion,
            &vec![w_init; want],
            w_mean,
        ) {
            Ok(rs) => base.extend(vectors.into_iter().zip(rs)),
            Err(Error::NonFiniteLoss { .. }) => {
                // isolate the failing draws
                for ((i, p), t) in ids.iter().zip(vectors).zip(&targets) {
                    match invert_batch(g_avatar, metric, &[t], &cfg.inversion, &[w_init], w_mean) {
                        Ok(mut r) => base.push((p, r.remove(0))),
                        Err(Error::NonFiniteLoss { step, .. }) => {
                            log::warn!(
                                "vector draw {i}: inversion diverged at step {step}, skipped"
                            );
                            skipped.push(*i);
                        }
                        Err(e) => return Err(e),
                    }
                }
                if skipped.len() > max_skips {
                    return Err(Error::TooManySkips {
                        skipped: skipped.len(),
                        total: n,
                    });
                }
            }
            Err(e) => return Err(e),
        }
        progress(base.len(), n);
    }

    let mut filtered = Vec::new();
    if let Some(f) = &cfg.quality_filter {
        let mut mses: Vec<f64> = base.iter().map(|(_, r)| r.best.image_mse).collect();
        mses.sort_by(f64::total_cmp);
        let idx = ((f.percentile / 100.0) * (mses.len() - 1) as f64).round() as usize;
        let cut = mses[idx.min(mses.len() - 1)];
        for (i, (_, r)) in base.iter().enumerate() {
            if r.best.image_mse > cut {
                filtered.push(i);
            }
        }
    }

    let mut samples = Vec::with_capacity(n * (1 + cfg.policy.copies));
    for (chunk_start, chunk) in (0..base.len())
        .step_by(64)
        .map(|s| (s, &base[s..(s + 64).min(base.len())]))
    {
        let ws: Vec<&LatentCode> = chunk.iter().map(|(_, r)| &r.w).collect();
        let images = generate_quantized(g_real, &ws)?;
        for (k, ((p, r), img)) in chunk.iter().zip(images).enumerate() {
            let source = chunk_start + k;
            if filtered.contains(&source) {
                continue;
            }
            samples.push(PairedSample {
                vector: p.clone(),
                image: img,
                w: r.w.clone(),
                source,
                augmentation: None,
                inversion: Some(r.best),
            });
            let mut aug_ws = Vec::with_capacity(cfg.policy.copies);
            let mut augs = Vec::with_capacity(cfg.policy.copies);
            for j in 0..cfg.policy.copies {
                let Some(ps) = cfg.policy.part_for(j, g_real.arch.num_parts) else {
                    break;
                };
                let noise_seed =
                    rng::derive(rng::derive(cfg.seed ^ 0xa06, source as u64), j as u64);
                aug_ws.push(semantic_augment(
                    g_real, &r.w, ps.part, ps.lambda, noise_seed,
                )?);
                augs.push(Augmentation {
                    part: ps.part,
                    lambda: ps.lambda,
                    noise_seed,
                });
            }
            let wr: Vec<&LatentCode> = aug_ws.iter().collect();
            for ((w, a), img) in aug_ws
                .iter()
                .zip(augs)
                .zip(generate_quantized(g_real, &wr)?)
            {
                samples.push(PairedSample {
                    vector: p.clone(),
                    image: img,
                    w: w.clone(),
                    source,
                    augmentation: Some(a),
                    inversion: None,
                });
            }
        }
    }
    Ok(Dataset {
        schema: schema.clone(),
        meta: DatasetMeta {
            schema_hash: schema.hash(),
            avatar_generator_hash: g_avatar.params.content_hash(),
            real_generator_hash: g_real.params.content_hash(),
            metric_seed: metric.seed,
            seed: cfg.seed,
            resolution: res,
            policy: Some(cfg.policy.clone()),
            inversion: Some(cfg.inversion.clone()),
            skipped,
            filtered,
        },
        samples,
    })
}

/// Baseline pairs: engine renders labeled with their own vectors.
pub fn render_pairs(schema: &EngineSchema, n: usize, res: usize, seed: u64) -> Result<Dataset> {
    let samples = (0..n)
        .map(|i| {
            let p = sample_vector(schema, rng::derive(seed, i as u64));
            let image = Rgb8Image::from_image(&render_avatar(schema, &p, res)?);
            Ok(PairedSample {
                vector: p,
                image,
                w: LatentCode::zeros(Space::W, 1, 0),
                source: i,
                augmentation: None,
                inversion: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        schema: schema.clone(),
        meta: DatasetMeta {
            schema_hash: schema.hash(),
            seed,
            resolution: res,
            ..Default::default()
        },
        samples,
    })
}

/// Checks that every sample's image is exactly what `g_real` makes from its code.
pub fn verify_regeneration<T: Scalar>(ds: &Dataset, g_real: &Generator<T>) -> Result<usize> {
    let mut bad = 0;
    for chunk in ds.samples.chunks(64) {
        let ws: Vec<&LatentCode> = chunk.iter().map(|s| &s.w).collect();
        for (s, img) in chunk.iter().zip(generate_quantized(g_real, &ws)?) {
            bad += (s.image != img) as usize;
        }
    }
    Ok(bad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: usize,
    pub file: String,
    pub vector: serde_json::Value,
    pub source: usize,
    pub augmentation: Option<Augmentation>,
    pub inversion: Option<InversionLoss>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub schema: String,
    pub meta: DatasetMeta,
    pub num_parts: usize,
    pub latent_dim: usize,
    pub samples: Vec<SampleRecord>,
    pub content_hash: String,
}

pub const LATENTS_MAGIC: &[u8; 8] = b"AVTRLATS";
const FORMAT_VERSION: u32 = 1;

fn encode_latents(ds: &Dataset, parts: usize, dim: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + ds.samples.len() * parts * dim * 8);
    out.extend_from_slice(LATENTS_MAGIC);
    for v in [
        FORMAT_VERSION,
        ds.samples.len() as u32,
        parts as u32,
        dim as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in &ds.samples {
        for v in &s.w.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_latents(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>)> {
    let bad = || Error::Format("malformed latents.bin".into());
    if bytes.len() < 24 || &bytes[..8] != LATENTS_MAGIC {
        return Err(bad());
    }
    let u =
        |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap()) as usize;
    if u(0) != FORMAT_VERSION as usize {
        return Err(Error::Format(format!(
            "unsupported latents version {}",
            u(0)
        )));
    }
    let (count, parts, dim) = (u(1), u(2), u(3));
    let per = parts * dim;
    if bytes.len() != 24 + count * per * 8 {
        return Err(bad());
    }
    let vals: Vec<f64> = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let rows = if per == 0 {
        vec![Vec::new(); count]
    } else {
        vals.chunks(per).map(|c| c.to_vec()).collect()
    };
    Ok((parts, dim, rows))
}

fn content_hash(pngs: &[Vec<u8>], latents: &[u8], manifest: &Manifest) -> String {
    let mut h = Sha256::new();
    for p in pngs {
        h.update(p);
    }
    h.update(latents);
    let mut m = manifest.clone();
    m.content_hash.clear();
    h.update(serde_json::to_vec(&m).expect("manifest serializes"));
    hex::encode(h.finalize())
}

fn image_file(id: usize) -> String {
    format!("images/{id:06}.png")
}

/// Writes `ds` under `dir` (created if needed) and returns the content hash.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir.join("images"))?;
    let (parts, dim) = ds
        .samples
        .first()
        .map(|s| (s.w.num_parts, s.w.dim))
        .unwrap_or((0, 0));
    if ds
        .samples
        .iter()
        .any(|s| s.w.num_parts != parts || s.w.dim != dim)
    {
        return Err(Error::Format("samples have mixed latent shapes".into()));
    }
    let mut pngs = Vec::with_capacity(ds.samples.len());
    let mut records = Vec::with_capacity(ds.samples.len());
    for (id, s) in ds.samples.iter().enumerate() {
        let file = image_file(id);
        let path = dir.join(&file);
        s.image.save_png(&path)?;
        pngs.push(std::fs::read(&path)?);
        records.push(SampleRecord {
            id,
            file,
            vector: s.vector.to_json(&ds.schema),
            source: s.source,
            augmentation: s.augmentation,
            inversion: s.inversion,
        });
    }
    let latents = encode_latents(ds, parts, dim);
    std::fs::write(dir.join("latents.bin"), &latents)?;
    let mut manifest = Manifest {
        format_version: FORMAT_VERSION,
        schema: ds.schema.to_text(),
        meta: ds.meta.clone(),
        num_parts: parts,
        latent_dim: dim,
        samples: records,
        content_hash: String::new(),
    };
    manifest.content_hash = content_hash(&pngs, &latents, &manifest);
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest.content_hash)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Ok(serde_json::from_slice(&std::fs::read(
        dir.join("manifest.json"),
    )?)?)
}

/// Reads a dataset, verifying its content hash.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset version {}",
            manifest.format_version
        )));
    }
    let schema = EngineSchema::parse(&manifest.schema)?;
    let latents = std::fs::read(dir.join("latents.bin"))?;
    let mut pngs = Vec::with_capacity(manifest.samples.len());
    for r in &manifest.samples {
        pngs.push(std::fs::read(dir.join(&r.file))?);
    }
    if content_hash(&pngs, &latents, &manifest) != manifest.content_hash {
        return Err(Error::Corrupted(format!(
            "{}: dataset content hash mismatch",
            dir.display()
        )));
    }
    let (parts, dim, rows) = decode_latents(&latents)?;
    if rows.len() != manifest.samples.len()
        || parts != manifest.num_parts
        || dim != manifest.latent_dim
    {
        return Err(Error::Format(
            "latents.bin disagrees with the manifest".into(),
        ));
    }
    let mut samples = Vec::with_capacity(rows.len());
    for (r, values) in manifest.samples.iter().zip(rows) {
        let mut w = LatentCode::zeros(Space::W, parts, dim);
        w.values = values;
        samples.push(PairedSample {
            vector: AvatarVector::from_json(&schema, &r.vector)?,
            image: Rgb8Image::load_png(&dir.join(&r.file))?,
            w,
            source: r.source,
            augmentation: r.augmentation,
            inversion: r.inversion,
        });
    }
    Ok(Dataset {
        schema,
        meta: manifest.meta,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{Domain, ModelArch};

    #[test]
    fn blend_arithmetic() {
        let mut w = LatentCode::zeros(Space::W, 4, 3);
        w.values.iter_mut().for_each(|v| *v = 1.0);
        let out = blend_block(&w, Label::Hair, 0.3, &[0.0; 3]);
        for k in 0..4 {
            let want = if k == Label::Hair.index() { 0.7 } else { 1.0 };
            assert!(out.block(k).iter().all(|v| (v - want).abs() < 1e-15));
        }
    }

    #[test]
    fn augment_extremes() {
        let a = ModelArch::toy();
        let g = Generator::<f64>::init(&a, Domain::Realistic, 3);
        let w = g.map_z_to_w(&LatentCode::sample_z(&a, 1)).unwrap();
        assert_eq!(semantic_augment(&g, &w, Label::Hair, 0.0, 5).unwrap(), w);
        let full = semantic_augment(&g, &w, Label::Hair, 1.0, 5).unwrap();
        let n = g.map_z_to_w(&LatentCode::sample_z(&a, 5)).unwrap();
        assert_eq!(full.block(2), n.block(2));
        for k in [0, 1, 3] {
            assert_eq!(full.block(k), w.block(k));
        }
        assert!(semantic_augment(&g, &w, Label::Glasses, 0.5, 5).is_err());
    }

    #[test]
    fn policy_cycles_usable_parts() {
        let p = AugmentationPolicy::default();
        let parts: Vec<Label> = (0..4).map(|j| p.part_for(j, 4).unwrap().part).collect();
        assert_eq!(
            parts,
            [
                Label::Background,
                Label::Hair,
                Label::Background,
                Label::Hair
            ]
        );
        assert_eq!(p.part_for(2, 8).unwrap().part, Label::Glasses);
        assert!(AugmentationPolicy {
            copies: 3,
            parts: vec![]
        }
        .validate()
        .is_err());
    }

    #[test]
    fn latents_codec_round_trip() {
        let s = EngineSchema::engine_b();
        let mut ds = render_pairs(&s, 3, 16, 1).unwrap();
        for (i, smp) in ds.samples.iter_mut().enumerate() {
            smp.w = LatentCode::zeros(Space::W, 2, 2);
            smp.w.values = vec![i as f64, -0.5, 1e-300, f64::MAX];
        }
        let (p, d, rows) = decode_latents(&encode_latents(&ds, 2, 2)).unwrap();
        assert_eq!((p, d), (2, 2));
        assert_eq!(rows[2], ds.samples[2].w.values);
        assert!(decode_latents(b"AVTRLATSxx").is_err());
    }
}
