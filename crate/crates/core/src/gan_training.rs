//! Adversarial training of the realistic generator and transfer to the
//! avatar domain with a cross-domain color-matching term.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, no_grad, Var};
use crate::engines::{
    render_avatar_with_mask, render_realistic, sample_face_attributes, sample_vector, EngineSchema,
};
use crate::error::{Error, Result};
use crate::generators::{
    crossover_point, one_hot_batch, outputs_to_generated, Discriminator, Domain, Generator,
    LatentCode, ModelArch,
};
use crate::image::{ImageTensor, Label, SegmentationMap};
use crate::nn::{grads_to_tensors, Adam, AdamConfig};
use crate::rng;
use crate::scalar::{lit, to_f64, Scalar};
use crate::tensor::Tensor;

/// Regions compared by the color-matching loss.
pub const COLOR_REGIONS: [Label; 2] = [Label::Skin, Label::Hair];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanTrainConfig {
    pub lambda_r1: f64,
    pub lambda_path: f64,
    pub lambda_color: f64,
    pub style_mix_prob: f64,
    pub batch_size: usize,
    /// Discriminator (R1) regularization every this many mini-batches.
    pub d_reg_interval: usize,
    /// Generator (path length) regularization every this many mini-batches.
    pub g_reg_interval: usize,
    pub steps: usize,
    pub adam: AdamConfig,
    pub path_decay: f64,
    /// Path-length batch is `batch_size / path_batch_shrink`.
    pub path_batch_shrink: usize,
    /// Keep the mapping network fixed while finetuning so both domains share W.
    pub freeze_mapping: bool,
    /// Abort when the discriminator loss stays below this threshold...
    pub collapse_threshold: f64,
    /// ...for this many consecutive steps.
    pub collapse_patience: usize,
    pub min_dataset_size: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            lambda_r1: 10.0,
            lambda_path: 0.5,
            lambda_color: 1.0,
            style_mix_prob: 0.3,
            batch_size: 16,
            d_reg_interval: 16,
            g_reg_interval: 4,
            steps: 20_000,
            adam: AdamConfig {
                lr: 2e-3,
                beta1: 0.0,
                beta2: 0.99,
                eps: 1e-8,
            },
            path_decay: 0.01,
            path_batch_shrink: 2,
            freeze_mapping: true,
            collapse_threshold: 1e-3,
            collapse_patience: 500,
            min_dataset_size: 2000,
            log_every: 50,
            seed: 0,
        }
    }
}

impl GanTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("gan training: {m}")));
        for (n, v) in [
            ("lambda_r1", self.lambda_r1),
            ("lambda_path", self.lambda_path),
            ("lambda_color", self.lambda_color),
        ] {
            if !(v >= 0.0) {
                return bad(format!("{n} must be >= 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.style_mix_prob) {
            return bad("style_mix_prob must be in [0, 1]".into());
        }
        if self.batch_size == 0
            || self.d_reg_interval == 0
            || self.g_reg_interval == 0
            || self.path_batch_shrink == 0
        {
            return bad("batch size, intervals and path_batch_shrink must be >= 1".into());
        }
        if !(self.adam.lr > 0.0) {
            return bad("learning rate must be positive".into());
        }
        Ok(())
    }
}

/// A batch as the discriminator sees it.
#[derive(Clone, Debug)]
pub struct DiscBatch<T> {
    /// `[B, 3, R, R]` in `[0, 1]`.
    pub images: Tensor<T>,
    /// `[B, P, R, R]` soft or one-hot masks.
    pub masks: Tensor<T>,
}

impl<T: Scalar> DiscBatch<T> {
    pub fn from_pairs(pairs: &[&(ImageTensor, SegmentationMap)], num_parts: usize) -> Self {
        let imgs: Vec<&ImageTensor> = pairs.iter().map(|p| &p.0).collect();
        let segs: Vec<&SegmentationMap> = pairs.iter().map(|p| &p.1).collect();
        DiscBatch {
            images: ImageTensor::batch_to_tensor(&imgs),
            masks: one_hot_batch(&segs, num_parts),
        }
    }

    pub fn input(&self) -> Tensor<T> {
        no_grad(|| {
            Discriminator::input(
                &Var::constant(self.images.clone()),
                &Var::constant(self.masks.clone()),
            )
            .value()
            .clone()
        })
    }
}

/// Non-saturating logistic losses from raw logits:
/// `g = mean softplus(-D(fake))`, `d = mean softplus(D(fake)) + mean softplus(-D(real))`.
pub fn adv_losses_from_logits(real: &[f64], fake: &[f64]) -> (f64, f64) {
    let mean =
        |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let sp = crate::autodiff::softplus::<f64>;
    let g = mean(fake, &|x| sp(-x));
    let d = mean(fake, &|x| sp(x)) + mean(real, &|x| sp(-x));
    (g, d)
}

/// `(g_loss, d_loss)` of `d` on a real and a fake batch.
pub fn adv_losses<T: Scalar>(
    d: &Discriminator<T>,
    real: &DiscBatch<T>,
    fake: &DiscBatch<T>,
) -> (f64, f64) {
    let logits = |b: &DiscBatch<T>| -> Vec<f64> {
        no_grad(|| {
            let vars = d.params.constants();
            Discriminator::graph(&d.arch, &vars, &Var::constant(b.input()))
                .value()
                .data()
                .iter()
                .map(|&v| to_f64(v))
                .collect()
        })
    };
    adv_losses_from_logits(&logits(real), &logits(fake))
}

/// `½ · mean_b ‖∂ sum D / ∂x_b‖²` for any differentiable critic `f`.
///
/// The returned node stays differentiable with respect to whatever `f`
/// closes over.
pub fn r1_graph<T: Scalar>(f: impl Fn(&Var<T>) -> Var<T>, x: &Tensor<T>) -> Var<T> {
    let xv = Var::leaf(x.clone());
    let out = f(&xv).sum();
    let g = grad(&out, &[&xv], true)[0]
        .clone()
        .unwrap_or_else(|| Var::constant(Tensor::zeros(x.shape())));
    let b = x.shape()[0];
    g.square().sum().scale(lit(0.5 / b as f64))
}

/// R1 penalty of `d` at a real batch (unscaled by λ and the lazy interval).
pub fn r1_penalty<T: Scalar>(d: &Discriminator<T>, real: &DiscBatch<T>) -> f64 {
    let vars = d.params.constants();
    let x = real.input();
    to_f64(r1_graph(|x| Discriminator::graph(&d.arch, &vars, x), &x).item())
}

/// Path-length regularizer for a generator `f: w -> image`.
///
/// `J_b = ∂/∂w_b Σ(image_b · noise_b) / sqrt(H·W)` with unit-normal `noise`;
/// the penalty is `mean_b (‖J_b‖ − ema)²` using the incoming `ema`, and
/// the returned ema moves toward `mean_b ‖J_b‖` by `decay`.
pub fn path_length_graph<T: Scalar>(
    f: impl Fn(&Var<T>) -> Var<T>,
    w: &Var<T>,
    noise: &Tensor<T>,
    ema: f64,
    decay: f64,
) -> (Var<T>, f64) {
    let img = f(w);
    let hw = (img.shape()[2] * img.shape()[3]) as f64;
    let b = w.shape()[0];
    let out = img
        .mul(&Var::constant(noise.clone()))
        .sum()
        .scale(lit(1.0 / hw.sqrt()));
    let j = grad(&out, &[w], true)[0]
        .clone()
        .unwrap_or_else(|| Var::constant(Tensor::zeros(w.shape())));
    let norms = j.square().sum_axis(1).add_scalar(lit(1e-12)).sqrt();
    let mean_norm = to_f64(norms.value().sum()) / b as f64;
    let penalty = norms.add_scalar(lit(-ema)).square().mean();
    (penalty, ema + decay * (mean_norm - ema))
}

/// Path-length penalty of `g` for a W batch; returns `(penalty, new ema)`.
pub fn path_length_penalty<T: Scalar>(
    g: &Generator<T>,
    ws: &[&LatentCode],
    ema: f64,
    decay: f64,
    seed: u64,
) -> (f64, f64) {
    let vars = g.params.constants();
    let w = Var::leaf(LatentCode::stack::<T>(ws));
    let r = g.arch.resolution;
    let noise = crate::nn::randn::<T>(&[ws.len(), 3, r, r], 1.0, &mut rng::rng(seed));
    let (p, e) = path_length_graph(
        |w| Generator::synthesis_graph(&g.arch, &vars, w).image,
        &w,
        &noise,
        ema,
        decay,
    );
    (to_f64(p.item()), e)
}

/// Anything that turns Z codes into images with segmentations.
pub trait SegGenerator {
    fn render_z(&self, zs: &[&LatentCode]) -> Result<Vec<(ImageTensor, SegmentationMap)>>;
}

impl<T: Scalar> SegGenerator for Generator<T> {
    fn render_z(&self, zs: &[&LatentCode]) -> Result<Vec<(ImageTensor, SegmentationMap)>> {
        let ws = self.map_batch(zs)?;
        let refs: Vec<&LatentCode> = ws.iter().collect();
        Ok(self
            .generate_batch(&refs)?
            .into_iter()
            .map(|g| (g.image, g.seg))
            .collect())
    }
}

/// Value of the color-matching loss for already generated pairs.
///
/// Per sample, sums `‖m^s(a) − m^s(b)‖²` over skin and hair, skipping a
/// region when either image lacks it; averages over all samples.
pub fn color_loss_from_outputs(
    a: &[(ImageTensor, SegmentationMap)],
    b: &[(ImageTensor, SegmentationMap)],
) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut total = 0.0;
    for (i, ((ia, sa), (ib, sb))) in a.iter().zip(b).enumerate() {
        let mut used = 0;
        for s in COLOR_REGIONS {
            let (Some(ma), Some(mb)) = (
                crate::generators::region_mean_color(ia, sa, s),
                crate::generators::region_mean_color(ib, sb, s),
            ) else {
                continue;
            };
            total += (0..3).map(|c| (ma[c] - mb[c]).powi(2)).sum::<f64>();
            used += 1;
        }
        if used == 0 {
            log::warn!("color loss: sample {i} has neither skin nor hair in both domains");
        }
    }
    total / a.len().max(1) as f64
}

/// Color-matching loss between two generators fed the same Z codes.
pub fn color_matching_loss(
    g_real: &impl SegGenerator,
    g_avatar: &impl SegGenerator,
    zs: &[&LatentCode],
) -> Result<f64> {
    Ok(color_loss_from_outputs(
        &g_real.render_z(zs)?,
        &g_avatar.render_z(zs)?,
    ))
}

/// Graph form of the color-matching loss. Region masks are the constant
/// argmax segmentations; gradients flow through both images.
pub fn color_loss_graph<T: Scalar>(
    img_a: &Var<T>,
    segs_a: &[SegmentationMap],
    img_b: &Var<T>,
    segs_b: &[SegmentationMap],
) -> Var<T> {
    let b = segs_a.len();
    let (h, w) = (img_a.shape()[2], img_a.shape()[3]);
    let n = h * w;
    let mut total: Option<Var<T>> = None;
    for s in COLOR_REGIONS {
        let mut wa = vec![T::zero(); b * n];
        let mut wb = vec![T::zero(); b * n];
        let mut valid = vec![T::zero(); b];
        for i in 0..b {
            let (ca, cb) = (segs_a[i].count(s), segs_b[i].count(s));
            if ca == 0 || cb == 0 {
                continue;
            }
            valid[i] = T::one();
            for (px, l) in segs_a[i].labels().iter().enumerate() {
                if *l == s {
                    wa[i * n + px] = lit(1.0 / ca as f64);
                }
            }
            for (px, l) in segs_b[i].labels().iter().enumerate() {
                if *l == s {
                    wb[i * n + px] = lit(1.0 / cb as f64);
                }
            }
        }
        let mean = |img: &Var<T>, wts: Vec<T>| {
            img.mul(&Var::constant(Tensor::new(&[b, 1, h, w], wts)))
                .sum_to(&[b, 3, 1, 1])
        };
        let diff = mean(img_a, wa).sub(&mean(img_b, wb));
        let term = diff
            .square()
            .mul(&Var::constant(Tensor::new(&[b, 1, 1, 1], valid)))
            .sum();
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    total
        .expect("two regions")
        .scale(lit(1.0 / b.max(1) as f64))
}

/// One row of the training curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub color: f64,
    pub r1: f64,
    pub path: f64,
    pub pl_ema: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<TrainRow>,
    pub d_reg_updates: usize,
    pub g_reg_updates: usize,
    /// Fréchet-style distance between real and generated feature statistics.
    pub proxy_fid: Option<f64>,
}

impl TrainLog {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,d_loss,g_loss,color,r1,path,pl_ema")?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.step, r.d_loss, r.g_loss, r.color, r.r1, r.path, r.pl_ema
            )?;
        }
        Ok(())
    }
}

/// Instrumentation callbacks from the training loop.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Step {
        step: usize,
        d_loss: f64,
        g_loss: f64,
    },
    DiscriminatorReg {
        step: usize,
        r1: f64,
    },
    GeneratorReg {
        step: usize,
        penalty: f64,
    },
}

/// Mutable state of one adversarial run.
pub struct GanTrainer<'a, T: Scalar> {
    pub cfg: GanTrainConfig,
    pub g: Generator<T>,
    pub d: Discriminator<T>,
    g_opt: Adam<T>,
    d_opt: Adam<T>,
    g_trainable: Vec<usize>,
    teacher: Option<&'a Generator<T>>,
    pub pl_ema: f64,
    rng: ChaCha8Rng,
    collapse_run: usize,
    pub step: usize,
    pub log: TrainLog,
}

/// Gradients of the generator objective on one batch, returned so tests
/// can compare loss compositions.
pub struct GeneratorGrads<T> {
    pub grads: Vec<Option<Tensor<T>>>,
    pub g_loss: f64,
    pub d_loss: f64,
    pub color: f64,
    d_grads: Vec<Option<Tensor<T>>>,
}

impl<'a, T: Scalar> GanTrainer<'a, T> {
    /// `teacher` is the frozen realistic generator used by the color term.
    pub fn new(
        cfg: &GanTrainConfig,
        g: Generator<T>,
        d: Discriminator<T>,
        teacher: Option<&'a Generator<T>>,
    ) -> Result<Self> {
        cfg.validate()?;
        if g.arch != d.arch || teacher.is_some_and(|t| t.arch != g.arch) {
            return Err(Error::Config(
                "generator/discriminator architectures differ".into(),
            ));
        }
        let g_trainable = if teacher.is_some() && cfg.freeze_mapping {
            g.synthesis_indices()
        } else {
            (0..g.params.len()).collect()
        };
        Ok(GanTrainer {
            g_opt: Adam::new(g.params.tensors()),
            d_opt: Adam::new(d.params.tensors()),
            cfg: cfg.clone(),
            g,
            d,
            g_trainable,
            teacher,
            pl_ema: 0.0,
            rng: rng::rng(rng::derive(cfg.seed, 0x6761_6e)),
            collapse_run: 0,
            step: 0,
            log: TrainLog::default(),
        })
    }

    fn sample_real<'d>(
        &mut self,
        data: &'d [(ImageTensor, SegmentationMap)],
    ) -> Vec<&'d (ImageTensor, SegmentationMap)> {
        (0..self.cfg.batch_size)
            .map(|_| &data[self.rng.random_range(0..data.len())])
            .collect()
    }

    /// Draws a Z batch, the partner batch for mixing and the 0/1 keep mask.
    fn sample_z(&mut self, b: usize) -> (Vec<LatentCode>, Vec<LatentCode>, Tensor<T>, Vec<bool>) {
        let a = &self.g.arch;
        let z1: Vec<LatentCode> = (0..b)
            .map(|_| LatentCode::sample_z_with(a, &mut self.rng))
            .collect();
        let z2: Vec<LatentCode> = (0..b)
            .map(|_| LatentCode::sample_z_with(a, &mut self.rng))
            .collect();
        let (p, d) = (a.num_parts, a.latent_dim);
        let mut keep = vec![T::one(); b * p * d];
        let mut unmixed = vec![true; b];
        for i in 0..b {
            if let Some(c) = crossover_point(p, self.cfg.style_mix_prob, &mut self.rng) {
                unmixed[i] = false;
                keep[i * p * d + c * d..(i + 1) * p * d]
                    .iter_mut()
                    .for_each(|v| *v = T::zero());
            }
        }
        (z1, z2, Tensor::new(&[b, p * d], keep), unmixed)
    }

    /// Builds the shared graph for one step and returns gradients for both
    /// networks (simultaneous update).
    pub fn batch_grads(
        &mut self,
        real: &DiscBatch<T>,
        lambda_color: f64,
    ) -> Result<GeneratorGrads<T>> {
        let b = real.images.shape()[0];
        let (z1, z2, keep, unmixed) = self.sample_z(b);
        let arch = self.g.arch.clone();
        let gv: Vec<Var<T>> = self
            .g
            .params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if self.g_trainable.contains(&i) {
                    Var::leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                }
            })
            .collect();
        let dv = self.d.params.leaves();
        let r1s: Vec<&LatentCode> = z1.iter().collect();
        let r2s: Vec<&LatentCode> = z2.iter().collect();
        let w1 = Generator::mapping_graph(&arch, &gv, &Var::constant(LatentCode::stack(&r1s)));
        let w2 = Generator::mapping_graph(&arch, &gv, &Var::constant(LatentCode::stack(&r2s)));
        let keep_v = Var::constant(keep.clone());
        let inv = Var::constant(keep.map(|k| T::one() - k));
        let w = w1.mul(&keep_v).add(&w2.mul(&inv));
        let fake = Generator::synthesis_graph(&arch, &gv, &w);
        let fake_logits =
            Discriminator::graph(&arch, &dv, &Discriminator::input(&fake.image, &fake.masks));
        let real_logits = Discriminator::graph(&arch, &dv, &Var::constant(real.input()));
        let g_adv = fake_logits.neg().softplus().mean();
        let d_loss = fake_logits
            .softplus()
            .mean()
            .add(&real_logits.neg().softplus().mean());

        let mut g_total = g_adv.clone();
        let mut color = 0.0;
        if let (Some(teacher), true) = (self.teacher, lambda_color > 0.0) {
            let idx: Vec<usize> = (0..b).filter(|&i| unmixed[i]).collect();
            if !idx.is_empty() {
                let zs: Vec<&LatentCode> = idx.iter().map(|&i| &z1[i]).collect();
                let teacher_out = teacher.render_z(&zs)?;
                let t_img: Vec<&ImageTensor> = teacher_out.iter().map(|o| &o.0).collect();
                let t_seg: Vec<SegmentationMap> = teacher_out.iter().map(|o| o.1.clone()).collect();
                let own = outputs_to_generated(fake.image.value(), fake.masks.value());
                let own_seg: Vec<SegmentationMap> =
                    idx.iter().map(|&i| own[i].seg.clone()).collect();
                let parts: Vec<Var<T>> = idx.iter().map(|&i| fake.image.slice(0, i, 1)).collect();
                let own_img = Var::concat(&parts, 0);
                let c = color_loss_graph(
                    &Var::constant(ImageTensor::batch_to_tensor(&t_img)),
                    &t_seg,
                    &own_img,
                    &own_seg,
                );
                color = to_f64(c.item());
                g_total = g_total.add(&c.scale(lit(lambda_color)));
            }
        }
        let g_leaves: Vec<&Var<T>> = self.g_trainable.iter().map(|&i| &gv[i]).collect();
        let g_sel = grads_to_tensors(grad(&g_total, &g_leaves, false));
        let mut grads = vec![None; gv.len()];
        for (k, &i) in self.g_trainable.iter().enumerate() {
            grads[i] = g_sel[k].clone();
        }
        let d_refs: Vec<&Var<T>> = dv.iter().collect();
        let d_grads = grads_to_tensors(grad(&d_loss, &d_refs, false));
        Ok(GeneratorGrads {
            grads,
            g_loss: to_f64(g_adv.item()),
            d_loss: to_f64(d_loss.item()),
            color,
            d_grads,
        })
    }

    /// Runs `n` more steps over `data`, calling `hook` on every event.
    pub fn run(
        &mut self,
        data: &[(ImageTensor, SegmentationMap)],
        n: usize,
        hook: &mut dyn FnMut(&TrainEvent),
    ) -> Result<()> {
        if n > 0 && data.is_empty() {
            return Err(Error::Config("empty training set".into()));
        }
        let cfg_d = self.cfg.adam.lazy(self.cfg.d_reg_interval);
        let cfg_g = self.cfg.adam.lazy(self.cfg.g_reg_interval);
        let parts = self.g.arch.num_parts;
        for _ in 0..n {
            self.step += 1;
            let step = self.step;
            let real = DiscBatch::<T>::from_pairs(&self.sample_real(data), parts);
            let gg = self.batch_grads(&real, self.cfg.lambda_color)?;
            if !(gg.d_loss.is_finite() && gg.g_loss.is_finite() && gg.color.is_finite()) {
                return Err(Error::Diverged(format!("non-finite loss at step {step}")));
            }
            self.d_opt
                .step(self.d.params.tensors_mut(), &gg.d_grads, &cfg_d, cfg_d.lr);
            self.g_opt
                .step(self.g.params.tensors_mut(), &gg.grads, &cfg_g, cfg_g.lr);
            hook(&TrainEvent::Step {
                step,
                d_loss: gg.d_loss,
                g_loss: gg.g_loss,
            });

            let mut r1 = f64::NAN;
            if step % self.cfg.d_reg_interval == 0 && self.cfg.lambda_r1 > 0.0 {
                r1 = self.d_regularize(&real, &cfg_d);
                self.log.d_reg_updates += 1;
                hook(&TrainEvent::DiscriminatorReg { step, r1 });
            }
            let mut path = f64::NAN;
            if step % self.cfg.g_reg_interval == 0 && self.cfg.lambda_path > 0.0 {
                path = self.g_regularize(&cfg_g);
                self.log.g_reg_updates += 1;
                hook(&TrainEvent::GeneratorReg {
                    step,
                    penalty: path,
                });
            }

            if gg.d_loss < self.cfg.collapse_threshold {
                self.collapse_run += 1;
                if self.collapse_run >= self.cfg.collapse_patience {
                    return Err(Error::Diverged(format!(
                        "discriminator loss below {} for {} consecutive steps (step {step})",
                        self.cfg.collapse_threshold, self.cfg.collapse_patience
                    )));
                }
            } else {
                self.collapse_run = 0;
            }
            if !self.g.params.is_finite() || !self.d.params.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite weights at step {step}"
                )));
            }
            if step % self.cfg.log_every.max(1) == 0 || step == 1 {
                self.log.rows.push(TrainRow {
                    step,
                    d_loss: gg.d_loss,
                    g_loss: gg.g_loss,
                    color: gg.color,
                    r1,
                    path,
                    pl_ema: self.pl_ema,
                });
                log::debug!(
                    "step {step}: d {:.4} g {:.4} color {:.5} pl_ema {:.4}",
                    gg.d_loss,
                    gg.g_loss,
                    gg.color,
                    self.pl_ema
                );
            }
        }
        Ok(())
    }

    fn d_regularize(&mut self, real: &DiscBatch<T>, cfg: &AdamConfig) -> f64 {
        let dv = self.d.params.leaves();
        let arch = self.d.arch.clone();
        let pen = r1_graph(|x| Discriminator::graph(&arch, &dv, x), &real.input());
        let scale = self.cfg.lambda_r1 * self.cfg.d_reg_interval as f64;
        let loss = pen.scale(lit(scale));
        let refs: Vec<&Var<T>> = dv.iter().collect();
        let grads = grads_to_tensors(grad(&loss, &refs, false));
        self.d_opt
            .step(self.d.params.tensors_mut(), &grads, cfg, cfg.lr);
        to_f64(pen.item())
    }

    fn g_regularize(&mut self, cfg: &AdamConfig) -> f64 {
        let b = (self.cfg.batch_size / self.cfg.path_batch_shrink).max(1);
        let arch = self.g.arch.clone();
        let gv: Vec<Var<T>> = self
            .g
            .params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if self.g_trainable.contains(&i) {
                    Var::leaf(t.clone())
                } else {
                    Var::constant(t.clone())
                }
            })
            .collect();
        let (z1, _, _, _) = self.sample_z(b);
        let zr: Vec<&LatentCode> = z1.iter().collect();
        let w = Generator::mapping_graph(&arch, &gv, &Var::constant(LatentCode::stack(&zr)));
        // Jacobian is taken at w; when the mapping is frozen w is a constant
        // and needs to be a leaf for the inner gradient.
        let w = if w.requires_grad() {
            w
        } else {
            Var::leaf(w.value().clone())
        };
        let r = arch.resolution;
        let noise = crate::nn::randn::<T>(&[b, 3, r, r], 1.0, &mut self.rng);
        let (pen, ema) = path_length_graph(
            |w| Generator::synthesis_graph(&arch, &gv, w).image,
            &w,
            &noise,
            self.pl_ema,
            self.cfg.path_decay,
        );
        self.pl_ema = ema;
        let scale = self.cfg.lambda_path * self.cfg.g_reg_interval as f64;
        let loss = pen.scale(lit(scale));
        let refs: Vec<&Var<T>> = self.g_trainable.iter().map(|&i| &gv[i]).collect();
        let sel = grads_to_tensors(grad(&loss, &refs, false));
        let mut grads = vec![None; gv.len()];
        for (k, &i) in self.g_trainable.iter().enumerate() {
            grads[i] = sel[k].clone();
        }
        self.g_opt
            .step(self.g.params.tensors_mut(), &grads, cfg, cfg.lr);
        to_f64(pen.item())
    }
}

/// Realistic training renders with their segmentations.
pub fn realistic_dataset(n: usize, seed: u64, res: usize) -> Vec<(ImageTensor, SegmentationMap)> {
    (0..n as u64)
        .map(|i| {
            let a = sample_face_attributes(rng::derive(seed, 2 * i));
            render_realistic(&a, rng::derive(seed, 2 * i + 1), res)
        })
        .collect()
}

/// Engine renders of uniformly sampled vectors with the engine's debug masks.
pub fn avatar_dataset(
    schema: &EngineSchema,
    n: usize,
    seed: u64,
    res: usize,
) -> Result<Vec<(ImageTensor, SegmentationMap)>> {
    (0..n as u64)
        .map(|i| render_avatar_with_mask(schema, &sample_vector(schema, rng::derive(seed, i)), res))
        .collect()
}

/// Trains the realistic generator from scratch.
pub fn pretrain_realistic<T: Scalar>(
    cfg: &GanTrainConfig,
    arch: &ModelArch,
    data: &[(ImageTensor, SegmentationMap)],
    hook: &mut dyn FnMut(&TrainEvent),
) -> Result<(Generator<T>, Discriminator<T>, TrainLog)> {
    if data.len() < cfg.min_dataset_size {
        return Err(Error::Config(format!(
            "pretraining needs at least {} images, got {}",
            cfg.min_dataset_size,
            data.len()
        )));
    }
    let g = Generator::init(arch, Domain::Realistic, rng::derive(cfg.seed, 1));
    let d = Discriminator::init(arch, rng::derive(cfg.seed, 2));
    let mut t = GanTrainer::new(cfg, g, d, None)?;
    t.run(data, cfg.steps, hook)?;
    Ok((t.g, t.d, t.log))
}

/// Transfers a realistic generator to the avatar domain. The realistic
/// generator is only read; the returned generator and discriminator start
/// from copies of the realistic weights.
pub fn finetune_avatar<T: Scalar>(
    cfg: &GanTrainConfig,
    g_real: &Generator<T>,
    d_real: &Discriminator<T>,
    data: &[(ImageTensor, SegmentationMap)],
    hook: &mut dyn FnMut(&TrainEvent),
) -> Result<(Generator<T>, Discriminator<T>, TrainLog)> {
    if g_real.domain != Domain::Realistic {
        return Err(Error::Config(
            "finetuning must start from a realistic generator".into(),
        ));
    }
    let g = g_real.with_domain(Domain::Avatar);
    let mut t = GanTrainer::new(cfg, g, d_real.clone(), Some(g_real))?;
    t.run(data, cfg.steps, hook)?;
    Ok((t.g, t.d, t.log))
}
