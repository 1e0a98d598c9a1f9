//! Optimization-based inversion of avatar images into the avatar
//! generator's W space, the perceptual metric it uses, and the mean-latent
//! initializations.

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, no_grad, Var};
use crate::engines::EngineSchema;
use crate::error::{Error, Result};
use crate::generators::{Generator, LatentCode, Space};
use crate::image::{ImageTensor, Label};
use crate::nn::{conv, conv_weight, grads_to_tensors, Adam, AdamConfig, ParamSet, LRELU};
use crate::rng;
use crate::scalar::{lit, to_f64, Scalar};
use crate::tensor::ConvGeom;

/// Frozen random convolutional pyramid used as a perceptual distance.
///
/// Each layer is a stride-2 3x3 convolution followed by a leaky ReLU. Feature
/// vectors are unit-normalized across channels at every pixel; the distance
/// sums over layers the per-pixel squared distance between normalized
/// feature vectors, averaged over pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualMetric<T> {
    pub seed: u64,
    pub channels: Vec<usize>,
    /// Per-layer weights of the distance, all 1 by default.
    pub layer_weights: Vec<f64>,
    params: ParamSet<T>,
}

pub const METRIC_CHANNELS: [usize; 3] = [8, 16, 32];

impl<T: Scalar> PerceptualMetric<T> {
    pub fn new(seed: u64) -> Self {
        Self::with_channels(seed, &METRIC_CHANNELS)
    }

    pub fn with_channels(seed: u64, channels: &[usize]) -> Self {
        let mut r = rng::rng(rng::derive(seed, 0x6c70));
        let mut p = ParamSet::new();
        let mut cin = 3;
        for (i, &c) in channels.iter().enumerate() {
            p.push(format!("layer{i}.w"), conv_weight(c, cin, 3, 1.0, &mut r));
            p.push(
                format!("layer{i}.b"),
                crate::nn::randn(&[1, c, 1, 1], 0.1, &mut r),
            );
            cin = c;
        }
        PerceptualMetric {
            seed,
            channels: channels.to_vec(),
            layer_weights: vec![1.0; channels.len()],
            params: p,
        }
    }

    /// Plug-in slot for externally trained weights; layouts must match.
    pub fn with_params(mut self, params: ParamSet<T>) -> Result<Self> {
        if params.len() != self.params.len()
            || params
                .tensors()
                .iter()
                .zip(self.params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Config(
                "perceptual metric weights do not match the layer layout".into(),
            ));
        }
        self.params = params;
        Ok(self)
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    /// Unit-normalized features for `x: [B, 3, H, W]` in `[0, 1]`.
    pub fn features_graph(&self, x: &Var<T>) -> Vec<Var<T>> {
        let vars = self.params.constants();
        let mut h = x.scale(lit(2.0)).add_scalar(lit(-1.0));
        let mut out = Vec::with_capacity(self.channels.len());
        for i in 0..self.channels.len() {
            h = conv(
                &h,
                &vars[2 * i],
                &vars[2 * i + 1],
                ConvGeom { stride: 2, pad: 1 },
            )
            .leaky_relu(lit(LRELU));
            let shape = h.shape().to_vec();
            let norm = h
                .square()
                .sum_to(&[shape[0], 1, shape[2], shape[3]])
                .add_scalar(lit(1e-10))
                .sqrt();
            out.push(h.div(&norm));
        }
        out
    }

    /// Per-sample distances `[B]` between a graph batch and fixed target features.
    pub fn distance_graph(&self, a: &Var<T>, target: &[Var<T>]) -> Var<T> {
        let fa = self.features_graph(a);
        let b = a.shape()[0];
        let mut total: Option<Var<T>> = None;
        for (i, (x, y)) in fa.iter().zip(target).enumerate() {
            // squared distance between unit feature vectors, averaged over pixels
            let per = x.value().numel() / b;
            let pixels = x.shape()[2] * x.shape()[3];
            let d = x
                .sub(y)
                .square()
                .reshape(&[b, per])
                .sum_axis(1)
                .scale(lit(self.layer_weights[i] / pixels as f64));
            total = Some(match total {
                Some(t) => t.add(&d),
                None => d,
            });
        }
        total.expect("metric has at least one layer").reshape(&[b])
    }

    pub fn distance_batch(&self, a: &[&ImageTensor], b: &[&ImageTensor]) -> Vec<f64> {
        assert_eq!(a.len(), b.len(), "distance batches differ in length");
        for (x, y) in a.iter().zip(b) {
            assert!(
                x.height() == y.height() && x.width() == y.width(),
                "perceptual distance needs equal resolutions"
            );
        }
        if a.is_empty() {
            return Vec::new();
        }
        no_grad(|| {
            let tb = self.features_graph(&Var::constant(ImageTensor::batch_to_tensor(b)));
            let d = self.distance_graph(&Var::constant(ImageTensor::batch_to_tensor(a)), &tb);
            d.value().data().iter().map(|&v| to_f64(v)).collect()
        })
    }

    pub fn distance(&self, a: &ImageTensor, b: &ImageTensor) -> f64 {
        self.distance_batch(&[a], &[b])[0]
    }
}

/// Perceptual distance between two images of equal resolution.
pub fn perceptual_distance<T: Scalar>(
    m: &PerceptualMetric<T>,
    a: &ImageTensor,
    b: &ImageTensor,
) -> f64 {
    m.distance(a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InversionConfig {
    pub steps: usize,
    pub lambda_p: f64,
    pub lambda_i: f64,
    pub lambda_l: f64,
    /// Initial learning rate, cosine-annealed to zero over `steps`.
    pub lr: f64,
    /// Images optimized together; each keeps independent moments.
    pub batch_size: usize,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            steps: 200,
            lambda_p: 1.0,
            lambda_i: 0.1,
            // 1.0 pins desk-scale codes near the mean; see README
            lambda_l: 0.01,
            lr: 0.1,
            batch_size: 16,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "inversion: steps and batch_size must be >= 1".into(),
            ));
        }
        if [self.lambda_p, self.lambda_i, self.lambda_l]
            .iter()
            .any(|l| !(*l >= 0.0))
        {
            return Err(Error::Config("inversion: weights must be >= 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("inversion: lr must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate used for update `t` (0-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        0.5 * self.lr * (1.0 + (std::f64::consts::PI * t as f64 / self.steps as f64).cos())
    }
}

/// Components of the inversion objective at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InversionLoss {
    pub total: f64,
    pub perceptual: f64,
    pub image_mse: f64,
    pub latent_mse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// Lowest-loss code seen.
    pub w: LatentCode,
    /// Total loss at the initial code and after each update (`steps + 1` entries).
    pub trace: Vec<f64>,
    pub initial: InversionLoss,
    /// Loss at the returned code.
    pub best: InversionLoss,
    pub best_step: usize,
}

/// Fixed data for one batch: target features and the latent anchor.
struct Targets<T: Scalar> {
    images: Var<T>,
    features: Vec<Var<T>>,
    anchor: Var<T>,
}

fn objective<T: Scalar>(
    g: &Generator<T>,
    vars: &[Var<T>],
    metric: &PerceptualMetric<T>,
    cfg: &InversionConfig,
    w: &Var<T>,
    t: &Targets<T>,
) -> (Var<T>, Vec<InversionLoss>) {
    let b = w.shape()[0];
    let img = Generator::synthesis_graph(&g.arch, vars, w).image;
    let per_img = img.value().numel() / b;
    let p = metric.distance_graph(&img, &t.features);
    let i = img
        .sub(&t.images)
        .square()
        .reshape(&[b, per_img])
        .sum_axis(1)
        .scale(lit(1.0 / per_img as f64))
        .reshape(&[b]);
    let wd = w.shape()[1];
    let l = w
        .sub(&t.anchor)
        .square()
        .sum_axis(1)
        .scale(lit(1.0 / wd as f64))
        .reshape(&[b]);
    let per = p
        .scale(lit(cfg.lambda_p))
        .add(&i.scale(lit(cfg.lambda_i)))
        .add(&l.scale(lit(cfg.lambda_l)));
    let parts = (0..b)
        .map(|k| {
            let at = |v: &Var<T>| to_f64(v.value().data()[k]);
            InversionLoss {
                total: at(&per),
                perceptual: at(&p),
                image_mse: at(&i),
                latent_mse: at(&l),
            }
        })
        .collect();
    (per.sum(), parts)
}

/// Inverts a batch of targets. Each entry of `w_init` must be a W code;
/// `anchor` is the latent the regularizer pulls toward (the mean latent).
///
/// Codes are optimized jointly but independently: the batch objective is a
/// sum of per-image terms and Adam is per coordinate.
pub fn invert_batch<T: Scalar>(
    g: &Generator<T>,
    metric: &PerceptualMetric<T>,
    targets: &[&ImageTensor],
    cfg: &InversionConfig,
    w_init: &[&LatentCode],
    anchor: &LatentCode,
) -> Result<Vec<InversionResult>> {
    cfg.validate()?;
    if targets.len() != w_init.len() {
        return Err(Error::Config(
            "one initial code per target is required".into(),
        ));
    }
    for w in w_init.iter().chain(std::iter::once(&anchor)) {
        if w.space != Space::W {
            return Err(Error::WrongSpace {
                expected: Space::W,
                found: w.space,
            });
        }
        if w.num_parts != g.arch.num_parts || w.dim != g.arch.latent_dim {
            return Err(Error::Config(
                "latent code does not match the generator".into(),
            ));
        }
    }
    let r = g.arch.resolution;
    if targets
        .iter()
        .any(|t| t.height() != r || t.width() != r || !t.is_valid())
    {
        return Err(Error::Config(format!(
            "inversion targets must be valid {r}x{r} images"
        )));
    }
    let b = targets.len();
    if b == 0 {
        return Ok(Vec::new());
    }
    let vars = g.params.constants();
    let images = Var::constant(ImageTensor::batch_to_tensor::<T>(targets));
    let features = no_grad(|| metric.features_graph(&images))
        .into_iter()
        .map(|f| Var::constant(f.value().clone()))
        .collect();
    let anchors: Vec<&LatentCode> = vec![anchor; b];
    let t = Targets {
        images,
        features,
        anchor: Var::constant(LatentCode::stack(&anchors)),
    };
    let mut w = vec![LatentCode::stack::<T>(w_init)];
    let mut opt = Adam::new(&w);
    let adam = AdamConfig {
        lr: cfg.lr,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut traces = vec![Vec::with_capacity(cfg.steps + 1); b];
    let mut initial = vec![InversionLoss::default(); b];
    let mut best: Vec<(InversionLoss, usize, LatentCode)> = Vec::with_capacity(b);
    for step in 0..=cfg.steps {
        let wv = Var::leaf(w[0].clone());
        let last = step == cfg.steps;
        let (loss, parts) = if last {
            no_grad(|| objective(g, &vars, metric, cfg, &wv, &t))
        } else {
            objective(g, &vars, metric, cfg, &wv, &t)
        };
        let codes = LatentCode::unstack(&w[0], Space::W, g.arch.num_parts, g.arch.latent_dim);
        for (k, p) in parts.iter().enumerate() {
            traces[k].push(p.total);
            if !p.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    trace: traces[k].clone(),
                });
            }
            if step == 0 {
                // the caller's code exactly, not its round trip through T
                initial[k] = *p;
                best.push((*p, 0, w_init[k].clone()));
            } else if p.total < best[k].0.total {
                best[k] = (*p, step, codes[k].clone());
            }
        }
        if last {
            break;
        }
        let gw = grads_to_tensors(grad(&loss, &[&wv], false));
        opt.step(&mut w, &gw, &adam, cfg.lr_at(step));
    }
    Ok(best
        .into_iter()
        .zip(traces)
        .zip(initial)
        .map(|(((bl, bs, code), trace), init)| InversionResult {
            w: code,
            trace,
            initial: init,
            best: bl,
            best_step: bs,
        })
        .collect())
}

/// Inverts one target image starting from `w_init`, regularized toward `w_mean`.
pub fn invert<T: Scalar>(
    g: &Generator<T>,
    metric: &PerceptualMetric<T>,
    target: &ImageTensor,
    cfg: &InversionConfig,
    w_init: &LatentCode,
    w_mean: &LatentCode,
) -> Result<InversionResult> {
    Ok(invert_batch(g, metric, &[target], cfg, &[w_init], w_mean)?.remove(0))
}

/// Block-wise mean of `map_z_to_w` over `n` standard-normal samples.
pub fn compute_mean_latent<T: Scalar>(g: &Generator<T>, n: usize, seed: u64) -> Result<LatentCode> {
    if n == 0 {
        return Err(Error::Config("mean latent needs n >= 1".into()));
    }
    let zs: Vec<LatentCode> = (0..n as u64)
        .map(|i| LatentCode::sample_z(&g.arch, rng::derive(seed, i)))
        .collect();
    mean_of_mapped(g, &zs)
}

fn mean_of_mapped<T: Scalar>(g: &Generator<T>, zs: &[LatentCode]) -> Result<LatentCode> {
    let mut acc = vec![0.0; g.arch.latent_size()];
    for chunk in zs.chunks(256) {
        let refs: Vec<&LatentCode> = chunk.iter().collect();
        for w in g.map_batch(&refs)? {
            acc.iter_mut().zip(&w.values).for_each(|(a, v)| *a += v);
        }
    }
    let mut out = LatentCode::zeros(Space::W, g.arch.num_parts, g.arch.latent_dim);
    out.values = acc.into_iter().map(|a| a / zs.len() as f64).collect();
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModifiedMean {
    pub w: LatentCode,
    /// Samples whose generated segmentation showed glasses.
    pub glasses_samples: usize,
    /// The schema or generator has no glasses part; `w` is the plain mean.
    pub no_op: bool,
}

/// Minimum fraction of glasses pixels for a sample to count as wearing glasses.
pub const GLASSES_PIXEL_FRACTION: f64 = 0.005;
pub const MIN_GLASSES_SAMPLES: usize = 100;

/// Mean latent whose glasses block is averaged over samples that render
/// glasses, so inversion starts from a code able to produce them.
pub fn compute_modified_mean_latent<T: Scalar>(
    g: &Generator<T>,
    schema: &EngineSchema,
    n: usize,
    seed: u64,
    threshold: f64,
) -> Result<ModifiedMean> {
    let plain = compute_mean_latent(g, n, seed)?;
    let has_glasses = schema.attribute("glasses").is_some_and(|a| a.optional);
    let k = Label::Glasses.index();
    if !has_glasses || k >= g.arch.num_parts {
        return Ok(ModifiedMean {
            w: plain,
            glasses_samples: 0,
            no_op: true,
        });
    }
    let mut sum = vec![0.0; g.arch.latent_dim];
    let mut found = 0;
    for start in (0..n).step_by(64) {
        let zs: Vec<LatentCode> = (start..(start + 64).min(n))
            .map(|i| LatentCode::sample_z(&g.arch, rng::derive(seed, i as u64)))
            .collect();
        let refs: Vec<&LatentCode> = zs.iter().collect();
        let ws = g.map_batch(&refs)?;
        let wr: Vec<&LatentCode> = ws.iter().collect();
        for (w, out) in ws.iter().zip(g.generate_batch(&wr)?) {
            if out.seg.fraction(Label::Glasses) >= threshold {
                found += 1;
                sum.iter_mut().zip(w.block(k)).for_each(|(s, v)| *s += v);
            }
        }
    }
    if found < MIN_GLASSES_SAMPLES {
        return Err(Error::TooFewGlassesSamples {
            found,
            tried: n,
            needed: MIN_GLASSES_SAMPLES,
        });
    }
    let mut w = plain;
    w.block_mut(k)
        .iter_mut()
        .zip(&sum)
        .for_each(|(d, s)| *d = s / found as f64);
    Ok(ModifiedMean {
        w,
        glasses_samples: found,
        no_op: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{Domain, ModelArch};

    fn noisy(img: &ImageTensor, sigma: f32, seed: u64) -> ImageTensor {
        let mut r = rng::rng(seed);
        let mut out = img.clone();
        for v in out.data_mut() {
            *v = (*v + rand::Rng::random_range(&mut r, -sigma..sigma)).clamp(0.0, 1.0);
        }
        out
    }

    fn test_image(seed: u64) -> ImageTensor {
        let a = crate::engines::sample_face_attributes(seed);
        crate::engines::render_realistic(&a, seed, 32).0
    }

    #[test]
    fn metric_identity_and_symmetry() {
        let m = PerceptualMetric::<f32>::new(3);
        let a = test_image(1);
        let b = test_image(2);
        assert!(perceptual_distance(&m, &a, &a) < 1e-7);
        assert_eq!(m.distance(&a, &b), m.distance(&b, &a));
        assert!(m.distance(&a, &b) > 0.0);
    }

    #[test]
    fn metric_grows_with_noise() {
        let m = PerceptualMetric::<f32>::new(3);
        let mut ok = 0;
        for s in 0..100 {
            let a = test_image(s);
            if m.distance(&a, &noisy(&a, 0.1, s)) < m.distance(&a, &noisy(&a, 0.3, s + 1000)) {
                ok += 1;
            }
        }
        assert!(ok >= 95, "{ok}/100");
    }

    #[test]
    fn mean_latent_degenerate_cases() {
        let a = ModelArch::toy();
        let g = Generator::<f64>::init(&a, Domain::Avatar, 4);
        let one = compute_mean_latent(&g, 1, 9).unwrap();
        let z = LatentCode::sample_z(&a, rng::derive(9, 0));
        assert_eq!(one, g.map_z_to_w(&z).unwrap());
        let rep = mean_of_mapped(&g, &vec![z.clone(); 5]).unwrap();
        assert!(rep.distance(&one) < 1e-12);
    }

    #[test]
    fn modified_mean_is_noop_without_glasses() {
        let a = ModelArch::toy();
        let g = Generator::<f32>::init(&a, Domain::Avatar, 4);
        let s = EngineSchema::new(
            "noglasses",
            vec![crate::engines::AttributeDef::discrete("skin_tone", 4)],
        )
        .unwrap();
        let m = compute_modified_mean_latent(&g, &s, 10, 1, GLASSES_PIXEL_FRACTION).unwrap();
        assert!(m.no_op);
        assert_eq!(m.w, compute_mean_latent(&g, 10, 1).unwrap());
    }

    #[test]
    fn inversion_fixed_point_and_lr_schedule() {
        let a = ModelArch::toy();
        let g = Generator::<f32>::init(&a, Domain::Avatar, 4);
        let m = PerceptualMetric::new(0);
        let wm = compute_mean_latent(&g, 50, 2).unwrap();
        let y = g.generate(&wm).unwrap().image;
        let cfg = InversionConfig {
            steps: 5,
            ..Default::default()
        };
        let r = invert(&g, &m, &y, &cfg, &wm, &wm).unwrap();
        assert!(r.initial.total.abs() < 1e-9, "{:?}", r.initial);
        assert_eq!(r.w, wm);
        assert_eq!(r.trace.len(), 6);
        assert!((cfg.lr_at(0) - 0.1).abs() < 1e-15);
        assert!(cfg.lr_at(4) < cfg.lr_at(3));
    }

    #[test]
    fn inversion_rejects_z_codes() {
        let a = ModelArch::toy();
        let g = Generator::<f32>::init(&a, Domain::Avatar, 4);
        let z = LatentCode::sample_z(&a, 0);
        let y = ImageTensor::filled(32, 32, [0.5; 3]);
        let err = invert(
            &g,
            &PerceptualMetric::new(0),
            &y,
            &InversionConfig::default(),
            &z,
            &z,
        );
        assert!(matches!(err, Err(Error::WrongSpace { .. })));
    }
}
