//! Metrics against the attribute oracle, throughput measurement, ablations
//! and the run-directory pipeline that ties all stages together.
//!
//! Run directory layout:
//!
//! ```text
//! config.toml
//! checkpoints/{g_real,d_real,g_avatar,d_avatar,estimator,baseline}.ckpt
//! logs/{pretrain,finetune}.{csv,json}, logs/{estimator,baseline}.csv
//! latents/mean.json
//! datasets/pairs/            (see data_production)
//! reports/{estimator,baseline}.json, reports/ablation.json, reports/throughput.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data_production::{
    produce_pairs, read_dataset, render_pairs, write_dataset, Dataset, ProductionConfig,
};
use crate::engines::{
    attribute_oracle, render_avatar, render_realistic, sample_face_attributes, AttributeKind,
    AvatarVector, EngineSchema,
};
use crate::error::{Error, Result};
use crate::estimator::{train_estimator, Estimator, EstimatorLog, EstimatorTrainConfig};
use crate::gan_training::{
    avatar_dataset, finetune_avatar, pretrain_realistic, realistic_dataset, GanTrainConfig,
    SegGenerator, TrainEvent, TrainLog,
};
use crate::generators::{region_mean_color, Discriminator, Generator, LatentCode, ModelArch};
use crate::image::{ImageTensor, Label};
use crate::inversion::{
    compute_mean_latent, compute_modified_mean_latent, PerceptualMetric, GLASSES_PIXEL_FRACTION,
};
use crate::rng;
use crate::scalar::Scalar;

/// Seed streams derived from the experiment seed.
pub const REAL_STREAM: u64 = 0x7265_616c;
pub const AVATAR_STREAM: u64 = 0x6176_7472;
pub const EVAL_STREAM: u64 = 0x6576_616c;
const FID_SAMPLES: usize = 200;

/// Anything that maps images to avatar vectors.
pub trait VectorPredictor {
    fn predict_vectors(&self, images: &[&ImageTensor]) -> Vec<AvatarVector>;
}

impl<T: Scalar> VectorPredictor for Estimator<T> {
    fn predict_vectors(&self, images: &[&ImageTensor]) -> Vec<AvatarVector> {
        self.predict_batch(images)
    }
}

/// Held-out realistic faces with oracle vectors.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub images: Vec<ImageTensor>,
    pub oracle: Vec<AvatarVector>,
    pub seed: u64,
}

impl EvalSet {
    pub fn build(schema: &EngineSchema, n: usize, seed: u64, res: usize) -> Result<Self> {
        let mut images = Vec::with_capacity(n);
        let mut oracle = Vec::with_capacity(n);
        for i in 0..n as u64 {
            let a = sample_face_attributes(rng::derive(seed, 2 * i));
            images.push(render_realistic(&a, rng::derive(seed, 2 * i + 1), res).0);
            oracle.push(attribute_oracle(schema, &a)?);
        }
        Ok(EvalSet {
            images,
            oracle,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub num_images: usize,
    pub perceptual_mean: f64,
    pub perceptual_std: f64,
    /// Top-1 accuracy against the oracle per discrete attribute.
    pub accuracy: BTreeMap<String, f64>,
    /// Chance rate (1 / classes) per discrete attribute.
    pub chance: BTreeMap<String, f64>,
    pub mae: BTreeMap<String, f64>,
    /// MAE of predicting the eval-set mean for each continuous attribute.
    pub constant_mean_mae: BTreeMap<String, f64>,
    /// Kept out of regenerable reports; see `measure_throughput`.
    pub throughput: Option<f64>,
    pub meta: BTreeMap<String, String>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Scores `predictor` on `eval`: perceptual distance between engine renders
/// of the predicted and oracle vectors, per-attribute accuracy and MAE.
pub fn evaluate_method<T: Scalar>(
    method: &str,
    predictor: &dyn VectorPredictor,
    eval: &EvalSet,
    schema: &EngineSchema,
    metric: &PerceptualMetric<T>,
) -> Result<EvalReport> {
    let res = eval.images.first().map(|i| i.height()).unwrap_or(64);
    let mut predicted = Vec::with_capacity(eval.len());
    for chunk in eval.images.chunks(64) {
        let refs: Vec<&ImageTensor> = chunk.iter().collect();
        predicted.extend(predictor.predict_vectors(&refs));
    }
    for p in &predicted {
        p.validate(schema)?;
    }
    let render = |ps: &[AvatarVector]| {
        ps.iter()
            .map(|p| render_avatar(schema, p, res))
            .collect::<Result<Vec<_>>>()
    };
    let ra = render(&predicted)?;
    let rb = render(&eval.oracle)?;
    let dists = metric.distance_batch(
        &ra.iter().collect::<Vec<_>>(),
        &rb.iter().collect::<Vec<_>>(),
    );
    let (pm, ps) = mean_std(&dists);
    let mut report = EvalReport {
        method: method.to_string(),
        num_images: eval.len(),
        perceptual_mean: pm,
        perceptual_std: ps,
        ..Default::default()
    };
    let n = eval.len().max(1) as f64;
    for (i, a) in schema.attributes.iter().enumerate() {
        match a.kind {
            AttributeKind::Discrete { .. } => {
                let hits = predicted
                    .iter()
                    .zip(&eval.oracle)
                    .filter(|(p, o)| p.values[i] == o.values[i])
                    .count();
                report.accuracy.insert(a.name.clone(), hits as f64 / n);
                report
                    .chance
                    .insert(a.name.clone(), 1.0 / a.num_classes() as f64);
            }
            AttributeKind::Continuous => {
                let val = |p: &AvatarVector| match p.values[i] {
                    crate::engines::AttrValue::Continuous(x) => x,
                    _ => unreachable!("validated vector"),
                };
                let truth: Vec<f64> = eval.oracle.iter().map(val).collect();
                let mean = truth.iter().sum::<f64>() / n;
                let mae = predicted
                    .iter()
                    .zip(&truth)
                    .map(|(p, t)| (val(p) - t).abs())
                    .sum::<f64>()
                    / n;
                let base = truth.iter().map(|t| (mean - t).abs()).sum::<f64>() / n;
                report.mae.insert(a.name.clone(), mae);
                report.constant_mean_mae.insert(a.name.clone(), base);
            }
        }
    }
    report.meta.insert("schema_hash".into(), schema.hash());
    report
        .meta
        .insert("eval_seed".into(), eval.seed.to_string());
    report
        .meta
        .insert("metric_seed".into(), metric.seed.to_string());
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    /// Median over batches of single-image predictions per second.
    pub images_per_second: f64,
    /// Median wall time of one single-image prediction.
    pub latency_seconds: f64,
    pub batch_rates: Vec<f64>,
}

/// Median over `batches` runs of `per_batch` one-image predictions on the
/// calling thread, after a short warm-up.
pub fn measure_throughput(
    predictor: &dyn VectorPredictor,
    images: &[ImageTensor],
    batches: usize,
    per_batch: usize,
) -> Throughput {
    assert!(!images.is_empty(), "throughput needs at least one image");
    for img in images.iter().take(5) {
        predictor.predict_vectors(&[img]);
    }
    let mut rates = Vec::with_capacity(batches);
    let mut lat = Vec::new();
    for b in 0..batches {
        let t0 = Instant::now();
        for k in 0..per_batch {
            let t1 = Instant::now();
            predictor.predict_vectors(&[&images[(b * per_batch + k) % images.len()]]);
            lat.push(t1.elapsed().as_secs_f64());
        }
        rates.push(per_batch as f64 / t0.elapsed().as_secs_f64());
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let mut sorted = rates.clone();
    Throughput {
        images_per_second: median(&mut sorted),
        latency_seconds: median(&mut lat),
        batch_rates: rates,
    }
}

/// Spatially pooled perceptual features, all layers concatenated.
fn pooled_features<T: Scalar>(
    metric: &PerceptualMetric<T>,
    images: &[&ImageTensor],
) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); images.len()];
    for (k, chunk) in images.chunks(32).enumerate() {
        let x = crate::autodiff::Var::constant(ImageTensor::batch_to_tensor::<T>(chunk));
        for f in crate::autodiff::no_grad(|| metric.features_graph(&x)) {
            let s = f.shape().to_vec();
            let hw = s[2] * s[3];
            let d = f.value().data();
            for b in 0..s[0] {
                for c in 0..s[1] {
                    let base = (b * s[1] + c) * hw;
                    let m = d[base..base + hw]
                        .iter()
                        .map(|v| v.to_f64().unwrap())
                        .sum::<f64>()
                        / hw as f64;
                    out[k * 32 + b].push(m);
                }
            }
        }
    }
    out
}

/// Fréchet distance between diagonal Gaussians fitted to pooled perceptual
/// features of generated and reference images. A cheap stand-in for FID:
/// comparable within one metric seed, not across.
pub fn proxy_fid<T: Scalar>(
    metric: &PerceptualMetric<T>,
    generated: &[&ImageTensor],
    reference: &[&ImageTensor],
) -> f64 {
    let stats = |imgs: &[&ImageTensor]| {
        let f = pooled_features(metric, imgs);
        let n = f.len() as f64;
        let d = f[0].len();
        let mean: Vec<f64> = (0..d)
            .map(|j| f.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let var: Vec<f64> = (0..d)
            .map(|j| f.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
            .collect();
        (mean, var)
    };
    let (m1, v1) = stats(generated);
    let (m2, v2) = stats(reference);
    m1.iter()
        .zip(&m2)
        .zip(v1.iter().zip(&v2))
        .map(|((a, b), (va, vb))| (a - b).powi(2) + va + vb - 2.0 * (va * vb).sqrt())
        .sum()
}

/// `proxy_fid` of `n` fresh samples of `g` against the first `n` data images.
pub fn generator_proxy_fid<T: Scalar>(
    g: &Generator<T>,
    data: &[(ImageTensor, crate::image::SegmentationMap)],
    metric: &PerceptualMetric<T>,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let n = n.min(data.len()).max(2);
    let zs: Vec<LatentCode> = (0..n as u64)
        .map(|i| LatentCode::sample_z(&g.arch, rng::derive(seed, i)))
        .collect();
    let fake = g.render_z(&zs.iter().collect::<Vec<_>>())?;
    let a: Vec<&ImageTensor> = fake.iter().map(|p| &p.0).collect();
    let b: Vec<&ImageTensor> = data.iter().take(n).map(|p| &p.0).collect();
    Ok(proxy_fid(metric, &a, &b))
}

/// Per-z distance between the mean colors of region `s` in the two
/// generators' outputs; `None` where either output lacks the region.
pub fn region_color_gaps<T: Scalar>(
    g_real: &Generator<T>,
    g_avatar: &Generator<T>,
    zs: &[&LatentCode],
    s: Label,
) -> Result<Vec<Option<f64>>> {
    let a = g_real.render_z(zs)?;
    let b = g_avatar.render_z(zs)?;
    Ok(a.iter()
        .zip(&b)
        .map(|((ia, sa), (ib, sb))| {
            let ca = region_mean_color(ia, sa, s)?;
            let cb = region_mean_color(ib, sb, s)?;
            Some((0..3).map(|c| (ca[c] - cb[c]).powi(2)).sum::<f64>().sqrt())
        })
        .collect())
}

/// One-sided paired t-test of `mean(d) > 0`; returns `(t, p)`.
pub fn paired_t_test(d: &[f64]) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let n = d.len();
    if n < 2 {
        return (0.0, 1.0);
    }
    let m = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return if m > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (0.0, 1.0)
        };
    }
    let t = m / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    (t, dist.sf(t))
}

/// Rows of the ablation table, cumulative in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Estimator trained on engine renders.
    Baseline,
    /// Trained on realistic faces obtained through inversion, no augmentation.
    DomainAdaptation,
    /// Domain adaptation plus semantic augmentation.
    SemanticAug,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::DomainAdaptation => "+domain_adaptation",
            Variant::SemanticAug => "+semantic_aug",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSizes {
    pub realistic_train: usize,
    pub avatar_train: usize,
    pub eval: usize,
    pub mean_latent_samples: usize,
}

impl Default for DatasetSizes {
    fn default() -> Self {
        DatasetSizes {
            realistic_train: 2000,
            avatar_train: 2000,
            eval: 120,
            mean_latent_samples: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `engine-a`, `engine-b`, or a path to a schema file.
    pub engine: String,
    pub seed: u64,
    pub metric_seed: u64,
    pub glasses_threshold: f64,
    pub arch: ModelArch,
    pub sizes: DatasetSizes,
    pub pretrain: GanTrainConfig,
    pub finetune: GanTrainConfig,
    pub production: ProductionConfig,
    pub estimator: EstimatorTrainConfig,
    pub ablation: Vec<Variant>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            engine: "engine-a".into(),
            seed: 0,
            metric_seed: 0,
            glasses_threshold: GLASSES_PIXEL_FRACTION,
            arch: ModelArch::desk(),
            sizes: DatasetSizes::default(),
            pretrain: GanTrainConfig::default(),
            finetune: GanTrainConfig::default(),
            production: ProductionConfig::default(),
            estimator: EstimatorTrainConfig::default(),
            ablation: vec![
                Variant::Baseline,
                Variant::DomainAdaptation,
                Variant::SemanticAug,
            ],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.production.policy.validate()?;
        self.production.inversion.validate()?;
        self.estimator.validate()?;
        if self.estimator.arch.resolution != self.arch.resolution {
            return Err(Error::Config(format!(
                "estimator resolution {} differs from generator resolution {}",
                self.estimator.arch.resolution, self.arch.resolution
            )));
        }
        if self.ablation.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "ablation variants must be listed once each, in the order baseline, domain_adaptation, semantic_aug".into(),
            ));
        }
        self.schema().map(|_| ())
    }

    pub fn schema(&self) -> Result<EngineSchema> {
        match EngineSchema::builtin(&self.engine) {
            Some(s) => Ok(s),
            None => EngineSchema::load(Path::new(&self.engine)),
        }
    }

    pub fn eval_seed(&self) -> u64 {
        rng::derive(self.seed, EVAL_STREAM)
    }
}

/// Trains one estimator per variant on shared data and scores each on `eval`.
pub fn run_ablation<T: Scalar>(
    variants: &[Variant],
    pairs: &Dataset,
    baseline_pairs: &Dataset,
    eval: &EvalSet,
    metric: &PerceptualMetric<T>,
    cfg: &EstimatorTrainConfig,
) -> Result<Vec<EvalReport>> {
    let mut out = Vec::with_capacity(variants.len());
    for &v in variants {
        let data = match v {
            Variant::Baseline => baseline_pairs.clone(),
            Variant::DomainAdaptation => pairs.without_augmentation(),
            Variant::SemanticAug => pairs.clone(),
        };
        let (est, _) = train_estimator::<f32>(&data, cfg, &mut |_| {})?;
        let mut r = evaluate_method(v.name(), &est, eval, &pairs.schema, metric)?;
        r.meta
            .insert("train_samples".into(), data.samples.len().to_string());
        r.meta
            .insert("estimator_hash".into(), est.params.content_hash());
        out.push(r);
    }
    Ok(out)
}

/// Mean latents stored between the mean-latent and production stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanLatents {
    pub w_mean: LatentCode,
    pub w_init: LatentCode,
    pub glasses_samples: usize,
    pub glasses_no_op: bool,
}

/// An experiment's run directory and configuration.
#[derive(Clone, Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub cfg: ExperimentConfig,
    pub schema: EngineSchema,
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v)?)?;
    Ok(())
}

fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

impl Run {
    /// Creates (or reuses) `dir` and records the configuration in it.
    pub fn create(dir: &Path, cfg: &ExperimentConfig) -> Result<Run> {
        cfg.validate()?;
        for sub in ["checkpoints", "logs", "latents", "datasets", "reports"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
        Ok(Run {
            dir: dir.to_path_buf(),
            cfg: cfg.clone(),
            schema: cfg.schema()?,
        })
    }

    pub fn open(dir: &Path) -> Result<Run> {
        let cfg = ExperimentConfig::load(&dir.join("config.toml"))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            schema: cfg.schema()?,
            cfg,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn metric(&self) -> PerceptualMetric<f32> {
        PerceptualMetric::new(self.cfg.metric_seed)
    }

    pub fn eval_set(&self) -> Result<EvalSet> {
        EvalSet::build(
            &self.schema,
            self.cfg.sizes.eval,
            self.cfg.eval_seed(),
            self.cfg.arch.resolution,
        )
    }

    pub fn pretrain(&self, hook: &mut dyn FnMut(&TrainEvent)) -> Result<TrainLog> {
        let c = &self.cfg;
        let data = realistic_dataset(
            c.sizes.realistic_train,
            rng::derive(c.seed, REAL_STREAM),
            c.arch.resolution,
        );
        let (g, d, mut log) = pretrain_realistic::<f32>(&c.pretrain, &c.arch, &data, hook)?;
        log.proxy_fid = Some(generator_proxy_fid(
            &g,
            &data,
            &self.metric(),
            FID_SAMPLES,
            c.seed,
        )?);
        g.save(&self.path("checkpoints/g_real.ckpt"), c.pretrain.seed)?;
        d.save(&self.path("checkpoints/d_real.ckpt"), c.pretrain.seed)?;
        log.write_csv(&self.path("logs/pretrain.csv"))?;
        write_json(&self.path("logs/pretrain.json"), &log)?;
        Ok(log)
    }

    pub fn finetune(&self, hook: &mut dyn FnMut(&TrainEvent)) -> Result<TrainLog> {
        let c = &self.cfg;
        let g_real = Generator::<f32>::load(&self.path("checkpoints/g_real.ckpt"))?;
        let d_real = Discriminator::<f32>::load(&self.path("checkpoints/d_real.ckpt"))?;
        let data = avatar_dataset(
            &self.schema,
            c.sizes.avatar_train,
            rng::derive(c.seed, AVATAR_STREAM),
            c.arch.resolution,
        )?;
        let (g, d, mut log) = finetune_avatar(&c.finetune, &g_real, &d_real, &data, hook)?;
        log.proxy_fid = Some(generator_proxy_fid(
            &g,
            &data,
            &self.metric(),
            FID_SAMPLES,
            c.seed,
        )?);
        g.save(&self.path("checkpoints/g_avatar.ckpt"), c.finetune.seed)?;
        d.save(&self.path("checkpoints/d_avatar.ckpt"), c.finetune.seed)?;
        log.write_csv(&self.path("logs/finetune.csv"))?;
        write_json(&self.path("logs/finetune.json"), &log)?;
        Ok(log)
    }

    pub fn mean_latent(&self) -> Result<MeanLatents> {
        let c = &self.cfg;
        let g = Generator::<f32>::load(&self.path("checkpoints/g_avatar.ckpt"))?;
        let seed = rng::derive(c.seed, 0x6d65_616e);
        let w_mean = compute_mean_latent(&g, c.sizes.mean_latent_samples, seed)?;
        let m = compute_modified_mean_latent(
            &g,
            &self.schema,
            c.sizes.mean_latent_samples,
            seed,
            c.glasses_threshold,
        )?;
        let out = MeanLatents {
            w_mean,
            w_init: m.w,
            glasses_samples: m.glasses_samples,
            glasses_no_op: m.no_op,
        };
        write_json(&self.path("latents/mean.json"), &out)?;
        Ok(out)
    }

    pub fn produce_pairs(&self, progress: &mut dyn FnMut(usize, usize)) -> Result<String> {
        let g_avatar = Generator::<f32>::load(&self.path("checkpoints/g_avatar.ckpt"))?;
        let g_real = Generator::<f32>::load(&self.path("checkpoints/g_real.ckpt"))?;
        let m: MeanLatents = read_json(&self.path("latents/mean.json"))?;
        let ds = produce_pairs(
            &self.schema,
            &g_avatar,
            &g_real,
            &self.metric(),
            &self.cfg.production,
            &m.w_init,
            &m.w_mean,
            progress,
        )?;
        write_dataset(&ds, &self.path("datasets/pairs"))
    }

    pub fn pairs(&self) -> Result<Dataset> {
        read_dataset(&self.path("datasets/pairs"))
    }

    /// Engine renders of the same vectors the paired dataset was built from.
    pub fn baseline_pairs(&self) -> Result<Dataset> {
        let p = &self.cfg.production;
        render_pairs(
            &self.schema,
            p.base_samples,
            self.cfg.arch.resolution,
            p.seed,
        )
    }

    pub fn train_estimator(
        &self,
        progress: &mut dyn FnMut(&crate::estimator::EpochLog),
    ) -> Result<EstimatorLog> {
        let (est, log) = train_estimator::<f32>(&self.pairs()?, &self.cfg.estimator, progress)?;
        est.save(&self.path("checkpoints/estimator.ckpt"))?;
        log.write_csv(&self.path("logs/estimator.csv"))?;
        Ok(log)
    }

    pub fn train_baseline(
        &self,
        progress: &mut dyn FnMut(&crate::estimator::EpochLog),
    ) -> Result<EstimatorLog> {
        let (est, log) = run_baseline(&self.baseline_pairs()?, &self.cfg.estimator, progress)?;
        est.save(&self.path("checkpoints/baseline.ckpt"))?;
        log.write_csv(&self.path("logs/baseline.csv"))?;
        Ok(log)
    }

    /// Scores `checkpoints/<which>.ckpt` and writes `reports/<which>.json`.
    pub fn evaluate(&self, which: &str) -> Result<EvalReport> {
        let ckpt = self.path(&format!("checkpoints/{which}.ckpt"));
        let est = Estimator::<f32>::load(&ckpt)?;
        let mut r = evaluate_method(which, &est, &self.eval_set()?, &self.schema, &self.metric())?;
        r.meta
            .insert("estimator_hash".into(), est.params.content_hash());
        write_json(&self.path(&format!("reports/{which}.json")), &r)?;
        Ok(r)
    }

    pub fn throughput(&self, which: &str) -> Result<Throughput> {
        let est = Estimator::<f32>::load(&self.path(&format!("checkpoints/{which}.ckpt")))?;
        let t = measure_throughput(&est, &self.eval_set()?.images, 10, 100);
        write_json(&self.path("reports/throughput.json"), &t)?;
        Ok(t)
    }

    pub fn ablate(&self) -> Result<Vec<EvalReport>> {
        let r = run_ablation(
            &self.cfg.ablation,
            &self.pairs()?,
            &self.baseline_pairs()?,
            &self.eval_set()?,
            &self.metric(),
            &self.cfg.estimator,
        )?;
        write_json(&self.path("reports/ablation.json"), &r)?;
        Ok(r)
    }

    /// Every stage in order, skipping the ablation.
    pub fn run_all(&self, verbose: bool) -> Result<EvalReport> {
        let mut hook = |e: &TrainEvent| {
            if let (
                true,
                TrainEvent::Step {
                    step,
                    d_loss,
                    g_loss,
                },
            ) = (verbose, e)
            {
                if step % 500 == 0 {
                    log::info!("step {step}: d {d_loss:.4} g {g_loss:.4}");
                }
            }
        };
        self.pretrain(&mut hook)?;
        self.finetune(&mut hook)?;
        self.mean_latent()?;
        self.produce_pairs(&mut |_, _| {})?;
        self.train_estimator(&mut |_| {})?;
        self.evaluate("estimator")
    }
}

/// Estimator trained on engine renders labeled with their own vectors,
/// using the same architecture and schedule as the full method.
pub fn run_baseline(
    renders: &Dataset,
    cfg: &EstimatorTrainConfig,
    progress: &mut dyn FnMut(&crate::estimator::EpochLog),
) -> Result<(Estimator<f32>, EstimatorLog)> {
    train_estimator::<f32>(renders, cfg, progress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engines::AttrValue;

    struct Oracle<'a>(&'a EvalSet);
    impl VectorPredictor for Oracle<'_> {
        fn predict_vectors(&self, images: &[&ImageTensor]) -> Vec<AvatarVector> {
            images
                .iter()
                .map(|img| {
                    let i = self.0.images.iter().position(|x| x == *img).unwrap();
                    self.0.oracle[i].clone()
                })
                .collect()
        }
    }

    struct Constant(AvatarVector);
    impl VectorPredictor for Constant {
        fn predict_vectors(&self, images: &[&ImageTensor]) -> Vec<AvatarVector> {
            vec![self.0.clone(); images.len()]
        }
    }

    #[test]
    fn oracle_predictor_scores_perfectly() {
        let s = EngineSchema::engine_a();
        let eval = EvalSet::build(&s, 12, 3, 32).unwrap();
        let m = PerceptualMetric::<f32>::new(0);
        let r = evaluate_method("oracle", &Oracle(&eval), &eval, &s, &m).unwrap();
        assert!(r.perceptual_mean < 1e-7);
        assert!(r.accuracy.values().all(|&a| a == 1.0));
        assert!(r.mae.values().all(|&e| e == 0.0));
    }

    #[test]
    fn constant_predictor_is_near_chance() {
        let s = EngineSchema::engine_a();
        let eval = EvalSet::build(&s, 120, 4, 32).unwrap();
        let v = AvatarVector {
            values: s
                .attributes
                .iter()
                .map(|a| match a.kind {
                    AttributeKind::Continuous => AttrValue::Continuous(0.5),
                    AttributeKind::Discrete { .. } => AttrValue::Discrete(Some(0)),
                })
                .collect(),
        };
        let r = evaluate_method(
            "const",
            &Constant(v),
            &eval,
            &s,
            &PerceptualMetric::<f32>::new(0),
        )
        .unwrap();
        let acc = r.accuracy["skin_tone"];
        let chance = r.chance["skin_tone"];
        assert!(acc < 3.0 * chance, "{acc} vs chance {chance}");
    }

    #[test]
    fn proxy_fid_separates_distributions() {
        let s = EngineSchema::engine_a();
        let m = PerceptualMetric::<f32>::new(0);
        let real = EvalSet::build(&s, 40, 1, 32).unwrap();
        let real2 = EvalSet::build(&s, 40, 2, 32).unwrap();
        let avatars: Vec<ImageTensor> = (0..40)
            .map(|i| render_avatar(&s, &crate::engines::sample_vector(&s, i), 32).unwrap())
            .collect();
        fn r(e: &EvalSet) -> Vec<&ImageTensor> {
            e.images.iter().collect()
        }
        let same = proxy_fid(&m, &r(&real), &r(&real));
        let near = proxy_fid(&m, &r(&real), &r(&real2));
        let far = proxy_fid(&m, &r(&real), &avatars.iter().collect::<Vec<_>>());
        assert!(same.abs() < 1e-9);
        assert!(near < far, "{near} vs {far}");
    }

    #[test]
    fn t_test_direction() {
        let up: Vec<f64> = (0..30).map(|i| 0.5 + (i % 5) as f64 * 0.1).collect();
        assert!(paired_t_test(&up).1 < 1e-6);
        let down: Vec<f64> = up.iter().map(|x| -x).collect();
        assert!(paired_t_test(&down).1 > 0.99);
    }

    #[test]
    fn create_lays_out_run_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let run = Run::create(tmp.path(), &ExperimentConfig::default()).unwrap();
        for sub in ["checkpoints", "logs", "latents", "datasets", "reports"] {
            assert!(run.path(sub).is_dir(), "{sub}");
        }
        assert!(Run::open(tmp.path()).is_ok());
    }

    #[test]
    fn config_rejects_out_of_order_variants() {
        let mut c = ExperimentConfig::default();
        c.validate().unwrap();
        c.ablation = vec![Variant::SemanticAug, Variant::Baseline];
        assert!(c.validate().is_err());
        let text = ExperimentConfig::default().to_toml();
        assert_eq!(
            ExperimentConfig::from_toml(&text).unwrap(),
            ExperimentConfig::default()
        );
        let partial =
            ExperimentConfig::from_toml("engine = \"engine-b\"\n[pretrain]\nsteps = 3\n").unwrap();
        assert_eq!(partial.pretrain.steps, 3);
        assert!(ExperimentConfig::from_toml("engine = \"nope\"").is_err());
    }
}
