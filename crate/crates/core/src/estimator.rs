//! Feed-forward avatar vector estimator: a small convolutional backbone
//! with one regression head for continuous attributes and one
//! classification head per discrete attribute.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad, no_grad, Var};
use crate::checkpoint;
use crate::data_production::{Dataset, PairedSample};
use crate::engines::{AttrValue, AttributeKind, AvatarVector, EngineSchema};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Rgb8Image};
use crate::nn::{
    conv, conv_weight, grads_to_tensors, linear, linear_weight, Adam, AdamConfig, ParamSet, LRELU,
};
use crate::rng;
use crate::scalar::{lit, to_f64, Scalar};
use crate::tensor::{ConvGeom, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorArch {
    pub resolution: usize,
    /// Output channels of the stride-2 conv blocks.
    pub channels: Vec<usize>,
    pub head_hidden: usize,
}

impl Default for EstimatorArch {
    fn default() -> Self {
        EstimatorArch {
            resolution: 64,
            channels: vec![8, 16, 32, 48, 64, 96],
            head_hidden: 32,
        }
    }
}

impl EstimatorArch {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.channels.is_empty() || self.head_hidden == 0 {
            return Err(Error::Config(
                "estimator architecture has an empty dimension".into(),
            ));
        }
        Ok(())
    }
}

/// Raw head outputs for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    /// Continuous attributes in schema order (unclamped).
    pub continuous: Vec<f64>,
    /// One logit vector per discrete attribute, in schema order.
    pub logits: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimator<T> {
    pub schema: EngineSchema,
    pub arch: EstimatorArch,
    pub params: ParamSet<T>,
}

/// Graph outputs for a batch.
pub struct HeadVars<T: Scalar> {
    /// `[B, num_continuous]`, absent when the schema has no continuous attributes.
    pub continuous: Option<Var<T>>,
    /// `[B, classes_i]` per discrete attribute.
    pub logits: Vec<Var<T>>,
}

impl<T: Scalar> Estimator<T> {
    pub fn init(schema: &EngineSchema, arch: &EstimatorArch, seed: u64) -> Self {
        arch.validate().expect("invalid estimator architecture");
        let mut r = rng::rng(seed);
        let mut p = ParamSet::new();
        let mut cin = 3;
        for (i, &c) in arch.channels.iter().enumerate() {
            p.push(format!("conv{i}.w"), conv_weight(c, cin, 3, 1.0, &mut r));
            p.push(format!("conv{i}.b"), Tensor::zeros(&[1, c, 1, 1]));
            cin = c;
        }
        let h = arch.head_hidden;
        let mut head = |p: &mut ParamSet<T>, name: &str, out: usize| {
            p.push(format!("{name}.w1"), linear_weight(cin, h, 1.0, &mut r));
            p.push(format!("{name}.b1"), Tensor::zeros(&[1, h]));
            p.push(format!("{name}.w2"), linear_weight(h, out, 0.5, &mut r));
            p.push(format!("{name}.b2"), Tensor::zeros(&[1, out]));
        };
        let nc = schema.num_continuous();
        if nc > 0 {
            head(&mut p, "continuous", nc);
        }
        for (_, a) in schema.discrete() {
            head(&mut p, &format!("head.{}", a.name), a.num_classes());
        }
        Estimator {
            schema: schema.clone(),
            arch: arch.clone(),
            params: p,
        }
    }

    /// Head sizes in parameter order: continuous first (if any), then discrete.
    pub fn head_layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        if self.schema.num_continuous() > 0 {
            out.push(("continuous".to_string(), self.schema.num_continuous()));
        }
        out.extend(
            self.schema
                .discrete()
                .map(|(_, a)| (a.name.clone(), a.num_classes())),
        );
        out
    }

    pub fn graph(&self, vars: &[Var<T>], x: &Var<T>) -> HeadVars<T> {
        let mut h = x.clone();
        let n = self.arch.channels.len();
        for i in 0..n {
            h = conv(
                &h,
                &vars[2 * i],
                &vars[2 * i + 1],
                ConvGeom { stride: 2, pad: 1 },
            )
            .leaky_relu(lit(LRELU));
        }
        let (b, c, s) = (h.shape()[0], h.shape()[1], h.shape()[2] * h.shape()[3]);
        let feat = if s == 1 {
            h.reshape(&[b, c])
        } else {
            h.sum_to(&[b, c, 1, 1])
                .scale(lit(1.0 / s as f64))
                .reshape(&[b, c])
        };
        let mut k = 2 * n;
        let mut head = || {
            let hid = linear(&feat, &vars[k], &vars[k + 1]).leaky_relu(lit(LRELU));
            let out = linear(&hid, &vars[k + 2], &vars[k + 3]);
            k += 4;
            out
        };
        let continuous = (self.schema.num_continuous() > 0).then(&mut head);
        let logits = self.schema.discrete().map(|_| head()).collect();
        HeadVars { continuous, logits }
    }

    /// Raw outputs for a batch of images (one forward pass).
    pub fn forward(&self, images: &[&ImageTensor]) -> Vec<HeadOutputs> {
        let x = batch_input::<T>(images, self.arch.resolution);
        let b = images.len();
        no_grad(|| {
            let out = self.graph(&self.params.constants(), &Var::constant(x));
            (0..b)
                .map(|i| HeadOutputs {
                    continuous: out
                        .continuous
                        .as_ref()
                        .map(|c| row(c.value(), i))
                        .unwrap_or_default(),
                    logits: out.logits.iter().map(|l| row(l.value(), i)).collect(),
                })
                .collect()
        })
    }

    pub fn predict_batch(&self, images: &[&ImageTensor]) -> Vec<AvatarVector> {
        self.forward(images)
            .iter()
            .map(|o| decode_outputs(&self.schema, o))
            .collect()
    }

    pub fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "estimator",
            "schema": self.schema.to_text(),
            "arch": self.arch,
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(path, &self.header(), &self.params)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (h, params) = checkpoint::load::<T>(path)?;
        checkpoint::expect_kind(&h, "estimator")?;
        let schema = EngineSchema::parse(h["schema"].as_str().unwrap_or_default())?;
        let arch: EstimatorArch = serde_json::from_value(h["arch"].clone())?;
        let fresh = Estimator::<T>::init(&schema, &arch, 0);
        if fresh.params.names() != params.names()
            || fresh
                .params
                .tensors()
                .iter()
                .zip(params.tensors())
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Format(
                "estimator checkpoint does not match its architecture".into(),
            ));
        }
        Ok(Estimator {
            schema,
            arch,
            params,
        })
    }
}

fn row<T: Scalar>(t: &Tensor<T>, i: usize) -> Vec<f64> {
    let n = t.shape()[1];
    t.data()[i * n..(i + 1) * n]
        .iter()
        .map(|&v| to_f64(v))
        .collect()
}

/// Continuous outputs clamped to `[0, 1]`, argmax per discrete head with
/// the extra class meaning ABSENT.
pub fn decode_outputs(schema: &EngineSchema, o: &HeadOutputs) -> AvatarVector {
    let mut cont = o.continuous.iter();
    let mut logits = o.logits.iter();
    let values = schema
        .attributes
        .iter()
        .map(|a| match a.kind {
            AttributeKind::Continuous => {
                AttrValue::Continuous(cont.next().copied().unwrap_or(0.5).clamp(0.0, 1.0))
            }
            AttributeKind::Discrete { cardinality } => {
                let l = logits.next().expect("one head per discrete attribute");
                let k = l
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                        if v > best.1 {
                            (i, v)
                        } else {
                            best
                        }
                    })
                    .0;
                AttrValue::Discrete((k < cardinality).then_some(k))
            }
        })
        .collect();
    AvatarVector { values }
}

/// Predicts the avatar vector for one image with a single forward pass.
pub fn predict<T: Scalar>(est: &Estimator<T>, image: &ImageTensor) -> AvatarVector {
    est.predict_batch(&[image]).remove(0)
}

fn batch_input<T: Scalar>(images: &[&ImageTensor], res: usize) -> Tensor<T> {
    let resized: Vec<ImageTensor> = images.iter().map(|i| i.resize(res, res)).collect();
    let refs: Vec<&ImageTensor> = resized.iter().collect();
    ImageTensor::batch_to_tensor(&refs)
}

fn rgb8_input<T: Scalar>(images: &[&Rgb8Image], res: usize) -> Tensor<T> {
    let n = res * res;
    let mut data = Vec::with_capacity(images.len() * 3 * n);
    for img in images {
        if img.height == res && img.width == res {
            for c in 0..3 {
                data.extend((0..n).map(|i| lit::<T>(img.data[3 * i + c] as f64 / 255.0)));
            }
        } else {
            let t = img.to_image().resize(res, res);
            data.extend(t.data().iter().map(|&v| lit::<T>(v as f64)));
        }
    }
    Tensor::new(&[images.len(), 3, res, res], data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorTrainConfig {
    pub lambda_d: f64,
    pub lambda_c: f64,
    pub sce_alpha: f64,
    pub sce_beta: f64,
    /// Value substituted for log 0 in the reverse cross-entropy.
    pub log_zero_clamp: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_halve_every: usize,
    /// Fraction of base samples held out for validation.
    pub val_fraction: f64,
    pub arch: EstimatorArch,
    pub seed: u64,
}

impl Default for EstimatorTrainConfig {
    fn default() -> Self {
        EstimatorTrainConfig {
            lambda_d: 10.0,
            lambda_c: 1.0,
            sce_alpha: 1.0,
            sce_beta: 1.0,
            log_zero_clamp: -4.0,
            batch_size: 256,
            epochs: 100,
            lr: 1e-3,
            lr_halve_every: 30,
            val_fraction: 0.05,
            arch: EstimatorArch::default(),
            seed: 0,
        }
    }
}

impl EstimatorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("estimator training: {m}")));
        if [self.lambda_d, self.lambda_c, self.sce_alpha, self.sce_beta]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return bad("loss weights must be >= 0");
        }
        if !(self.log_zero_clamp < 0.0) {
            return bad("log_zero_clamp must be negative");
        }
        if self.batch_size == 0 || self.lr_halve_every == 0 || !(self.lr > 0.0) {
            return bad("batch_size, lr_halve_every and lr must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        self.arch.validate()
    }

    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.lr_halve_every) as i32)
    }
}

/// Symmetric cross-entropy of one logit vector against `label`:
/// `α·CE + β·RCE`, where RCE uses `clamp` in place of `log 0`, so
/// `RCE = −clamp·(1 − p_label)`.
pub fn sce_loss(logits: &[f64], label: usize, alpha: f64, beta: f64, clamp: f64) -> f64 {
    let ce = cross_entropy(logits, label);
    alpha * ce + beta * -clamp * (1.0 - (-ce).exp())
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    assert!(
        label < logits.len(),
        "label {label} outside {} classes",
        logits.len()
    );
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Batched SCE `[B, C]` against labels, averaged over the batch.
pub fn sce_graph<T: Scalar>(
    logits: &Var<T>,
    labels: &[usize],
    alpha: f64,
    beta: f64,
    clamp: f64,
) -> Var<T> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    let mut onehot = vec![T::zero(); b * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l] = T::one();
    }
    let onehot = Var::constant(Tensor::new(&[b, c], onehot));
    let logp_y = logits.log_softmax(1).mul(&onehot).sum_axis(1);
    let ce = logp_y.neg();
    let rce = logp_y.exp().neg().add_scalar(T::one()).scale(lit(-clamp));
    ce.scale(lit(alpha)).add(&rce.scale(lit(beta))).mean()
}

/// Per-term values of the estimator loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// Mean SCE per discrete head.
    pub discrete: Vec<f64>,
    /// Mean absolute error over continuous attributes (0 when none).
    pub continuous: f64,
}

/// `λ_d·Σ_heads SCE + λ_c·mean|ĉ − c|` over a batch, as a graph.
pub fn estimator_loss_graph<T: Scalar>(
    schema: &EngineSchema,
    out: &HeadVars<T>,
    targets: &[&AvatarVector],
    cfg: &EstimatorTrainConfig,
) -> (Var<T>, LossTerms) {
    let b = targets.len();
    let mut terms = LossTerms::default();
    let mut total: Option<Var<T>> = None;
    let mut add = |v: Var<T>| {
        total = Some(match total.take() {
            Some(t) => t.add(&v),
            None => v,
        })
    };
    for (h, (i, _)) in schema.discrete().enumerate() {
        let labels: Vec<usize> = targets.iter().map(|p| p.class_index(schema, i)).collect();
        let s = sce_graph(
            &out.logits[h],
            &labels,
            cfg.sce_alpha,
            cfg.sce_beta,
            cfg.log_zero_clamp,
        );
        terms.discrete.push(to_f64(s.item()));
        add(s.scale(lit(cfg.lambda_d)));
    }
    if let Some(c) = &out.continuous {
        let nc = c.shape()[1];
        let tgt: Vec<T> = targets
            .iter()
            .flat_map(|p| p.continuous_values())
            .map(lit)
            .collect();
        let l1 = c
            .sub(&Var::constant(Tensor::new(&[b, nc], tgt)))
            .abs()
            .mean();
        terms.continuous = to_f64(l1.item());
        add(l1.scale(lit(cfg.lambda_c)));
    }
    let total = total.unwrap_or_else(|| Var::scalar_const(T::zero()));
    terms.total = to_f64(total.item());
    (total, terms)
}

/// Estimator loss for one sample's outputs.
pub fn estimator_loss(
    schema: &EngineSchema,
    pred: &HeadOutputs,
    target: &AvatarVector,
    cfg: &EstimatorTrainConfig,
) -> LossTerms {
    let mut terms = LossTerms::default();
    for (h, (i, _)) in schema.discrete().enumerate() {
        let s = sce_loss(
            &pred.logits[h],
            target.class_index(schema, i),
            cfg.sce_alpha,
            cfg.sce_beta,
            cfg.log_zero_clamp,
        );
        terms.discrete.push(s);
        terms.total += cfg.lambda_d * s;
    }
    let tc = target.continuous_values();
    if !tc.is_empty() {
        terms.continuous = pred
            .continuous
            .iter()
            .zip(&tc)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / tc.len() as f64;
        terms.total += cfg.lambda_c * terms.continuous;
    }
    terms
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_discrete: Vec<f64>,
    pub train_continuous: f64,
    pub val_loss: Option<f64>,
    /// Top-1 accuracy per discrete head on the validation split.
    pub val_accuracy: Vec<f64>,
    pub val_mae: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimatorLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch (1-based) whose weights were returned; 0 means the initialization.
    pub best_epoch: usize,
    pub train_samples: usize,
    pub val_samples: usize,
}

impl EstimatorLog {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "epoch,lr,train_loss,train_continuous,val_loss,val_mae,val_accuracy"
        )?;
        for e in &self.epochs {
            let acc: Vec<String> = e.val_accuracy.iter().map(|a| format!("{a:.4}")).collect();
            writeln!(
                f,
                "{},{},{:.6},{:.6},{},{},{}",
                e.epoch,
                e.lr,
                e.train_loss,
                e.train_continuous,
                e.val_loss.map(|v| format!("{v:.6}")).unwrap_or_default(),
                e.val_mae.map(|v| format!("{v:.6}")).unwrap_or_default(),
                acc.join(";")
            )?;
        }
        Ok(())
    }
}

/// Splits sample indices into (train, validation). Validation takes
/// `val_fraction` of the base samples; their augmented copies are dropped
/// from training so no code is shared across the split.
pub fn split_indices(ds: &Dataset, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut sources: Vec<usize> = ds.base_samples().map(|s| s.source).collect();
    sources.sort_unstable();
    sources.dedup();
    let n_val = (sources.len() as f64 * val_fraction).floor() as usize;
    sources.shuffle(&mut rng::rng(rng::derive(seed, 0x5611)));
    let held: std::collections::HashSet<usize> = sources[..n_val].iter().copied().collect();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if !held.contains(&s.source) {
            train.push(i);
        } else if s.augmentation.is_none() {
            val.push(i);
        }
    }
    (train, val)
}

struct Evaluated {
    loss: f64,
    accuracy: Vec<f64>,
    mae: Option<f64>,
}

fn evaluate_split<T: Scalar>(
    est: &Estimator<T>,
    samples: &[&PairedSample],
    cfg: &EstimatorTrainConfig,
) -> Evaluated {
    let schema = &est.schema;
    let nd = schema.num_discrete();
    let mut correct = vec![0usize; nd];
    let mut loss = 0.0;
    let mut abs = 0.0;
    for chunk in samples.chunks(256) {
        let imgs: Vec<&Rgb8Image> = chunk.iter().map(|s| &s.image).collect();
        let x = rgb8_input::<T>(&imgs, est.arch.resolution);
        let targets: Vec<&AvatarVector> = chunk.iter().map(|s| &s.vector).collect();
        no_grad(|| {
            let out = est.graph(&est.params.constants(), &Var::constant(x));
            let (_, t) = estimator_loss_graph(schema, &out, &targets, cfg);
            loss += t.total * chunk.len() as f64;
            abs += t.continuous * chunk.len() as f64;
            for (h, (i, _)) in schema.discrete().enumerate() {
                let v = out.logits[h].value();
                for (k, p) in targets.iter().enumerate() {
                    let r = row(v, k);
                    let arg = r
                        .iter()
                        .enumerate()
                        .fold(
                            (0, f64::NEG_INFINITY),
                            |b, (j, &x)| if x > b.1 { (j, x) } else { b },
                        )
                        .0;
                    correct[h] += (arg == p.class_index(schema, i)) as usize;
                }
            }
        });
    }
    let n = samples.len().max(1) as f64;
    Evaluated {
        loss: loss / n,
        accuracy: correct.iter().map(|&c| c as f64 / n).collect(),
        mae: (schema.num_continuous() > 0).then_some(abs / n),
    }
}

/// Trains an estimator on `ds`, returning the best-validation weights.
pub fn train_estimator<T: Scalar>(
    ds: &Dataset,
    cfg: &EstimatorTrainConfig,
    progress: &mut dyn FnMut(&EpochLog),
) -> Result<(Estimator<T>, EstimatorLog)> {
    cfg.validate()?;
    if ds.samples.is_empty() {
        return Err(Error::Config(
            "estimator training needs a non-empty dataset".into(),
        ));
    }
    let schema = &ds.schema;
    for s in &ds.samples {
        s.vector.validate(schema)?;
    }
    for (i, a) in schema.discrete() {
        let mut seen: Vec<usize> = ds
            .samples
            .iter()
            .map(|s| s.vector.class_index(schema, i))
            .collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() < 2 {
            log::warn!(
                "attribute {} takes a single class in the training data",
                a.name
            );
        }
    }
    let mut est = Estimator::<T>::init(schema, &cfg.arch, rng::derive(cfg.seed, 1));
    let (train, val) = split_indices(ds, cfg.val_fraction, cfg.seed);
    let val_samples: Vec<&PairedSample> = val.iter().map(|&i| &ds.samples[i]).collect();
    let mut log = EstimatorLog {
        train_samples: train.len(),
        val_samples: val.len(),
        ..Default::default()
    };
    let mut best = (f64::INFINITY, est.params.clone());
    let mut opt = Adam::new(est.params.tensors());
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut order = train.clone();
    let mut r = rng::rng(rng::derive(cfg.seed, 2));
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at_epoch(epoch - 1);
        order.shuffle(&mut r);
        let mut sum = 0.0;
        let mut sum_c = 0.0;
        let mut sum_d = vec![0.0; schema.num_discrete()];
        for chunk in order.chunks(cfg.batch_size) {
            let imgs: Vec<&Rgb8Image> = chunk.iter().map(|&i| &ds.samples[i].image).collect();
            let targets: Vec<&AvatarVector> =
                chunk.iter().map(|&i| &ds.samples[i].vector).collect();
            let x = Var::constant(rgb8_input::<T>(&imgs, cfg.arch.resolution));
            let vars = est.params.leaves();
            let out = est.graph(&vars, &x);
            let (loss, terms) = estimator_loss_graph(schema, &out, &targets, cfg);
            if !terms.total.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite estimator loss in epoch {epoch}"
                )));
            }
            let refs: Vec<&Var<T>> = vars.iter().collect();
            let grads = grads_to_tensors(grad(&loss, &refs, false));
            opt.step(est.params.tensors_mut(), &grads, &adam, lr);
            let k = chunk.len() as f64;
            sum += terms.total * k;
            sum_c += terms.continuous * k;
            sum_d
                .iter_mut()
                .zip(&terms.discrete)
                .for_each(|(a, d)| *a += d * k);
        }
        let n = order.len().max(1) as f64;
        let mut e = EpochLog {
            epoch,
            lr,
            train_loss: sum / n,
            train_discrete: sum_d.iter().map(|d| d / n).collect(),
            train_continuous: sum_c / n,
            ..Default::default()
        };
        let score = if val_samples.is_empty() {
            e.train_loss
        } else {
            let ev = evaluate_split(&est, &val_samples, cfg);
            e.val_loss = Some(ev.loss);
            e.val_accuracy = ev.accuracy;
            e.val_mae = ev.mae;
            ev.loss
        };
        if score < best.0 {
            best = (score, est.params.clone());
            log.best_epoch = epoch;
        }
        progress(&e);
        log.epochs.push(e);
    }
    est.params = best.1;
    Ok((est, log))
}
