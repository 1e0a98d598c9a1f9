//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 3, 4, 6, 7, 8 and 10 share one desk-scale run (about 80 minutes on
//! one CPU core). Environment knobs:
//!
//! - `AVATAR_ACCEPTANCE_DIR`: keep artifacts there and reuse finished stages.
//! - `AVATAR_ACCEPTANCE_ONLY`: comma-separated criterion numbers to run.

mod common;

use std::path::{Path, PathBuf};
use std::time::Instant;

use avatar_core::data_production::{
    augmentation_locality, blend_block, produce_pairs, read_dataset, render_pairs,
    semantic_augment, write_dataset, Dataset, ProductionConfig,
};
use avatar_core::engines::render_avatar_with_mask;
use avatar_core::estimator::{sce_loss, Estimator, EstimatorTrainConfig};
use avatar_core::evaluation::{
    evaluate_method, measure_throughput, paired_t_test, region_color_gaps, run_ablation,
    EvalReport, EvalSet, ExperimentConfig, MeanLatents, Run, Variant, AVATAR_STREAM,
};
use avatar_core::gan_training::{
    avatar_dataset, color_matching_loss, finetune_avatar, SegGenerator,
};
use avatar_core::generators::{region_mean_color, Discriminator, Generator, LatentCode, ModelArch};
use avatar_core::image::{ImageTensor, Label, SegmentationMap};
use avatar_core::inversion::invert_batch;
use avatar_core::{rng, Result};

type Outcome = Result<(bool, String)>;

fn desk_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.pretrain.steps = 3000;
    c.finetune.steps = 1500;
    c
}

/// Lazily built desk-scale artifacts shared by several criteria.
struct Desk {
    run: Run,
}

impl Desk {
    fn open(dir: &Path) -> Result<Desk> {
        Ok(Desk {
            run: Run::create(dir, &desk_config())?,
        })
    }

    fn has(&self, rel: &str) -> bool {
        self.run.path(rel).exists()
    }

    fn generators(&self) -> Result<(Generator<f32>, Generator<f32>)> {
        if !self.has("checkpoints/g_real.ckpt") {
            eprintln!("[desk] pretraining");
            self.run.pretrain(&mut |_| {})?;
        }
        if !self.has("checkpoints/g_avatar.ckpt") {
            eprintln!("[desk] finetuning with color loss");
            self.run.finetune(&mut |_| {})?;
        }
        Ok((
            Generator::load(&self.run.path("checkpoints/g_real.ckpt"))?,
            Generator::load(&self.run.path("checkpoints/g_avatar.ckpt"))?,
        ))
    }

    /// Same finetuning run with the color-matching loss switched off.
    fn avatar_without_color(&self) -> Result<Generator<f32>> {
        let path = self.run.path("checkpoints/g_avatar_nocolor.ckpt");
        if !path.exists() {
            self.generators()?;
            eprintln!("[desk] finetuning without color loss");
            let c = &self.run.cfg;
            let g_real = Generator::<f32>::load(&self.run.path("checkpoints/g_real.ckpt"))?;
            let d_real = Discriminator::<f32>::load(&self.run.path("checkpoints/d_real.ckpt"))?;
            let data = avatar_dataset(
                &self.run.schema,
                c.sizes.avatar_train,
                rng::derive(c.seed, AVATAR_STREAM),
                c.arch.resolution,
            )?;
            let mut cfg = c.finetune.clone();
            cfg.lambda_color = 0.0;
            let (g, _, _) = finetune_avatar(&cfg, &g_real, &d_real, &data, &mut |_| {})?;
            g.save(&path, cfg.seed)?;
        }
        Generator::load(&path)
    }

    fn means(&self) -> Result<MeanLatents> {
        if !self.has("latents/mean.json") {
            self.generators()?;
            eprintln!("[desk] mean latents");
            return self.run.mean_latent();
        }
        Ok(serde_json::from_slice(&std::fs::read(
            self.run.path("latents/mean.json"),
        )?)?)
    }

    fn pairs(&self) -> Result<Dataset> {
        if !self.has("datasets/pairs/manifest.json") {
            self.means()?;
            eprintln!("[desk] producing pairs");
            let t = Instant::now();
            self.run.produce_pairs(&mut |d, n| {
                if d % 200 == 0 {
                    eprintln!("[desk]   {d}/{n} ({:.0}s)", t.elapsed().as_secs_f64());
                }
            })?;
        }
        self.run.pairs()
    }

    fn estimator(&self) -> Result<Estimator<f32>> {
        if !self.has("checkpoints/estimator.ckpt") {
            self.pairs()?;
            eprintln!("[desk] training estimator");
            self.run.train_estimator(&mut |e| {
                if e.epoch % 10 == 0 {
                    eprintln!("[desk]   epoch {} val {:?}", e.epoch, e.val_loss);
                }
            })?;
        }
        Estimator::load(&self.run.path("checkpoints/estimator.ckpt"))
    }
}

fn c1_gradients() -> Outcome {
    let t = Instant::now();
    let r1 = common::r1_error();
    let pl = common::path_length_error();
    let [cj, cr, ca] = common::color_errors();
    let est = common::estimator_error();
    let secs = t.elapsed().as_secs_f64();
    let worst = [r1, pl, cj, cr, ca, est].into_iter().fold(0.0, f64::max);
    Ok((
        worst <= 1e-3 && secs <= 120.0,
        format!(
            "max rel err: r1 {r1:.1e}, path {pl:.1e}, color {cj:.1e} (real {cr:.1e}, avatar {ca:.1e}), estimator {est:.1e}; {secs:.1}s"
        ),
    ))
}

/// Generator stub that renders one flat color per region.
struct Flat {
    skin: [f32; 3],
    hair: [f32; 3],
}

impl SegGenerator for Flat {
    fn render_z(&self, zs: &[&LatentCode]) -> Result<Vec<(ImageTensor, SegmentationMap)>> {
        let n = 8;
        let mut img = ImageTensor::filled(n, n, self.skin);
        let mut seg = SegmentationMap::filled(n, n, Label::Skin);
        for y in 0..n / 2 {
            for x in 0..n {
                seg.set(y, x, Label::Hair);
                for c in 0..3 {
                    img.set(c, y, x, self.hair[c]);
                }
            }
        }
        Ok(vec![(img, seg); zs.len()])
    }
}

fn c2_color_exactness() -> Outcome {
    let a = ModelArch::toy();
    let zs: Vec<LatentCode> = (0..4).map(|i| LatentCode::sample_z(&a, i)).collect();
    let refs: Vec<&LatentCode> = zs.iter().collect();
    let real = Flat {
        skin: [0.5, 0.4, 0.3],
        hair: [0.2, 0.1, 0.1],
    };
    let avatar = Flat {
        skin: [0.6, 0.4, 0.3],
        hair: [0.2, 0.1, 0.1],
    };
    let v = color_matching_loss(&real, &avatar, &refs)?;
    let same = color_matching_loss(&real, &real, &refs)?;
    Ok((
        (v - 0.01).abs() <= 1e-6 && same == 0.0,
        format!("loss {v:.9} (expected 0.01), identical generators {same}"),
    ))
}

fn c3_inversion(desk: &Desk) -> Outcome {
    let (_, g) = desk.generators()?;
    let m = desk.means()?;
    let cfg = desk.run.cfg.production.inversion.clone();
    let metric = desk.run.metric();
    let w0: Vec<LatentCode> = (0..20)
        .map(|i| g.map_z_to_w(&LatentCode::sample_z(&g.arch, rng::derive(0x696e_76, i))))
        .collect::<Result<_>>()?;
    let targets: Vec<ImageTensor> = g
        .generate_batch(&w0.iter().collect::<Vec<_>>())?
        .into_iter()
        .map(|o| o.image)
        .collect();
    let t = Instant::now();
    let res = invert_batch(
        &g,
        &metric,
        &targets.iter().collect::<Vec<_>>(),
        &cfg,
        &vec![&m.w_init; 20],
        &m.w_mean,
    )?;
    let secs = t.elapsed().as_secs_f64();
    let start = g.generate_batch(&vec![&m.w_init; 20])?;
    let end = g.generate_batch(&res.iter().map(|r| &r.w).collect::<Vec<_>>())?;
    let ratios: Vec<f64> = (0..20)
        .map(|i| end[i].image.mse(&targets[i]) / start[i].image.mse(&targets[i]))
        .collect();
    let ok = ratios.iter().filter(|&&r| r <= 0.1).count();
    let worst = ratios.iter().cloned().fold(0.0, f64::max);
    Ok((
        ok >= 18 && secs <= 600.0,
        format!("{ok}/20 reach <=10% of initial MSE (worst ratio {worst:.3}); {secs:.1}s"),
    ))
}

fn c4_augmentation(desk: &Desk) -> Outcome {
    let (g, _) = desk.generators()?;
    let ws: Vec<LatentCode> = (0..20)
        .map(|i| g.map_z_to_w(&LatentCode::sample_z(&g.arch, rng::derive(0x6175_67, i))))
        .collect::<Result<_>>()?;
    let mut identity = true;
    let mut replace = true;
    for (i, w) in ws.iter().enumerate() {
        for part in [Label::Background, Label::Hair, Label::Glasses] {
            identity &= semantic_augment(&g, w, part, 0.0, i as u64)? == *w;
            let noise = g.map_z_to_w(&LatentCode::sample_z(&g.arch, i as u64))?;
            let full = semantic_augment(&g, w, part, 1.0, i as u64)?;
            replace &= full.block(part.index()) == noise.block(part.index())
                && (0..w.num_parts)
                    .filter(|&k| k != part.index())
                    .all(|k| full.block(k) == w.block(k));
            replace &= blend_block(w, part, 1.0, noise.block(part.index())) == full;
        }
    }
    let lambda = desk
        .run
        .cfg
        .production
        .policy
        .parts
        .iter()
        .find(|p| p.part == Label::Hair)
        .map(|p| p.lambda)
        .unwrap_or(0.3);
    let (mut out_sum, mut in_sum) = (0.0, 0.0);
    for (i, w) in ws.iter().enumerate() {
        let (o, n) = augmentation_locality(
            &g,
            w,
            Label::Hair,
            &[Label::Hair, Label::Background],
            lambda,
            1000 + i as u64,
        )?;
        out_sum += o;
        in_sum += n;
    }
    let ratio = out_sum / in_sum;
    Ok((
        identity && replace && ratio <= 0.2,
        format!("lambda=0 identity {identity}, lambda=1 replacement {replace}, hair locality outside:inside = {ratio:.3} at lambda {lambda}"),
    ))
}

fn c5_sce() -> Outcome {
    let u = sce_loss(&[0.0; 4], 2, 1.0, 1.0, -4.0);
    let ce = sce_loss(&[0.3, -1.2, 2.0, 0.1], 1, 1.0, 0.0, -4.0);
    let ce_ref = {
        let l = [0.3f64, -1.2, 2.0, 0.1];
        let lse = l.iter().map(|x| x.exp()).sum::<f64>().ln();
        lse - l[1]
    };
    let hit = sce_loss(&[0.0, 60.0, 0.0], 1, 1.0, 1.0, -4.0);
    Ok((
        (u - 4.3863).abs() <= 1e-3 && (ce - ce_ref).abs() <= 1e-12 && hit.abs() <= 1e-12,
        format!(
            "uniform {u:.4}, beta=0 vs CE diff {:.1e}, one-hot {hit:.1e}",
            (ce - ce_ref).abs()
        ),
    ))
}

fn eval_set(desk: &Desk) -> Result<EvalSet> {
    desk.run.eval_set()
}

fn c6_end_to_end(desk: &Desk) -> Result<(bool, String, EvalReport)> {
    let est = desk.estimator()?;
    let r = evaluate_method(
        "estimator",
        &est,
        &eval_set(desk)?,
        &desk.run.schema,
        &desk.run.metric(),
    )?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, acc) in &r.accuracy {
        let chance = r.chance[k];
        ok &= *acc >= 2.0 * chance;
        parts.push(format!("{k} {acc:.3} (chance {chance:.3})"));
    }
    for (k, mae) in &r.mae {
        let base = r.constant_mean_mae[k];
        ok &= mae < &base;
        parts.push(format!("{k} MAE {mae:.3} (const {base:.3})"));
    }
    parts.push(format!("perceptual {:.4}", r.perceptual_mean));
    Ok((ok, parts.join(", "), r))
}

/// Ablation on one seed. Seed 0 is the full desk run; other seeds use a
/// smaller base set with fresh production and estimator seeds.
fn ablation_for_seed(
    desk: &Desk,
    seed: u64,
    full_aug: Option<&EvalReport>,
) -> Result<Vec<EvalReport>> {
    let cache = desk.run.path(&format!("reports/ablation_seed{seed}.json"));
    if cache.exists() {
        return Ok(serde_json::from_slice(&std::fs::read(&cache)?)?);
    }
    let schema = desk.run.schema.clone();
    let eval = eval_set(desk)?;
    let metric = desk.run.metric();
    let mut est_cfg = desk.run.cfg.estimator.clone();
    let reports = if seed == 0 {
        let pairs = desk.pairs()?;
        let base = desk.run.baseline_pairs()?;
        let mut r = run_ablation(
            &[Variant::Baseline, Variant::DomainAdaptation],
            &pairs,
            &base,
            &eval,
            &metric,
            &est_cfg,
        )?;
        // The full method on seed 0 is exactly the criterion-6 estimator.
        let mut aug = full_aug.cloned().expect("criterion 6 report");
        aug.method = Variant::SemanticAug.name().into();
        r.push(aug);
        r
    } else {
        let dir = desk.run.path(&format!("datasets/ablation_seed{seed}"));
        let pairs = if dir.join("manifest.json").exists() {
            read_dataset(&dir)?
        } else {
            let (g_real, g_avatar) = desk.generators()?;
            let m = desk.means()?;
            let cfg = ProductionConfig {
                base_samples: 500,
                seed: rng::derive(seed, 0x6162_6c),
                ..desk.run.cfg.production.clone()
            };
            eprintln!(
                "[desk] ablation seed {seed}: producing {} pairs",
                cfg.base_samples
            );
            let ds = produce_pairs(
                &schema,
                &g_avatar,
                &g_real,
                &metric,
                &cfg,
                &m.w_init,
                &m.w_mean,
                &mut |_, _| {},
            )?;
            write_dataset(&ds, &dir)?;
            ds
        };
        let base = render_pairs(
            &schema,
            pairs.base_samples().count(),
            desk.run.cfg.arch.resolution,
            pairs.meta.seed,
        )?;
        est_cfg.seed = rng::derive(seed, 0x6573_74);
        eprintln!("[desk] ablation seed {seed}: training three estimators");
        run_ablation(
            &[
                Variant::Baseline,
                Variant::DomainAdaptation,
                Variant::SemanticAug,
            ],
            &pairs,
            &base,
            &eval,
            &metric,
            &est_cfg,
        )?
    };
    std::fs::write(&cache, serde_json::to_vec_pretty(&reports)?)?;
    Ok(reports)
}

fn c7_ablation(desk: &Desk, full: Option<&EvalReport>) -> Outcome {
    let mut ordered = 0;
    let mut lines = Vec::new();
    for seed in 0..3 {
        let r = ablation_for_seed(desk, seed, full)?;
        let d: Vec<f64> = r.iter().map(|r| r.perceptual_mean).collect();
        let good = d[0] > d[1] && d[1] > d[2];
        ordered += good as usize;
        lines.push(format!(
            "seed {seed}: {:.4} > {:.4} > {:.4} {}",
            d[0],
            d[1],
            d[2],
            if good { "yes" } else { "no" }
        ));
    }
    Ok((
        ordered >= 2,
        format!("{ordered}/3 seeds ordered; {}", lines.join("; ")),
    ))
}

fn c8_color_effect(desk: &Desk) -> Outcome {
    let (g_real, g_color) = desk.generators()?;
    let g_plain = desk.avatar_without_color()?;
    let zs: Vec<LatentCode> = (0..100)
        .map(|i| LatentCode::sample_z(&g_real.arch, rng::derive(0x636f_6c, i)))
        .collect();
    let refs: Vec<&LatentCode> = zs.iter().collect();
    let with = region_color_gaps(&g_real, &g_color, &refs, Label::Skin)?;
    let without = region_color_gaps(&g_real, &g_plain, &refs, Label::Skin)?;
    let d: Vec<f64> = with
        .iter()
        .zip(&without)
        .filter_map(|(a, b)| Some(b.as_ref()? - a.as_ref()?))
        .collect();
    let (t, p) = paired_t_test(&d);
    let mean = |v: &[Option<f64>]| {
        let x: Vec<f64> = v.iter().flatten().copied().collect();
        x.iter().sum::<f64>() / x.len().max(1) as f64
    };
    Ok((
        p < 0.05,
        format!(
            "skin gap lambda=1 {:.4} vs lambda=0 {:.4} over {} paired z; t {t:.2}, one-sided p {p:.2e}",
            mean(&with),
            mean(&without),
            d.len()
        ),
    ))
}

fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig {
        seed: 11,
        arch: ModelArch::toy(),
        ..Default::default()
    };
    c.sizes.realistic_train = 32;
    c.sizes.avatar_train = 32;
    c.sizes.eval = 12;
    c.sizes.mean_latent_samples = 64;
    for g in [&mut c.pretrain, &mut c.finetune] {
        g.steps = 8;
        g.batch_size = 4;
        g.min_dataset_size = 32;
    }
    c.production.base_samples = 12;
    c.production.policy.copies = 2;
    c.production.inversion.steps = 10;
    c.estimator = EstimatorTrainConfig {
        epochs: 3,
        batch_size: 16,
        ..Default::default()
    };
    c.estimator.arch.resolution = 32;
    c.estimator.arch.channels = vec![4, 8, 8];
    c.estimator.arch.head_hidden = 8;
    c
}

fn c9_determinism(root: &Path) -> Outcome {
    let mut outputs = Vec::new();
    for k in 0..2 {
        let dir = root.join(format!("determinism_{k}"));
        let _ = std::fs::remove_dir_all(&dir);
        let run = Run::create(&dir, &tiny_config())?;
        run.run_all(false)?;
        run.train_baseline(&mut |_| {})?;
        run.evaluate("baseline")?;
        let read = |rel: &str| std::fs::read(dir.join(rel));
        outputs.push((
            read("datasets/pairs/manifest.json")?,
            read("datasets/pairs/latents.bin")?,
            read("reports/estimator.json")?,
            read("reports/baseline.json")?,
        ));
    }
    let same = outputs[0] == outputs[1];
    Ok((
        same,
        format!("two fresh runs: manifests, latents and reports identical = {same}"),
    ))
}

/// Correlation between the engine skin brightness of p and the skin-region
/// brightness of the paired realistic image, over 200 base samples.
fn skin_tone_consistency(desk: &Desk) -> Outcome {
    let ds = desk.pairs()?;
    let (g_real, _) = desk.generators()?;
    let base: Vec<_> = ds.base_samples().take(200).collect();
    let gen = g_real.generate_batch(&base.iter().map(|s| &s.w).collect::<Vec<_>>())?;
    let bright = |c: [f64; 3]| (c[0] + c[1] + c[2]) / 3.0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (s, g) in base.iter().zip(&gen) {
        let (img, seg) = render_avatar_with_mask(&ds.schema, &s.vector, 64)?;
        let stored = s.image.to_image();
        if let (Some(a), Some(b)) = (
            region_mean_color(&img, &seg, Label::Skin),
            region_mean_color(&stored, &g.seg, Label::Skin),
        ) {
            xs.push(bright(a));
            ys.push(bright(b));
        }
    }
    let r = pearson(&xs, &ys);
    Ok((r >= 0.5, format!("r = {r:.3} over {} samples", xs.len())))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn c10_throughput(desk: &Desk) -> Outcome {
    let est = desk.estimator()?;
    let eval = eval_set(desk)?;
    let t = measure_throughput(&est, &eval.images, 10, 100);
    let consistency = t.latency_seconds * t.images_per_second;
    std::fs::write(
        desk.run.path("reports/throughput.json"),
        serde_json::to_vec_pretty(&t)?,
    )?;
    Ok((
        t.images_per_second >= 10.0 && (0.5..=2.0).contains(&consistency),
        format!(
            "{:.1} images/s single thread at {}px, latency x rate = {consistency:.2}",
            t.images_per_second, est.arch.resolution
        ),
    ))
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("AVATAR_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |i: usize| only.as_ref().is_none_or(|o| o.contains(&i));
    let _tmp;
    let root: PathBuf = match std::env::var("AVATAR_ACCEPTANCE_DIR") {
        Ok(d) => PathBuf::from(d),
        Err(_) => {
            _tmp = tempfile::tempdir().expect("temp dir");
            _tmp.path().to_path_buf()
        }
    };
    let desk = Desk::open(&root.join("desk")).expect("desk run directory");

    let mut failed = 0;
    let mut report = |i: usize, name: &str, r: Outcome| {
        let (pass, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += !pass as usize;
        println!(
            "criterion {i}: {} {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    };

    if wanted(1) {
        report(1, "gradient correctness", c1_gradients());
    }
    if wanted(2) {
        report(2, "color loss exactness", c2_color_exactness());
    }
    if wanted(5) {
        report(5, "SCE unit values", c5_sce());
    }
    if wanted(9) {
        report(9, "determinism", c9_determinism(&root));
    }
    if wanted(3) {
        report(3, "inversion self-reconstruction", c3_inversion(&desk));
    }
    if wanted(4) {
        report(4, "semantic augmentation", c4_augmentation(&desk));
    }
    if wanted(8) {
        report(8, "color consistency effect", c8_color_effect(&desk));
    }
    let mut full = None;
    if wanted(6) || wanted(7) {
        let r = c6_end_to_end(&desk);
        if wanted(6) {
            report(
                6,
                "end-to-end accuracy",
                r.as_ref()
                    .map(|(p, d, _)| (*p, d.clone()))
                    .map_err(clone_err),
            );
        }
        full = r.ok().map(|(_, _, rep)| rep);
    }
    if wanted(6) {
        // Not a numbered criterion; printed for the record.
        let (pass, detail) =
            skin_tone_consistency(&desk).unwrap_or_else(|e| (false, format!("error: {e}")));
        println!(
            "check: {} skin-tone consistency: {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if wanted(10) {
        report(10, "throughput", c10_throughput(&desk));
    }
    if wanted(7) {
        report(7, "ablation ordering", c7_ablation(&desk, full.as_ref()));
    }
    println!("{failed} criteria failed");
    // Failures are reported, not fatal, unless strict mode is requested.
    if failed > 0 && std::env::var_os("AVATAR_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}

fn clone_err(e: &avatar_core::Error) -> avatar_core::Error {
    avatar_core::Error::Format(e.to_string())
}
