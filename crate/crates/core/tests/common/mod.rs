//! Shared checks used by both the regular integration tests and the
//! acceptance binary.
#![allow(dead_code)]

use avatar_core::autodiff::{directional_grad_check, Var};
use avatar_core::engines::{sample_vector, EngineSchema};
use avatar_core::estimator::{
    estimator_loss_graph, Estimator, EstimatorArch, EstimatorTrainConfig,
};
use avatar_core::gan_training::{color_loss_graph, path_length_graph, r1_graph, DiscBatch};
use avatar_core::generators::{Discriminator, Domain, Generator, LatentCode, ModelArch};
use avatar_core::image::ImageTensor;
use avatar_core::nn::randn;
use avatar_core::rng;
use avatar_core::tensor::Tensor;

pub const DIRS: usize = 6;
/// Small enough that perturbations rarely cross a leaky-ReLU kink; larger steps
/// show first-order error from kinks rather than from the gradients.
pub const EPS: f64 = 1e-6;

fn toy_ws(a: &ModelArch, g: &Generator<f64>, n: u64) -> Vec<LatentCode> {
    (0..n)
        .map(|i| g.map_z_to_w(&LatentCode::sample_z(a, 100 + i)).unwrap())
        .collect()
}

/// R1 penalty differentiated with respect to discriminator weights.
pub fn r1_error() -> f64 {
    let a = ModelArch::toy();
    let g = Generator::<f64>::init(&a, Domain::Realistic, 1);
    let d = Discriminator::<f64>::init(&a, 2);
    let ws = toy_ws(&a, &g, 2);
    let outs = g.generate_batch(&ws.iter().collect::<Vec<_>>()).unwrap();
    let pairs: Vec<_> = outs.into_iter().map(|o| (o.image, o.seg)).collect();
    let x = DiscBatch::<f64>::from_pairs(&pairs.iter().collect::<Vec<_>>(), a.num_parts).input();
    directional_grad_check(
        |p: &[Var<f64>]| r1_graph(|x| Discriminator::graph(&a, p, x), &x),
        d.params.tensors(),
        DIRS,
        EPS,
        3,
    )
}

/// Path-length penalty differentiated with respect to synthesis weights.
pub fn path_length_error() -> f64 {
    let a = ModelArch::toy();
    let g = Generator::<f64>::init(&a, Domain::Realistic, 4);
    let ws = toy_ws(&a, &g, 2);
    let w0 = LatentCode::stack::<f64>(&ws.iter().collect::<Vec<_>>());
    let noise = randn::<f64>(&[2, 3, a.resolution, a.resolution], 1.0, &mut rng::rng(5));
    directional_grad_check(
        |p: &[Var<f64>]| {
            let w = Var::leaf(w0.clone());
            path_length_graph(
                |w| Generator::synthesis_graph(&a, p, w).image,
                &w,
                &noise,
                0.3,
                0.01,
            )
            .0
        },
        g.params.tensors(),
        DIRS,
        EPS,
        6,
    )
}

/// Color-matching loss differentiated with respect to both generators'
/// weights at once, and each generator alone.
pub fn color_errors() -> [f64; 3] {
    let a = ModelArch::toy();
    let gr = Generator::<f64>::init(&a, Domain::Realistic, 7);
    let ga = Generator::<f64>::init(&a, Domain::Avatar, 8);
    let ws = toy_ws(&a, &gr, 3);
    let w0 = LatentCode::stack::<f64>(&ws.iter().collect::<Vec<_>>());
    let refs: Vec<&LatentCode> = ws.iter().collect();
    let segs_r: Vec<_> = gr
        .generate_batch(&refs)
        .unwrap()
        .into_iter()
        .map(|o| o.seg)
        .collect();
    let segs_a: Vec<_> = ga
        .generate_batch(&refs)
        .unwrap()
        .into_iter()
        .map(|o| o.seg)
        .collect();
    let nr = gr.params.len();
    let loss = |pr: &[Var<f64>], pa: &[Var<f64>]| {
        let w = Var::constant(w0.clone());
        let ir = Generator::synthesis_graph(&a, pr, &w).image;
        let ia = Generator::synthesis_graph(&a, pa, &w).image;
        color_loss_graph(&ir, &segs_r, &ia, &segs_a)
    };
    let both: Vec<Tensor<f64>> = gr
        .params
        .tensors()
        .iter()
        .chain(ga.params.tensors())
        .cloned()
        .collect();
    let joint = directional_grad_check(|p| loss(&p[..nr], &p[nr..]), &both, DIRS, EPS, 9);
    let ca = ga.params.constants();
    let real_only = directional_grad_check(|p| loss(p, &ca), gr.params.tensors(), DIRS, EPS, 10);
    let cr = gr.params.constants();
    let avatar_only = directional_grad_check(|p| loss(&cr, p), ga.params.tensors(), DIRS, EPS, 11);
    [joint, real_only, avatar_only]
}

/// Estimator loss (SCE heads plus mean-L1 continuous head) with respect to
/// estimator weights.
pub fn estimator_error() -> f64 {
    let schema = EngineSchema::engine_a();
    let arch = EstimatorArch {
        resolution: 32,
        channels: vec![4, 8, 8],
        head_hidden: 8,
    };
    let est = Estimator::<f64>::init(&schema, &arch, 12);
    let targets: Vec<_> = (0..3).map(|i| sample_vector(&schema, 20 + i)).collect();
    let imgs: Vec<ImageTensor> = (0..3)
        .map(|i| {
            let t =
                avatar_core::nn::uniform::<f64>(&[1, 3, 32, 32], 0.0, 1.0, &mut rng::rng(30 + i));
            ImageTensor::batch_from_tensor(&t).remove(0)
        })
        .collect();
    let x = ImageTensor::batch_to_tensor::<f64>(&imgs.iter().collect::<Vec<_>>());
    let cfg = EstimatorTrainConfig::default();
    let trefs: Vec<_> = targets.iter().collect();
    directional_grad_check(
        |p: &[Var<f64>]| {
            let out = est.graph(p, &Var::constant(x.clone()));
            estimator_loss_graph(&schema, &out, &trefs, &cfg).0
        },
        est.params.tensors(),
        DIRS,
        EPS,
        13,
    )
}
