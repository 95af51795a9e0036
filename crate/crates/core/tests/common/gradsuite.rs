//! The finite-difference gradient suite, shared by the `gradients` target
//! and the acceptance run.

use super::*;
use qxqnet::cfa::{self, CfaSpec};
use qxqnet::losses::{self, LossWeights, Perceptual, Regressor};
use qxqnet::model::{subpixel_upsample, ModelConfig, Network};
use qxqnet::tensor::{Shape, Tensor};

pub const SEEDS: u64 = 50;
/// Random directions per directional check.
const DIRS: usize = 8;
/// Finite-difference steps for the end-to-end check, widest first.
const COMPOSITE_STEPS: [f64; 3] = [3e-2, 1e-2, 3e-3];

/// Worst relative error per check: (name, seed, error).
pub type Record = Vec<(String, u64, f64)>;

/// Run `f` on every seed and keep the worst error.
fn record(rec: &mut Record, name: &str, f: impl Fn(u64) -> f64) {
    let (seed, err) = (0..SEEDS)
        .map(|s| (s, f(s)))
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    rec.push((name.to_string(), seed, err));
}

/// Require at least `min` of the probes to have stayed in one smooth piece.
fn piecewise((err, probed): (f64, f64), min: f64) -> f64 {
    assert!(probed >= min, "only {:.0}% of probes avoided a kink", 100.0 * probed);
    err
}

pub const GROUPS: [(&str, fn(&mut Record)); 10] = [
    ("elementwise", elementwise_unary_ops),
    ("powf", powf_on_positive_inputs),
    ("binary", binary_ops),
    ("reductions", reductions),
    ("conv2d", conv2d_all_inputs),
    ("layout", layout_ops),
    ("resampling", resampling_ops),
    ("ms_ssim", ms_ssim_loss_gradient),
    ("perceptual+distill", perceptual_and_distill_gradients),
    ("composite", composed_student_objective),
];

fn unary_case(seed: u64, kinked: bool) -> Vec<(Shape, Vec<f32>)> {
    let mut r = rng(seed);
    let s = random_shape(&mut r);
    let n = qxqnet::tensor::numel(s);
    let d = if kinked { away_from_zero(&mut r, n) } else { random_vec(&mut r, n, -1.0, 1.0) };
    vec![(s, d)]
}

pub fn elementwise_unary_ops(rec: &mut Record) {
    type Op = fn(&Tensor) -> Tensor;
    let ops: [(&str, Op, bool); 8] = [
        ("leaky_relu", |t| t.leaky_relu(0.2), true),
        ("relu", |t| t.relu(), true),
        ("sigmoid", |t| t.sigmoid(), false),
        ("tanh", |t| t.tanh(), false),
        ("square", |t| t.square(), false),
        ("scale", |t| t.scale(-1.7), false),
        ("add_scalar", |t| t.add_scalar(0.3), false),
        ("clamp_min", |t| t.clamp_min(0.05), true),
    ];
    for (name, op, kinked) in ops {
        record(rec, name, |seed| {
            check_inputs(&unary_case(seed, kinked), |x| project(&op(&x[0]), seed))
        });
    }
}

pub fn powf_on_positive_inputs(rec: &mut Record) {
    record(rec, "powf", |seed| {
        let mut r = rng(seed);
        let s = random_shape(&mut r);
        let d = random_vec(&mut r, qxqnet::tensor::numel(s), 0.2, 1.5);
        check_inputs(&[(s, d)], |x| project(&x[0].powf(0.37), seed))
    });
}

pub fn binary_ops(rec: &mut Record) {
    for name in ["add", "sub", "mul", "div"] {
        record(rec, name, |seed| {
            let mut r = rng(seed);
            let s = random_shape(&mut r);
            let n = qxqnet::tensor::numel(s);
            let a = random_vec(&mut r, n, -1.0, 1.0);
            let b = if name == "div" { random_vec(&mut r, n, 0.5, 1.5) } else { random_vec(&mut r, n, -1.0, 1.0) };
            check_inputs(&[(s, a), (s, b)], |x| match name {
                "add" => project(&x[0].add(&x[1])?, seed),
                "sub" => project(&x[0].sub(&x[1])?, seed),
                "mul" => project(&x[0].mul(&x[1])?, seed),
                "div" => project(&x[0].div(&x[1])?, seed),
                _ => unreachable!(),
            })
        });
    }
    record(rec, "mse", |seed| {
        let mut r = rng(seed);
        let s = random_shape(&mut r);
        let n = qxqnet::tensor::numel(s);
        let inputs = vec![(s, random_vec(&mut r, n, -1.0, 1.0)), (s, random_vec(&mut r, n, -1.0, 1.0))];
        check_inputs_directional(&inputs, DIRS, seed, |x| x[0].mse(&x[1]))
    });
}

pub fn reductions(rec: &mut Record) {
    record(rec, "mean", |seed| check_inputs(&unary_case(seed, false), |x| Ok(x[0].square().mean())));
    record(rec, "sum", |seed| check_inputs(&unary_case(seed, false), |x| Ok(x[0].square().sum())));
    record(rec, "mean_spatial", |seed| {
        check_inputs(&unary_case(seed, false), |x| project(&x[0].square().mean_spatial(), seed))
    });
}

pub fn conv2d_all_inputs(rec: &mut Record) {
    record(rec, "conv2d", |seed| {
        let mut r = rng(seed);
        use rand::Rng;
        let (n, cin, cout) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
        let k = [1, 3, 5][r.gen_range(0..3)];
        let stride = r.gen_range(1..3);
        let pad = r.gen_range(0..=k / 2);
        let (h, w) = (r.gen_range(k.max(3)..6), r.gen_range(k.max(3)..6));
        let xs = [n, cin, h, w];
        let ws = [cout, cin, k, k];
        let bs = [1, cout, 1, 1];
        let inputs = vec![
            (xs, random_vec(&mut r, qxqnet::tensor::numel(xs), -1.0, 1.0)),
            (ws, random_vec(&mut r, qxqnet::tensor::numel(ws), -1.0, 1.0)),
            (bs, random_vec(&mut r, cout, -1.0, 1.0)),
        ];
        check_inputs(&inputs, |x| project(&x[0].conv2d(&x[1], Some(&x[2]), stride, pad)?, seed))
    });
}

pub fn layout_ops(rec: &mut Record) {
    record(rec, "concat", |seed| {
        let mut r = rng(seed);
        let s = random_shape(&mut r);
        let s2 = [s[0], s[1] + 1, s[2], s[3]];
        let inputs = vec![
            (s, random_vec(&mut r, qxqnet::tensor::numel(s), -1.0, 1.0)),
            (s2, random_vec(&mut r, qxqnet::tensor::numel(s2), -1.0, 1.0)),
        ];
        check_inputs(&inputs, |x| project(&Tensor::concat(&[&x[0], &x[1]])?, seed))
    });
    record(rec, "pixel_shuffle", |seed| {
        let mut r = rng(seed);
        let s = [1, 8, 3, 2];
        check_inputs(&[(s, random_vec(&mut r, 48, -1.0, 1.0))], |x| project(&x[0].pixel_shuffle(2)?, seed))
    });
    record(rec, "pixel_unshuffle", |seed| {
        let mut r = rng(seed);
        let s = [2, 1, 4, 6];
        check_inputs(&[(s, random_vec(&mut r, 48, -1.0, 1.0))], |x| project(&x[0].pixel_unshuffle(2)?, seed))
    });
}

pub fn resampling_ops(rec: &mut Record) {
    record(rec, "upsample_bilinear2x", |seed| {
        check_inputs(&unary_case(seed, false), |x| project(&x[0].upsample_bilinear2x(), seed))
    });
    record(rec, "avg_pool2x", |seed| {
        let mut r = rng(seed);
        let s = [1, 2, 4, 6];
        check_inputs(&[(s, random_vec(&mut r, 48, -1.0, 1.0))], |x| project(&x[0].avg_pool2x(), seed))
    });
    record(rec, "separable_filter_valid", |seed| {
        let taps = [0.2, 0.5, 0.3];
        check_inputs(&unary_case(seed, false), |x| project(&x[0].separable_filter_valid(&taps)?, seed))
    });
    record(rec, "subpixel_upsample", |seed| {
        let mut r = rng(seed);
        let xs = [1, 2, 3, 3];
        let ws = [8, 2, 3, 3];
        let inputs = vec![
            (xs, random_vec(&mut r, 18, -1.0, 1.0)),
            (ws, random_vec(&mut r, 144, -0.5, 0.5)),
            ([1, 8, 1, 1], random_vec(&mut r, 8, -0.5, 0.5)),
        ];
        check_inputs(&inputs, |x| project(&subpixel_upsample(&x[0], &x[1], Some(&x[2]))?, seed))
    });
}

pub fn ms_ssim_loss_gradient(rec: &mut Record) {
    record(rec, "ms_ssim", |seed| {
        let mut r = rng(seed);
        let s = [1, 2, 12, 13];
        let a = random_vec(&mut r, 312, 0.0, 1.0);
        let b: Vec<f32> = a.iter().map(|v| (v + rand::Rng::gen_range(&mut r, -0.2..0.2f32)).clamp(0.0, 1.0)).collect();
        check_inputs_directional(&[(s, a), (s, b)], DIRS, seed, |x| losses::ms_ssim_loss(&x[0], &x[1]))
    });
}

pub fn perceptual_and_distill_gradients(rec: &mut Record) {
    let p = Perceptual::new(losses::DEFAULT_PERCEPTUAL_SEED);
    record(rec, "perceptual", |seed| {
        let mut r = rng(seed);
        let s = [1, 3, 8, 8];
        let inputs = vec![(s, random_vec(&mut r, 192, 0.0, 1.0)), (s, random_vec(&mut r, 192, 0.0, 1.0))];
        let pattern = |x: &[Tensor]| {
            let mut f = p.features(&x[0]).unwrap();
            f.extend(p.features(&x[1]).unwrap());
            signs(&f)
        };
        piecewise(check_inputs_piecewise(&inputs, pattern, |x| p.loss(&x[0], &x[1])), 0.5)
    });
    record(rec, "distill", |seed| {
        let mut r = rng(seed);
        let reg = Regressor::new(3, 5, seed).unwrap();
        let fs = [1, 3, 4, 4];
        let inputs = vec![(fs, random_vec(&mut r, 48, -1.0, 1.0))];
        let ft = Tensor::constant([1, 5, 4, 4], random_vec(&mut r, 80, -1.0, 1.0));
        let e_input = check_inputs(&inputs, |x| losses::distill_loss(&x[0], &ft, &reg));
        let f_s = Tensor::constant(fs, inputs[0].1.clone());
        let [w, b] = [&reg.weight, &reg.bias];
        let coords: Vec<(usize, usize)> = (0..15).map(|i| (0, i)).chain((0..5).map(|i| (1, i))).collect();
        let f = || losses::distill_loss(&f_s, &ft, &reg);
        let e_reg = check_params(&[w, b], &coords, &[FD_STEP], Vec::new, f, || f64::from(f().unwrap().item())).0;
        e_input.max(e_reg)
    });
}

/// The whole student: forward pass, level-0 objective and the feature
/// distillation term, differentiated with respect to network parameters.
pub fn composed_student_objective(rec: &mut Record) {
    let p = Perceptual::new(losses::DEFAULT_PERCEPTUAL_SEED);
    let weights = LossWeights::level0();
    record(rec, "student", |seed| {
        let cfg = ModelConfig {
            base_channels: 2,
            level1_blocks: 1,
            level1_kernels: vec![3, 5],
            ..ModelConfig::student_desk().with_seed(seed)
        };
        let net = Network::student(&cfg).unwrap();
        let mut r = rng(seed);
        let gt_img = random_image(&mut r, 16, 16);
        let mosaic = cfa::gray_image(&cfa::mosaic(&gt_img, CfaSpec::qxq()).unwrap());
        let gt = losses::image_to_tensor(&gt_img);
        let reg = Regressor::new(net.tap_channels(), 4, seed).unwrap();
        // Teacher features near the regressor's initial output keep the
        // alpha-weighted term from dominating the objective's magnitude.
        let ft = {
            let tap = net.forward_full(&mosaic).unwrap().tap;
            let init = reg.forward(&tap).unwrap().to_vec();
            let noise = random_vec(&mut r, init.len(), -0.2, 0.2);
            Tensor::constant([1, 4, 8, 8], init.iter().zip(&noise).map(|(a, b)| a + b).collect())
        };
        let objective = || {
            let out = net.forward_full(&mosaic)?;
            let l0 = losses::level0_loss(&out.rgb_full, &gt, &weights, &p)?;
            let ld = losses::distill_loss(&out.tap, &ft, &reg)?;
            losses::total_loss(&l0, &ld, weights.alpha)
        };
        // The same objective assembled in f64 from its f32 terms, so rounding
        // of the f32 total does not swamp the differences.
        let value = || {
            let out = net.forward_full(&mosaic).unwrap();
            let s = &out.rgb_full;
            let item = |t: qxqnet::Result<Tensor>| f64::from(t.unwrap().item());
            item(s.mse(&gt))
                + f64::from(weights.lambda1) * item(p.loss(s, &gt))
                + f64::from(weights.lambda2) * (1.0 - item(losses::ms_ssim_tensor(s, &gt)))
                + f64::from(weights.alpha) * item(losses::distill_loss(&out.tap, &ft, &reg))
        };
        let params: Vec<&qxqnet::tensor::Parameter> = net.params().iter().map(|(_, p)| p).collect();
        use rand::Rng;
        let coords: Vec<(usize, usize)> = (0..96)
            .map(|_| {
                let pi = r.gen_range(0..params.len());
                (pi, r.gen_range(0..params[pi].numel()))
            })
            .collect();
        let pattern = || {
            let f = net.forward(&mosaic, 0).unwrap();
            let mut acts: Vec<Tensor> = f.taps.iter().map(|(_, t)| t.clone()).collect();
            let img = f.image(0).unwrap();
            acts.extend(p.features(img).unwrap());
            // MS-SSIM floors each scale factor, another kink.
            for t in losses::ms_ssim_scale_terms(img, &gt).unwrap() {
                acts.push(t.add_scalar(-(losses::CS_FLOOR as f32)));
            }
            signs(&acts)
        };
        // A parameter moves every unit downstream of it, so many probes
        // straddle some kink; 96 probes leave well over 10 usable ones.
        // Inside one piece the stencil can be wider, which lifts the
        // differences above f32 round-off in the loss value.
        piecewise(check_params(&params, &coords, &COMPOSITE_STEPS, pattern, objective, value), 0.1)
    });
}
