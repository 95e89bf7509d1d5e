//! Finite-difference verification of every differentiable operation and of the assembled
//! encoder, decoder, head and composite-objective graphs, in double precision.

use rand::{Rng as _, RngCore};
use serde::Serialize;

use crate::error::Result;
use crate::models::{EncoderSpec, HeadSpec, Mode, Network};

use crate::numerics::{grad_check, substream, Bound, Group, ParamSet, Rng, Tape, Tensor, Var, BN_EPS, LEAKY_SLOPE};

/// Relative-error bound a case must meet.
pub const TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;
const SAMPLES_PER_PARAM: usize = 8;

pub const CASES: [&str; 17] = [
    "conv2d",
    "conv_transpose2d",
    "maxpool2d",
    "batchnorm2d_train",
    "batchnorm2d_eval",
    "leaky_relu",
    "interpolate_nearest",
    "linear",
    "dropout",
    "reshape_weighted_sum",
    "softmax_cross_entropy",
    "mse",
    "encoder",
    "decoder",
    "head",
    "composite_objective",
    "full_size_autoencoder",
];

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: String,
    pub trials: usize,
    pub max_rel_error: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).expect("shape")
}

/// Values bounded away from zero, for inputs to kinked functions.
fn off_kink(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.1..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Distinct values spaced well beyond the probe step, for max pooling.
fn distinct(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    crate::numerics::shuffle(&mut order, rng);
    let data = order
        .iter()
        .map(|&r| r as f64 * 0.01 + rng.random_range(0.0..0.001))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

fn set(entries: Vec<(&str, Tensor<f64>)>) -> Result<ParamSet<f64>> {
    let mut ps = ParamSet::new();
    for (name, t) in entries {
        ps.insert(name, Group::Encoder, t)?;
    }
    Ok(ps)
}

fn mse_to(tape: &mut Tape<f64>, out: Var, rng_seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let target = uniform(&shape, -1.0, 1.0, &mut substream(rng_seed, "target"));
    tape.mse(out, &target)
}

fn run_case(case: &str, seed: u64) -> Result<f64> {
    let mut rng = substream(seed, "shapes");
    let mut probe = substream(seed, "probe");
    let n = rng.random_range(1..=3usize);
    let c = rng.random_range(1..=3usize);
    let f = rng.random_range(1..=3usize);
    let h = rng.random_range(4..=7usize);
    let w = rng.random_range(4..=7usize);
    let check = |ps: &mut ParamSet<f64>, probe: &mut Rng, fwd: &mut dyn FnMut(&mut Tape<f64>, &Bound) -> Result<Var>| {
        grad_check(ps, EPS, SAMPLES_PER_PARAM, probe, fwd)
    };
    match case {
        "conv2d" => {
            let pad = 1;
            let mut ps = set(vec![
                ("x", uniform(&[n, c, h, w], -1.0, 1.0, &mut rng)),
                ("w", uniform(&[f, c, 3, 3], -0.5, 0.5, &mut rng)),
                ("b", uniform(&[f], -0.5, 0.5, &mut rng)),
            ])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let y = t.conv2d(p.var("x")?, p.var("w")?, p.var("b")?, pad)?;
                mse_to(t, y, seed)
            })
        }
        "conv_transpose2d" => {
            let pad = 1;
            let mut ps = set(vec![
                ("y", uniform(&[n, f, h, w], -1.0, 1.0, &mut rng)),
                ("w", uniform(&[f, c, 3, 3], -0.5, 0.5, &mut rng)),
                ("b", uniform(&[c], -0.5, 0.5, &mut rng)),
            ])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let x = t.conv_transpose2d(p.var("y")?, p.var("w")?, p.var("b")?, pad)?;
                mse_to(t, x, seed)
            })
        }
        "maxpool2d" => {
            let mut ps = set(vec![("x", distinct(&[n, c, h, w], &mut rng))])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let y = t.maxpool2d(p.var("x")?)?;
                mse_to(t, y, seed)
            })
        }
        "batchnorm2d_train" | "batchnorm2d_eval" => {
            let train = case == "batchnorm2d_train";
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
            let var: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..2.0)).collect();
            let mut ps = set(vec![
                ("x", uniform(&[n.max(2), c, h, w], -1.0, 1.0, &mut rng)),
                ("gamma", uniform(&[c], 0.5, 1.5, &mut rng)),
                ("beta", uniform(&[c], -0.5, 0.5, &mut rng)),
            ])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let (x, g, b) = (p.var("x")?, p.var("gamma")?, p.var("beta")?);
                let y = if train {
                    t.batchnorm2d_train(x, g, b, BN_EPS)?.0
                } else {
                    t.batchnorm2d_eval(x, g, b, &mean, &var, BN_EPS)?
                };
                mse_to(t, y, seed)
            })
        }
        "leaky_relu" => {
            let mut ps = set(vec![("x", off_kink(&[n, c, h, w], &mut rng))])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let y = t.leaky_relu(p.var("x")?, LEAKY_SLOPE);
                mse_to(t, y, seed)
            })
        }
        "interpolate_nearest" => {
            let target = (h * 2 + rng.random_range(0..=1usize), w * 2 + rng.random_range(0..=1usize));
            let mut ps = set(vec![("x", uniform(&[n, c, h, w], -1.0, 1.0, &mut rng))])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let y = t.interpolate_nearest(p.var("x")?, target)?;
                mse_to(t, y, seed)
            })
        }
        "linear" => {
            let (d, o) = (rng.random_range(2..=9usize), rng.random_range(2..=9usize));
            let mut ps = set(vec![
                ("x", uniform(&[n, d], -1.0, 1.0, &mut rng)),
                ("w", uniform(&[o, d], -0.5, 0.5, &mut rng)),
                ("b", uniform(&[o], -0.5, 0.5, &mut rng)),
            ])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let y = t.linear(p.var("x")?, p.var("w")?, p.var("b")?)?;
                mse_to(t, y, seed)
            })
        }
        "dropout" => {
            let mut ps = set(vec![("x", uniform(&[n, 12], -1.0, 1.0, &mut rng))])?;
            check(&mut ps, &mut probe, &mut |t, p| {
                let y = t.dropout(p.var("x")?, 0.3, true, &mut substream(seed, "mask"))?;
                mse_to(t, y, seed)
            })
        }
        "reshape_weighted_sum" => {
            let mut ps = set(vec![("x", uniform(&[n, c, h, w], -1.0, 1.0, &mut rng))])?;
            let (a, b) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            check(&mut ps, &mut probe, &mut |t, p| {
                let x = p.var("x")?;
                let r = t.reshape(x, [n, c * h * w])?;
                let l1 = mse_to(t, r, seed)?;
                let l2 = mse_to(t, x, seed + 1)?;
                let s = t.sum(r);
                t.weighted_sum(&[(l1, a), (l2, b), (s, 0.01)])
            })
        }
        "softmax_cross_entropy" => {
            let k = rng.random_range(2..=6usize);
            let targets: Vec<usize> = (0..n + 1).map(|_| rng.random_range(0..k)).collect();
            let mut ps = set(vec![("z", uniform(&[n + 1, k], -2.0, 2.0, &mut rng))])?;
            check(&mut ps, &mut probe, &mut |t, p| t.softmax_cross_entropy(p.var("z")?, &targets))
        }
        "mse" => {
            let mut ps = set(vec![("x", uniform(&[n, c, h, w], -1.0, 1.0, &mut rng))])?;
            check(&mut ps, &mut probe, &mut |t, p| mse_to(t, p.var("x")?, seed))
        }
        "encoder" | "decoder" | "head" | "composite_objective" | "full_size_autoencoder" => graph_case(case, seed, &mut rng, &mut probe),
        other => Err(crate::Error::config(format!("unknown gradient-check case `{other}`"))),
    }
}

fn small_spec(full_size: bool) -> EncoderSpec {
    if full_size {
        EncoderSpec {
            feature_maps: vec![1, 2, 4, 8],
            fc_hidden: 8,
            bottleneck: 4,
            ..EncoderSpec::default()
        }
    } else {
        EncoderSpec {
            input_height: 20,
            input_width: 19,
            feature_maps: vec![2, 4, 8],
            fc_hidden: 6,
            bottleneck: 5,
            ..EncoderSpec::default()
        }
    }
}

fn graph_case(case: &str, seed: u64, rng: &mut Rng, probe: &mut Rng) -> Result<f64> {
    let full = case == "full_size_autoencoder";
    let spec = small_spec(full);
    let k = 3;
    let head = |outputs| HeadSpec {
        input: spec.bottleneck,
        hidden: 4,
        ..HeadSpec::new(outputs)
    };
    let net = Network::with_rng(spec.clone(), Some(head(k)), Some(head(2)), rng)?;
    let n = 2;
    let mut ps: ParamSet<f64> = net.params.cast();
    ps.insert("x", Group::Encoder, uniform(&[n, 1, spec.input_height, spec.input_width], -1.0, 1.0, rng))?;
    ps.insert("xi", Group::Encoder, uniform(&[n, 1, spec.input_height, spec.input_width], -1.0, 1.0, rng))?;
    ps.insert("z", Group::Encoder, uniform(&[n, spec.bottleneck], -1.0, 1.0, rng))?;
    // Reconstruction target held fixed so probing `x` does not move it.
    let target = ps.get("x").expect("inserted").value.clone();
    let ae = &net.autoencoder;
    let stats = &net.stats;
    let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let pds: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let (alpha, lambda) = (0.01, 0.01);
    let id_head = net.speaker_head.clone().expect("built with a speaker head");
    let pd_head = net.pd_head.clone().expect("built with a PD head");
    let samples = if full { 3 } else { SAMPLES_PER_PARAM };
    let mut fwd = |t: &mut Tape<f64>, p: &Bound| -> Result<Var> {
        let mut pending = Vec::new();
        let mut mask = substream(seed, "mask");
        match case {
            "encoder" => {
                let z = ae.encode(t, p, stats, p.var("x")?, Mode::Train, &mut pending)?;
                mse_to(t, z, seed)
            }
            "decoder" => {
                let y = ae.decode(t, p, stats, p.var("z")?, Mode::Train, &mut pending)?;
                mse_to(t, y, seed)
            }
            "head" => {
                let logits = id_head.forward(t, p, p.var("z")?, Mode::Train, &mut mask)?;
                t.softmax_cross_entropy(logits, &ids)
            }
            _ => {
                let x = p.var("x")?;
                let z = ae.encode(t, p, stats, x, Mode::Train, &mut pending)?;
                let y = ae.decode(t, p, stats, z, Mode::Train, &mut pending)?;
                let l_ae = t.mse(y, &target)?;
                if full {
                    return Ok(l_ae);
                }
                let pc = pd_head.forward(t, p, z, Mode::Train, &mut mask)?;
                let l_pc = t.softmax_cross_entropy(pc, &pds)?;
                let zi = ae.encode(t, p, stats, p.var("xi")?, Mode::Train, &mut pending)?;
                let id = id_head.forward(t, p, zi, Mode::Train, &mut mask)?;
                let l_id = t.softmax_cross_entropy(id, &ids)?;
                t.weighted_sum(&[(l_ae, 1.0 - alpha - lambda), (l_pc, alpha), (l_id, -lambda)])
            }
        }
    };
    // Parameters the loss does not touch have zero gradient on both sides; keep them out.
    let used: &[&str] = match case {
        "encoder" => &["enc.", "x"],
        "decoder" => &["dec.", "z"],
        "head" => &["id.", "z"],
        "full_size_autoencoder" => &["enc.", "dec.", "x"],
        _ => &["enc.", "dec.", "id.", "pc.", "xi"],
    };
    let mut kept = ParamSet::new();
    for p in ps.iter() {
        if used.iter().any(|u| if u.ends_with('.') { p.name.starts_with(u) } else { p.name == *u }) {
            kept.insert(p.name.clone(), p.group, p.value.clone())?;
        }
    }
    if case == "composite_objective" {
        kept.insert("x", Group::Encoder, ps.get("x").expect("inserted").value.clone())?;
    }
    grad_check(&mut kept, EPS, samples, probe, &mut fwd)
}

/// Run `trials` randomized checks spread round-robin over [`CASES`].
pub fn gradcheck_suite(trials: usize, seed: u64) -> Result<Vec<CaseResult>> {
    let mut out: Vec<CaseResult> = CASES
        .iter()
        .map(|c| CaseResult {
            case: c.to_string(),
            trials: 0,
            max_rel_error: 0.0,
        })
        .collect();
    for t in 0..trials {
        let i = t % CASES.len();
        let trial_seed = substream(seed, &format!("gradcheck.{}.{t}", CASES[i])).next_u64();
        let err = run_case(CASES[i], trial_seed)?;
        out[i].trials += 1;
        out[i].max_rel_error = out[i].max_rel_error.max(err);
    }
    Ok(out)
}
