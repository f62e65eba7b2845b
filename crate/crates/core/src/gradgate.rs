//! Finite-difference gate over every differentiable op and the composite
//! training loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Vocab, SPECIAL_TOKENS};
use crate::dsp::{DspConfig, InputMode, MonoSignal};
use crate::encoder::{EncoderInput, FanLayer, Variant};
use crate::error::Result;
use crate::numerics::{grad_check, grad_check_inputs, Graph, ParamStore, Tensor, Var};
use crate::training::{sample_loss, LossWeights, ModelConfig, Sample};

/// Central-difference step for op checks.
pub const OP_STEP: f64 = 1e-5;
pub const OP_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-3;
pub const COMPOSITE_MIN_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Serialize)]
pub struct GateCheck {
    pub name: String,
    pub max_rel: f64,
    /// Share of probed coordinates under `tol`.
    pub fraction: f64,
    pub tol: f64,
    pub min_fraction: f64,
    pub passed: bool,
}

impl GateCheck {
    fn strict(name: &str, max_rel: f64) -> Self {
        Self {
            name: name.into(),
            max_rel,
            fraction: if max_rel < OP_TOL { 1.0 } else { 0.0 },
            tol: OP_TOL,
            min_fraction: 1.0,
            passed: max_rel < OP_TOL,
        }
    }
}

type OpFn = Box<dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>>;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.3..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `Σ y ⊙ c` with fixed, non-uniform weights so every output matters.
fn weighted_sum(g: &Graph<f64>, y: Var) -> Result<Var> {
    let shape = g.shape(y);
    let c = g.constant(Tensor::from_fn(&shape, |i| (1.3 * i as f64 + 0.5).sin() + 0.2));
    let p = g.mul(y, c)?;
    Ok(g.sum(p))
}

fn unary(f: fn(&Graph<f64>, Var) -> Var) -> OpFn {
    Box::new(move |g, v| weighted_sum(g, f(g, v[0])))
}

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Vec<Tensor<f64>>, OpFn)> {
    let m34 = rand_t(rng, &[3, 4], -1.0, 1.0);
    let m34b = rand_t(rng, &[3, 4], -1.0, 1.0);
    let m45 = rand_t(rng, &[4, 5], -1.0, 1.0);
    let v4 = rand_t(rng, &[4], -1.0, 1.0);
    let pos = rand_t(rng, &[3, 4], 0.3, 2.0);
    let nz = away_from_zero(rng, &[3, 4]);
    let seq = rand_t(rng, &[7, 3], -1.0, 1.0);
    let w01 = rand_t(rng, &[1], 0.2, 0.8);
    vec![
        (
            "add",
            vec![m34.clone(), v4.clone()],
            Box::new(|g, v| weighted_sum(g, g.add(v[0], v[1])?)),
        ),
        (
            "sub",
            vec![m34.clone(), m34b.clone()],
            Box::new(|g, v| weighted_sum(g, g.sub(v[0], v[1])?)),
        ),
        (
            "mul",
            vec![m34.clone(), m34b.clone()],
            Box::new(|g, v| weighted_sum(g, g.mul(v[0], v[1])?)),
        ),
        (
            "div",
            vec![m34.clone(), pos.clone()],
            Box::new(|g, v| weighted_sum(g, g.div(v[0], v[1])?)),
        ),
        (
            "lerp",
            vec![m34.clone(), m34b.clone(), w01],
            Box::new(|g, v| weighted_sum(g, g.lerp(v[0], v[1], v[2])?)),
        ),
        (
            "scale",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.scale(v[0], -1.7))),
        ),
        (
            "add_scalar",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.add_scalar(v[0], 0.4))),
        ),
        (
            "rsub_scalar",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.rsub_scalar(0.4, v[0]))),
        ),
        ("neg", vec![m34.clone()], unary(Graph::neg)),
        ("sin", vec![m34.clone()], unary(Graph::sin)),
        ("cos", vec![m34.clone()], unary(Graph::cos)),
        ("sigmoid", vec![m34.clone()], unary(Graph::sigmoid)),
        ("tanh", vec![m34.clone()], unary(Graph::tanh)),
        ("exp", vec![m34.clone()], unary(Graph::exp)),
        ("log", vec![pos.clone()], Box::new(|g, v| weighted_sum(g, g.log(v[0])?))),
        ("log1p", vec![pos.clone()], unary(Graph::log1p)),
        ("gelu", vec![m34.clone()], unary(Graph::gelu)),
        ("relu", vec![nz.clone()], unary(Graph::relu)),
        ("abs", vec![nz], unary(Graph::abs)),
        ("square", vec![m34.clone()], unary(Graph::square)),
        ("sqrt", vec![pos], Box::new(|g, v| weighted_sum(g, g.sqrt(v[0])?))),
        (
            "matmul",
            vec![m34.clone(), m45],
            Box::new(|g, v| weighted_sum(g, g.matmul(v[0], v[1])?)),
        ),
        (
            "transpose",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.transpose(v[0])?)),
        ),
        (
            "softmax",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.softmax(v[0], 1)?)),
        ),
        (
            "softmax_axis0",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.softmax(v[0], 0)?)),
        ),
        (
            "log_softmax",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.log_softmax(v[0])?)),
        ),
        (
            "layer_norm",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.layer_norm(v[0], 1e-5)?)),
        ),
        (
            "conv1d",
            vec![seq.clone(), rand_t(rng, &[9, 2], -1.0, 1.0)],
            Box::new(|g, v| weighted_sum(g, g.conv1d(v[0], v[1], 3)?)),
        ),
        (
            "max_pool_time",
            vec![seq.clone()],
            Box::new(|g, v| weighted_sum(g, g.max_pool_time(v[0], 2)?)),
        ),
        (
            "mean_pool_time",
            vec![seq.clone()],
            Box::new(|g, v| weighted_sum(g, g.mean_pool_time(v[0], 2)?)),
        ),
        (
            "avg_pool_to",
            vec![seq.clone()],
            Box::new(|g, v| weighted_sum(g, g.avg_pool_to(v[0], 3)?)),
        ),
        (
            "embedding",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.embedding(v[0], &[2, 0, 2, 1])?)),
        ),
        (
            "concat",
            vec![m34.clone(), m34b.clone()],
            Box::new(|g, v| {
                let a = g.concat(&[v[0], v[1]], 0)?;
                let b = g.concat(&[v[1], v[0]], 1)?;
                let s = g.sum(g.square(a));
                g.add(weighted_sum(g, b)?, s)
            }),
        ),
        (
            "slice",
            vec![seq.clone()],
            Box::new(|g, v| weighted_sum(g, g.slice(v[0], 0, 2, 4)?)),
        ),
        (
            "reshape",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.reshape(v[0], &[2, 6])?)),
        ),
        ("sum", vec![m34.clone()], Box::new(|g, v| Ok(g.square(g.sum(v[0]))))),
        ("mean", vec![m34.clone()], Box::new(|g, v| Ok(g.square(g.mean(v[0]))))),
        (
            "sum_axis",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.sum_axis(v[0], 0)?)),
        ),
        (
            "mean_axis",
            vec![m34.clone()],
            Box::new(|g, v| weighted_sum(g, g.mean_axis(v[0], 1)?)),
        ),
        (
            "squared_norm",
            vec![m34.clone()],
            Box::new(|g, v| Ok(g.squared_norm(v[0]))),
        ),
        (
            "pick",
            vec![m34],
            Box::new(|g, v| weighted_sum(g, g.pick(v[0], &[3, 0, 2])?)),
        ),
        (
            "autocorr",
            vec![rand_t(rng, &[12], -1.0, 1.0)],
            Box::new(|g, v| weighted_sum(g, g.autocorr(v[0])?)),
        ),
        (
            "sum_sigmoid_wx",
            vec![m34b, v4],
            Box::new(|g, v| {
                let x = g.reshape(v[1], &[4, 1])?;
                Ok(g.sum(g.sigmoid(g.matmul(v[0], x)?)))
            }),
        ),
    ]
}

/// Every graph op plus the FAN layer, 64-bit, at `OP_STEP`.
pub fn op_checks(seed: u64) -> Result<Vec<GateCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, inputs, f) in op_cases(&mut rng) {
        let rel = grad_check_inputs(&inputs, |g, v| f(g, v), OP_STEP)?;
        out.push(GateCheck::strict(name, rel));
    }
    let mut ps = ParamStore::<f64>::new(seed);
    FanLayer::init(&mut ps, &mut rng, "fan", 6, 3, 2)?;
    *ps.get_mut("fan.b").expect("fan bias") = rand_t(&mut rng, &[2], -1.0, 1.0);
    let x = rand_t(&mut rng, &[4, 6], -1.0, 1.0);
    let r = grad_check(
        &ps,
        |g, s| {
            let xv = g.constant(x.clone());
            weighted_sum(g, crate::encoder::fan_forward(g, s, "fan", xv)?)
        },
        usize::MAX,
        OP_STEP,
        seed,
    )?;
    out.push(GateCheck::strict("fan_forward", r.max_rel));
    Ok(out)
}

/// Width-8 model whose encoder memory has 2 frames, with a 12-entry
/// vocabulary.
pub fn micro_setup(seed: u64) -> Result<(ModelConfig, ParamStore<f64>, Sample)> {
    let mut m = ModelConfig::with_width(8);
    m.encoder.dsp = DspConfig {
        window: 16,
        hop: 8,
        mel_bins: 6,
        fmin: 10.0,
        fmax: None,
    };
    m.encoder.heads = 2;
    m.encoder.blocks = 1;
    m.encoder.ff = 8;
    m.decoder.heads = 2;
    m.decoder.blocks = 1;
    m.decoder.ff = 8;
    m.decoder.max_len = 6;
    let words = ["smooth", "rough", "fine", "coarse", "ridges", "grainy", "soft", "hard"];
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(words.iter().map(|s| s.to_string()));
    let vocab = Vocab::from_parts(tokens, vec![2; 12])?;
    // 40 samples at window 16 / hop 8: 4 analysis frames, pooled to 2.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..40)
        .map(|i| (i as f64 * 0.9).sin() + 0.3 * rng.gen_range(-1.0..1.0))
        .collect();
    let signal = MonoSignal {
        samples,
        sample_rate: 1000,
        mode: InputMode::Dft321,
    };
    let input = EncoderInput::from_signal(&signal, &m.encoder.dsp)?;
    let captions = vec!["fine ridges smooth".to_string(), "hard coarse grainy".to_string()];
    let targets = captions.iter().map(|c| vocab.encode(c, m.decoder.max_len)).collect();
    let sample = Sample {
        id: "micro".into(),
        category: "G1".into(),
        captions,
        targets,
        input,
    };
    let ps = m.init_params(vocab.len(), seed)?.cast::<f64>();
    Ok((m, ps, sample))
}

/// Composite loss of the micro model over a few random coordinates of every
/// parameter.
pub fn composite_check(seed: u64, samples_per_param: usize) -> Result<GateCheck> {
    let (m, mut ps, sample) = micro_setup(seed)?;
    // Move the gate threshold next to the sample's periodicity so the
    // fusion weight is far from saturation and τ carries gradient.
    *ps.get_mut("enc.gate.tau").expect("gate threshold") = Tensor::scalar(sample.input.periodicity.p - 0.05);
    let w = LossWeights {
        periodicity: 0.1,
        aperiodicity: 0.01,
        orthogonality: 0.1,
    };
    let r = grad_check(
        &ps,
        |g, s| Ok(sample_loss(g, s, &m, &w, Variant::Full, &sample, &[0, 1])?.0),
        samples_per_param,
        1e-6,
        seed,
    )?;
    let fraction = r.fraction_below(COMPOSITE_TOL);
    Ok(GateCheck {
        name: "composite_loss".into(),
        max_rel: r.max_rel,
        fraction,
        tol: COMPOSITE_TOL,
        min_fraction: COMPOSITE_MIN_FRACTION,
        passed: fraction >= COMPOSITE_MIN_FRACTION,
    })
}

/// Op checks followed by the composite check.
pub fn run_gate(seed: u64) -> Result<Vec<GateCheck>> {
    let mut all = op_checks(seed)?;
    all.push(composite_check(seed, 8)?);
    Ok(all)
}
