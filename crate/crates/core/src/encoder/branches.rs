use super::{fan_forward, EncoderConfig, FeatureKind, FeatureSeq};
use crate::error::Result;
use crate::nn;
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

/// Frames after the periodic branch's stride-2 pooling.
pub fn pooled_frames(frames: usize) -> usize {
    frames.div_ceil(2)
}

/// FAN over raw frames → `ln(1+|·|)` compression → conv + max-pool → projection.
pub fn periodic_branch<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    cfg: &EncoderConfig,
    frames: &Tensor<f64>,
    periodicity: f64,
) -> Result<FeatureSeq> {
    let x = g.constant(frames.cast());
    let fan = fan_forward(g, ps, "enc.fan", x)?;
    let compressed = g.log1p(g.abs(fan));
    let conv_w = g.param(ps, "enc.per.conv.w")?;
    let conv_b = g.param(ps, "enc.per.conv.b")?;
    let h = g.conv1d(compressed, conv_w, cfg.conv_kernel)?;
    let h = g.add(h, conv_b)?;
    let h = g.gelu(h);
    let h = g.max_pool_time(h, 2)?;
    let features = nn::linear(g, ps, "enc.per.proj", h)?;
    Ok(FeatureSeq {
        features,
        kind: FeatureKind::Periodic,
        gate: None,
        periodicity,
    })
}

fn lstm<T: Real>(g: &Graph<T>, ps: &ParamStore<T>, name: &str, x: Var, hidden: usize) -> Result<Var> {
    let w_x = g.param(ps, &format!("{name}.w_x"))?;
    let w_h = g.param(ps, &format!("{name}.w_h"))?;
    let b = g.param(ps, &format!("{name}.b"))?;
    let xw = g.matmul(x, w_x)?;
    let xw = g.add(xw, b)?;
    let steps = g.shape(x)[0];
    let mut h: Option<Var> = None;
    let mut c: Option<Var> = None;
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut z = g.slice(xw, 0, t, 1)?;
        if let Some(hp) = h {
            let hw = g.matmul(hp, w_h)?;
            z = g.add(z, hw)?;
        }
        let i = g.sigmoid(g.slice(z, 1, 0, hidden)?);
        let f = g.sigmoid(g.slice(z, 1, hidden, hidden)?);
        let cand = g.tanh(g.slice(z, 1, 2 * hidden, hidden)?);
        let o = g.sigmoid(g.slice(z, 1, 3 * hidden, hidden)?);
        let ic = g.mul(i, cand)?;
        let c_new = match c {
            Some(cp) => {
                let fc = g.mul(f, cp)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let h_new = g.mul(o, g.tanh(c_new))?;
        outputs.push(h_new);
        h = Some(h_new);
        c = Some(c_new);
    }
    g.concat(&outputs, 0)
}

/// Log-mel → LSTM → pre-norm self-attention blocks → pool to the periodic
/// branch's frame count → projection.
pub fn aperiodic_branch<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    cfg: &EncoderConfig,
    mel: &Tensor<f64>,
    periodicity: f64,
) -> Result<FeatureSeq> {
    let frames = mel.shape()[0];
    let x = g.constant(mel.cast());
    let x = g.layer_norm(x, nn::LN_EPS)?;
    let h = lstm(g, ps, "enc.aper.lstm", x, cfg.lstm_hidden)?;
    let pos = g.constant(nn::sinusoidal_positions(frames, cfg.lstm_hidden));
    let mut h = g.add(h, pos)?;
    for b in 0..cfg.blocks {
        let p = format!("enc.aper.block{b}");
        let n = nn::layer_norm(g, ps, &format!("{p}.ln1"), h)?;
        let a = nn::attention(g, ps, &format!("{p}.attn"), n, n, cfg.heads, None)?;
        h = g.add(h, a)?;
        let n = nn::layer_norm(g, ps, &format!("{p}.ln2"), h)?;
        let f = nn::ffn(g, ps, &format!("{p}.ffn"), n)?;
        h = g.add(h, f)?;
    }
    let h = nn::layer_norm(g, ps, "enc.aper.ln_f", h)?;
    let h = g.avg_pool_to(h, pooled_frames(frames))?;
    let features = nn::linear(g, ps, "enc.aper.proj", h)?;
    Ok(FeatureSeq {
        features,
        kind: FeatureKind::Aperiodic,
        gate: None,
        periodicity,
    })
}
