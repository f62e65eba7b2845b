//! Reusable layers built on [`Graph`] ops. Parameters live in a
//! [`ParamStore`] under dotted names; each `init_*` registers what the
//! matching forward function reads.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Real, Tensor, Var};

pub const LN_EPS: f64 = 1e-5;

pub fn init_linear<T: Real>(
    ps: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<()> {
    ps.init_matrix(format!("{name}.w"), fan_in, fan_out, rng)?;
    ps.init_zeros(format!("{name}.b"), &[fan_out])?;
    Ok(())
}

pub fn linear<T: Real>(g: &Graph<T>, ps: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let w = g.param(ps, &format!("{name}.w"))?;
    let b = g.param(ps, &format!("{name}.b"))?;
    let xw = g.matmul(x, w)?;
    g.add(xw, b)
}

pub fn init_layer_norm<T: Real>(ps: &mut ParamStore<T>, name: &str, dim: usize) -> Result<()> {
    ps.init_full(format!("{name}.gamma"), &[dim], 1.0)?;
    ps.init_zeros(format!("{name}.beta"), &[dim])?;
    Ok(())
}

pub fn layer_norm<T: Real>(g: &Graph<T>, ps: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let gamma = g.param(ps, &format!("{name}.gamma"))?;
    let beta = g.param(ps, &format!("{name}.beta"))?;
    let n = g.layer_norm(x, LN_EPS)?;
    let s = g.mul(n, gamma)?;
    g.add(s, beta)
}

pub fn init_attention<T: Real>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, d: usize) -> Result<()> {
    for proj in ["q", "k", "v", "o"] {
        init_linear(ps, rng, &format!("{name}.{proj}"), d, d)?;
    }
    Ok(())
}

/// Multi-head scaled dot-product attention of `query` rows over `context`
/// rows. `mask`, when given, is added to every head's score matrix.
pub fn attention<T: Real>(
    g: &Graph<T>,
    ps: &ParamStore<T>,
    name: &str,
    query: Var,
    context: Var,
    heads: usize,
    mask: Option<Var>,
) -> Result<Var> {
    let q = linear(g, ps, &format!("{name}.q"), query)?;
    let k = linear(g, ps, &format!("{name}.k"), context)?;
    let v = linear(g, ps, &format!("{name}.v"), context)?;
    let d = g.shape(q)[1];
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * dk, dk)?;
        let kh = g.slice(k, 1, h * dk, dk)?;
        let vh = g.slice(v, 1, h * dk, dk)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scale(scores, scale);
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let attn = g.softmax(scores, 1)?;
        outs.push(g.matmul(attn, vh)?);
    }
    let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
    linear(g, ps, &format!("{name}.o"), cat)
}

pub fn init_ffn<T: Real>(
    ps: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d: usize,
    hidden: usize,
) -> Result<()> {
    init_linear(ps, rng, &format!("{name}.up"), d, hidden)?;
    init_linear(ps, rng, &format!("{name}.down"), hidden, d)
}

pub fn ffn<T: Real>(g: &Graph<T>, ps: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let h = linear(g, ps, &format!("{name}.up"), x)?;
    let h = g.gelu(h);
    linear(g, ps, &format!("{name}.down"), h)
}

/// Fixed sinusoidal position table `[n, d]`.
pub fn sinusoidal_positions<T: Real>(n: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[n, d], |i| {
        let (pos, j) = ((i / d) as f64, i % d);
        let freq = 1.0 / 10_000f64.powf((2 * (j / 2)) as f64 / d as f64);
        T::lit(if j % 2 == 0 {
            (pos * freq).sin()
        } else {
            (pos * freq).cos()
        })
    })
}

/// Additive mask blocking attention to later positions.
pub fn causal_mask<T: Real>(n: usize) -> Tensor<T> {
    Tensor::from_fn(&[n, n], |i| if i % n > i / n { T::lit(-1e9) } else { T::zero() })
}
