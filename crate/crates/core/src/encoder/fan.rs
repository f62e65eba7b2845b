use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Real, Var};

/// Fourier-feature layer: `[cos(x·W_p), sin(x·W_p), gelu(x·W_p̄ + b)]`.
#[derive(Debug, Clone, Copy)]
pub struct FanLayer;

impl FanLayer {
    pub fn init<T: Real>(
        ps: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        periodic: usize,
        other: usize,
    ) -> Result<()> {
        ps.init_matrix(format!("{name}.w_p"), input, periodic, rng)?;
        ps.init_matrix(format!("{name}.w_pbar"), input, other, rng)?;
        ps.init_zeros(format!("{name}.b"), &[other])?;
        Ok(())
    }
}

/// Applies the layer named `name` to each row of `x: [frames, input]`,
/// producing `[frames, 2·periodic + other]`.
pub fn fan_forward<T: Real>(g: &Graph<T>, ps: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let w_p = g.param(ps, &format!("{name}.w_p"))?;
    let w_pbar = g.param(ps, &format!("{name}.w_pbar"))?;
    let b = g.param(ps, &format!("{name}.b"))?;
    let (xs, ws) = (g.shape(x), g.shape(w_p));
    if xs.len() != 2 || xs[1] != ws[0] {
        return Err(Error::Shape {
            op: "fan",
            left: xs,
            right: ws,
        });
    }
    let proj = g.matmul(x, w_p)?;
    let c = g.cos(proj);
    let s = g.sin(proj);
    let other = g.matmul(x, w_pbar)?;
    let other = g.add(other, b)?;
    let other = g.gelu(other);
    g.concat(&[c, s, other], 1)
}
