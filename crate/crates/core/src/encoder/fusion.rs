use super::{FeatureKind, FeatureSeq};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Real, Var};

/// `sigmoid(alpha · (p − tau))` as a graph node.
pub fn gate_weight<T: Real>(g: &Graph<T>, p: f64, tau: Var, alpha: f64) -> Result<Var> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::config("alpha", "must be positive"));
    }
    let diff = g.rsub_scalar(p, tau);
    Ok(g.sigmoid(g.scale(diff, alpha)))
}

/// Periodicity-gated blend `w·f_per + (1 − w)·f_aper` with one weight per sample.
pub fn fuse<T: Real>(
    g: &Graph<T>,
    per: FeatureSeq,
    aper: FeatureSeq,
    p: f64,
    tau: Var,
    alpha: f64,
) -> Result<FeatureSeq> {
    let w = gate_weight(g, p, tau, alpha)?;
    let mut out = fuse_with_weight(g, per, aper, w)?;
    out.periodicity = p;
    Ok(out)
}

pub(crate) fn fuse_with_weight<T: Real>(g: &Graph<T>, per: FeatureSeq, aper: FeatureSeq, w: Var) -> Result<FeatureSeq> {
    let (sp, sa) = (g.shape(per.features), g.shape(aper.features));
    if sp != sa {
        return Err(Error::Shape {
            op: "fuse",
            left: sp,
            right: sa,
        });
    }
    let features = g.lerp(aper.features, per.features, w)?;
    Ok(FeatureSeq {
        features,
        kind: FeatureKind::Fused,
        gate: Some(w),
        periodicity: per.periodicity,
    })
}
