//! Contrastive losses and their analytic gradients.
//!
//! Conventions for the instance-instance loss: every instance is an anchor;
//! its positives are the other instances of its class; the softmax
//! denominator runs over every instance except the anchor itself. The loss is
//! the mean over (anchor, positive) pairs of
//! `-log(exp S(anchor, pos) / sum_{k != anchor} exp S(anchor, k))`.
//! When no positive pair exists (one shot per class) the term is undefined;
//! [`total_loss`] then counts it as zero.
//!
//! The instance-prototype loss is the mean over instances of the softmax
//! cross-entropy of cosine similarities to all prototypes.
//!
//! All log-sum-exps use max subtraction.

use serde::{Deserialize, Serialize};

use super::{PrototypeSet, ProjectionEncoder};
use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, norm, Matrix};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossVariant {
    /// Instance-instance plus instance-prototype loss.
    #[default]
    Full,
    /// Instance-prototype loss only.
    ProtoOnly,
    /// No optimisation: prototypes are class means under the initial encoder.
    InstanceMean,
}

impl LossVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossVariant::Full => "full",
            LossVariant::ProtoOnly => "proto_only",
            LossVariant::InstanceMean => "instance_mean",
        }
    }

    fn uses_instance_loss(&self) -> bool {
        !matches!(self, LossVariant::ProtoOnly)
    }
}

impl std::str::FromStr for LossVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(LossVariant::Full),
            "proto_only" => Ok(LossVariant::ProtoOnly),
            "instance_mean" => Ok(LossVariant::InstanceMean),
            other => Err(Error::InvalidArgument(format!("unknown loss variant {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ins: f64,
    pub l_proto: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Matrix,
    pub prototypes: Vec<Vec<f64>>,
}

/// Unit vectors with their original norms.
struct Normalized {
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

fn normalize<'a>(vs: impl Iterator<Item = &'a Vec<f64>>, what: &str) -> Result<Normalized> {
    let mut units = Vec::new();
    let mut norms = Vec::new();
    for (i, v) in vs.enumerate() {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("{what} {i}")));
        }
        let n = norm(v);
        if n == 0.0 {
            return Err(Error::ZeroNorm(format!("{what} {i}")));
        }
        units.push(v.iter().map(|x| x / n).collect());
        norms.push(n);
    }
    Ok(Normalized { units, norms })
}

fn flatten_labels(groups: &[Vec<Vec<f64>>]) -> Vec<usize> {
    groups
        .iter()
        .enumerate()
        .flat_map(|(c, g)| std::iter::repeat_n(c, g.len()))
        .collect()
}

fn check_dims(groups: &[Vec<Vec<f64>>], dim: Option<usize>) -> Result<()> {
    let expected = dim.or_else(|| groups.iter().flatten().next().map(Vec::len));
    if let Some(expected) = expected {
        for v in groups.iter().flatten() {
            if v.len() != expected {
                return Err(Error::DimensionMismatch {
                    context: "projected instance".into(),
                    expected,
                    actual: v.len(),
                });
            }
        }
    }
    Ok(())
}

/// Instance-instance term. Accumulates `dL/du` into `grad` when given.
fn instance_term(units: &[Vec<f64>], labels: &[usize], mut grad: Option<&mut [Vec<f64>]>) -> Result<f64> {
    let n = units.len();
    let positives: Vec<usize> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i && labels[j] == labels[i]).count())
        .collect();
    let pairs: usize = positives.iter().sum();
    if pairs == 0 {
        return Err(Error::NoPositivePairs);
    }
    let inv_pairs = 1.0 / pairs as f64;

    let sim: Vec<Vec<f64>> = units
        .iter()
        .map(|a| units.iter().map(|b| dot(a, b)).collect())
        .collect();

    let mut loss = 0.0;
    for i in 0..n {
        if positives[i] == 0 {
            continue;
        }
        let row = &sim[i];
        let lse = log_sum_exp((0..n).filter(|&k| k != i).map(|k| row[k]));
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                loss += lse - row[j];
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let count = positives[i] as f64;
            for k in 0..n {
                if k == i {
                    continue;
                }
                let p = (row[k] - lse).exp();
                let indicator = if labels[k] == labels[i] { 1.0 } else { 0.0 };
                let coef = (count * p - indicator) * inv_pairs;
                if coef == 0.0 {
                    continue;
                }
                for d in 0..units[i].len() {
                    g[i][d] += coef * units[k][d];
                    g[k][d] += coef * units[i][d];
                }
            }
        }
    }
    let value = loss * inv_pairs;
    if !value.is_finite() {
        return Err(Error::NonFinite("instance-instance loss".into()));
    }
    Ok(value)
}

/// Instance-prototype term. Accumulates `dL/du` and `dL/dw` when given.
fn prototype_term(
    units: &[Vec<f64>],
    labels: &[usize],
    protos: &[Vec<f64>],
    mut grads: Option<(&mut [Vec<f64>], &mut [Vec<f64>])>,
) -> Result<f64> {
    let m = units.len();
    if m == 0 {
        return Err(Error::Empty("instance-prototype loss needs an instance".into()));
    }
    let inv_m = 1.0 / m as f64;
    let mut loss = 0.0;
    for (i, u) in units.iter().enumerate() {
        let sims: Vec<f64> = protos.iter().map(|w| dot(u, w)).collect();
        let lse = log_sum_exp(sims.iter().copied());
        loss += lse - sims[labels[i]];
        if let Some((gu, gw)) = grads.as_mut() {
            for (c, w) in protos.iter().enumerate() {
                let q = (sims[c] - lse).exp();
                let coef = (q - if c == labels[i] { 1.0 } else { 0.0 }) * inv_m;
                for d in 0..u.len() {
                    gu[i][d] += coef * w[d];
                    gw[c][d] += coef * u[d];
                }
            }
        }
    }
    let value = loss * inv_m;
    if !value.is_finite() {
        return Err(Error::NonFinite("instance-prototype loss".into()));
    }
    Ok(value)
}

/// Instance-instance contrastive loss over per-class lists of projected vectors.
pub fn instance_instance_loss(projected: &[Vec<Vec<f64>>]) -> Result<f64> {
    check_dims(projected, None)?;
    let labels = flatten_labels(projected);
    let normed = normalize(projected.iter().flatten(), "instance")?;
    instance_term(&normed.units, &labels, None)
}

/// Instance-prototype contrastive loss; `projected[c]` are the instances of class `c`.
pub fn instance_prototype_loss(projected: &[Vec<Vec<f64>>], prototypes: &PrototypeSet) -> Result<f64> {
    check_prototype_shape(projected, prototypes)?;
    let labels = flatten_labels(projected);
    let normed = normalize(projected.iter().flatten(), "instance")?;
    let protos = normalize(prototypes.as_slice().iter(), "prototype")?;
    prototype_term(&normed.units, &labels, &protos.units, None)
}

fn check_prototype_shape(projected: &[Vec<Vec<f64>>], prototypes: &PrototypeSet) -> Result<()> {
    if projected.len() != prototypes.len() {
        return Err(Error::DimensionMismatch {
            context: "classes vs prototypes".into(),
            expected: prototypes.len(),
            actual: projected.len(),
        });
    }
    check_dims(projected, Some(prototypes.dim()))
}

fn combine(l_ins: Result<f64>, l_proto: f64, variant: LossVariant) -> Result<LossBreakdown> {
    let l_ins = if variant.uses_instance_loss() {
        match l_ins {
            Ok(v) => v,
            Err(Error::NoPositivePairs) => 0.0,
            Err(e) => return Err(e),
        }
    } else {
        0.0
    };
    Ok(LossBreakdown {
        l_ins,
        l_proto,
        total: l_ins + l_proto,
    })
}

/// Both loss terms and their sum under `variant`. With `ProtoOnly` the
/// instance term is not evaluated and reported as zero.
pub fn total_loss(
    projected: &[Vec<Vec<f64>>],
    prototypes: &PrototypeSet,
    variant: LossVariant,
) -> Result<LossBreakdown> {
    let l_proto = instance_prototype_loss(projected, prototypes)?;
    let l_ins = if variant.uses_instance_loss() {
        instance_instance_loss(projected)
    } else {
        Ok(0.0)
    };
    combine(l_ins, l_proto, variant)
}

/// Loss and gradients with respect to the encoder weight and every prototype.
///
/// `raw[c]` holds the unprojected embeddings of class `c`.
pub fn loss_gradients(
    raw: &[Vec<Vec<f64>>],
    encoder: &ProjectionEncoder,
    prototypes: &PrototypeSet,
    variant: LossVariant,
) -> Result<(LossBreakdown, Gradients)> {
    let projected = encoder.project_groups(raw)?;
    check_prototype_shape(&projected, prototypes)?;
    let labels = flatten_labels(&projected);
    let inst = normalize(projected.iter().flatten(), "projected instance")?;
    let protos = normalize(prototypes.as_slice().iter(), "prototype")?;
    let d = encoder.proto_dim();

    let mut gu = vec![vec![0.0; d]; inst.units.len()];
    let mut gw = vec![vec![0.0; d]; protos.units.len()];

    let l_proto = prototype_term(&inst.units, &labels, &protos.units, Some((&mut gu, &mut gw)))?;
    let l_ins = if variant.uses_instance_loss() {
        instance_term(&inst.units, &labels, Some(&mut gu))
    } else {
        Ok(0.0)
    };
    let breakdown = combine(l_ins, l_proto, variant)?;

    // Back through x -> x/|x|: dL/dx = (g - (g.u) u) / |x|.
    let unnormalize = |g: &mut Vec<f64>, u: &[f64], n: f64| {
        let p = dot(g, u);
        g.iter_mut().zip(u).for_each(|(gi, ui)| *gi = (*gi - p * ui) / n);
    };
    for (i, g) in gu.iter_mut().enumerate() {
        unnormalize(g, &inst.units[i], inst.norms[i]);
    }
    for (c, g) in gw.iter_mut().enumerate() {
        unnormalize(g, &protos.units[c], protos.norms[c]);
    }

    let mut weight = Matrix::zeros(d, encoder.input_dim());
    for (g, h) in gu.iter().zip(raw.iter().flatten()) {
        weight.add_outer(1.0, g, h);
    }
    if let Some(pos) = weight.as_slice().iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("encoder gradient entry {pos}")));
    }
    if gw.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("prototype gradient".into()));
    }
    Ok((
        breakdown,
        Gradients {
            weight,
            prototypes: gw,
        },
    ))
}
