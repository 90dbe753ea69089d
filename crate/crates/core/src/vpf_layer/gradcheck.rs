use super::graph::wide_loss;
use super::{fusion_gradients, init_weights, NetId, VpfConfig, VpfWeights, RAW_PARAM_DIM};
use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{finite_difference_check, FdReport};
use twofloat::TwoFloat;

/// One randomized operating point of the fusion chain.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionInputs {
    pub p: Vec<f64>,
    pub b_v: Vec<f64>,
    pub b_p: Vec<f64>,
    pub weights: VpfWeights,
}

/// Seeded weights (biases made non-zero so they are exercised) and inputs.
pub fn random_fusion_inputs(config: &VpfConfig) -> Result<FusionInputs> {
    let mut weights = init_weights(config)?;
    let mut rng = SeededRng::named(config.seed, "gradcheck_inputs");
    for id in NetId::ALL {
        for layer in &mut weights.net_mut(id).layers {
            for b in layer.bias.iter_mut() {
                *b = rng.uniform(-0.1, 0.1);
            }
        }
    }
    let p = (0..RAW_PARAM_DIM).map(|_| rng.uniform(0.0, 1.0)).collect();
    let b_v = (0..config.c_v).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let b_p = (0..config.c_p).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Ok(FusionInputs { p, b_v, b_p, weights })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckGroup {
    /// `p`, `b_v`, `b_p` or a network name.
    pub name: String,
    pub size: usize,
    pub report: FdReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainGradcheck {
    pub config: VpfConfig,
    pub eps: f64,
    pub loss: f64,
    pub groups: Vec<GradcheckGroup>,
    pub max_rel_error: f64,
    /// Error reported when one partial of `p` is deliberately corrupted.
    pub negative_control: f64,
}

/// Compares tape gradients of `L = Σ b_v″² + Σ b_p″²` against central
/// differences for the inputs and every network's parameters.
pub fn gradcheck_chain(config: &VpfConfig, eps: f64) -> Result<ChainGradcheck> {
    let inp = random_fusion_inputs(config)?;
    let w = &inp.weights;
    let grads = fusion_gradients(&inp.p, &inp.b_v, &inp.b_p, w)?;
    let mut groups = Vec::new();

    let mut push = |name: &str, size: usize, report: FdReport| {
        groups.push(GradcheckGroup {
            name: name.to_string(),
            size,
            report,
        })
    };
    // Probes report L(x) - L(x0), both in double-double, so the f64 value
    // handed to the checker keeps full relative precision.
    let base = wide_loss(&inp.p, &inp.b_v, &inp.b_p, w)?;
    let shifted = |l: TwoFloat| f64::from(l - base);
    let f_p = |x: &[f64]| Ok(shifted(wide_loss(x, &inp.b_v, &inp.b_p, w)?));
    push("p", inp.p.len(), finite_difference_check(f_p, &inp.p, &grads.d_p, eps)?);
    let f_bv = |x: &[f64]| Ok(shifted(wide_loss(&inp.p, x, &inp.b_p, w)?));
    push("b_v", inp.b_v.len(), finite_difference_check(f_bv, &inp.b_v, &grads.d_b_v, eps)?);
    let f_bp = |x: &[f64]| Ok(shifted(wide_loss(&inp.p, &inp.b_v, x, w)?));
    push("b_p", inp.b_p.len(), finite_difference_check(f_bp, &inp.b_p, &grads.d_b_p, eps)?);

    let flat = w.to_flat();
    let mut offset = 0;
    for id in NetId::ALL {
        let n = w.net(id).param_count();
        let range = offset..offset + n;
        let mut probe = w.clone();
        let f = |x: &[f64]| {
            probe.set_net_flat(id, x)?;
            Ok(shifted(wide_loss(&inp.p, &inp.b_v, &inp.b_p, &probe)?))
        };
        let report = finite_difference_check(f, &flat[range.clone()], &grads.d_weights[range.clone()], eps)?;
        push(id.name(), n, report);
        offset += n;
    }

    let mut corrupted = grads.d_p.0.clone();
    let k = (0..corrupted.len())
        .max_by(|&a, &b| corrupted[a].abs().total_cmp(&corrupted[b].abs()))
        .unwrap_or(0);
    corrupted[k] = 1.5 * corrupted[k] + 1e-3;
    let negative = finite_difference_check(f_p, &inp.p, &corrupted, eps)?;

    let max_rel_error = groups.iter().map(|g| g.report.max_rel_error).fold(0.0, f64::max);
    Ok(ChainGradcheck {
        config: config.clone(),
        eps,
        loss: grads.loss,
        groups,
        max_rel_error,
        negative_control: negative.max_rel_error,
    })
}
