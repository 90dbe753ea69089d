//! The per-pair equations, written once against [`FusionGraph`] and run
//! either on plain vectors or on a differentiation tape.

use super::weights::{NetId, VpfWeights};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::tensor::{concat, hadamard, softmax, Tape, Var, Vector};

pub(crate) trait FusionGraph {
    type Node: Clone;

    fn input(&mut self, x: &[f64]) -> Self::Node;
    fn net(&mut self, id: NetId, x: &Self::Node) -> Result<Self::Node>;
    fn softmax(&mut self, x: &Self::Node) -> Result<Self::Node>;
    fn hadamard(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn concat(&mut self, parts: &[&Self::Node]) -> Result<Self::Node>;
}

/// Every intermediate of one pair's pass, in graph nodes.
#[derive(Debug, Clone)]
pub(crate) struct Nodes<N> {
    pub p_prime: N,
    pub p_v: N,
    pub p_p: N,
    pub pbw_voxel_weights: N,
    pub b_v_prime: N,
    pub pbw_pixel_weights: N,
    pub b_p_prime: N,
    pub attn_v: N,
    pub b_v_t: N,
    pub attn_p: N,
    pub b_p_t: N,
    pub p_t: N,
    pub s: N,
    pub b_v_fused: N,
    pub b_p_fused: N,
}

pub(crate) fn pfg<G: FusionGraph>(g: &mut G, p: &G::Node) -> Result<(G::Node, G::Node, G::Node)> {
    let p_prime = g.net(NetId::M, p)?;
    let p_v = g.net(NetId::Mv, &p_prime)?;
    let p_p = g.net(NetId::Mp, &p_prime)?;
    Ok((p_prime, p_v, p_p))
}

/// Parameter-based re-weighting of one side. Returns the softmax factor and
/// the re-weighted feature.
pub(crate) fn pbw<G: FusionGraph>(
    g: &mut G,
    nets: [NetId; 4],
    b: &G::Node,
    p: &G::Node,
) -> Result<(G::Node, G::Node)> {
    let [b1, p1, p2, b2] = nets;
    let gb = g.net(b1, b)?;
    let gp = g.net(p1, p)?;
    let logits = g.hadamard(&gb, &gp)?;
    let weights = g.softmax(&logits)?;
    let scale = g.net(p2, p)?;
    let feat = g.net(b2, b)?;
    let out = g.hadamard(&weights, &scale)?;
    let out = g.hadamard(&out, &feat)?;
    Ok((weights, out))
}

pub(crate) const PBW_VOXEL: [NetId; 4] = [NetId::Bv1, NetId::Pv1, NetId::Pv2, NetId::Bv2];
pub(crate) const PBW_PIXEL: [NetId; 4] = [NetId::Bp1, NetId::Pp1, NetId::Pp2, NetId::Bp2];

/// Cross attention between the two re-weighted features.
fn cross<G: FusionGraph>(
    g: &mut G,
    [left, right, value]: [NetId; 3],
    b_v: &G::Node,
    b_p: &G::Node,
    value_in: &G::Node,
) -> Result<(G::Node, G::Node)> {
    let a = g.net(left, b_v)?;
    let b = g.net(right, b_p)?;
    let logits = g.hadamard(&a, &b)?;
    let weights = g.softmax(&logits)?;
    let v = g.net(value, value_in)?;
    let out = g.hadamard(&weights, &v)?;
    Ok((weights, out))
}

pub(crate) struct VpfNodes<N> {
    pub attn_v: N,
    pub b_v_t: N,
    pub attn_p: N,
    pub b_p_t: N,
    pub p_t: N,
    pub s: N,
    pub b_v_fused: N,
    pub b_p_fused: N,
}

pub(crate) fn vpf<G: FusionGraph>(
    g: &mut G,
    b_v_prime: &G::Node,
    b_p_prime: &G::Node,
    p_prime: &G::Node,
) -> Result<VpfNodes<G::Node>> {
    let (attn_v, b_v_t) = cross(g, [NetId::Bv3, NetId::Bp3, NetId::Bv5], b_v_prime, b_p_prime, b_v_prime)?;
    let (attn_p, b_p_t) = cross(g, [NetId::Bv4, NetId::Bp4, NetId::Bp5], b_v_prime, b_p_prime, b_p_prime)?;
    let p_t = g.net(NetId::P, p_prime)?;
    let joined = g.concat(&[&b_v_t, &b_p_t, &p_t])?;
    let s = g.net(NetId::S, &joined)?;
    let b_v_fused = g.net(NetId::Sv, &s)?;
    let b_p_fused = g.net(NetId::Sp, &s)?;
    Ok(VpfNodes {
        attn_v,
        b_v_t,
        attn_p,
        b_p_t,
        p_t,
        s,
        b_v_fused,
        b_p_fused,
    })
}

pub(crate) fn full<G: FusionGraph>(g: &mut G, p: &G::Node, b_v: &G::Node, b_p: &G::Node) -> Result<Nodes<G::Node>> {
    let (p_prime, p_v, p_p) = pfg(g, p)?;
    let (pbw_voxel_weights, b_v_prime) = pbw(g, PBW_VOXEL, b_v, &p_v)?;
    let (pbw_pixel_weights, b_p_prime) = pbw(g, PBW_PIXEL, b_p, &p_p)?;
    let v = vpf(g, &b_v_prime, &b_p_prime, &p_prime)?;
    Ok(Nodes {
        p_prime,
        p_v,
        p_p,
        pbw_voxel_weights,
        b_v_prime,
        pbw_pixel_weights,
        b_p_prime,
        attn_v: v.attn_v,
        b_v_t: v.b_v_t,
        attn_p: v.attn_p,
        b_p_t: v.b_p_t,
        p_t: v.p_t,
        s: v.s,
        b_v_fused: v.b_v_fused,
        b_p_fused: v.b_p_fused,
    })
}

/// Plain evaluation on owned vectors.
pub(crate) struct Eval<'a> {
    pub weights: &'a VpfWeights,
}

impl FusionGraph for Eval<'_> {
    type Node = Vector;

    fn input(&mut self, x: &[f64]) -> Vector {
        Vector(x.to_vec())
    }

    fn net(&mut self, id: NetId, x: &Vector) -> Result<Vector> {
        self.weights.net(id).forward(x)
    }

    fn softmax(&mut self, x: &Vector) -> Result<Vector> {
        softmax(x)
    }

    fn hadamard(&mut self, a: &Vector, b: &Vector) -> Result<Vector> {
        hadamard(a, b)
    }

    fn concat(&mut self, parts: &[&Vector]) -> Result<Vector> {
        let slices: Vec<&[f64]> = parts.iter().map(|p| p.0.as_slice()).collect();
        Ok(concat(&slices))
    }
}

/// Records onto a tape; each network's parameters become leaves the first
/// time the network is used.
pub(crate) struct Record<'a> {
    pub weights: &'a VpfWeights,
    pub tape: Tape,
    pub params: Vec<Option<Vec<(Var, Var)>>>,
}

impl<'a> Record<'a> {
    pub fn new(weights: &'a VpfWeights) -> Self {
        Record {
            weights,
            tape: Tape::new(),
            params: vec![None; NetId::ALL.len()],
        }
    }
}

impl FusionGraph for Record<'_> {
    type Node = Var;

    fn input(&mut self, x: &[f64]) -> Var {
        self.tape.leaf(x)
    }

    fn net(&mut self, id: NetId, x: &Var) -> Result<Var> {
        let mlp = self.weights.net(id);
        let slot = &mut self.params[id as usize];
        if slot.is_none() {
            *slot = Some(mlp.layers.iter().map(|l| self.tape.param(l)).collect());
        }
        let params = slot.as_ref().unwrap();
        let mut h = *x;
        for (i, &(w, b)) in params.iter().enumerate() {
            if i > 0 {
                h = self.tape.relu(h)?;
            }
            h = self.tape.affine(w, b, h)?;
        }
        Ok(h)
    }

    fn softmax(&mut self, x: &Var) -> Result<Var> {
        self.tape.softmax(*x)
    }

    fn hadamard(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.hadamard(*a, *b)
    }

    fn concat(&mut self, parts: &[&Var]) -> Result<Var> {
        let vars: Vec<Var> = parts.iter().map(|v| **v).collect();
        self.tape.concat(&vars)
    }
}

/// Evaluation in double-double arithmetic. Finite differences of the loss
/// taken here are free of the f64 cancellation that swamps small partials.
pub(crate) struct EvalWide<'a> {
    pub weights: &'a VpfWeights,
}

impl FusionGraph for EvalWide<'_> {
    type Node = Vec<TwoFloat>;

    fn input(&mut self, x: &[f64]) -> Vec<TwoFloat> {
        x.iter().map(|&v| TwoFloat::from(v)).collect()
    }

    fn net(&mut self, id: NetId, x: &Vec<TwoFloat>) -> Result<Vec<TwoFloat>> {
        let mlp = self.weights.net(id);
        if x.len() != mlp.in_dim() {
            return Err(Error::shape(id.name(), mlp.in_dim(), x.len()));
        }
        let mut h = x.clone();
        for (i, layer) in mlp.layers.iter().enumerate() {
            if i > 0 {
                for v in &mut h {
                    if *v < 0.0 {
                        *v = TwoFloat::from(0.0);
                    }
                }
            }
            h = (0..layer.out_dim())
                .map(|r| {
                    layer
                        .weight
                        .row(r)
                        .iter()
                        .zip(&h)
                        .fold(TwoFloat::from(layer.bias[r]), |acc, (&w, &x)| acc + x * w)
                })
                .collect();
        }
        Ok(h)
    }

    fn softmax(&mut self, x: &Vec<TwoFloat>) -> Result<Vec<TwoFloat>> {
        let Some(&first) = x.first() else {
            return Err(Error::shape("softmax", "non-empty", 0));
        };
        let m = x.iter().fold(first, |a, &b| if b > a { b } else { a });
        let e: Vec<TwoFloat> = x.iter().map(|&v| exp_wide(v - m)).collect();
        let sum = e.iter().fold(TwoFloat::from(0.0), |a, &b| a + b);
        Ok(e.into_iter().map(|v| div_wide(v, sum)).collect())
    }

    fn hadamard(&mut self, a: &Vec<TwoFloat>, b: &Vec<TwoFloat>) -> Result<Vec<TwoFloat>> {
        if a.len() != b.len() {
            return Err(Error::shape("hadamard", a.len(), b.len()));
        }
        Ok(a.iter().zip(b).map(|(&x, &y)| x * y).collect())
    }

    fn concat(&mut self, parts: &[&Vec<TwoFloat>]) -> Result<Vec<TwoFloat>> {
        Ok(parts.iter().flat_map(|p| p.iter().copied()).collect())
    }
}

/// Double-double `exp`; the crate's own is only accurate to about 1e-14.
/// Range reduction by ln 2 and by 2^10, Taylor series, then repeated squaring.
pub(crate) fn exp_wide(x: TwoFloat) -> TwoFloat {
    const LN_2_LO: f64 = 2.319_046_813_846_299_6e-17;
    let ln2 = TwoFloat::new_add(std::f64::consts::LN_2, LN_2_LO);
    let k = (x.hi() / std::f64::consts::LN_2).round();
    let r = (x - ln2 * k) / 1024.0;
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=14 {
        term = term * r / f64::from(n);
        sum += term;
    }
    for _ in 0..10 {
        sum = sum * sum;
    }
    sum * 2f64.powi(k as i32)
}

/// Double-double quotient; the crate's operator is only f64 accurate when
/// both operands are double-double.
pub(crate) fn div_wide(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

/// `Σ b_v″² + Σ b_p″²` in double-double.
pub(crate) fn wide_loss(p: &[f64], b_v: &[f64], b_p: &[f64], w: &VpfWeights) -> Result<TwoFloat> {
    let mut g = EvalWide { weights: w };
    let (p, bv, bp) = (g.input(p), g.input(b_v), g.input(b_p));
    let n = full(&mut g, &p, &bv, &bp)?;
    Ok(n.b_v_fused
        .iter()
        .chain(&n.b_p_fused)
        .fold(TwoFloat::from(0.0), |a, &v| a + v * v))
}
