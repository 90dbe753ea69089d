//! The voxel-pixel fusion layer: parameter features, parameter-based
//! re-weighting, cross attention fusion and residual write-back.

mod fuse;
mod graph;
mod gradcheck;
mod weights;

pub use fuse::{fuse_feature_maps, FusedMaps, FusionSettings, FusionStats, ScatterMode};
pub use gradcheck::{gradcheck_chain, random_fusion_inputs, ChainGradcheck, FusionInputs, GradcheckGroup};
pub use weights::{init_weights, NetId, VpfConfig, VpfWeights, PARAM_DIM, RAW_PARAM_DIM};

use crate::error::Result;
use crate::tensor::{Gradients, Vector};
use graph::{Eval, FusionGraph, Record};

/// Every intermediate of one pair's pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub p_prime: Vector,
    pub p_v: Vector,
    pub p_p: Vector,
    /// Softmax factor of the voxel-side re-weighting.
    pub pbw_voxel_weights: Vector,
    pub b_v_prime: Vector,
    pub pbw_pixel_weights: Vector,
    pub b_p_prime: Vector,
    /// Softmax factor of the voxel-side cross attention.
    pub attn_v: Vector,
    pub b_v_t: Vector,
    pub attn_p: Vector,
    pub b_p_t: Vector,
    pub p_t: Vector,
    pub s: Vector,
    pub b_v_fused: Vector,
    pub b_p_fused: Vector,
}

impl FusionOutput {
    pub fn is_finite(&self) -> bool {
        self.named().iter().all(|(_, v)| v.is_finite())
    }

    /// `(name, vector)` for every intermediate, in evaluation order.
    pub fn named(&self) -> [(&'static str, &Vector); 15] {
        [
            ("p_prime", &self.p_prime),
            ("p_v", &self.p_v),
            ("p_p", &self.p_p),
            ("pbw_voxel_weights", &self.pbw_voxel_weights),
            ("b_v_prime", &self.b_v_prime),
            ("pbw_pixel_weights", &self.pbw_pixel_weights),
            ("b_p_prime", &self.b_p_prime),
            ("attn_v", &self.attn_v),
            ("b_v_t", &self.b_v_t),
            ("attn_p", &self.attn_p),
            ("b_p_t", &self.b_p_t),
            ("p_t", &self.p_t),
            ("s", &self.s),
            ("b_v_fused", &self.b_v_fused),
            ("b_p_fused", &self.b_p_fused),
        ]
    }
}

/// Output of [`vpf_forward`]: the fusion stage given re-weighted features.
#[derive(Debug, Clone, PartialEq)]
pub struct VpfOutput {
    pub attn_v: Vector,
    pub b_v_t: Vector,
    pub attn_p: Vector,
    pub b_p_t: Vector,
    pub p_t: Vector,
    pub s: Vector,
    pub b_v_fused: Vector,
    pub b_p_fused: Vector,
}

/// Returns `(p′, p_v, p_p)`.
pub fn pfg_forward(p: &[f64], w: &VpfWeights) -> Result<(Vector, Vector, Vector)> {
    let mut g = Eval { weights: w };
    let p = g.input(p);
    graph::pfg(&mut g, &p)
}

pub fn pbw_voxel(b_v: &[f64], p_v: &[f64], w: &VpfWeights) -> Result<Vector> {
    let mut g = Eval { weights: w };
    let (b, p) = (g.input(b_v), g.input(p_v));
    Ok(graph::pbw(&mut g, graph::PBW_VOXEL, &b, &p)?.1)
}

pub fn pbw_pixel(b_p: &[f64], p_p: &[f64], w: &VpfWeights) -> Result<Vector> {
    let mut g = Eval { weights: w };
    let (b, p) = (g.input(b_p), g.input(p_p));
    Ok(graph::pbw(&mut g, graph::PBW_PIXEL, &b, &p)?.1)
}

pub fn vpf_forward(b_v_prime: &[f64], b_p_prime: &[f64], p_prime: &[f64], w: &VpfWeights) -> Result<VpfOutput> {
    let mut g = Eval { weights: w };
    let (bv, bp, p) = (g.input(b_v_prime), g.input(b_p_prime), g.input(p_prime));
    let n = graph::vpf(&mut g, &bv, &bp, &p)?;
    Ok(VpfOutput {
        attn_v: n.attn_v,
        b_v_t: n.b_v_t,
        attn_p: n.attn_p,
        b_p_t: n.b_p_t,
        p_t: n.p_t,
        s: n.s,
        b_v_fused: n.b_v_fused,
        b_p_fused: n.b_p_fused,
    })
}

/// Full per-pair pass from raw pair parameters `p` and features `b_v`, `b_p`.
pub fn fusion_forward(p: &[f64], b_v: &[f64], b_p: &[f64], w: &VpfWeights) -> Result<FusionOutput> {
    let mut g = Eval { weights: w };
    let (p, bv, bp) = (g.input(p), g.input(b_v), g.input(b_p));
    let n = graph::full(&mut g, &p, &bv, &bp)?;
    Ok(FusionOutput {
        p_prime: n.p_prime,
        p_v: n.p_v,
        p_p: n.p_p,
        pbw_voxel_weights: n.pbw_voxel_weights,
        b_v_prime: n.b_v_prime,
        pbw_pixel_weights: n.pbw_pixel_weights,
        b_p_prime: n.b_p_prime,
        attn_v: n.attn_v,
        b_v_t: n.b_v_t,
        attn_p: n.attn_p,
        b_p_t: n.b_p_t,
        p_t: n.p_t,
        s: n.s,
        b_v_fused: n.b_v_fused,
        b_p_fused: n.b_p_fused,
    })
}

/// `L = Σ b_v″² + Σ b_p″²`, evaluated without a tape.
pub fn fusion_loss(p: &[f64], b_v: &[f64], b_p: &[f64], w: &VpfWeights) -> Result<f64> {
    let out = fusion_forward(p, b_v, b_p, w)?;
    Ok(sum_squares(&out.b_v_fused) + sum_squares(&out.b_p_fused))
}

fn sum_squares(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// Gradients of the fusion loss.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients {
    pub loss: f64,
    pub d_p: Vector,
    pub d_b_v: Vector,
    pub d_b_p: Vector,
    /// In [`VpfWeights::to_flat`] order.
    pub d_weights: Vec<f64>,
}

pub fn fusion_gradients(p: &[f64], b_v: &[f64], b_p: &[f64], w: &VpfWeights) -> Result<FusionGradients> {
    let mut g = Record::new(w);
    let (pv, bv, bp) = (g.input(p), g.input(b_v), g.input(b_p));
    let n = graph::full(&mut g, &pv, &bv, &bp)?;
    let lv = g.tape.sum_squares(n.b_v_fused)?;
    let lp = g.tape.sum_squares(n.b_p_fused)?;
    let loss = g.tape.add(lv, lp)?;
    let grads = g.tape.backward(loss, &[1.0])?;
    Ok(FusionGradients {
        loss: g.tape.value(loss)[0],
        d_p: grads.vector(pv),
        d_b_v: grads.vector(bv),
        d_b_p: grads.vector(bp),
        d_weights: flat_weight_gradients(&g, &grads),
    })
}

fn flat_weight_gradients(g: &Record<'_>, grads: &Gradients) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.weights.param_count());
    for id in NetId::ALL {
        match &g.params[id as usize] {
            Some(params) => {
                for &(wv, bv) in params {
                    out.extend_from_slice(grads.get(wv));
                    out.extend_from_slice(grads.get(bv));
                }
            }
            None => out.extend(std::iter::repeat_n(0.0, g.weights.net(id).param_count())),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::{Affine, Matrix, Mlp};

    fn rand_vec(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    fn weights_with_bias(c_v: usize, c_p: usize, seed: u64) -> VpfWeights {
        let mut w = init_weights(&VpfConfig::new(c_v, c_p, seed)).unwrap();
        let mut rng = SeededRng::new(seed ^ 0xb1a5);
        for id in NetId::ALL {
            for layer in &mut w.net_mut(id).layers {
                for b in layer.bias.iter_mut() {
                    *b = rng.uniform(-0.3, 0.3);
                }
            }
        }
        w
    }

    // Independent re-statement of the equations with explicit loops.
    fn lin(m: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in m.layers.iter().enumerate() {
            if i > 0 {
                h.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let mut out = vec![0.0; l.out_dim()];
            for r in 0..l.out_dim() {
                let mut acc = l.bias[r];
                for c in 0..l.in_dim() {
                    acc += l.weight.get(r, c) * h[c];
                }
                out[r] = acc;
            }
            h = out;
        }
        h
    }

    fn smax(x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|v| v / s).collect()
    }

    fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x * y).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    #[test]
    fn pfg_matches_loop_oracle() {
        let w = weights_with_bias(8, 16, 3);
        let mut rng = SeededRng::new(9);
        for _ in 0..20 {
            let p = rand_vec(&mut rng, 4);
            let (pp, pv, ppix) = pfg_forward(&p, &w).unwrap();
            let h = lin(&w.m, &p);
            assert!(close(&pp, &h, 1e-12));
            assert!(close(&pv, &lin(&w.m_v, &h), 1e-12));
            assert!(close(&ppix, &lin(&w.m_p, &h), 1e-12));
        }
    }

    #[test]
    fn pfg_zero_cases() {
        let mut w = init_weights(&VpfConfig::new(3, 5, 1)).unwrap();
        let (pp, _, _) = pfg_forward(&[0.0; 4], &w).unwrap();
        assert!(pp.iter().all(|&v| v == 0.0));
        for id in [NetId::M, NetId::Mv, NetId::Mp] {
            w.net_mut(id).zero_out();
        }
        let (pp, pv, ppix) = pfg_forward(&[0.3, 0.1, 0.9, 0.5], &w).unwrap();
        assert!(pp.iter().chain(pv.iter()).chain(ppix.iter()).all(|&v| v == 0.0));
        assert!(pfg_forward(&[0.0; 3], &w).is_err());
    }

    #[test]
    fn pbw_matches_loop_oracle() {
        let w = weights_with_bias(8, 16, 4);
        let mut rng = SeededRng::new(10);
        for _ in 0..20 {
            let (b, p) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 8));
            let want = mul(
                &mul(&smax(&mul(&lin(&w.bv1, &b), &lin(&w.pv1, &p))), &lin(&w.pv2, &p)),
                &lin(&w.bv2, &b),
            );
            assert!(close(&pbw_voxel(&b, &p, &w).unwrap(), &want, 1e-12));
            let (b, p) = (rand_vec(&mut rng, 16), rand_vec(&mut rng, 16));
            let want = mul(
                &mul(&smax(&mul(&lin(&w.bp1, &b), &lin(&w.pp1, &p))), &lin(&w.pp2, &p)),
                &lin(&w.bp2, &b),
            );
            assert!(close(&pbw_pixel(&b, &p, &w).unwrap(), &want, 1e-12));
        }
        assert!(pbw_voxel(&[0.0; 7], &[0.0; 8], &w).is_err());
    }

    #[test]
    fn pbw_single_channel_is_scalar_product() {
        let w = weights_with_bias(1, 1, 5);
        let out = pbw_voxel(&[0.7], &[-0.2], &w).unwrap();
        let want = lin(&w.pv2, &[-0.2])[0] * lin(&w.bv2, &[0.7])[0];
        assert!((out[0] - want).abs() < 1e-15);
        let out = pbw_pixel(&[0.4], &[0.9], &w).unwrap();
        let want = lin(&w.pp2, &[0.9])[0] * lin(&w.bp2, &[0.4])[0];
        assert!((out[0] - want).abs() < 1e-15);
    }

    #[test]
    fn pbw_unit_factors_give_convex_copy() {
        let mut w = weights_with_bias(4, 4, 6);
        w.pv2 = Mlp::single(Affine::new(Matrix::zeros(4, 4), Vector::filled(4, 1.0)).unwrap());
        w.bv2 = Mlp::single(Affine::identity(4));
        let b = [0.5, -1.0, 2.0, 0.25];
        let out = pbw_voxel(&b, &[0.1, 0.2, 0.3, 0.4], &w).unwrap();
        let a = smax(&mul(&lin(&w.bv1, &b), &lin(&w.pv1, &[0.1, 0.2, 0.3, 0.4])));
        assert!(close(&out, &mul(&a, &b), 1e-15));

        w.pp2 = Mlp::single(Affine::new(Matrix::zeros(4, 4), Vector::filled(4, 1.0)).unwrap());
        w.bp2 = Mlp::single(Affine::identity(4));
        let out = pbw_pixel(&[0.0; 4], &[0.3, -0.3, 0.1, 0.0], &w).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vpf_matches_loop_oracle() {
        let w = weights_with_bias(8, 16, 7);
        let mut rng = SeededRng::new(11);
        for _ in 0..20 {
            let (bv, bp, p) = (rand_vec(&mut rng, 8), rand_vec(&mut rng, 16), rand_vec(&mut rng, 16));
            let out = vpf_forward(&bv, &bp, &p, &w).unwrap();
            let bvt = mul(&smax(&mul(&lin(&w.bv3, &bv), &lin(&w.bp3, &bp))), &lin(&w.bv5, &bv));
            let bpt = mul(&smax(&mul(&lin(&w.bv4, &bv), &lin(&w.bp4, &bp))), &lin(&w.bp5, &bp));
            let pt = lin(&w.p_net, &p);
            let joined: Vec<f64> = bvt.iter().chain(&bpt).chain(&pt).cloned().collect();
            let s = lin(&w.s_net, &joined);
            assert_eq!(out.s.len(), 8 + 16 + 16);
            assert!(close(&out.b_v_t, &bvt, 1e-12));
            assert!(close(&out.b_p_t, &bpt, 1e-12));
            assert!(close(&out.s, &s, 1e-12));
            assert!(close(&out.b_v_fused, &lin(&w.s_v, &s), 1e-12));
            assert!(close(&out.b_p_fused, &lin(&w.s_p, &s), 1e-12));
        }
    }

    #[test]
    fn vpf_degenerate_and_zero_heads() {
        let mut w = weights_with_bias(1, 1, 8);
        let out = vpf_forward(&[0.3], &[-0.6], &[0.1; 16], &w).unwrap();
        assert_eq!((out.attn_v[0], out.attn_p[0]), (1.0, 1.0));
        let bvt = lin(&w.bv5, &[0.3])[0];
        let bpt = lin(&w.bp5, &[-0.6])[0];
        assert!((out.b_v_t[0] - bvt).abs() < 1e-15);
        assert!((out.b_p_t[0] - bpt).abs() < 1e-15);

        w.zero_output_heads();
        let out = vpf_forward(&[0.3], &[-0.6], &[0.1; 16], &w).unwrap();
        assert_eq!(out.b_v_fused.0, vec![0.0]);
        assert_eq!(out.b_p_fused.0, vec![0.0]);
        assert!(vpf_forward(&[0.3], &[-0.6], &[0.1; 15], &w).is_err());
    }

    #[test]
    fn softmax_factors_sum_to_one() {
        let w = weights_with_bias(8, 16, 12);
        let mut rng = SeededRng::new(2);
        for _ in 0..50 {
            let out = fusion_forward(&rand_vec(&mut rng, 4), &rand_vec(&mut rng, 8), &rand_vec(&mut rng, 16), &w).unwrap();
            for f in [&out.pbw_voxel_weights, &out.pbw_pixel_weights, &out.attn_v, &out.attn_p] {
                assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(f.iter().all(|&v| v >= 0.0));
            }
            assert!(out.is_finite());
        }
    }

    #[test]
    fn gradients_match_loss_and_descend() {
        let w = weights_with_bias(3, 4, 13);
        let mut rng = SeededRng::new(3);
        let (p, bv, bp) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 3), rand_vec(&mut rng, 4));
        let g = fusion_gradients(&p, &bv, &bp, &w).unwrap();
        assert_eq!(g.loss, fusion_loss(&p, &bv, &bp, &w).unwrap());
        assert_eq!(g.d_weights.len(), w.param_count());

        let flat = w.to_flat();
        let stepped: Vec<f64> = flat.iter().zip(&g.d_weights).map(|(x, d)| x - 1e-3 * d).collect();
        let w2 = w.with_flat(&stepped).unwrap();
        assert!(fusion_loss(&p, &bv, &bp, &w2).unwrap() < g.loss);
    }

    #[test]
    fn deeper_networks_run() {
        let mut cfg = VpfConfig::new(4, 5, 1);
        cfg.net_depth = 3;
        cfg.m_depth = 3;
        let w = init_weights(&cfg).unwrap();
        let out = fusion_forward(&[0.2, 0.4, 0.6, 0.8], &[1.0; 4], &[1.0; 5], &w).unwrap();
        assert_eq!((out.b_v_fused.len(), out.b_p_fused.len()), (4, 5));
        let g = fusion_gradients(&[0.2, 0.4, 0.6, 0.8], &[1.0; 4], &[1.0; 5], &w).unwrap();
        assert_eq!(g.d_weights.len(), w.param_count());
    }

    #[test]
    fn weight_file_roundtrip_preserves_outputs() {
        let w = weights_with_bias(8, 16, 21);
        let back = VpfWeights::from_bytes(&w.to_bytes()).unwrap();
        let mut rng = SeededRng::new(4);
        let (p, bv, bp) = (rand_vec(&mut rng, 4), rand_vec(&mut rng, 8), rand_vec(&mut rng, 16));
        assert_eq!(fusion_forward(&p, &bv, &bp, &w).unwrap(), fusion_forward(&p, &bv, &bp, &back).unwrap());
    }
}
