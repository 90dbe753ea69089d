use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{read_tensors, write_tensors, Affine, Matrix, Mlp, NamedTensor, Vector};

/// Width of the pair parameter feature `p′`.
pub const PARAM_DIM: usize = 16;
/// Length of the raw pair parameter vector `(p_d, p_o, p_a, p_c)`.
pub const RAW_PARAM_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct VpfConfig {
    pub c_v: usize,
    pub c_p: usize,
    pub seed: u64,
    /// Layers in the parameter MLP `M` (4 -> 16 -> ... -> 16).
    pub m_depth: usize,
    /// Layers in every other named network.
    pub net_depth: usize,
}

impl VpfConfig {
    pub fn new(c_v: usize, c_p: usize, seed: u64) -> Self {
        VpfConfig {
            c_v,
            c_p,
            seed,
            m_depth: 2,
            net_depth: 1,
        }
    }

    pub fn param_dim(&self) -> usize {
        PARAM_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_v == 0 || self.c_p == 0 {
            return Err(Error::Config("c_v and c_p must be >= 1".into()));
        }
        if self.m_depth == 0 || self.net_depth == 0 {
            return Err(Error::Config("network depths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Every learnable network of the fusion layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetId {
    M,
    Mv,
    Mp,
    Bv1,
    Bv2,
    Pv1,
    Pv2,
    Bp1,
    Bp2,
    Pp1,
    Pp2,
    Bv3,
    Bp3,
    Bv4,
    Bp4,
    Bv5,
    Bp5,
    P,
    S,
    Sv,
    Sp,
}

impl NetId {
    pub const ALL: [NetId; 21] = [
        NetId::M,
        NetId::Mv,
        NetId::Mp,
        NetId::Bv1,
        NetId::Bv2,
        NetId::Pv1,
        NetId::Pv2,
        NetId::Bp1,
        NetId::Bp2,
        NetId::Pp1,
        NetId::Pp2,
        NetId::Bv3,
        NetId::Bp3,
        NetId::Bv4,
        NetId::Bp4,
        NetId::Bv5,
        NetId::Bp5,
        NetId::P,
        NetId::S,
        NetId::Sv,
        NetId::Sp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetId::M => "m",
            NetId::Mv => "m_v",
            NetId::Mp => "m_p",
            NetId::Bv1 => "bv1",
            NetId::Bv2 => "bv2",
            NetId::Pv1 => "pv1",
            NetId::Pv2 => "pv2",
            NetId::Bp1 => "bp1",
            NetId::Bp2 => "bp2",
            NetId::Pp1 => "pp1",
            NetId::Pp2 => "pp2",
            NetId::Bv3 => "bv3",
            NetId::Bp3 => "bp3",
            NetId::Bv4 => "bv4",
            NetId::Bp4 => "bp4",
            NetId::Bv5 => "bv5",
            NetId::Bp5 => "bp5",
            NetId::P => "p_net",
            NetId::S => "s_net",
            NetId::Sv => "s_v",
            NetId::Sp => "s_p",
        }
    }

    pub fn from_name(name: &str) -> Option<NetId> {
        NetId::ALL.into_iter().find(|id| id.name() == name)
    }

    /// `(input, output)` widths.
    pub fn dims(self, c_v: usize, c_p: usize) -> (usize, usize) {
        let shared = c_v + c_p + PARAM_DIM;
        match self {
            NetId::M => (RAW_PARAM_DIM, PARAM_DIM),
            NetId::Mv => (PARAM_DIM, c_v),
            NetId::Mp => (PARAM_DIM, c_p),
            NetId::Bv1 | NetId::Bv2 | NetId::Pv1 | NetId::Pv2 | NetId::Bv3 | NetId::Bv5 => (c_v, c_v),
            NetId::Bp1 | NetId::Bp2 | NetId::Pp1 | NetId::Pp2 | NetId::Bp4 | NetId::Bp5 => (c_p, c_p),
            NetId::Bp3 => (c_p, c_v),
            NetId::Bv4 => (c_v, c_p),
            NetId::P => (PARAM_DIM, PARAM_DIM),
            NetId::S => (shared, shared),
            NetId::Sv => (shared, c_v),
            NetId::Sp => (shared, c_p),
        }
    }

    fn depth(self, config: &VpfConfig) -> usize {
        if self == NetId::M {
            config.m_depth
        } else {
            config.net_depth
        }
    }

    /// Layer widths, hidden layers taking the output width.
    fn layer_dims(self, config: &VpfConfig) -> Vec<usize> {
        let (i, o) = self.dims(config.c_v, config.c_p);
        std::iter::once(i)
            .chain(std::iter::repeat_n(o, self.depth(config)))
            .collect()
    }
}

/// All learnable maps of one fusion layer, one field per named network.
#[derive(Debug, Clone, PartialEq)]
pub struct VpfWeights {
    pub config: VpfConfig,
    pub m: Mlp,
    pub m_v: Mlp,
    pub m_p: Mlp,
    pub bv1: Mlp,
    pub bv2: Mlp,
    pub pv1: Mlp,
    pub pv2: Mlp,
    pub bp1: Mlp,
    pub bp2: Mlp,
    pub pp1: Mlp,
    pub pp2: Mlp,
    pub bv3: Mlp,
    pub bp3: Mlp,
    pub bv4: Mlp,
    pub bp4: Mlp,
    pub bv5: Mlp,
    pub bp5: Mlp,
    pub p_net: Mlp,
    pub s_net: Mlp,
    pub s_v: Mlp,
    pub s_p: Mlp,
}

/// Deterministic initialization; each network draws from the stream named
/// after it under `config.seed`.
pub fn init_weights(config: &VpfConfig) -> Result<VpfWeights> {
    config.validate()?;
    let make = |id: NetId| {
        let mut rng = SeededRng::named(config.seed, id.name());
        Mlp::glorot(&id.layer_dims(config), &mut rng)
    };
    Ok(VpfWeights {
        config: config.clone(),
        m: make(NetId::M),
        m_v: make(NetId::Mv),
        m_p: make(NetId::Mp),
        bv1: make(NetId::Bv1),
        bv2: make(NetId::Bv2),
        pv1: make(NetId::Pv1),
        pv2: make(NetId::Pv2),
        bp1: make(NetId::Bp1),
        bp2: make(NetId::Bp2),
        pp1: make(NetId::Pp1),
        pp2: make(NetId::Pp2),
        bv3: make(NetId::Bv3),
        bp3: make(NetId::Bp3),
        bv4: make(NetId::Bv4),
        bp4: make(NetId::Bp4),
        bv5: make(NetId::Bv5),
        bp5: make(NetId::Bp5),
        p_net: make(NetId::P),
        s_net: make(NetId::S),
        s_v: make(NetId::Sv),
        s_p: make(NetId::Sp),
    })
}

impl VpfWeights {
    pub fn net(&self, id: NetId) -> &Mlp {
        match id {
            NetId::M => &self.m,
            NetId::Mv => &self.m_v,
            NetId::Mp => &self.m_p,
            NetId::Bv1 => &self.bv1,
            NetId::Bv2 => &self.bv2,
            NetId::Pv1 => &self.pv1,
            NetId::Pv2 => &self.pv2,
            NetId::Bp1 => &self.bp1,
            NetId::Bp2 => &self.bp2,
            NetId::Pp1 => &self.pp1,
            NetId::Pp2 => &self.pp2,
            NetId::Bv3 => &self.bv3,
            NetId::Bp3 => &self.bp3,
            NetId::Bv4 => &self.bv4,
            NetId::Bp4 => &self.bp4,
            NetId::Bv5 => &self.bv5,
            NetId::Bp5 => &self.bp5,
            NetId::P => &self.p_net,
            NetId::S => &self.s_net,
            NetId::Sv => &self.s_v,
            NetId::Sp => &self.s_p,
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut Mlp {
        match id {
            NetId::M => &mut self.m,
            NetId::Mv => &mut self.m_v,
            NetId::Mp => &mut self.m_p,
            NetId::Bv1 => &mut self.bv1,
            NetId::Bv2 => &mut self.bv2,
            NetId::Pv1 => &mut self.pv1,
            NetId::Pv2 => &mut self.pv2,
            NetId::Bp1 => &mut self.bp1,
            NetId::Bp2 => &mut self.bp2,
            NetId::Pp1 => &mut self.pp1,
            NetId::Pp2 => &mut self.pp2,
            NetId::Bv3 => &mut self.bv3,
            NetId::Bp3 => &mut self.bp3,
            NetId::Bv4 => &mut self.bv4,
            NetId::Bp4 => &mut self.bp4,
            NetId::Bv5 => &mut self.bv5,
            NetId::Bp5 => &mut self.bp5,
            NetId::P => &mut self.p_net,
            NetId::S => &mut self.s_net,
            NetId::Sv => &mut self.s_v,
            NetId::Sp => &mut self.s_p,
        }
    }

    pub fn param_count(&self) -> usize {
        NetId::ALL.iter().map(|&id| self.net(id).param_count()).sum()
    }

    /// All parameters in `NetId::ALL` order; per layer the row-major weight
    /// followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for id in NetId::ALL {
            for layer in &self.net(id).layers {
                out.extend_from_slice(layer.weight.data());
                out.extend_from_slice(&layer.bias);
            }
        }
        out
    }

    /// Overwrite one network's parameters from its slice of the
    /// [`VpfWeights::to_flat`] layout.
    pub fn set_net_flat(&mut self, id: NetId, flat: &[f64]) -> Result<()> {
        let net = self.net_mut(id);
        if flat.len() != net.param_count() {
            return Err(Error::shape("set_net_flat", net.param_count(), flat.len()));
        }
        let mut off = 0;
        for layer in &mut net.layers {
            let n = layer.weight.data().len();
            layer.weight.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
            let b = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + b]);
            off += b;
        }
        Ok(())
    }

    /// Copy with parameters replaced from a [`VpfWeights::to_flat`] layout.
    pub fn with_flat(&self, flat: &[f64]) -> Result<VpfWeights> {
        if flat.len() != self.param_count() {
            return Err(Error::shape("with_flat", self.param_count(), flat.len()));
        }
        let mut out = self.clone();
        let mut off = 0;
        for id in NetId::ALL {
            for layer in &mut out.net_mut(id).layers {
                let n = layer.weight.data().len();
                layer.weight.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
                let b = layer.bias.len();
                layer.bias.copy_from_slice(&flat[off..off + b]);
                off += b;
            }
        }
        Ok(out)
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let seed = self.config.seed;
        let mut out = vec![NamedTensor {
            name: "meta.seed".into(),
            rows: 1,
            cols: 2,
            data: vec![(seed >> 32) as f64, (seed & 0xffff_ffff) as f64],
        }];
        for id in NetId::ALL {
            for (l, layer) in self.net(id).layers.iter().enumerate() {
                out.push(NamedTensor {
                    name: format!("{}.{l}.weight", id.name()),
                    rows: layer.weight.rows(),
                    cols: layer.weight.cols(),
                    data: layer.weight.data().to_vec(),
                });
                out.push(NamedTensor {
                    name: format!("{}.{l}.bias", id.name()),
                    rows: layer.bias.len(),
                    cols: 1,
                    data: layer.bias.to_vec(),
                });
            }
        }
        out
    }

    pub fn from_tensors(tensors: &[NamedTensor]) -> Result<VpfWeights> {
        let bad = |d: String| Error::malformed("weight file", d);
        let mut seed = 0u64;
        let mut layers: BTreeMap<NetId, BTreeMap<usize, (Option<Matrix>, Option<Vector>)>> = BTreeMap::new();
        for t in tensors {
            if t.name == "meta.seed" {
                if t.data.len() != 2 {
                    return Err(bad("meta.seed must hold 2 values".into()));
                }
                seed = ((t.data[0] as u64) << 32) | (t.data[1] as u64);
                continue;
            }
            let parts: Vec<&str> = t.name.rsplitn(3, '.').collect();
            let [kind, idx, net] = parts[..] else {
                return Err(bad(format!("unexpected tensor name {:?}", t.name)));
            };
            let id = NetId::from_name(net).ok_or_else(|| bad(format!("unknown network {net:?}")))?;
            let idx: usize = idx.parse().map_err(|_| bad(format!("bad layer index in {:?}", t.name)))?;
            let slot = layers.entry(id).or_default().entry(idx).or_default();
            match kind {
                "weight" => slot.0 = Some(Matrix::from_row_major(t.rows, t.cols, t.data.clone())?),
                "bias" if t.cols == 1 => slot.1 = Some(Vector(t.data.clone())),
                _ => return Err(bad(format!("unexpected tensor {:?}", t.name))),
            }
        }
        let mut nets: BTreeMap<NetId, Mlp> = BTreeMap::new();
        for id in NetId::ALL {
            let stored = layers.remove(&id).ok_or_else(|| bad(format!("missing network {}", id.name())))?;
            let mut affine = Vec::new();
            for (expect, (idx, (w, b))) in stored.into_iter().enumerate() {
                if idx != expect {
                    return Err(bad(format!("{}: missing layer {expect}", id.name())));
                }
                let (Some(w), Some(b)) = (w, b) else {
                    return Err(bad(format!("{}.{idx}: missing weight or bias", id.name())));
                };
                affine.push(Affine::new(w, b)?);
            }
            nets.insert(id, Mlp::new(affine)?);
        }
        let config = VpfConfig {
            c_v: nets[&NetId::Bv1].out_dim(),
            c_p: nets[&NetId::Bp1].out_dim(),
            seed,
            m_depth: nets[&NetId::M].layers.len(),
            net_depth: nets[&NetId::Bv1].layers.len(),
        };
        config.validate()?;
        let mut take = |id: NetId| nets.remove(&id).unwrap();
        let w = VpfWeights {
            config: config.clone(),
            m: take(NetId::M),
            m_v: take(NetId::Mv),
            m_p: take(NetId::Mp),
            bv1: take(NetId::Bv1),
            bv2: take(NetId::Bv2),
            pv1: take(NetId::Pv1),
            pv2: take(NetId::Pv2),
            bp1: take(NetId::Bp1),
            bp2: take(NetId::Bp2),
            pp1: take(NetId::Pp1),
            pp2: take(NetId::Pp2),
            bv3: take(NetId::Bv3),
            bp3: take(NetId::Bp3),
            bv4: take(NetId::Bv4),
            bp4: take(NetId::Bp4),
            bv5: take(NetId::Bv5),
            bp5: take(NetId::Bp5),
            p_net: take(NetId::P),
            s_net: take(NetId::S),
            s_v: take(NetId::Sv),
            s_p: take(NetId::Sp),
        };
        w.check_shapes()?;
        Ok(w)
    }

    /// Verifies every network against the dimension contract of `config`.
    pub fn check_shapes(&self) -> Result<()> {
        let (c_v, c_p) = (self.config.c_v, self.config.c_p);
        for id in NetId::ALL {
            let net = self.net(id);
            let want = id.layer_dims(&self.config);
            let got: Vec<usize> = std::iter::once(net.in_dim())
                .chain(net.layers.iter().map(|l| l.out_dim()))
                .collect();
            if got != want {
                return Err(Error::shape(id.name(), want, got));
            }
            debug_assert_eq!((net.in_dim(), net.out_dim()), id.dims(c_v, c_p));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        write_tensors(&self.to_tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<VpfWeights> {
        Self::from_tensors(&read_tensors(bytes)?)
    }

    /// Zeroes `S_v` and `S_p`, making the fused residuals identically zero.
    pub fn zero_output_heads(&mut self) {
        self.s_v.zero_out();
        self.s_p.zero_out();
    }
}
