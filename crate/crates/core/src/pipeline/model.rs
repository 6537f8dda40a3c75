//! `BNM1` network files: the trained feature extractor plus its loss head.
//!
//! Layout (little-endian): magic `BNM1`, u32 version, u8 scheme tag, u32
//! context width, u8 network kind (0 dense, 1 GRU), the network, u8 head flag
//! and the head. Dense networks store u32 layer count, then per layer u32 in,
//! u32 out, u8 activation tag, `out × in` weights row-major and the bias. GRU
//! encoders store u32 input, hidden, layer count and output width followed by
//! every tensor in parameter order.

use std::path::Path;

use nalgebra::DVector;

use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::bottleneck::HiddenTap;
use crate::error::{Error, Result};
use crate::losses::LossHead;
use crate::net::{Activation, DenseLayer, DenseNetwork, GruEncoder, GruLayer, Params};
use crate::targets::Scheme;

const MAGIC: &[u8; 4] = b"BNM1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Dense(DenseNetwork),
    Gru(GruEncoder),
}

impl Network {
    pub fn hidden(&self) -> &dyn HiddenTap {
        match self {
            Network::Dense(n) => n,
            Network::Gru(g) => g,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Network::Dense(n) => n.input_dim(),
            Network::Gru(g) => g.input_dim(),
        }
    }
}

/// A trained feature extractor with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct BnModel {
    pub scheme: Scheme,
    /// Splicing width of the input; 1 for recurrent models.
    pub context: usize,
    pub network: Network,
    pub head: Option<LossHead>,
}

fn scheme_tag(s: Scheme) -> u8 {
    match s {
        Scheme::Speaker => 0,
        Scheme::Utcl => 1,
        Scheme::Stcl => 2,
        Scheme::Apc => 3,
    }
}

fn scheme_from_tag(t: u8) -> Option<Scheme> {
    [Scheme::Speaker, Scheme::Utcl, Scheme::Stcl, Scheme::Apc]
        .get(t as usize)
        .copied()
}

impl BnModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new(MAGIC);
        w.u32(VERSION);
        w.u8(scheme_tag(self.scheme));
        w.usize(self.context);
        match &self.network {
            Network::Dense(net) => {
                w.u8(0);
                w.usize(net.layers.len());
                for l in &net.layers {
                    w.usize(l.input_dim());
                    w.usize(l.output_dim());
                    w.u8(l.activation.tag());
                    w.matrix(&l.weights);
                    w.f64s(l.bias.as_slice());
                }
            }
            Network::Gru(g) => {
                w.u8(1);
                w.usize(g.input_dim());
                w.usize(g.hidden_dim());
                w.usize(g.layers.len());
                w.usize(g.output_dim());
                for s in g.param_slices() {
                    w.f64s(s);
                }
            }
        }
        match &self.head {
            Some(h) => {
                w.u8(1);
                h.write_to(&mut w);
            }
            None => w.u8(0),
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return r.fail(format!("unsupported BNM1 version {version}"));
        }
        let tag = r.u8()?;
        let Some(scheme) = scheme_from_tag(tag) else {
            return r.fail(format!("unknown scheme tag {tag}"));
        };
        let context = r.usize()?;
        let network = match r.u8()? {
            0 => {
                let n = r.usize()?;
                if n == 0 {
                    return r.fail("network without layers");
                }
                let mut layers = Vec::with_capacity(n.min(64));
                for _ in 0..n {
                    let input = r.usize()?;
                    let output = r.usize()?;
                    let at = r.u8()?;
                    let Some(activation) = Activation::from_tag(at) else {
                        return r.fail(format!("unknown activation tag {at}"));
                    };
                    r.ensure(
                        input
                            .saturating_mul(output)
                            .saturating_add(output)
                            .saturating_mul(8),
                    )?;
                    let weights = r.matrix(output, input)?;
                    let bias = DVector::from_vec(r.f64s(output)?);
                    layers.push(DenseLayer {
                        weights,
                        bias,
                        activation,
                    });
                }
                Network::Dense(
                    DenseNetwork::from_layers(layers)
                        .map_err(|e| Error::ModelInvalid(e.to_string()))?,
                )
            }
            1 => {
                let input = r.usize()?;
                let hidden = r.usize()?;
                let n_layers = r.usize()?;
                let output = r.usize()?;
                if input == 0 || hidden == 0 || n_layers == 0 || output == 0 {
                    return r.fail("zero GRU dimension");
                }
                let layers = (0..n_layers)
                    .map(|l| GruLayer::zeros(if l == 0 { input } else { hidden }, hidden))
                    .collect();
                let out_w = nalgebra::DMatrix::zeros(output, hidden);
                let mut g = GruEncoder::from_parts(layers, out_w, DVector::zeros(output))
                    .map_err(|e| Error::ModelInvalid(e.to_string()))?;
                r.ensure(g.n_params().saturating_mul(8))?;
                for s in g.param_slices_mut() {
                    let vals = r.f64s(s.len())?;
                    s.copy_from_slice(&vals);
                }
                Network::Gru(g)
            }
            k => return r.fail(format!("unknown network kind {k}")),
        };
        let head = match r.u8()? {
            0 => None,
            1 => Some(LossHead::read_from(&mut r)?),
            f => return r.fail(format!("bad head flag {f}")),
        };
        r.finish()?;
        Ok(BnModel {
            scheme,
            context,
            network,
            head,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}
