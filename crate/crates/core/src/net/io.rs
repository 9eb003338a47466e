//! `ANET` model files.
//!
//! Layout: magic `ANET`, u8 version, u32-LE layer count, then per layer a u8 kind tag
//! (0 conv, 1 linear, 2 relu, 3 maxpool, 4 flatten, 5 softmax), the kind's u32-LE
//! hyperparameters (conv: stride, padding; maxpool: window, stride) and inline `TNSR`
//! blocks for weight and bias. The input dims follow the layer records as a trailer:
//! u8 ndim then ndim u32-LE values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Conv2d, Layer, Linear, MaxPool2d, Network};
use crate::error::{Error, Result};
use crate::tensor::{read_exact, read_u32, Tensor};

pub const ANET_MAGIC: [u8; 4] = *b"ANET";
pub const ANET_VERSION: u8 = 1;

const TAG_CONV: u8 = 0;
const TAG_LINEAR: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_MAXPOOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_SOFTMAX: u8 = 5;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::format("value exceeds u32"))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

impl Network {
    pub fn write_anet<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&ANET_MAGIC)?;
        w.write_all(&[ANET_VERSION])?;
        put_u32(&mut w, self.layers.len())?;
        for layer in &self.layers {
            match layer {
                Layer::Conv2d(c) => {
                    w.write_all(&[TAG_CONV])?;
                    put_u32(&mut w, c.stride())?;
                    put_u32(&mut w, c.padding())?;
                    c.weight().write_tnsr(&mut w)?;
                    c.bias().write_tnsr(&mut w)?;
                }
                Layer::Linear(l) => {
                    w.write_all(&[TAG_LINEAR])?;
                    l.weight().write_tnsr(&mut w)?;
                    l.bias().write_tnsr(&mut w)?;
                }
                Layer::Relu => w.write_all(&[TAG_RELU])?,
                Layer::MaxPool2d(p) => {
                    w.write_all(&[TAG_MAXPOOL])?;
                    put_u32(&mut w, p.window)?;
                    put_u32(&mut w, p.stride)?;
                }
                Layer::Flatten => w.write_all(&[TAG_FLATTEN])?,
                Layer::Softmax => w.write_all(&[TAG_SOFTMAX])?,
            }
        }
        w.write_all(&[self.input_dims.len() as u8])?;
        for &d in &self.input_dims {
            put_u32(&mut w, d)?;
        }
        Ok(())
    }

    pub fn read_anet<R: Read>(mut r: R) -> Result<Network> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != ANET_MAGIC {
            return Err(Error::format(format!(
                "bad magic {magic:02x?}, expected \"ANET\" {ANET_MAGIC:02x?}"
            )));
        }
        let mut version = [0u8; 1];
        read_exact(&mut r, &mut version)?;
        if version[0] != ANET_VERSION {
            return Err(Error::format(format!(
                "unsupported ANET version {}",
                version[0]
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for i in 0..count {
            let mut tag = [0u8; 1];
            read_exact(&mut r, &mut tag)?;
            let layer = match tag[0] {
                TAG_CONV => {
                    let stride = read_u32(&mut r)? as usize;
                    let padding = read_u32(&mut r)? as usize;
                    let weight = Tensor::read_tnsr(&mut r)?;
                    let bias = Tensor::read_tnsr(&mut r)?;
                    Layer::Conv2d(
                        Conv2d::new(weight, bias, stride, padding).map_err(|e| layer_err(i, e))?,
                    )
                }
                TAG_LINEAR => {
                    let weight = Tensor::read_tnsr(&mut r)?;
                    let bias = Tensor::read_tnsr(&mut r)?;
                    Layer::Linear(Linear::new(weight, bias).map_err(|e| layer_err(i, e))?)
                }
                TAG_RELU => Layer::Relu,
                TAG_MAXPOOL => {
                    let window = read_u32(&mut r)? as usize;
                    let stride = read_u32(&mut r)? as usize;
                    Layer::MaxPool2d(MaxPool2d::new(window, stride).map_err(|e| layer_err(i, e))?)
                }
                TAG_FLATTEN => Layer::Flatten,
                TAG_SOFTMAX => Layer::Softmax,
                other => {
                    return Err(Error::format(format!(
                        "layer {i}: unknown kind tag {other}"
                    )))
                }
            };
            layers.push(layer);
        }
        let mut ndim = [0u8; 1];
        read_exact(&mut r, &mut ndim)?;
        let mut input_dims = Vec::with_capacity(ndim[0] as usize);
        for _ in 0..ndim[0] {
            input_dims.push(read_u32(&mut r)? as usize);
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::format("trailing bytes after model"));
        }
        Network::new(input_dims, layers)
            .map_err(|e| Error::format(format!("inconsistent model: {e}")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_anet(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        Network::read_anet(BufReader::new(File::open(path)?))
    }
}

fn layer_err(i: usize, e: Error) -> Error {
    Error::format(format!("layer {i}: {e}"))
}
