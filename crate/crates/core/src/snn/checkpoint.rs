//! `LANESNN-CKPT-1` network container.
//!
//! Layout (all integers u32 little-endian unless noted, floats f64 LE):
//!
//! ```text
//! "LANESNN-CKPT-1\n"
//! arch name (u32 length + UTF-8)
//! v_th, v_reset, tau
//! input channels, height, width
//! layer count
//! per layer: kind tag (u8: 0 conv2d, 1 dense, 2 dropout, 3 noise), then
//!   conv2d: in_channels out_channels kernel padding stride
//!   dense:  in_units out_units
//!   dropout: drop_prob (f64)
//!   noise:   sigma_r (f64)
//!   weighted layers: u64 weight count, weights, u64 bias count, biases
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::snn::layers::{LayerSpec, Shape};
use crate::snn::lif::LifParams;
use crate::snn::network::{Architecture, Layer, Network};

pub const CHECKPOINT_MAGIC: &str = "LANESNN-CKPT-1\n";

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|(field, reason)| Error::parse(path, field, reason))
}

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(CHECKPOINT_MAGIC.as_bytes());
    w.string(net.arch.name());
    w.f64(net.lif.v_th);
    w.f64(net.lif.v_reset);
    w.f64(net.lif.tau);
    w.u32(net.input_shape.channels);
    w.u32(net.input_shape.height);
    w.u32(net.input_shape.width);
    w.u32(net.layers.len());
    for layer in &net.layers {
        write_spec(&mut w, &layer.spec);
        if layer.spec.is_spiking() {
            w.f64s(&layer.weights);
            w.f64s(&layer.bias);
        }
    }
    w.0
}

pub(crate) fn write_spec(w: &mut Writer, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            padding,
            stride,
        } => {
            w.u8(0);
            for v in [in_channels, out_channels, kernel, padding, stride] {
                w.u32(v);
            }
        }
        LayerSpec::Dense { in_units, out_units } => {
            w.u8(1);
            w.u32(in_units);
            w.u32(out_units);
        }
        LayerSpec::Dropout { drop_prob } => {
            w.u8(2);
            w.f64(drop_prob);
        }
        LayerSpec::Noise { sigma_r } => {
            w.u8(3);
            w.f64(sigma_r);
        }
    }
}

pub(crate) type DecodeResult<T> = std::result::Result<T, (&'static str, String)>;

pub fn decode_checkpoint(bytes: &[u8]) -> DecodeResult<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len(), "header")?;
    if magic != CHECKPOINT_MAGIC.as_bytes() {
        return Err(("header", "not a LANESNN-CKPT-1 file".into()));
    }
    let arch: Architecture = r.string("arch")?.parse().map_err(|e: Error| ("arch", e.to_string()))?;
    let lif = LifParams {
        v_th: r.f64("v_th")?,
        v_reset: r.f64("v_reset")?,
        tau: r.f64("tau")?,
    };
    lif.validate().map_err(|e| ("lif", e.to_string()))?;
    let input_shape = Shape::new(r.u32("input shape")?, r.u32("input shape")?, r.u32("input shape")?);
    let n_layers = r.u32("layer count")?;
    let mut layers = Vec::with_capacity(n_layers.min(1024));
    let mut shape = input_shape;
    for _ in 0..n_layers {
        let spec = read_spec(&mut r)?;
        let out_shape = spec.output_shape(shape).map_err(|e| ("layer shape", e.to_string()))?;
        let (weights, bias) = if spec.is_spiking() {
            let w = r.f64s("weights")?;
            let b = r.f64s("bias")?;
            if (w.len(), b.len()) != spec.param_shape() {
                return Err(("weights", format!("{} {} layer has wrong parameter count", spec.kind_name(), out_shape)));
            }
            (w, b)
        } else {
            (Vec::new(), Vec::new())
        };
        layers.push(Layer {
            spec,
            in_shape: shape,
            out_shape,
            weights,
            bias,
        });
        shape = out_shape;
    }
    if r.pos != bytes.len() {
        return Err(("trailer", format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Network {
        arch,
        input_shape,
        layers,
        lif,
    })
}

pub(crate) fn read_spec(r: &mut Reader<'_>) -> DecodeResult<LayerSpec> {
    Ok(match r.u8("layer kind")? {
        0 => LayerSpec::Conv2d {
            in_channels: r.u32("conv2d")?,
            out_channels: r.u32("conv2d")?,
            kernel: r.u32("conv2d")?,
            padding: r.u32("conv2d")?,
            stride: r.u32("conv2d")?,
        },
        1 => LayerSpec::Dense {
            in_units: r.u32("dense")?,
            out_units: r.u32("dense")?,
        },
        2 => LayerSpec::Dropout {
            drop_prob: r.f64("dropout")?,
        },
        3 => LayerSpec::Noise {
            sigma_r: r.f64("noise")?,
        },
        k => return Err(("layer kind", format!("unknown tag {k}"))),
    })
}

#[derive(Default)]
pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
    }
    pub fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn string(&mut self, s: &str) {
        self.u32(s.len());
        self.bytes(s.as_bytes());
    }
    pub fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len());
        for &v in vs {
            self.f64(v);
        }
    }
    pub fn i16s(&mut self, vs: &[i16]) {
        self.u64(vs.len());
        for &v in vs {
            self.bytes(&v.to_le_bytes());
        }
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize, field: &'static str) -> DecodeResult<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err((field, "unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn u8(&mut self, field: &'static str) -> DecodeResult<u8> {
        Ok(self.take(1, field)?[0])
    }
    pub fn u32(&mut self, field: &'static str) -> DecodeResult<usize> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()) as usize)
    }
    pub fn u64(&mut self, field: &'static str) -> DecodeResult<usize> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()) as usize)
    }
    pub fn f64(&mut self, field: &'static str) -> DecodeResult<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    pub fn string(&mut self, field: &'static str) -> DecodeResult<String> {
        let n = self.u32(field)?;
        String::from_utf8(self.take(n, field)?.to_vec()).map_err(|_| (field, "invalid UTF-8".into()))
    }
    pub fn f64s(&mut self, field: &'static str) -> DecodeResult<Vec<f64>> {
        let n = self.u64(field)?;
        if n > (self.bytes.len() - self.pos) / 8 {
            return Err((field, "array length exceeds file".into()));
        }
        (0..n).map(|_| self.f64(field)).collect()
    }
    pub fn i16s(&mut self, field: &'static str) -> DecodeResult<Vec<i16>> {
        let n = self.u64(field)?;
        if n > (self.bytes.len() - self.pos) / 2 {
            return Err((field, "array length exceeds file".into()));
        }
        (0..n)
            .map(|_| Ok(i16::from_le_bytes(self.take(2, field)?.try_into().unwrap())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::snn::network::{build_network, InitConfig};

    #[test]
    fn roundtrip_every_architecture() {
        for arch in Architecture::ALL {
            let net = build_network(arch, &mut Rng::new(1), &InitConfig::default()).unwrap();
            let bytes = encode_checkpoint(&net);
            assert!(bytes.starts_with(b"LANESNN-CKPT-1\n"));
            assert_eq!(decode_checkpoint(&bytes).unwrap(), net);
        }
    }

    #[test]
    fn rejects_corruption() {
        let net = build_network(Architecture::FullyC600, &mut Rng::new(2), &InitConfig::default()).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(decode_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err().0, "bias");
        assert_eq!(decode_checkpoint(b"LANESNN-CKPT-9\n").unwrap_err().0, "header");
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode_checkpoint(&extra).unwrap_err().0, "trailer");
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let net = build_network(Architecture::Cnn, &mut Rng::new(3), &InitConfig::default()).unwrap();
        save_checkpoint(&net, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), net);
        assert!(load_checkpoint(&dir.path().join("missing")).is_err());
    }
}
