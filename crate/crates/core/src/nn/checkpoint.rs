//! Model checkpoints: a small versioned binary container holding the
//! architecture, every parameter tensor, batch-norm running statistics, and
//! the dropout seed.
//!
//! Floats are stored as raw little-endian IEEE-754 bits, so save → load →
//! save reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{
    BatchNormParams, ConvLayerSpec, ConvParams, DenseLayerSpec, DenseParams, NetworkSpec,
    NetworkState, PoolLayerSpec,
};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HARCKPT\x01";

struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.inner.write_all(&v.to_bits().to_le_bytes())
    }
    fn tensor(&mut self, t: &Tensor) -> std::io::Result<()> {
        self.u32(t.rank() as u32)?;
        for &d in t.shape() {
            self.u32(d as u32)?;
        }
        for &v in t.data() {
            self.f64(v)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn tensor(&mut self) -> std::io::Result<Tensor> {
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(self.f64()?);
        }
        Tensor::from_vec(&shape, data)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }
}

pub fn save(path: &Path, spec: &NetworkSpec, state: &NetworkState) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        inner: BufWriter::new(file),
    };
    write_all(&mut w, spec, state).map_err(|e| Error::io(path, e))
}

fn write_all<W: Write>(w: &mut Writer<W>, spec: &NetworkSpec, state: &NetworkState) -> std::io::Result<()> {
    w.inner.write_all(MAGIC)?;
    w.u32(spec.input_h as u32)?;
    w.u32(spec.input_w as u32)?;
    w.u32(spec.channels as u32)?;
    for c in &spec.conv {
        w.u32(c.kernel_h as u32)?;
        w.u32(c.kernel_w as u32)?;
        w.u32(c.depth_multiplier as u32)?;
    }
    for p in &spec.pool {
        w.u32(p.kernel_h as u32)?;
        w.u32(p.kernel_w as u32)?;
        w.u32(p.stride_h as u32)?;
        w.u32(p.stride_w as u32)?;
    }
    for d in &spec.dense {
        w.u32(d.units as u32)?;
        w.f64(d.keep_prob)?;
    }
    w.u32(spec.output_units as u32)?;
    w.u64(state.seed)?;

    for c in &state.conv {
        w.tensor(&c.weights)?;
        w.tensor(&c.bias)?;
    }
    for b in &state.bn {
        w.tensor(&b.gamma)?;
        w.tensor(&b.beta)?;
        w.tensor(&b.running_mean)?;
        w.tensor(&b.running_var)?;
    }
    for d in &state.dense {
        w.tensor(&d.weights)?;
        w.tensor(&d.bias)?;
    }
    w.inner.flush()
}

pub fn load(path: &Path) -> Result<(NetworkSpec, NetworkState)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    read_all(&mut r, path)
}

fn read_all<R: Read>(r: &mut Reader<R>, path: &Path) -> Result<(NetworkSpec, NetworkState)> {
    let bad = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let io_ctx = |e: std::io::Error| Error::Checkpoint {
        path: path.to_path_buf(),
        reason: format!("truncated or unreadable: {e}"),
    };

    let mut magic = [0u8; 8];
    r.inner.read_exact(&mut magic).map_err(io_ctx)?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)".into()));
    }

    let input_h = r.u32().map_err(io_ctx)? as usize;
    let input_w = r.u32().map_err(io_ctx)? as usize;
    let channels = r.u32().map_err(io_ctx)? as usize;
    let mut conv = [ConvLayerSpec {
        kernel_h: 0,
        kernel_w: 0,
        depth_multiplier: 0,
    }; 3];
    for c in &mut conv {
        c.kernel_h = r.u32().map_err(io_ctx)? as usize;
        c.kernel_w = r.u32().map_err(io_ctx)? as usize;
        c.depth_multiplier = r.u32().map_err(io_ctx)? as usize;
    }
    let mut pool = [PoolLayerSpec::square(1, 1); 3];
    for p in &mut pool {
        p.kernel_h = r.u32().map_err(io_ctx)? as usize;
        p.kernel_w = r.u32().map_err(io_ctx)? as usize;
        p.stride_h = r.u32().map_err(io_ctx)? as usize;
        p.stride_w = r.u32().map_err(io_ctx)? as usize;
    }
    let mut dense = [DenseLayerSpec {
        units: 0,
        keep_prob: 1.0,
    }; 3];
    for d in &mut dense {
        d.units = r.u32().map_err(io_ctx)? as usize;
        d.keep_prob = r.f64().map_err(io_ctx)?;
    }
    let output_units = r.u32().map_err(io_ctx)? as usize;
    let spec = NetworkSpec {
        input_h,
        input_w,
        channels,
        conv,
        pool,
        dense,
        output_units,
    };
    spec.validate()
        .map_err(|e| bad(format!("invalid architecture: {e}")))?;

    let seed = r.u64().map_err(io_ctx)?;

    let mut conv_params = Vec::with_capacity(3);
    for i in 0..3 {
        let weights = r.tensor().map_err(io_ctx)?;
        let bias = r.tensor().map_err(io_ctx)?;
        let c_in = spec.channels_into(i);
        let expect = [
            spec.conv[i].kernel_h,
            spec.conv[i].kernel_w,
            c_in,
            spec.conv[i].depth_multiplier,
        ];
        if weights.shape() != expect {
            return Err(bad(format!(
                "conv{} weights shaped {:?}, architecture wants {:?}",
                i + 1,
                weights.shape(),
                expect
            )));
        }
        conv_params.push(ConvParams { weights, bias });
    }
    let mut bn_params = Vec::with_capacity(3);
    for i in 0..3 {
        let gamma = r.tensor().map_err(io_ctx)?;
        let beta = r.tensor().map_err(io_ctx)?;
        let running_mean = r.tensor().map_err(io_ctx)?;
        let running_var = r.tensor().map_err(io_ctx)?;
        let c = spec.channels_into(i + 1);
        if gamma.shape() != [c] {
            return Err(bad(format!(
                "bn{} gamma length {}, architecture wants {}",
                i + 1,
                gamma.len(),
                c
            )));
        }
        if running_var.data().iter().any(|&v| v < 0.0) {
            return Err(bad(format!("bn{} has negative running variance", i + 1)));
        }
        bn_params.push(BatchNormParams {
            gamma,
            beta,
            running_mean,
            running_var,
        });
    }
    let mut dense_params = Vec::with_capacity(4);
    for (i, (d_in, units)) in spec.dense_dims().into_iter().enumerate() {
        let weights = r.tensor().map_err(io_ctx)?;
        let bias = r.tensor().map_err(io_ctx)?;
        if weights.shape() != [d_in, units] {
            return Err(bad(format!(
                "dense{} weights shaped {:?}, architecture wants {:?}",
                i + 1,
                weights.shape(),
                [d_in, units]
            )));
        }
        dense_params.push(DenseParams { weights, bias });
    }

    Ok((
        spec,
        NetworkState {
            conv: conv_params,
            bn: bn_params,
            dense: dense_params,
            seed,
        },
    ))
}
