//! Binary graph checkpoints.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic            8 bytes  "OSMLGRPH"
//! version          u32      1
//! input rank       u32, then that many u32 dims
//! n_classes        u32
//! head init        u8       0 = zeros, 1 = normal
//! n_layers         u32, then per layer a spec record
//! next block id    u64
//! rng seed         u64
//! n_blocks         u32, then per block:
//!   layer index    u32
//!   block id       u64
//!   created at     u64      task index
//!   spec record
//!   n_tensors      u32, then per tensor:
//!     name         u16 length + UTF-8 bytes
//!     rank         u8, then that many u32 dims
//!     data         f32 × product(dims)
//!
//! spec record      u8 kind (0 dense, 1 conv) + 5 × u32
//!                  dense: inputs, units, 0, 0, 0
//!                  conv:  in_channels, out_channels, kernel, stride, padding
//! ```
//!
//! Candidates are never written; only committed blocks persist. The head is
//! per-task state and is not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BlockSpec, GraphSpec, HeadInit, KnowledgeBlock, Layer, MetaGraph};
use crate::autodiff::{ParamSet, Real, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OSMLGRPH";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W> {
    inner: W,
}

impl<W: Write> Writer<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.inner.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }
    fn u16(&mut self, v: u16) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn usize(&mut self, v: usize) -> std::io::Result<()> {
        self.u32(v as u32)
    }
    fn spec(&mut self, spec: &BlockSpec) -> std::io::Result<()> {
        let (kind, fields) = match *spec {
            BlockSpec::Dense { inputs, units } => (0, [inputs, units, 0, 0, 0]),
            BlockSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => (1, [in_channels, out_channels, kernel, stride, padding]),
        };
        self.u8(kind)?;
        for f in fields {
            self.usize(f)?;
        }
        Ok(())
    }
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn spec(&mut self) -> Result<BlockSpec> {
        let kind = self.u8()?;
        let mut f = [0usize; 5];
        for x in &mut f {
            *x = self.usize()?;
        }
        match kind {
            0 => Ok(BlockSpec::Dense {
                inputs: f[0],
                units: f[1],
            }),
            1 => Ok(BlockSpec::Conv {
                in_channels: f[0],
                out_channels: f[1],
                kernel: f[2],
                stride: f[3],
                padding: f[4],
            }),
            k => Err(Error::Checkpoint(format!("unknown block kind {k}"))),
        }
    }
}

/// Serialises the committed part of `graph`.
pub fn write_checkpoint<S: Real, W: Write>(graph: &MetaGraph<S>, out: W) -> Result<()> {
    let mut w = Writer { inner: out };
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    (|| -> std::io::Result<()> {
        let spec = graph.spec();
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(CHECKPOINT_VERSION)?;
        w.usize(spec.input_shape.len())?;
        for &d in &spec.input_shape {
            w.usize(d)?;
        }
        w.usize(spec.n_classes)?;
        w.u8(match spec.head_init {
            HeadInit::Zeros => 0,
            HeadInit::Normal => 1,
        })?;
        w.usize(spec.layers.len())?;
        for s in &spec.layers {
            w.spec(s)?;
        }
        w.u64(graph.next_block_id())?;
        w.u64(graph.rng_seed())?;
        let blocks: Vec<_> = graph.layers().iter().flat_map(|l| l.blocks.iter()).collect();
        w.usize(blocks.len())?;
        for b in blocks {
            w.usize(b.layer)?;
            w.u64(b.id)?;
            w.u64(b.created_at_task as u64)?;
            w.spec(&spec.layers[b.layer])?;
            w.usize(b.params.len())?;
            for (name, t) in b.params.iter() {
                w.u16(name.len() as u16)?;
                w.bytes(name.as_bytes())?;
                w.u8(t.ndim() as u8)?;
                for &d in t.shape() {
                    w.usize(d)?;
                }
                for x in t.data() {
                    w.bytes(&(x.as_f64() as f32).to_le_bytes())?;
                }
            }
        }
        w.inner.flush()
    })()
    .map_err(io)
}

/// Parses a checkpoint, rejecting a wrong magic or version.
pub fn read_checkpoint<S: Real, R: Read>(input: R) -> Result<MetaGraph<S>> {
    let mut r = Reader { inner: input };
    let magic: [u8; 8] = r.bytes()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let rank = r.usize()?;
    let input_shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
    let n_classes = r.usize()?;
    let head_init = match r.u8()? {
        0 => HeadInit::Zeros,
        1 => HeadInit::Normal,
        k => return Err(Error::Checkpoint(format!("unknown head init {k}"))),
    };
    let n_layers = r.usize()?;
    let specs = (0..n_layers).map(|_| r.spec()).collect::<Result<Vec<_>>>()?;
    let next_id = r.u64()?;
    let rng_seed = r.u64()?;
    let n_blocks = r.usize()?;
    let mut layers: Vec<Layer<S>> = (0..n_layers)
        .map(|_| Layer {
            blocks: Vec::new(),
            candidate: None,
        })
        .collect();
    for _ in 0..n_blocks {
        let layer = r.usize()?;
        let id = r.u64()?;
        let created_at_task = r.u64()? as usize;
        let spec = r.spec()?;
        if layer >= n_layers || spec != specs[layer] {
            return Err(Error::Checkpoint(format!("block {id} does not match layer {layer}")));
        }
        let n_tensors = r.usize()?;
        let mut params = ParamSet::new();
        for _ in 0..n_tensors {
            let len = r.u16()? as usize;
            let mut name = vec![0u8; len];
            r.inner
                .read_exact(&mut name)
                .map_err(|e| Error::Checkpoint(format!("truncated: {e}")))?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let nd = r.u8()? as usize;
            let dims = (0..nd).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let count = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
            let mut data = Vec::with_capacity(count);
            for _ in 0..count {
                data.push(S::from_f64(f64::from(f32::from_le_bytes(r.bytes()?))));
            }
            params.insert(name, Tensor::new(dims, data)?);
        }
        let expected = spec.param_shapes();
        for (k, shape) in &expected {
            if params.get(k).map(Tensor::shape) != Some(shape.as_slice()) {
                return Err(Error::Checkpoint(format!("block {id} parameter {k} malformed")));
            }
        }
        layers[layer].blocks.push(KnowledgeBlock {
            id,
            layer,
            params,
            created_at_task,
            is_novel: false,
        });
    }
    let spec = GraphSpec {
        input_shape,
        layers: specs,
        n_classes,
        head_init,
    };
    MetaGraph::from_parts(spec, layers, next_id, rng_seed)
}

pub fn save_checkpoint<S: Real>(graph: &MetaGraph<S>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(graph, BufWriter::new(file))
}

pub fn load_checkpoint<S: Real>(path: &Path) -> Result<MetaGraph<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Selection;
    use crate::rng::stream;

    fn grown() -> MetaGraph<f32> {
        let mut g = MetaGraph::init(GraphSpec::dense(4, &[5, 3], 2), 5).unwrap();
        g.spawn_novel_candidates(2, &mut stream(0, "spawn", 0));
        g.commit(&Selection(vec![1, 0])).unwrap();
        g
    }

    #[test]
    fn round_trip_preserves_committed_graph() {
        let g = grown();
        let mut buf = Vec::new();
        write_checkpoint(&g, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back: MetaGraph<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_magic_version_and_truncation() {
        let g = grown();
        let mut buf = Vec::new();
        write_checkpoint(&g, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint::<f32, _>(bad.as_slice()), Err(Error::Checkpoint(_))));

        let mut bad = buf.clone();
        bad[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = read_checkpoint::<f32, _>(bad.as_slice()).unwrap_err();
        assert!(err.to_string().contains("version"));

        assert!(read_checkpoint::<f32, _>(&buf[..buf.len() - 3]).is_err());
    }
}
