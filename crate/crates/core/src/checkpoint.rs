//! Trained writer-identification models and their checkpoint files.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "SCRIPTID"
//! version      u32       FORMAT_VERSION
//! header_len   u32
//! header       header_len bytes of UTF-8, one `key=value` per line:
//!                variant, filters (comma list), kernel, pad, conv_stride,
//!                pool, fc_width, input_side, aggregation, epochs,
//!                writers (comma list)
//! tensor_count u32
//! tensors      tensor_count × { rank: u32, extents: rank × u64, values: f64 × Π extents }
//! ```
//!
//! Tensors are the network parameters in declaration order (per block: conv
//! weight, conv bias; then FC weight, FC bias if present) followed by the
//! classifier weight and bias.

use crate::aggregation::Aggregation;
use crate::error::{Error, Result};
use crate::models::{ClassifierHead, Network, NetworkSpec};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"SCRIPTID";
pub const FORMAT_VERSION: u32 = 1;

/// Feature extractor, aggregation method and writer head, plus the enrolled writer ids.
#[derive(Clone, Debug, PartialEq)]
pub struct WriterModel {
    pub network: Network,
    pub head: ClassifierHead,
    pub aggregation: Aggregation,
    pub writers: Vec<String>,
    /// epochs run by the training loop that produced this model
    pub epochs: usize,
}

impl WriterModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.network.spec();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let header = format!(
            "variant={}\nfilters={}\nkernel={}\npad={}\nconv_stride={}\npool={}\nfc_width={}\ninput_side={}\naggregation={}\nepochs={}\nwriters={}\n",
            spec.variant,
            join(&spec.block_filters),
            spec.kernel,
            spec.pad,
            spec.conv_stride,
            spec.pool,
            spec.fc_width,
            spec.input_side,
            self.aggregation,
            self.epochs,
            self.writers.join(","),
        );
        let mut tensors: Vec<&Tensor> = self.network.params();
        tensors.push(&self.head.linear.weight);
        tensors.push(&self.head.linear.bias);

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let hlen = r.u32()? as usize;
        let header =
            std::str::from_utf8(r.take(hlen)?).map_err(|_| Error::Format("checkpoint header is not UTF-8".into()))?;
        let fields: BTreeMap<&str, &str> = header.lines().filter_map(|l| l.split_once('=')).collect();
        let get =
            |k: &str| fields.get(k).copied().ok_or_else(|| Error::Format(format!("checkpoint header lacks `{k}`")));
        let num = |k: &str| -> Result<usize> {
            get(k)?.parse().map_err(|_| Error::Format(format!("checkpoint header `{k}` is not an integer")))
        };
        let filters = get("filters")?
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format("bad filter list in checkpoint".into()))?;
        let spec = NetworkSpec {
            variant: get("variant")?.parse()?,
            block_filters: filters,
            kernel: num("kernel")?,
            pad: num("pad")?,
            conv_stride: num("conv_stride")?,
            pool: num("pool")?,
            fc_width: num("fc_width")?,
            input_side: num("input_side")?,
        };
        let aggregation: Aggregation = get("aggregation")?.parse()?;
        let epochs = num("epochs")?;
        let writers: Vec<String> = match get("writers")? {
            "" => Vec::new(),
            w => w.split(',').map(str::to_string).collect(),
        };

        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
            tensors.push(Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint tensors".into()));
        }
        if tensors.len() < 2 {
            return Err(Error::Format("checkpoint lacks classifier tensors".into()));
        }
        let bias = tensors.pop().expect("checked length");
        let weight = tensors.pop().expect("checked length");
        let head = ClassifierHead::new(weight, bias).map_err(|e| Error::Format(e.to_string()))?;
        let network = Network::from_params(&spec, tensors)?;
        if head.num_writers() != writers.len() || head.depth() != spec.depth() {
            return Err(Error::Format(format!(
                "classifier is {}x{} but checkpoint lists {} writers at depth {}",
                head.num_writers(),
                head.depth(),
                writers.len(),
                spec.depth()
            )));
        }
        Ok(Self { network, head, aggregation, writers, epochs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
