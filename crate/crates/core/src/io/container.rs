use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HlqError, Result};
use crate::lut::{
    decompose_bitplanes, mirror_transform, mirrored_value, rearrange_tiles, unpack_tiles, BitPlanes, MirroredParams,
    PackedWeights, ACT_GROUP,
};
use crate::matrix::WeightMatrix;
use crate::quant::{codeword_value, BitAssignment, Format, HlqParams};

use super::write_atomic;

pub const MAGIC: &[u8; 4] = b"HLQP";
pub const FORMAT_VERSION: u32 = 1;

/// Arrangement of the bit-plane words in the payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Kernel tiles, see [`PackedWeights`].
    Tiles,
    /// Plane-major rows, see [`BitPlanes`].
    Planes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HlqpHeader {
    pub n: usize,
    pub k: usize,
    pub q: u32,
    pub g: usize,
    #[serde(rename = "gA")]
    pub g_a: usize,
    pub format: Format,
    pub layout: Layout,
    /// Scales and zeros are stored in the `+-1` form.
    pub mirrored: bool,
    pub pad_n: usize,
    pub pad_k: usize,
}

impl HlqpHeader {
    fn expected_words(&self) -> usize {
        match self.layout {
            Layout::Tiles => PackedWeights::expected_words(self.n, self.k, self.q),
            Layout::Planes => self.q as usize * self.n * self.k.div_ceil(64),
        }
    }

    fn groups(&self) -> usize {
        self.n * (self.k / self.g)
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.q == 0 || self.q > crate::quant::MAX_BITS {
            return Err(HlqError::Corrupt(format!(
                "header has invalid shape or bit width: {self:?}"
            )));
        }
        if self.g == 0 || !self.k.is_multiple_of(self.g) {
            return Err(HlqError::Corrupt(format!(
                "group size {} does not divide k={}",
                self.g, self.k
            )));
        }
        if self.g_a != ACT_GROUP {
            return Err(HlqError::Corrupt(format!(
                "activation group {} unsupported (expected {ACT_GROUP})",
                self.g_a
            )));
        }
        let (pad_n, pad_k) = padding(self.layout, self.n, self.k);
        if (self.pad_n, self.pad_k) != (pad_n, pad_k) {
            return Err(HlqError::Corrupt(format!(
                "padding ({}, {}) does not match layout (expected ({pad_n}, {pad_k}))",
                self.pad_n, self.pad_k
            )));
        }
        Ok(())
    }
}

fn padding(layout: Layout, n: usize, k: usize) -> (usize, usize) {
    match layout {
        Layout::Tiles => (
            n.next_multiple_of(crate::lut::TILE_ROWS) - n,
            k.next_multiple_of(crate::lut::TILE_COLS) - k,
        ),
        Layout::Planes => (0, k.next_multiple_of(64) - k),
    }
}

/// One quantized layer as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct HlqpContainer {
    pub header: HlqpHeader,
    pub words: Vec<u64>,
    /// `[n, k/g, q]`.
    pub scales: Vec<f32>,
    /// `[n, k/g]`.
    pub zeros: Vec<f32>,
}

impl HlqpContainer {
    /// Packs codes and parameters. With `mirrored` the `+-1` parameters are
    /// stored.
    pub fn new(
        format: Format,
        params: &HlqParams,
        bits: &BitAssignment,
        layout: Layout,
        mirrored: bool,
    ) -> Result<Self> {
        params.check()?;
        if (bits.rows, bits.cols, bits.bits) != (params.rows, params.cols, params.bits) {
            return Err(HlqError::data("codes and parameters disagree on shape or bit width"));
        }
        let planes = decompose_bitplanes(bits)?;
        let words = match layout {
            Layout::Tiles => rearrange_tiles(&planes, params.group_size)?.words,
            Layout::Planes => planes.data,
        };
        let (scales, zeros) = if mirrored {
            let m = mirror_transform(params)?;
            (m.scales, m.zeros)
        } else {
            (params.scales.clone(), params.zeros.clone())
        };
        let (pad_n, pad_k) = padding(layout, params.rows, params.cols);
        Ok(Self {
            header: HlqpHeader {
                n: params.rows,
                k: params.cols,
                q: params.bits,
                g: params.group_size,
                g_a: ACT_GROUP,
                format,
                layout,
                mirrored,
                pad_n,
                pad_k,
            },
            words,
            scales,
            zeros,
        })
    }

    pub fn planes(&self) -> Result<BitPlanes> {
        let h = &self.header;
        match h.layout {
            Layout::Tiles => unpack_tiles(&self.packed_tiles()),
            Layout::Planes => Ok(BitPlanes {
                rows: h.n,
                cols: h.k,
                bits: h.q,
                words_per_row: h.k.div_ceil(64),
                data: self.words.clone(),
            }),
        }
    }

    fn packed_tiles(&self) -> PackedWeights {
        let h = &self.header;
        PackedWeights {
            rows: h.n,
            cols: h.k,
            bits: h.q,
            group_size: h.g,
            pad_rows: h.pad_n,
            pad_cols: h.pad_k,
            words: self.words.clone(),
        }
    }

    /// Kernel layout, repacking if stored as planes.
    pub fn packed(&self) -> Result<PackedWeights> {
        match self.header.layout {
            Layout::Tiles => Ok(self.packed_tiles()),
            Layout::Planes => rearrange_tiles(&self.planes()?, self.header.g),
        }
    }

    pub fn assignment(&self) -> Result<BitAssignment> {
        Ok(self.planes()?.recompose())
    }

    /// Parameters in the `{0, 1}` form.
    pub fn params(&self) -> HlqParams {
        let h = &self.header;
        let mut p = HlqParams::zeroed(h.n, h.k, h.q, h.g);
        if h.mirrored {
            let q = h.q as usize;
            for (grp, (s_hat, &z_hat)) in self.scales.chunks_exact(q).zip(&self.zeros).enumerate() {
                let half: f64 = s_hat.iter().map(|&v| v as f64).sum();
                for (j, &v) in s_hat.iter().enumerate() {
                    p.scales[grp * q + j] = 2.0 * v;
                }
                p.zeros[grp] = (z_hat as f64 - half) as f32;
            }
        } else {
            p.scales.copy_from_slice(&self.scales);
            p.zeros.copy_from_slice(&self.zeros);
        }
        p
    }

    pub fn mirrored_params(&self) -> Result<MirroredParams> {
        let h = &self.header;
        if h.mirrored {
            Ok(MirroredParams {
                rows: h.n,
                cols: h.k,
                bits: h.q,
                group_size: h.g,
                scales: self.scales.clone(),
                zeros: self.zeros.clone(),
            })
        } else {
            mirror_transform(&self.params())
        }
    }

    /// Dense weights, evaluated in whichever parameter form is stored.
    pub fn dequantize(&self) -> Result<WeightMatrix> {
        let h = &self.header;
        let codes = self.assignment()?;
        let q = h.q as usize;
        let gpr = h.k / h.g;
        let mut out = Vec::with_capacity(h.n * h.k);
        for i in 0..h.n {
            for (c, &code) in codes.row(i).iter().enumerate() {
                let grp = i * gpr + c / h.g;
                let scales = &self.scales[grp * q..(grp + 1) * q];
                let v = if h.mirrored {
                    mirrored_value(scales, self.zeros[grp], code)
                } else {
                    codeword_value(scales, self.zeros[grp], code)
                };
                out.push(v as f32);
            }
        }
        WeightMatrix::new(h.n, h.k, out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.header.validate().map_err(|e| HlqError::data(e.to_string()))?;
        if self.words.len() != self.header.expected_words()
            || self.scales.len() != self.header.groups() * self.header.q as usize
            || self.zeros.len() != self.header.groups()
        {
            return Err(HlqError::data("container buffers do not match the header"));
        }
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out =
            Vec::with_capacity(12 + header.len() + 8 * self.words.len() + 4 * (self.scales.len() + self.zeros.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend(self.words.iter().flat_map(|w| w.to_le_bytes()));
        out.extend(self.scales.iter().flat_map(|v| v.to_le_bytes()));
        out.extend(self.zeros.iter().flat_map(|v| v.to_le_bytes()));
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(HlqError::Corrupt("bad magic (not an HLQP file)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(HlqError::UnsupportedVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let header_len = r.u32("header length")? as usize;
        let header: HlqpHeader = serde_json::from_slice(r.take(header_len, "header")?)
            .map_err(|e| HlqError::Corrupt(format!("header: {e}")))?;
        header.validate()?;
        let words = r
            .take(8 * header.expected_words(), "bit-plane words")?
            .chunks_exact(8)
            .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        let scales = r.f32s(header.groups() * header.q as usize, "scales")?;
        let zeros = r.f32s(header.groups(), "zeros")?;
        if r.pos != bytes.len() {
            return Err(HlqError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            header,
            words,
            scales,
            zeros,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, section: &str) -> Result<&'a [u8]> {
        let have = self.bytes.len() - self.pos;
        if have < len {
            return Err(HlqError::Corrupt(format!(
                "truncated {section}: need {len} bytes, {have} left"
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }

    fn f32s(&mut self, count: usize, section: &str) -> Result<Vec<f32>> {
        Ok(self
            .take(4 * count, section)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn save_hlqp(path: &Path, container: &HlqpContainer) -> Result<()> {
    write_atomic(path, &container.to_bytes()?)
}

pub fn load_hlqp(path: &Path) -> Result<HlqpContainer> {
    let bytes = std::fs::read(path).map_err(|e| HlqError::io(path, e))?;
    HlqpContainer::from_bytes(&bytes)
}
