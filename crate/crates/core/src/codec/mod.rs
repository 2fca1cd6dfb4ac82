//! Standard-codec stage: 8-bit quantization, baseline JPEG and rate accounting.

pub mod jpeg;

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{quantize_sample, Image};

pub use jpeg::{quant_table, quality_scale, BASE_LUMA_TABLE};

/// A compressed description plus what is needed to account its rate.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitstream {
    pub bytes: Vec<u8>,
    pub quality: u8,
    pub coded_dims: (usize, usize),
    pub original_dims: (usize, usize),
}

/// Which pixel count `bpp` is normalized by.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BppBasis {
    #[default]
    Original,
    Coded,
}

impl Bitstream {
    /// Bits per pixel of the original image.
    pub fn bpp(&self) -> Result<f64> {
        self.bpp_with(BppBasis::Original)
    }

    pub fn bpp_with(&self, basis: BppBasis) -> Result<f64> {
        let (h, w) = match basis {
            BppBasis::Original => self.original_dims,
            BppBasis::Coded => self.coded_dims,
        };
        bpp(self.bytes.len(), (h, w))
    }

    /// Writes `path` (the JPEG) and its sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, &self.bytes).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        std::fs::write(&side, self.sidecar()).map_err(|e| Error::io(&side, e))
    }

    /// Reads a JPEG and its sidecar, checking that the stream matches the
    /// recorded coded size.
    pub fn read(path: impl AsRef<Path>) -> Result<Bitstream> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta = parse_sidecar(&text)?;
        let bs = Bitstream {
            bytes,
            quality: meta.quality,
            coded_dims: meta.coded_dims,
            original_dims: meta.original_dims,
        };
        let header = frame_dims(&bs.bytes)?;
        if header != bs.coded_dims {
            return Err(Error::DimensionMismatch {
                left: header,
                right: bs.coded_dims,
            });
        }
        Ok(bs)
    }

    pub fn sidecar(&self) -> String {
        format!(
            "{SIDECAR_MAGIC} {SIDECAR_VERSION}\nquality {}\ncoded {} {}\noriginal {} {}\n",
            self.quality, self.coded_dims.0, self.coded_dims.1, self.original_dims.0, self.original_dims.1
        )
    }
}

pub fn bpp(len: usize, dims: (usize, usize)) -> Result<f64> {
    let area = dims.0 * dims.1;
    if area == 0 {
        return Err(Error::InvalidArgument("bpp of a zero-area image".into()));
    }
    Ok(8.0 * len as f64 / area as f64)
}

pub const SIDECAR_MAGIC: &str = "vcodec-sidecar";
pub const SIDECAR_VERSION: u32 = 1;

/// `foo.jpg` → `foo.jpg.meta`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta");
    PathBuf::from(name)
}

struct SidecarMeta {
    quality: u8,
    coded_dims: (usize, usize),
    original_dims: (usize, usize),
}

fn parse_sidecar(text: &str) -> Result<SidecarMeta> {
    let bad = |msg: &str| Error::CorruptStream(format!("sidecar: {msg}"));
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
    if header.first() != Some(&SIDECAR_MAGIC) {
        return Err(bad("missing header"));
    }
    if header.get(1).and_then(|v| v.parse::<u32>().ok()) != Some(SIDECAR_VERSION) {
        return Err(bad("unsupported version"));
    }
    let (mut quality, mut coded, mut original) = (None, None, None);
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let nums: Vec<usize> = fields[1..]
            .iter()
            .map(|v| v.parse().map_err(|_| bad(line)))
            .collect::<Result<_>>()?;
        match (fields[0], nums.as_slice()) {
            ("quality", [q]) => quality = Some(*q),
            ("coded", [h, w]) => coded = Some((*h, *w)),
            ("original", [h, w]) => original = Some((*h, *w)),
            _ => return Err(bad(line)),
        }
    }
    let quality = quality.ok_or_else(|| bad("missing quality"))?;
    if !(1..=100).contains(&quality) {
        return Err(bad("quality out of range"));
    }
    let coded_dims = coded.ok_or_else(|| bad("missing coded dims"))?;
    let original_dims = original.ok_or_else(|| bad("missing original dims"))?;
    if coded_dims.0 * coded_dims.1 == 0 || original_dims.0 * original_dims.1 == 0 {
        return Err(bad("zero-area dims"));
    }
    Ok(SidecarMeta {
        quality: quality as u8,
        coded_dims,
        original_dims,
    })
}

/// Reads height and width from the SOF0 segment.
fn frame_dims(bytes: &[u8]) -> Result<(usize, usize)> {
    let corrupt = || Error::CorruptStream("no baseline frame header".into());
    if bytes.len() < 4 || bytes[0] != 0xff || bytes[1] != 0xd8 {
        return Err(Error::CorruptStream("missing start-of-image marker".into()));
    }
    let mut pos = 2;
    while pos + 4 <= bytes.len() {
        if bytes[pos] != 0xff {
            return Err(corrupt());
        }
        let marker = bytes[pos + 1];
        let len = u16::from_be_bytes([bytes[pos + 2], bytes[pos + 3]]) as usize;
        if marker == 0xc0 || marker == 0xc1 {
            if pos + 9 > bytes.len() {
                return Err(corrupt());
            }
            let h = u16::from_be_bytes([bytes[pos + 5], bytes[pos + 6]]) as usize;
            let w = u16::from_be_bytes([bytes[pos + 7], bytes[pos + 8]]) as usize;
            return Ok((h, w));
        }
        if marker == 0xda {
            break;
        }
        pos += 2 + len;
    }
    Err(corrupt())
}

/// Clamp to [0,1], scale by 255 and round half away from zero.
pub fn quantize8(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| quantize_sample(v)).collect()
}

pub fn dequantize8(height: usize, width: usize, samples: &[u8]) -> Result<Image> {
    Image::from_u8(height, width, samples)
}

/// Baseline-encodes an 8-bit raster.
pub fn jpeg_encode(
    samples: &[u8],
    coded_dims: (usize, usize),
    quality: u8,
    original_dims: (usize, usize),
) -> Result<Bitstream> {
    let bytes = jpeg::encode_gray(samples, coded_dims.0, coded_dims.1, quality)?;
    Ok(Bitstream {
        bytes,
        quality,
        coded_dims,
        original_dims,
    })
}

/// Decodes to an image in [0,1] with exactly `coded_dims`.
pub fn jpeg_decode(bs: &Bitstream) -> Result<Image> {
    let decoded = image::load_from_memory_with_format(&bs.bytes, image::ImageFormat::Jpeg)
        .map_err(|e| Error::CorruptStream(e.to_string()))?;
    let luma = decoded.to_luma8();
    let dims = (luma.height() as usize, luma.width() as usize);
    if dims != bs.coded_dims {
        return Err(Error::DimensionMismatch {
            left: dims,
            right: bs.coded_dims,
        });
    }
    Image::from_u8(dims.0, dims.1, luma.as_raw())
}

/// A standard codec whose only knob is an integer quality factor.
pub trait Codec {
    fn encode(&self, img: &Image, quality: u8, original_dims: (usize, usize)) -> Result<Bitstream>;
    fn decode(&self, bs: &Bitstream) -> Result<Image>;

    /// Encode then decode; returns the decoded image and the stream.
    fn round_trip(&self, img: &Image, quality: u8, original_dims: (usize, usize)) -> Result<(Image, Bitstream)> {
        let bs = self.encode(img, quality, original_dims)?;
        Ok((self.decode(&bs)?, bs))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Jpeg;

impl Codec for Jpeg {
    fn encode(&self, img: &Image, quality: u8, original_dims: (usize, usize)) -> Result<Bitstream> {
        jpeg_encode(&quantize8(img), img.dims(), quality, original_dims)
    }

    fn decode(&self, bs: &Bitstream) -> Result<Image> {
        jpeg_decode(bs)
    }
}
