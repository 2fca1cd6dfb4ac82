//! End-to-end compression with trained networks and rate-distortion tables.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{Bitstream, Codec, Jpeg};
use crate::error::{Error, Result};
use crate::imaging::{list_images, load_image, psnr, resample, ssim, Image, ResampleMethod};
use crate::networks::{load_checkpoint, NetworkKind, NetworkParams};
use crate::trainer::{DEPLOY_FDNN, DEPLOY_PPNN};

/// Full-resolution JPEG qualities of the comparison series.
pub const DEFAULT_BASELINE_QUALITIES: [u8; 5] = [2, 3, 4, 5, 10];

pub const METHOD_OURS: &str = "ours";
pub const METHOD_JPEG: &str = "jpeg";
pub const METHOD_BICUBIC: &str = "bicubic";

/// The two networks used at test time.
#[derive(Clone, Debug)]
pub struct Pipeline {
    pub fdnn: NetworkParams<f32>,
    pub ppnn: NetworkParams<f32>,
}

/// Deployable checkpoint for a quality: `q{Q}/<name>` when present, else
/// `<name>` at the top of the directory.
pub fn deployed_path(dir: &Path, name: &str, quality: Option<u8>) -> PathBuf {
    if let Some(q) = quality {
        let specific = dir.join(format!("q{q}")).join(name);
        if specific.exists() {
            return specific;
        }
    }
    dir.join(name)
}

pub fn load_fdnn(dir: &Path, quality: Option<u8>) -> Result<NetworkParams<f32>> {
    load_checkpoint(deployed_path(dir, DEPLOY_FDNN, quality), NetworkKind::Fdnn)
}

pub fn load_ppnn(dir: &Path, quality: Option<u8>) -> Result<NetworkParams<f32>> {
    load_checkpoint(deployed_path(dir, DEPLOY_PPNN, quality), NetworkKind::Ppnn)
}

impl Pipeline {
    pub fn load(dir: &Path, quality: Option<u8>) -> Result<Self> {
        Ok(Pipeline {
            fdnn: load_fdnn(dir, quality)?,
            ppnn: load_ppnn(dir, quality)?,
        })
    }

    pub fn compress(&self, x: &Image, quality: u8) -> Result<Bitstream> {
        compress_image(x, &self.fdnn, quality)
    }

    pub fn decompress(&self, bs: &Bitstream) -> Result<Image> {
        decompress_stream(bs, &self.ppnn)
    }

    /// Compress then restore; the restored image is 8-bit quantized as it
    /// would be written to disk.
    pub fn round_trip(&self, x: &Image, quality: u8) -> Result<(Image, Bitstream)> {
        let bs = self.compress(x, quality)?;
        Ok((self.decompress(&bs)?, bs))
    }
}

/// JPEG of `quantize8(f(X))`, accounted against the dimensions of `X`.
pub fn compress_image(x: &Image, fdnn: &NetworkParams<f32>, quality: u8) -> Result<Bitstream> {
    if fdnn.kind() != NetworkKind::Fdnn {
        return Err(Error::SpecMismatch {
            expected: NetworkKind::Fdnn.to_string(),
            found: fdnn.kind().to_string(),
        });
    }
    let y = fdnn.forward(x)?;
    Jpeg.encode(&y, quality, x.dims())
}

/// `h(Z)` clamped to [0,1] and quantized to 8 bits, at the original size.
pub fn decompress_stream(bs: &Bitstream, ppnn: &NetworkParams<f32>) -> Result<Image> {
    if ppnn.kind() != NetworkKind::Ppnn {
        return Err(Error::SpecMismatch {
            expected: NetworkKind::Ppnn.to_string(),
            found: ppnn.kind().to_string(),
        });
    }
    let (h, w) = bs.coded_dims;
    if (2 * h, 2 * w) != bs.original_dims {
        return Err(Error::DimensionMismatch {
            left: (2 * h, 2 * w),
            right: bs.original_dims,
        });
    }
    let z = Jpeg.decode(bs)?;
    let restored = ppnn.forward(&z)?;
    Image::from_u8(h * 2, w * 2, &restored.to_u8())
}

/// Bicubic half-size downsample, JPEG, bicubic upsample.
pub fn bicubic_round_trip(x: &Image, quality: u8) -> Result<(Image, Bitstream)> {
    if x.height() % 2 != 0 || x.width() % 2 != 0 {
        return Err(Error::OddDimensions {
            height: x.height(),
            width: x.width(),
        });
    }
    let y = resample(x, 0.5, ResampleMethod::Bicubic)?;
    let (z, bs) = Jpeg.round_trip(&y, quality, x.dims())?;
    let up = resample(&z, 2.0, ResampleMethod::Bicubic)?;
    Ok((Image::from_u8(x.height(), x.width(), &up.to_u8())?, bs))
}

/// Plain JPEG at full resolution.
pub fn jpeg_round_trip(x: &Image, quality: u8) -> Result<(Image, Bitstream)> {
    Jpeg.round_trip(x, quality, x.dims())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub method: String,
    pub quality: u8,
    pub psnr_db: f64,
    pub ssim: f64,
    pub bpp: f64,
}

impl EvalRecord {
    pub fn measure(image_id: &str, method: &str, quality: u8, x: &Image, restored: &Image, bs: &Bitstream) -> Result<Self> {
        Ok(EvalRecord {
            image_id: image_id.to_string(),
            method: method.to_string(),
            quality,
            psnr_db: psnr(x, restored)?,
            ssim: ssim(x, restored)?,
            bpp: bs.bpp()?,
        })
    }
}

/// What `rd_curve` evaluates.
#[derive(Clone, Debug)]
pub struct RdOptions {
    /// Operating points of the trained pipeline.
    pub qualities: Vec<u8>,
    /// Full-resolution JPEG series.
    pub baseline_qualities: Vec<u8>,
    /// Also emit the bicubic→JPEG→bicubic series at `qualities`.
    pub bicubic: bool,
    /// Append one mean row per (method, quality) with image id `mean`.
    pub mean_rows: bool,
}

impl Default for RdOptions {
    fn default() -> Self {
        RdOptions {
            qualities: vec![5, 10, 20, 40],
            baseline_qualities: DEFAULT_BASELINE_QUALITIES.to_vec(),
            bicubic: true,
            mean_rows: false,
        }
    }
}

pub fn image_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Rate-distortion rows for every test image, sorted by image id, method
/// and quality. Checkpoints come from `checkpoint_dir` (per-quality
/// subdirectories take precedence).
pub fn rd_curve(test_dir: &Path, checkpoint_dir: &Path, opts: &RdOptions) -> Result<Vec<EvalRecord>> {
    let paths = list_images(test_dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no images in {}", test_dir.display())));
    }
    let mut pipelines = Vec::new();
    for &q in &opts.qualities {
        pipelines.push((q, Pipeline::load(checkpoint_dir, Some(q))?));
    }
    let mut images = Vec::new();
    for path in &paths {
        images.push((image_id(path), load_image(path)?));
    }
    rd_records(&images, &pipelines, opts)
}

/// Like [`rd_curve`] with images and pipelines already in memory.
pub fn rd_records(images: &[(String, Image)], pipelines: &[(u8, Pipeline)], opts: &RdOptions) -> Result<Vec<EvalRecord>> {
    let mut rows = Vec::new();
    for (id, x) in images {
        for (q, pipeline) in pipelines {
            let (restored, bs) = pipeline.round_trip(x, *q)?;
            rows.push(EvalRecord::measure(id, METHOD_OURS, *q, x, &restored, &bs)?);
            if opts.bicubic {
                let (restored, bs) = bicubic_round_trip(x, *q)?;
                rows.push(EvalRecord::measure(id, METHOD_BICUBIC, *q, x, &restored, &bs)?);
            }
        }
        for &q in &opts.baseline_qualities {
            let (restored, bs) = jpeg_round_trip(x, q)?;
            rows.push(EvalRecord::measure(id, METHOD_JPEG, q, x, &restored, &bs)?);
        }
    }
    rows.sort_by(|a, b| {
        (&a.image_id, &a.method, a.quality).cmp(&(&b.image_id, &b.method, b.quality))
    });
    if opts.mean_rows {
        rows.extend(mean_rows(&rows));
    }
    Ok(rows)
}

/// Per (method, quality) averages.
pub fn mean_rows(rows: &[EvalRecord]) -> Vec<EvalRecord> {
    let mut keys: Vec<(String, u8)> = rows.iter().map(|r| (r.method.clone(), r.quality)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, quality)| {
            let group: Vec<&EvalRecord> = rows.iter().filter(|r| r.method == method && r.quality == quality).collect();
            let n = group.len() as f64;
            EvalRecord {
                image_id: "mean".into(),
                method,
                quality,
                psnr_db: group.iter().map(|r| r.psnr_db).sum::<f64>() / n,
                ssim: group.iter().map(|r| r.ssim).sum::<f64>() / n,
                bpp: group.iter().map(|r| r.bpp).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn write_records(rows: &[EvalRecord], out: impl Write) -> Result<()> {
    let to_err = |e: csv::Error| Error::Io {
        path: PathBuf::from("<csv>"),
        source: std::io::Error::other(e),
    };
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub fn read_records(input: impl std::io::Read) -> Result<Vec<EvalRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(|e| Error::InvalidArgument(format!("bad record: {e}"))))
        .collect()
}

/// Result of compressing one file.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressSummary {
    pub output: PathBuf,
    pub coded_dims: (usize, usize),
    pub original_dims: (usize, usize),
    pub bytes: usize,
    pub bpp: f64,
}

/// Reads an image, writes `output` (JPEG) and its sidecar.
pub fn compress_file(input: &Path, checkpoint_dir: &Path, quality: u8, output: &Path) -> Result<CompressSummary> {
    let x = load_image(input)?;
    let fdnn = load_fdnn(checkpoint_dir, Some(quality))?;
    let bs = compress_image(&x, &fdnn, quality)?;
    bs.write(output)?;
    Ok(CompressSummary {
        output: output.to_path_buf(),
        coded_dims: bs.coded_dims,
        original_dims: bs.original_dims,
        bytes: bs.bytes.len(),
        bpp: bs.bpp()?,
    })
}

/// Reads a JPEG and sidecar, writes the restored 8-bit image to `output`.
pub fn decompress_file(input: &Path, checkpoint_dir: &Path, output: &Path) -> Result<(usize, usize)> {
    let bs = Bitstream::read(input)?;
    let ppnn = load_ppnn(checkpoint_dir, Some(bs.quality))?;
    let restored = decompress_stream(&bs, &ppnn)?;
    restored.save(output)?;
    Ok(restored.dims())
}
