//! Baseline sequential (ITU-T T.81) grayscale JPEG encoder.
//!
//! Uses the Annex K luminance quantization table scaled by the usual
//! quality mapping and the Annex K luminance Huffman tables, so the output
//! is readable by any baseline decoder.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Annex K luminance quantization table, natural (row-major) order.
pub const BASE_LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Natural-order index of each zigzag position.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61,
    54, 47, 55, 62, 63,
];

const DC_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const DC_VALUES: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

const AC_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
const AC_VALUES: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07, 0x22, 0x71, 0x14,
    0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09,
    0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a,
    0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65,
    0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88,
    0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9,
    0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca,
    0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea,
    0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa,
];

/// Scale percentage for a quality factor in `[1, 100]`.
pub fn quality_scale(quality: u8) -> u32 {
    let q = u32::from(quality.clamp(1, 100));
    if q < 50 {
        5000 / q
    } else {
        200 - 2 * q
    }
}

/// Quantization table (natural order) for `quality`:
/// `clamp((base·scale + 50) / 100, 1, 255)` with integer division.
pub fn quant_table(quality: u8) -> Result<[u16; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidArgument(format!("quality {quality} outside 1..=100")));
    }
    let scale = quality_scale(quality);
    Ok(BASE_LUMA_TABLE.map(|b| ((u32::from(b) * scale + 50) / 100).clamp(1, 255) as u16))
}

#[derive(Clone, Copy, Default)]
struct Code {
    bits: u16,
    len: u8,
}

struct HuffmanTable {
    codes: [Code; 256],
}

impl HuffmanTable {
    /// Canonical code assignment (T.81 Annex C).
    fn new(bits: &[u8; 16], values: &[u8]) -> Self {
        let mut codes = [Code::default(); 256];
        let mut code: u16 = 0;
        let mut k = 0;
        for (i, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                codes[values[k] as usize] = Code {
                    bits: code,
                    len: (i + 1) as u8,
                };
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        HuffmanTable { codes }
    }
}

fn tables() -> &'static (HuffmanTable, HuffmanTable) {
    static TABLES: OnceLock<(HuffmanTable, HuffmanTable)> = OnceLock::new();
    TABLES.get_or_init(|| (HuffmanTable::new(&DC_BITS, &DC_VALUES), HuffmanTable::new(&AC_BITS, &AC_VALUES)))
}

/// `cos((2x+1)uπ/16)·C(u)/2`, indexed `[u][x]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * c * (((2 * x + 1) as f64 * u as f64 * PI) / 16.0).cos();
            }
        }
        m
    })
}

fn fdct(block: &[f64; 64]) -> [f64; 64] {
    let basis = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| basis[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| basis[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    nbits: u32,
}

impl BitWriter {
    fn put(&mut self, bits: u16, len: u8) {
        if len == 0 {
            return;
        }
        self.acc = (self.acc << len) | (u32::from(bits) & ((1 << len) - 1));
        self.nbits += u32::from(len);
        while self.nbits >= 8 {
            let byte = (self.acc >> (self.nbits - 8)) as u8;
            self.out.push(byte);
            if byte == 0xff {
                self.out.push(0x00);
            }
            self.nbits -= 8;
        }
        self.acc &= (1 << self.nbits) - 1;
    }

    fn flush(&mut self) {
        if self.nbits > 0 {
            let pad = 8 - self.nbits as u8;
            self.put((1 << pad) - 1, pad);
        }
    }
}

fn magnitude(v: i32) -> (u8, u16) {
    let size = (32 - v.unsigned_abs().leading_zeros()) as u8;
    let bits = if v < 0 { (v - 1) as u16 } else { v as u16 };
    (size, bits & ((1u32 << size) - 1) as u16)
}

fn segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xff, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

fn huffman_segment(class_id: u8, bits: &[u8; 16], values: &[u8]) -> Vec<u8> {
    let mut p = vec![class_id];
    p.extend_from_slice(bits);
    p.extend_from_slice(values);
    p
}

/// Encodes an 8-bit grayscale raster as a baseline JFIF stream.
pub fn encode_gray(samples: &[u8], height: usize, width: usize, quality: u8) -> Result<Vec<u8>> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("cannot encode an empty image".into()));
    }
    if height > 65535 || width > 65535 {
        return Err(Error::InvalidArgument(format!("{height}x{width} exceeds JPEG limits")));
    }
    if samples.len() != height * width {
        return Err(Error::InvalidArgument("sample count does not match dimensions".into()));
    }
    let table = quant_table(quality)?;
    let (dc_table, ac_table) = tables();

    let mut out = Vec::with_capacity(1024 + height * width / 4);
    out.extend_from_slice(&[0xff, 0xd8]);
    segment(&mut out, 0xe0, &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0]);
    let mut dqt = vec![0u8];
    dqt.extend(ZIGZAG.iter().map(|&i| table[i] as u8));
    segment(&mut out, 0xdb, &dqt);
    let mut sof = vec![8];
    sof.extend_from_slice(&(height as u16).to_be_bytes());
    sof.extend_from_slice(&(width as u16).to_be_bytes());
    sof.extend_from_slice(&[1, 1, 0x11, 0]);
    segment(&mut out, 0xc0, &sof);
    segment(&mut out, 0xc4, &huffman_segment(0x00, &DC_BITS, &DC_VALUES));
    segment(&mut out, 0xc4, &huffman_segment(0x10, &AC_BITS, &AC_VALUES));
    segment(&mut out, 0xda, &[1, 1, 0x00, 0, 63, 0]);

    let mut writer = BitWriter {
        out,
        acc: 0,
        nbits: 0,
    };
    let mut prev_dc = 0i32;
    let mut block = [0.0f64; 64];
    for by in (0..height).step_by(8) {
        for bx in (0..width).step_by(8) {
            // edge replication pads partial blocks
            for y in 0..8 {
                let sy = (by + y).min(height - 1);
                for x in 0..8 {
                    let sx = (bx + x).min(width - 1);
                    block[y * 8 + x] = f64::from(samples[sy * width + sx]) - 128.0;
                }
            }
            let coefs = fdct(&block);
            let mut quantized = [0i32; 64];
            for (z, &natural) in ZIGZAG.iter().enumerate() {
                quantized[z] = (coefs[natural] / f64::from(table[natural])).round() as i32;
            }

            let diff = quantized[0] - prev_dc;
            prev_dc = quantized[0];
            let (size, bits) = magnitude(diff);
            let code = dc_table.codes[size as usize];
            writer.put(code.bits, code.len);
            writer.put(bits, size);

            let mut run = 0u8;
            for &v in &quantized[1..] {
                if v == 0 {
                    run += 1;
                    continue;
                }
                while run > 15 {
                    let zrl = ac_table.codes[0xf0];
                    writer.put(zrl.bits, zrl.len);
                    run -= 16;
                }
                let (size, bits) = magnitude(v);
                let code = ac_table.codes[((run << 4) | size) as usize];
                writer.put(code.bits, code.len);
                writer.put(bits, size);
                run = 0;
            }
            if run > 0 {
                let eob = ac_table.codes[0x00];
                writer.put(eob.bits, eob.len);
            }
        }
    }
    writer.flush();
    let mut out = writer.out;
    out.extend_from_slice(&[0xff, 0xd9]);
    Ok(out)
}
