//! Bit-plane (LSB) steganography baseline on 8-bit quantized images.
//!
//! Payload layout: a 16-byte header, then the hidden image's 8-bit RGB bytes
//! in raster order. Header bytes: `"LSB1"`, width (u16 LE), height (u16 LE),
//! `k`, seven zero bytes. Payload bits are written MSB-first into the `k`
//! lowest bits of consecutive channel values of the cover.

use alloc::vec::Vec;

use crate::{Error, Image, Result};

pub const MAGIC: [u8; 4] = *b"LSB1";
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LsbHeader {
    pub width: u16,
    pub height: u16,
    pub bits: u8,
}

impl LsbHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.width.to_le_bytes());
        b[6..8].copy_from_slice(&self.height.to_le_bytes());
        b[8] = self.bits;
        b
    }

    /// `None` unless the magic, the reserved bytes and `k` are all valid.
    pub fn parse(b: &[u8]) -> Option<Self> {
        if b.len() < HEADER_LEN || b[0..4] != MAGIC || b[9..16].iter().any(|&v| v != 0) {
            return None;
        }
        let bits = b[8];
        if !(1..=4).contains(&bits) {
            return None;
        }
        Some(Self {
            width: u16::from_le_bytes([b[4], b[5]]),
            height: u16::from_le_bytes([b[6], b[7]]),
            bits,
        })
    }

    pub fn payload_bytes(&self) -> usize {
        HEADER_LEN + self.width as usize * self.height as usize * 3
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8
}

pub fn quantize_image(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| quantize(v)).collect()
}

fn dequantize(width: usize, height: usize, bytes: &[u8]) -> Image {
    Image::from_vec(
        width,
        height,
        bytes.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("payload size")
}

/// Capacity of a cover in bits at `k` bits per channel.
pub fn capacity_bits(cover: &Image, k: u8) -> usize {
    cover.width() * cover.height() * 3 * k as usize
}

pub fn lsb_embed(cover: &Image, hidden: &Image, k: u8) -> Result<Image> {
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidArgument(alloc::format!(
            "bit depth {k} outside 1..=4"
        )));
    }
    let (hw, hh) = hidden.dims();
    if hw > u16::MAX as usize || hh > u16::MAX as usize {
        return Err(Error::InvalidArgument(
            "hidden image too large for the header".into(),
        ));
    }
    let header = LsbHeader {
        width: hw as u16,
        height: hh as u16,
        bits: k,
    };
    let mut payload = header.to_bytes().to_vec();
    payload.extend(quantize_image(hidden));
    let needed = payload.len() * 8;
    let available = capacity_bits(cover, k);
    if needed > available {
        return Err(Error::Capacity { needed, available });
    }

    let mut channels = quantize_image(cover);
    let mask = (1u8 << k) - 1;
    let mut bits = payload
        .iter()
        .flat_map(|&byte| (0..8).rev().map(move |i| (byte >> i) & 1));
    'outer: for ch in channels.iter_mut() {
        let mut chunk = 0u8;
        for n in 0..k {
            match bits.next() {
                Some(b) => chunk = (chunk << 1) | b,
                None if n == 0 => break 'outer,
                // a partial final chunk keeps its bits MSB-aligned
                None => chunk <<= 1,
            }
        }
        *ch = (*ch & !mask) | chunk;
    }
    Ok(dequantize(cover.width(), cover.height(), &channels))
}

/// Reads `n_bytes` of payload from the `k` low bits of each channel.
fn read_bytes(channels: &[u8], k: u8, n_bytes: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(n_bytes);
    let (mut acc, mut filled) = (0u8, 0);
    'outer: for &ch in channels {
        for i in (0..k).rev() {
            acc = (acc << 1) | ((ch >> i) & 1);
            filled += 1;
            if filled == 8 {
                out.push(acc);
                (acc, filled) = (0, 0);
                if out.len() == n_bytes {
                    break 'outer;
                }
            }
        }
    }
    out
}

/// Parses the header (trying every `k`) and returns the embedded image.
pub fn lsb_extract(stego: &Image) -> Result<Image> {
    let channels = quantize_image(stego);
    for k in 1..=4u8 {
        let Some(header) = LsbHeader::parse(&read_bytes(&channels, k, HEADER_LEN)) else {
            continue;
        };
        if header.bits != k || header.width == 0 || header.height == 0 {
            continue;
        }
        if header.payload_bytes() * 8 > capacity_bits(stego, k) {
            return Err(Error::NoPayload(
                "header promises more data than the image holds",
            ));
        }
        let bytes = read_bytes(&channels, k, header.payload_bytes());
        return Ok(dequantize(
            header.width as usize,
            header.height as usize,
            &bytes[HEADER_LEN..],
        ));
    }
    Err(Error::NoPayload("LSB1 magic not found"))
}

/// Reads the payload region for known geometry, ignoring the header. This is
/// the best case for the baseline after an attack has destroyed the header.
pub fn lsb_extract_raw(stego: &Image, k: u8, width: usize, height: usize) -> Result<Image> {
    if !(1..=4).contains(&k) {
        return Err(Error::InvalidArgument(alloc::format!(
            "bit depth {k} outside 1..=4"
        )));
    }
    let n = HEADER_LEN + width * height * 3;
    if n * 8 > capacity_bits(stego, k) {
        return Err(Error::Capacity {
            needed: n * 8,
            available: capacity_bits(stego, k),
        });
    }
    let bytes = read_bytes(&quantize_image(stego), k, n);
    Ok(dequantize(width, height, &bytes[HEADER_LEN..]))
}
