//! PNG (8-bit) and PFM (32-bit float, little-endian) codecs for the grid types.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DepthField, ImagePlane};

/// Dense float raster as stored in a PFM file, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct FloatRaster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

pub fn write_pfm(path: &Path, raster: &FloatRaster) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let tag = if raster.channels == 3 { "PF" } else { "Pf" };
    let mut bytes = format!("{tag}\n{} {}\n-1.0\n", raster.width, raster.height).into_bytes();
    let row = raster.width * raster.channels;
    // PFM stores the bottom row first.
    for y in (0..raster.height).rev() {
        for v in &raster.data[y * row..(y + 1) * row] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<FloatRaster> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    // Magic, width, height and scale, possibly spread over several lines.
    let mut header = Vec::new();
    while header.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| Error::io(path, e))? == 0 {
            return Err(Error::format(path, "truncated header"));
        }
        header.extend(line.split_whitespace().map(str::to_owned));
    }
    let channels = match header[0].as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format(path, format!("bad magic {other:?}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::format(path, "bad dimensions"));
    let width = parse(&header[1])?;
    let height = parse(&header[2])?;
    let scale: f64 = header[3].parse().map_err(|_| Error::format(path, "bad scale"))?;
    let little = scale < 0.0;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    let n = width * height * channels;
    if raw.len() != n * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", n * 4, raw.len()),
        ));
    }
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row = width * channels;
    let mut data = Vec::with_capacity(n);
    for y in (0..height).rev() {
        data.extend_from_slice(&values[y * row..(y + 1) * row]);
    }
    Ok(FloatRaster {
        width,
        height,
        channels,
        data,
    })
}

/// Writes metric depth (not log-depth) as a single-channel PFM.
pub fn write_depth_pfm(path: &Path, depth: &DepthField) -> Result<()> {
    write_depth_values_pfm(path, depth.width(), depth.height(), &depth.depths())
}

pub fn write_depth_values_pfm(path: &Path, width: usize, height: usize, depth: &[f64]) -> Result<()> {
    write_pfm(
        path,
        &FloatRaster {
            width,
            height,
            channels: 1,
            data: depth.iter().map(|d| *d as f32).collect(),
        },
    )
}

/// Reads a single-channel depth PFM as raw metric values (zeros allowed).
pub fn read_depth_values_pfm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let raster = read_pfm(path)?;
    if raster.channels != 1 {
        return Err(Error::format(path, "depth PFM must have one channel"));
    }
    Ok((
        raster.width,
        raster.height,
        raster.data.iter().map(|v| *v as f64).collect(),
    ))
}

pub fn read_depth_pfm(path: &Path) -> Result<DepthField> {
    let (w, h, values) = read_depth_values_pfm(path)?;
    DepthField::from_depth(w, h, &values).map_err(|e| Error::format(path, e.to_string()))
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let w = BufWriter::new(file);
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e.to_string()))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::format(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::format(path, e.to_string()))
}

fn decode_png(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, e.to_string()))?;
    buf.truncate(info.buffer_size());
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::format(path, "indexed PNG not expanded"));
        }
    };
    Ok((info.width as usize, info.height as usize, channels, buf))
}

pub fn write_image_png(path: &Path, image: &ImagePlane) -> Result<()> {
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let color = if image.channels() == 3 {
        png::ColorType::Rgb
    } else {
        png::ColorType::Grayscale
    };
    encode_png(path, image.width(), image.height(), color, &bytes)
}

pub fn read_image_png(path: &Path) -> Result<ImagePlane> {
    let (w, h, c, buf) = decode_png(path)?;
    let (keep, stride) = match c {
        1 | 2 => (1, c),
        _ => (3, c),
    };
    let mut data = Vec::with_capacity(w * h * keep);
    for px in buf.chunks_exact(stride) {
        for v in &px[..keep] {
            data.push(*v as f64 / 255.0);
        }
    }
    ImagePlane::new(w, h, keep, data)
}

pub fn write_mask_png(path: &Path, mask: &BinaryMask) -> Result<()> {
    let bytes: Vec<u8> = mask.bits().iter().map(|b| if *b { 255 } else { 0 }).collect();
    encode_png(path, mask.width(), mask.height(), png::ColorType::Grayscale, &bytes)
}

/// Reads a mask PNG; first-channel values above 127 are set bits.
pub fn read_mask_png(path: &Path) -> Result<BinaryMask> {
    let (w, h, c, buf) = decode_png(path)?;
    let bits = buf.chunks_exact(c).map(|px| px[0] > 127).collect();
    BinaryMask::new(w, h, bits)
}

pub fn write_json(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
