//! File formats for images, class maps, stripe-id maps, depth maps and
//! point clouds.
//!
//! * RGB images: PNG or binary PPM (P6), chosen by extension.
//! * Class maps: 8-bit paletted PNG with indices Invalid=0, Green=1, Blue=2,
//!   or raw bytes (any other extension) behind a 16-byte ASCII header
//!   `CM{width:06}x{height:06}\n`.
//! * Stripe ids: 16-bit binary PGM (P5), 65535 = Invalid. Believable rows go
//!   to a text file with one `0`/`1` per line.
//! * Depth: little-endian float32 PFM (`Pf`, scale -1), NaN = Invalid,
//!   rows stored bottom to top.
//! * Point clouds: ASCII PLY with `x y z` and optional `red green blue`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::reconstruct::{DepthMap, PointCloud};
use crate::segmentation::{ClassMap, Label};
use crate::unwrap::StripeIdMap;

pub const INVALID_ID: u16 = u16::MAX;

const CLASSMAP_PALETTE: [u8; 9] = [0, 0, 0, 0, 255, 0, 0, 0, 255];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

fn image_format(path: &Path) -> Result<ImageFormat> {
    match extension(path).as_str() {
        "png" => Ok(ImageFormat::Png),
        "ppm" | "pgm" | "pnm" => Ok(ImageFormat::Pnm),
        other => Err(Error::config(format!(
            "unsupported image extension `{other}` for {} (use .png or .ppm)",
            path.display()
        ))),
    }
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let format = image_format(path)?;
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let img = image::load(reader, format).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    Ok(img.into_rgb8())
}

pub fn write_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    let encoded = match image_format(path)? {
        ImageFormat::Png => img.write_to(&mut std::io::Cursor::new(&mut buf), ImageFormat::Png),
        _ => img.write_with_encoder(
            PnmEncoder::new(&mut buf).with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary)),
        ),
    };
    encoded.map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let mut out = create(path)?;
    out.write_all(&buf)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_classmap(map: &ClassMap, path: &Path) -> Result<()> {
    let codes: Vec<u8> = map.labels.iter().map(|l| *l as u8).collect();
    let mut out = create(path)?;
    if extension(path) == "png" {
        let mut encoder = png::Encoder::new(&mut out, map.width, map.height);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(&CLASSMAP_PALETTE[..]);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::format(path, e.to_string()))?;
        writer
            .write_image_data(&codes)
            .map_err(|e| Error::format(path, e.to_string()))?;
        writer
            .finish()
            .map_err(|e| Error::format(path, e.to_string()))?;
    } else {
        let header = format!("CM{:06}x{:06}\n", map.width, map.height);
        debug_assert_eq!(header.len(), 16);
        out.write_all(header.as_bytes())
            .and_then(|_| out.write_all(&codes))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn labels_from_codes(path: &Path, width: u32, height: u32, codes: &[u8]) -> Result<ClassMap> {
    let labels = codes
        .iter()
        .map(|c| {
            Label::from_code(*c)
                .ok_or_else(|| Error::format(path, format!("invalid class code {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    ClassMap::new(width, height, labels).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_classmap(path: &Path) -> Result<ClassMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    if extension(path) == "png" {
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let info = reader.info();
        if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::format(path, "class map PNG must be 8-bit indexed"));
        }
        let (w, h) = (info.width, info.height);
        let mut buf = vec![
            0u8;
            reader
                .output_buffer_size()
                .unwrap_or(w as usize * h as usize)
        ];
        let frame = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format(path, e.to_string()))?;
        buf.truncate(frame.buffer_size());
        return labels_from_codes(path, w, h, &buf);
    }
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = || Error::format(path, "missing or malformed 16-byte class map header");
    let header = bytes.get(..16).ok_or_else(bad)?;
    let header = std::str::from_utf8(header).map_err(|_| bad())?;
    if !header.starts_with("CM") || !header.ends_with('\n') || &header[8..9] != "x" {
        return Err(bad());
    }
    let width: u32 = header[2..8].parse().map_err(|_| bad())?;
    let height: u32 = header[9..15].parse().map_err(|_| bad())?;
    labels_from_codes(path, width, height, &bytes[16..])
}

pub fn write_stripe_ids(map: &StripeIdMap, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n65535\n", map.width, map.height).into_bytes();
    bytes.reserve(2 * map.ids.len());
    for id in &map.ids {
        let v = match id {
            None => INVALID_ID,
            Some(v) if (0..INVALID_ID as i64).contains(v) => *v as u16,
            Some(v) => {
                return Err(Error::domain(format!(
                    "stripe id {v} cannot be stored in a 16-bit map"
                )))
            }
        };
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    let mut out = create(path)?;
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Whitespace-separated header tokens of a netpbm-style file (`#` comments
/// skipped) and the offset of the first data byte, which follows exactly one
/// whitespace character after the last token.
fn header_tokens<'a>(path: &Path, bytes: &'a [u8], count: usize) -> Result<(Vec<&'a str>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated header"));
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::format(path, "non-ASCII header"))?,
        );
    }
    Ok((tokens, pos + 1))
}

pub fn read_stripe_ids(path: &Path) -> Result<StripeIdMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (tokens, offset) = header_tokens(path, &bytes, 4)?;
    let bad = |why: &str| Error::format(path, why.to_string());
    if tokens[0] != "P5" || tokens[3] != "65535" {
        return Err(bad(
            "stripe id map must be a binary 16-bit PGM (P5, maxval 65535)",
        ));
    }
    let width: u32 = tokens[1].parse().map_err(|_| bad("bad PGM width"))?;
    let height: u32 = tokens[2].parse().map_err(|_| bad("bad PGM height"))?;
    let n = width as usize * height as usize;
    let body = bytes
        .get(offset..offset + 2 * n)
        .ok_or_else(|| bad("truncated PGM data"))?;
    Ok(StripeIdMap {
        width,
        height,
        ids: body
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .map(|v| (v != INVALID_ID).then_some(v as i64))
            .collect(),
        believable_rows: vec![false; height as usize],
    })
}

pub fn write_believable_rows(mask: &[bool], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    for b in mask {
        writeln!(out, "{}", u8::from(*b)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_believable_rows(path: &Path) -> Result<Vec<bool>> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    reader
        .lines()
        .map(|line| {
            let line = line.map_err(|e| Error::io(path, e))?;
            match line.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(Error::format(
                    path,
                    format!("expected 0 or 1, got `{other}`"),
                )),
            }
        })
        .collect()
}

pub fn write_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let header = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height);
    out.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    let w = depth.width as usize;
    for y in (0..depth.height as usize).rev() {
        for d in &depth.depth[y * w..(y + 1) * w] {
            let v = d.map_or(f32::NAN, |v| v as f32);
            out.write_all(&v.to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let bad = |why: &str| Error::format(path, why.to_string());
    let (fields, pos) = header_tokens(path, &bytes, 4)?;
    if fields[0] != "Pf" {
        return Err(bad("only single-channel `Pf` files are supported"));
    }
    let width: u32 = fields[1].parse().map_err(|_| bad("bad PFM width"))?;
    let height: u32 = fields[2].parse().map_err(|_| bad("bad PFM height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad PFM scale"))?;
    let little = scale < 0.0;
    let (w, h) = (width as usize, height as usize);
    let body = bytes
        .get(pos..pos + 4 * w * h)
        .ok_or_else(|| bad("truncated PFM data"))?;
    let mut depth = vec![None; w * h];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let (row, col) = (h - 1 - i / w, i % w);
        depth[row * w + col] = v.is_finite().then_some(v as f64);
    }
    Ok(DepthMap {
        width,
        height,
        depth,
    })
}

pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let colors = cloud.has_colors();
    let mut header = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        cloud.len()
    );
    if colors {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    for p in &cloud.points {
        let [x, y, z] = p.position;
        let line = match (colors, p.color) {
            (true, Some([r, g, b])) => format!("{x} {y} {z} {r} {g} {b}\n"),
            _ => format!("{x} {y} {z}\n"),
        };
        out.write_all(line.as_bytes())
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Write `contents` to `path` via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut out = create(&tmp)?;
        out.write_all(contents)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
