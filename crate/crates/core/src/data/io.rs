//! Readers and writers for PPM (P6), PNG, PFM (Pf) and 16-bit PGM (P5),
//! plus the on-disk dataset layout.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::map::DepthMap;
use crate::tensor::Tensor;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Loads an 8-bit PPM (P6) or PNG as a `[3, H, W]` tensor in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io("image", format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(&bytes)
    } else {
        Err(Error::io(
            "image",
            format!("{}: not a P6 PPM or PNG file", path.display()),
        ))
    }
}

/// Netpbm header: magic, whitespace-separated fields, `#` comments.
struct PnmHeader {
    magic: [u8; 2],
    fields: Vec<usize>,
    comments: Vec<String>,
    data_offset: usize,
}

fn parse_pnm_header(bytes: &[u8], n_fields: usize, format: &'static str) -> Result<PnmHeader> {
    if bytes.len() < 2 {
        return Err(Error::io(format, "file too short for a header"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = Vec::with_capacity(n_fields);
    let mut comments = Vec::new();
    while fields.len() < n_fields {
        match bytes.get(pos) {
            None => return Err(Error::io(format, "truncated header")),
            Some(b'#') => {
                let end = bytes[pos..]
                    .iter()
                    .position(|&b| b == b'\n')
                    .map_or(bytes.len(), |p| pos + p);
                comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
                pos = end;
            }
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b) if b.is_ascii_digit() => {
                let start = pos;
                while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
                    pos += 1;
                }
                let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
                fields.push(
                    text.parse()
                        .map_err(|_| Error::io(format, format!("header value `{text}` too large")))?,
                );
            }
            Some(&b) => {
                return Err(Error::io(
                    format,
                    format!("unexpected byte 0x{b:02x} in header"),
                ))
            }
        }
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::io(format, "missing whitespace after header")),
    }
    Ok(PnmHeader {
        magic,
        fields,
        comments,
        data_offset: pos,
    })
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let hdr = parse_pnm_header(bytes, 3, "PPM")?;
    if &hdr.magic != b"P6" {
        return Err(Error::io("PPM", "only binary P6 is supported"));
    }
    let [w, h, maxval] = hdr.fields[..] else { unreachable!() };
    if maxval != 255 {
        return Err(Error::io("PPM", format!("only 8-bit PPM is supported (maxval {maxval})")));
    }
    let n = w * h;
    let raster = &bytes[hdr.data_offset..];
    if raster.len() < 3 * n {
        return Err(Error::io(
            "PPM",
            format!("truncated raster: {} of {} bytes", raster.len(), 3 * n),
        ));
    }
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = raster[3 * i + c] as f64 / 255.0;
        }
    }
    Tensor::new([3, h, w], data)
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::dim(format!("PPM needs 3 channels, got {c}")));
    }
    let n = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * n);
    let d = image.data();
    for i in 0..n {
        for ch in 0..3 {
            out.push((d[ch * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn save_ppm(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_ppm(image)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io("PPM", format!("{}: {e}", path.as_ref().display())))
}

fn decode_png(bytes: &[u8]) -> Result<Tensor> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::io("PNG", e))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::io("PNG", "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::io("PNG", e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let (sample_bytes, max) = match info.bit_depth {
        png::BitDepth::Eight => (1, 255.0),
        png::BitDepth::Sixteen => (2, 65535.0),
        other => return Err(Error::io("PNG", format!("unsupported bit depth {other:?}"))),
    };
    let sample = |i: usize| -> f64 {
        if sample_bytes == 1 {
            buf[i] as f64 / max
        } else {
            u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]]) as f64 / max
        }
    };
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            // grey (+alpha) replicates the first sample
            let src = if channels < 3 { 0 } else { c };
            data[c * n + i] = sample(i * channels + src);
        }
    }
    Tensor::new([3, h, w], data)
}

/// Raw PFM grayscale raster, top row first.
pub fn decode_pfm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    if !bytes.starts_with(b"Pf") {
        let what = if bytes.starts_with(b"PF") { "colour PF is not supported" } else { "missing Pf magic" };
        return Err(Error::io("PFM", what));
    }
    // header: "Pf" ws width ws height ws scale single-ws
    let mut tokens = Vec::with_capacity(3);
    let mut pos = 2;
    while tokens.len() < 3 {
        while bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            pos += 1;
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::io("PFM", "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::io("PFM", "missing whitespace after header"));
    }
    pos += 1;
    let w: usize = tokens[0].parse().map_err(|_| Error::io("PFM", format!("bad width `{}`", tokens[0])))?;
    let h: usize = tokens[1].parse().map_err(|_| Error::io("PFM", format!("bad height `{}`", tokens[1])))?;
    let scale: f64 = tokens[2].parse().map_err(|_| Error::io("PFM", format!("bad scale `{}`", tokens[2])))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::io("PFM", "scale must be non-zero"));
    }
    let little = scale < 0.0;
    let raster = &bytes[pos..];
    if raster.len() < 4 * w * h {
        return Err(Error::io("PFM", format!("truncated raster: {} of {} bytes", raster.len(), 4 * w * h)));
    }
    let mut data = vec![0.0; w * h];
    // rows are stored bottom-to-top
    for (row_in_file, chunk) in raster[..4 * w * h].chunks_exact(4 * w).enumerate() {
        let y = h - 1 - row_in_file;
        for (x, b) in chunk.chunks_exact(4).enumerate() {
            let b: [u8; 4] = b.try_into().expect("4-byte sample");
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            data[y * w + x] = v as f64;
        }
    }
    Ok((h, w, data))
}

/// Little-endian PFM (scale −1), rows bottom-to-top.
pub fn encode_pfm(height: usize, width: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::dim("PFM raster does not match dims"));
    }
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(4 * values.len());
    for y in (0..height).rev() {
        for &v in &values[y * width..(y + 1) * width] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_pfm(height: usize, width: usize, values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_pfm(height, width, values)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io("PFM", format!("{}: {e}", path.as_ref().display())))
}

pub fn load_pfm(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io("PFM", format!("{}: {e}", path.as_ref().display())))?;
    decode_pfm(&bytes)
}

/// 16-bit big-endian PGM; depth is `sample × scale`, with the scale taken
/// from a `# scale <s>` header comment (default 1). Sample 0 is invalid.
pub fn decode_pgm16(bytes: &[u8]) -> Result<DepthMap> {
    let hdr = parse_pnm_header(bytes, 3, "PGM")?;
    if &hdr.magic != b"P5" {
        return Err(Error::io("PGM", "only binary P5 is supported"));
    }
    let [w, h, maxval] = hdr.fields[..] else { unreachable!() };
    if !(256..=65535).contains(&maxval) {
        return Err(Error::io("PGM", format!("expected a 16-bit PGM, maxval is {maxval}")));
    }
    let mut scale = 1.0;
    for c in &hdr.comments {
        if let Some(s) = c.strip_prefix("scale") {
            scale = s
                .trim()
                .parse()
                .map_err(|_| Error::io("PGM", format!("bad scale comment `{c}`")))?;
        }
    }
    let raster = &bytes[hdr.data_offset..];
    if raster.len() < 2 * w * h {
        return Err(Error::io("PGM", "truncated raster"));
    }
    let samples: Vec<u16> = raster[..2 * w * h]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    let values = samples.iter().map(|&s| s as f64 * scale).collect();
    let mask = samples.iter().map(|&s| s != 0).collect();
    DepthMap::new(h, w, values, mask)
}

/// Encodes with `scale = max / 65535` so the full 16-bit range is used.
pub fn encode_pgm16(map: &DepthMap) -> Vec<u8> {
    let max = map
        .values()
        .iter()
        .zip(map.mask())
        .filter(|(v, &m)| m && v.is_finite() && **v > 0.0)
        .map(|(v, _)| *v)
        .fold(0.0, f64::max);
    let scale = if max > 0.0 { max / 65535.0 } else { 1.0 };
    let (h, w) = map.dims();
    let mut out = format!("P5\n# scale {scale:e}\n{w} {h}\n65535\n").into_bytes();
    for (&v, &m) in map.values().iter().zip(map.mask()) {
        let s = if m && v.is_finite() && v > 0.0 {
            ((v / scale).round() as u32).clamp(1, 65535) as u16
        } else {
            0
        };
        out.extend_from_slice(&s.to_be_bytes());
    }
    out
}

/// Loads a depth map from PFM or 16-bit PGM. Non-positive and non-finite
/// values are masked invalid.
pub fn load_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io("depth", format!("{}: {e}", path.display())))?;
    if bytes.starts_with(b"Pf") || bytes.starts_with(b"PF") {
        let (h, w, values) = decode_pfm(&bytes)?;
        let mask = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        DepthMap::new(h, w, values, mask)
    } else if bytes.starts_with(b"P5") {
        decode_pgm16(&bytes)
    } else {
        Err(Error::io("depth", format!("{}: not a PFM or PGM file", path.display())))
    }
}

/// Writes PGM for a `.pgm` extension, PFM otherwise. Invalid pixels are
/// stored as 0.
pub fn save_depth(map: &DepthMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        encode_pgm16(map)
    } else {
        let values: Vec<f64> = map
            .values()
            .iter()
            .zip(map.mask())
            .map(|(&v, &m)| if m { v } else { 0.0 })
            .collect();
        encode_pfm(map.height(), map.width(), &values)?
    };
    fs::write(path, bytes).map_err(|e| Error::io("depth", format!("{}: {e}", path.display())))
}

/// One dataset entry: `<id>_rgb.ppm`, `<id>_depth.pfm`, optional
/// `<id>_teleL.ppm` / `<id>_teleR.ppm`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub rgb: PathBuf,
    pub depth: PathBuf,
    pub tele_pair: Option<(PathBuf, PathBuf)>,
}

/// Lists dataset entries sorted by id.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let root = root.as_ref();
    let dir = fs::read_dir(root).map_err(|e| Error::io("dataset", format!("{}: {e}", root.display())))?;
    let mut ids = Vec::new();
    for entry in dir {
        let entry = entry.map_err(|e| Error::io("dataset", e))?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(id) = name.strip_suffix("_rgb.ppm") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let depth = root.join(format!("{id}_depth.pfm"));
        if !depth.exists() {
            return Err(Error::io("dataset", format!("missing {}", depth.display())));
        }
        let l = root.join(format!("{id}_teleL.ppm"));
        let r = root.join(format!("{id}_teleR.ppm"));
        let tele_pair = (l.exists() && r.exists()).then_some((l, r));
        out.push(DatasetEntry {
            rgb: root.join(format!("{id}_rgb.ppm")),
            depth,
            tele_pair,
            id,
        });
    }
    if out.is_empty() {
        return Err(Error::io("dataset", format!("no *_rgb.ppm files in {}", root.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_black_white() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 0, 0, 255, 255, 255]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
    }

    #[test]
    fn ppm_comments_and_truncation() {
        let mut bytes = b"P6\n# made by hand\n1 1 # trailing\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30]);
        assert!(decode_ppm(&bytes).is_ok());
        bytes.pop();
        let err = decode_ppm(&bytes).unwrap_err();
        assert!(matches!(err, Error::Io { format: "PPM", .. }));
        assert!(decode_ppm(b"P6\n2").is_err());
    }

    #[test]
    fn pfm_value_and_row_order() {
        let bytes = encode_pfm(2, 1, &[2.5, -1.0]).unwrap();
        assert!(bytes.starts_with(b"Pf\n1 2\n-1.0\n"));
        // bottom row first in the file
        assert_eq!(&bytes[bytes.len() - 8..bytes.len() - 4], &(-1.0f32).to_le_bytes());
        let (h, w, v) = decode_pfm(&bytes).unwrap();
        assert_eq!((h, w), (2, 1));
        assert_eq!(v, vec![2.5, -1.0]);
        assert!(decode_pfm(b"Pf\n1 1\n-1.0\n\x00").is_err());
        assert!(decode_pfm(b"PF\n1 1\n-1.0\n").is_err());
    }

    #[test]
    fn pfm_big_endian() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&3.25f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().2, vec![3.25]);
    }

    #[test]
    fn pgm_zero_is_invalid_and_scale_applies() {
        let mut bytes = b"P5\n# scale 0.5\n3 1\n65535\n".to_vec();
        for s in [0u16, 4, 65535] {
            bytes.extend_from_slice(&s.to_be_bytes());
        }
        let m = decode_pgm16(&bytes).unwrap();
        assert_eq!(m.mask(), &[false, true, true]);
        assert_eq!(m.values()[1], 2.0);
        assert_eq!(m.values()[2], 65535.0 * 0.5);
        assert!(decode_pgm16(b"P5\n1 1\n255\n\x00").is_err());
    }

    #[test]
    fn pgm_round_trip_within_quantisation() {
        let vals = vec![0.5, 3.0, 7.25, 10.0];
        let mut m = DepthMap::dense(2, 2, vals.clone()).unwrap();
        m.mask_mut()[1] = false;
        let back = decode_pgm16(&encode_pgm16(&m)).unwrap();
        assert_eq!(back.mask(), m.mask());
        for i in [0, 2, 3] {
            assert!((back.values()[i] - vals[i]).abs() <= 10.0 / 65535.0);
        }
    }
}
