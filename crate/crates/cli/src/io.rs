//! PFM, PNG, PLY and CSV readers and writers.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use stereogc::geometry::PointCloud;
use stereogc::{BinaryMask, DepthMap, DisparityField, ImagePlane};

use crate::error::{HarnessError, HarnessResult};

fn open(path: &Path) -> HarnessResult<fs::File> {
    fs::File::open(path).map_err(|e| HarnessError::io(path, e))
}

fn create(path: &Path) -> HarnessResult<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| HarnessError::io(path, e))?))
}

fn format_err(path: &Path, msg: impl Into<String>) -> HarnessError {
    HarnessError::Format { path: PathBuf::from(path), detail: msg.into() }
}

/// A float raster as stored in PFM: row-major, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// 1 or 3.
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn from_f64(height: usize, width: usize, channels: usize, values: &[f64]) -> Self {
        Self { width, height, channels, data: values.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Writes little-endian PFM (`Pf` grey or `PF` colour, scale -1.0, rows
/// stored bottom to top).
pub fn write_pfm(path: &Path, img: &PfmImage) -> HarnessResult<()> {
    assert_eq!(img.data.len(), img.width * img.height * img.channels);
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(format_err(path, format!("PFM supports 1 or 3 channels, not {c}"))),
    };
    let mut out = create(path)?;
    let row_len = img.width * img.channels;
    let mut bytes = Vec::with_capacity(img.data.len() * 4 + 32);
    write!(bytes, "{tag}\n{} {}\n-1.0\n", img.width, img.height).expect("in-memory write");
    for row in img.data.chunks(row_len).rev() {
        for v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&bytes).and_then(|_| out.flush()).map_err(|e| HarnessError::io(path, e))
}

fn header_token(r: &mut impl BufRead, path: &Path) -> HarnessResult<String> {
    let mut tok = Vec::new();
    loop {
        let mut b = [0u8];
        if r.read(&mut b).map_err(|e| HarnessError::io(path, e))? == 0 {
            return Err(format_err(path, "truncated PFM header"));
        }
        if b[0].is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(b[0]);
        if tok.len() > 64 {
            return Err(format_err(path, "malformed PFM header"));
        }
    }
    String::from_utf8(tok).map_err(|_| format_err(path, "non-ASCII PFM header"))
}

pub fn read_pfm(path: &Path) -> HarnessResult<PfmImage> {
    let mut r = BufReader::new(open(path)?);
    let channels = match header_token(&mut r, path)?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(format_err(path, format!("not a PFM file (magic '{t}')"))),
    };
    let parse_dim = |s: String| s.parse::<usize>().map_err(|_| format_err(path, format!("bad PFM dimension '{s}'")));
    let width = parse_dim(header_token(&mut r, path)?)?;
    let height = parse_dim(header_token(&mut r, path)?)?;
    let scale_tok = header_token(&mut r, path)?;
    let scale: f64 = scale_tok.parse().map_err(|_| format_err(path, format!("bad PFM scale '{scale_tok}'")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err(path, "PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| HarnessError::io(path, e))?;
    if raw.len() != n * 4 {
        return Err(format_err(path, format!("expected {} bytes of samples, found {}", n * 4, raw.len())));
    }
    let samples: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| {
            let b = [c[0], c[1], c[2], c[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let row_len = width * channels;
    let mut data = Vec::with_capacity(n);
    if row_len > 0 {
        for row in samples.chunks(row_len).rev() {
            data.extend_from_slice(row);
        }
    }
    Ok(PfmImage { width, height, channels, data })
}

pub fn write_disparity(path: &Path, d: &DisparityField) -> HarnessResult<()> {
    write_pfm(path, &PfmImage::from_f64(d.height(), d.width(), 1, d.values()))
}

pub fn read_disparity(path: &Path) -> HarnessResult<DisparityField> {
    let img = read_single_channel(path)?;
    Ok(DisparityField::new(img.height, img.width, img.to_f64())?)
}

/// Invalid pixels are stored as 0.
pub fn write_depth(path: &Path, d: &DepthMap) -> HarnessResult<()> {
    write_pfm(path, &PfmImage::from_f64(d.height(), d.width(), 1, d.values()))
}

/// Non-positive and non-finite samples become invalid pixels.
pub fn read_depth(path: &Path) -> HarnessResult<DepthMap> {
    let img = read_single_channel(path)?;
    Ok(DepthMap::from_values(img.height, img.width, img.to_f64())?)
}

fn read_single_channel(path: &Path) -> HarnessResult<PfmImage> {
    let img = read_pfm(path)?;
    if img.channels != 1 {
        return Err(format_err(path, "expected a single-channel PFM"));
    }
    Ok(img)
}

fn png_encoder<'a>(
    out: BufWriter<fs::File>,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
) -> png::Encoder<'a, BufWriter<fs::File>> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    enc
}

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> HarnessResult<()> {
    let enc = png_encoder(create(path)?, width, height, color, depth);
    let mut w = enc.write_header().map_err(|e| format_err(path, e.to_string()))?;
    w.write_image_data(bytes).map_err(|e| format_err(path, e.to_string()))?;
    w.finish().map_err(|e| format_err(path, e.to_string()))
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Rounds every sample to the nearest 16-bit level, as a 16-bit PNG
/// round trip would.
pub fn quantize16(img: &ImagePlane) -> ImagePlane {
    let data = img.data().iter().map(|&v| quantize(v, 65535.0) / 65535.0).collect();
    ImagePlane::new(img.height(), img.width(), img.channels(), data).expect("quantized values stay in [0, 1]")
}

/// 16-bit grey or RGB PNG, big-endian samples as the format requires.
pub fn write_image_png16(path: &Path, img: &ImagePlane) -> HarnessResult<()> {
    let color = match img.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(format_err(path, format!("cannot store {c}-channel image as PNG"))),
    };
    let bytes: Vec<u8> = img.data().iter().flat_map(|&v| (quantize(v, 65535.0) as u16).to_be_bytes()).collect();
    write_png(path, img.width(), img.height(), color, png::BitDepth::Sixteen, &bytes)
}

/// 8-bit grey PNG of values in [0, 1].
pub fn write_gray_png8(path: &Path, img: &ImagePlane) -> HarnessResult<()> {
    if img.channels() != 1 {
        return Err(format_err(path, "8-bit pattern output expects one channel"));
    }
    let bytes: Vec<u8> = img.data().iter().map(|&v| quantize(v, 255.0) as u8).collect();
    write_png(path, img.width(), img.height(), png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)
}

/// Reads an 8- or 16-bit grey, grey+alpha, RGB or RGBA PNG into [0, 1].
/// Alpha is dropped; grey stays single-channel.
pub fn read_image_png(path: &Path) -> HarnessResult<ImagePlane> {
    let dec = png::Decoder::new(open(path)?);
    let mut reader = dec.read_info().map_err(|e| format_err(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| format_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (stored, kept) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(format_err(path, "palette PNGs are not supported")),
    };
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| f64::from(b) / 255.0).collect(),
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])) / 65535.0)
            .collect(),
        d => return Err(format_err(path, format!("unsupported bit depth {d:?}"))),
    };
    let data: Vec<f64> = samples.chunks_exact(stored).flat_map(|px| px[..kept].to_vec()).collect();
    Ok(ImagePlane::new(h, w, kept, data)?)
}

/// Depth as 16-bit grey PNG with `value = round(depth * scale)`; invalid
/// pixels are 0.
pub fn write_depth_png16(path: &Path, d: &DepthMap, scale: f64) -> HarnessResult<()> {
    let bytes: Vec<u8> = d
        .values()
        .iter()
        .zip(d.validity())
        .flat_map(|(&v, &ok)| {
            let q = if ok { (v * scale).round().clamp(0.0, 65535.0) as u16 } else { 0 };
            q.to_be_bytes()
        })
        .collect();
    write_png(path, d.width(), d.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &bytes)
}

/// Binary mask as 8-bit PNG (0 or 255).
pub fn write_mask_png(path: &Path, m: &BinaryMask) -> HarnessResult<()> {
    let bytes: Vec<u8> = m.bits().iter().map(|&b| if b == 1 { 255 } else { 0 }).collect();
    let (h, w) = m.dims();
    write_png(path, w, h, png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)
}

/// Grey PNG; pixels at or above one half are set.
pub fn read_mask_png(path: &Path) -> HarnessResult<BinaryMask> {
    let img = read_image_png(path)?;
    if img.channels() != 1 {
        return Err(format_err(path, "mask PNG must be greyscale"));
    }
    let bits = img.data().iter().map(|&v| u8::from(v >= 0.5)).collect();
    Ok(BinaryMask::new(img.height(), img.width(), bits)?)
}

/// ASCII PLY with `double` x, y, z vertices. Values are written in Rust's
/// shortest round-trip form.
pub fn write_ply(path: &Path, cloud: &PointCloud) -> HarnessResult<()> {
    let mut out = create(path)?;
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z));
    }
    out.write_all(s.as_bytes()).and_then(|_| out.flush()).map_err(|e| HarnessError::io(path, e))
}

/// Reads the vertex x, y, z of an ASCII PLY; other vertex properties and
/// elements after the vertices are ignored.
pub fn read_ply(path: &Path) -> HarnessResult<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(format_err(path, "missing 'ply' magic"));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(format_err(path, "only ASCII PLY is supported")),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| format_err(path, "bad vertex count"))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = count.ok_or_else(|| format_err(path, "no vertex element"))?;
    let col = |name: &str| {
        props.iter().position(|p| p == name).ok_or_else(|| format_err(path, format!("no '{name}' property")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next().ok_or_else(|| format_err(path, "fewer vertices than declared"))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| format_err(path, format!("bad number '{v}'"))))
            .collect::<HarnessResult<_>>()?;
        if vals.len() < props.len() {
            return Err(format_err(path, "short vertex line"));
        }
        points.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
    }
    Ok(PointCloud::from_points(points))
}

/// Writes a header and rows of already-formatted cells.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> HarnessResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| format_err(path, e.to_string());
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(r).map_err(wrap)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_csv(path: &Path) -> HarnessResult<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let wrap = |e: csv::Error| format_err(path, e.to_string());
    let header = r.headers().map_err(wrap)?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(wrap))
        .collect::<HarnessResult<_>>()?;
    Ok((header, rows))
}

pub fn write_text(path: &Path, text: &str) -> HarnessResult<()> {
    let mut out = create(path)?;
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn pfm_layout_is_bottom_to_top_little_endian() {
        let dir = tmp();
        let p = dir.path().join("a.pfm");
        let img = PfmImage { width: 2, height: 2, channels: 1, data: vec![1.0, 2.0, 3.0, 4.0] };
        write_pfm(&p, &img).unwrap();
        let bytes = fs::read(&p).unwrap();
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        let body: Vec<f32> =
            bytes[header.len()..].chunks(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        assert_eq!(body, vec![3.0, 4.0, 1.0, 2.0]);
        assert_eq!(read_pfm(&p).unwrap(), img);
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let dir = tmp();
        let p = dir.path().join("b.pfm");
        let mut bytes = b"Pf\n1 2\n1.0\n".to_vec();
        for v in [5.0f32, 6.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        fs::write(&p, bytes).unwrap();
        assert_eq!(read_pfm(&p).unwrap().data, vec![6.0, 5.0]);
    }

    #[test]
    fn truncated_pfm_is_rejected() {
        let dir = tmp();
        let p = dir.path().join("c.pfm");
        fs::write(&p, b"Pf\n4 4\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(read_pfm(&p), Err(HarnessError::Format { .. })));
    }

    #[test]
    fn png16_round_trip_is_exact_after_quantization() {
        let dir = tmp();
        let p = dir.path().join("img.png");
        let img = ImagePlane::from_fn(3, 4, 3, |i, j, c| ((i * 7 + j * 3 + c) % 11) as f64 / 10.3).unwrap();
        write_image_png16(&p, &img).unwrap();
        assert_eq!(read_image_png(&p).unwrap(), quantize16(&img));
    }

    #[test]
    fn mask_png_round_trip() {
        let dir = tmp();
        let p = dir.path().join("m.png");
        let m = BinaryMask::from_fn(5, 6, |i, j| (i + j) % 3 == 0);
        write_mask_png(&p, &m).unwrap();
        assert_eq!(read_mask_png(&p).unwrap(), m);
    }

    #[test]
    fn ply_round_trip_is_exact() {
        let dir = tmp();
        let p = dir.path().join("c.ply");
        let cloud =
            PointCloud::from_points(vec![Vector3::new(0.1, -2.0 / 3.0, 1e-300), Vector3::new(f64::MAX, 3.0, -0.0)]);
        write_ply(&p, &cloud).unwrap();
        assert_eq!(read_ply(&p).unwrap().points, cloud.points);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tmp();
        let p = dir.path().join("t.csv");
        let rows = vec![vec!["a".to_string(), "1.5".to_string()]];
        write_csv(&p, &["name", "value"], &rows).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "name,value\na,1.5\n");
        assert_eq!(read_csv(&p).unwrap(), (vec!["name".into(), "value".into()], rows));
    }
}
