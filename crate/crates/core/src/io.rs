//! File formats: PFM float maps, 8-bit PNG and ASCII PLY point clouds.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::image::Image;
use crate::model::InitPoint;
use crate::real::Real;

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encode a 1- or 3-channel image as little-endian PFM (rows bottom to top).
pub fn encode_pfm<T: Real>(img: &Image<T>) -> Result<Vec<u8>> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid(format!("PFM stores 1 or 3 channels, not {c}"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image<f32>> {
    let bad = |m: &str| Error::format("PFM", m);
    // Three whitespace-terminated header tokens after the tag line.
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        let t = std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?.to_string();
        Ok(t)
    };
    let channels = match token()?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        t => return Err(bad(&format!("unknown tag {t:?}"))),
    };
    let width: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let height: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| bad("bad scale"))?;
    // Exactly one whitespace byte separates the header from the data.
    let data_start = pos + 1;
    let n = width * height * channels;
    if bytes.len() < data_start + 4 * n {
        return Err(bad("truncated pixel data"));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut data = vec![0f32; n];
    for (i, chunk) in bytes[data_start..data_start + 4 * n].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (file_y, x) = (i / row, i % row);
        data[(height - 1 - file_y) * row + x] = v;
    }
    Image::from_vec(width, height, channels, data)
}

pub fn write_pfm<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    write_all(path, &encode_pfm(img)?)
}

pub fn read_pfm(path: &Path) -> Result<Image<f32>> {
    decode_pfm(&read_all(path)?).map_err(|e| match e {
        Error::Format { kind, message } => Error::format(kind, format!("{}: {message}", path.display())),
        e => e,
    })
}

/// Quantize a unit-range value to 8 bits.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write a 1- or 3-channel image as an 8-bit PNG; values are clamped to [0, 1].
pub fn write_png<T: Real>(path: &Path, img: &Image<T>) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::invalid(format!("PNG export supports 1 or 3 channels, not {c}"))),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|v| quantize(v.val())).collect();
    let mut w = enc.write_header().map_err(|e| Error::format("PNG", e.to_string()))?;
    w.write_image_data(&bytes).map_err(|e| Error::format("PNG", e.to_string()))?;
    w.finish().map_err(|e| Error::format("PNG", e.to_string()))?;
    Ok(())
}

/// Read an 8-bit grayscale or RGB(A) PNG into unit-range values (alpha dropped).
pub fn read_png(path: &Path) -> Result<Image<f32>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::format("PNG", format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format("PNG", "image too large"))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format("PNG", format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format("PNG", format!("{}: only 8-bit images are supported", path.display())));
    }
    let (src_ch, out_ch) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        c => return Err(Error::format("PNG", format!("{}: unsupported color type {c:?}", path.display()))),
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h * out_ch);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * src_ch];
        for px in row.chunks_exact(src_ch) {
            data.extend(px[..out_ch].iter().map(|&b| b as f32 / 255.0));
        }
    }
    Image::from_vec(w, h, out_ch, data)
}

pub fn write_ply(path: &Path, points: &[InitPoint]) -> Result<()> {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\nend_header\n",
        points.len()
    );
    for p in points {
        let (a, n) = (p.position, p.normal);
        s.push_str(&format!("{} {} {} {} {} {}\n", a.x as f32, a.y as f32, a.z as f32, n.x as f32, n.y as f32, n.z as f32));
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(s.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// Parse an ASCII PLY vertex list; normals default to zero when absent.
pub fn parse_ply(text: &str) -> Result<Vec<InitPoint>> {
    let bad = |m: String| Error::format("PLY", m);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => return Err(bad(format!("unsupported format {fmt}"))),
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n}")))?);
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(bad("vertex element lacks x/y/z".into())),
    };
    let normal = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let line = lines.next().ok_or_else(|| bad(format!("expected {count} vertices, found {i}")))?;
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?} on vertex {i}"))))
            .collect::<Result<_>>()?;
        if v.len() < props.len() {
            return Err(bad(format!("vertex {i} has {} values, expected {}", v.len(), props.len())));
        }
        let n = normal.map_or(Vec3::zero(), |(a, b, c)| Vec3::new(v[a], v[b], v[c]));
        out.push(InitPoint { position: Vec3::new(v[x], v[y], v[z]), normal: n });
    }
    Ok(out)
}

pub fn read_ply(path: &Path) -> Result<Vec<InitPoint>> {
    let text = String::from_utf8(read_all(path)?).map_err(|_| Error::format("PLY", "file is not UTF-8"))?;
    parse_ply(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_and_row_order() {
        let img = Image::<f32>::from_vec(3, 2, 3, (0..18).map(|v| v as f32 * 0.25 - 1.0).collect()).unwrap();
        let bytes = encode_pfm(&img).unwrap();
        assert!(bytes.starts_with(b"PF\n3 2\n-1.0\n"));
        // The first stored row is the bottom image row.
        let first = f32::from_le_bytes(bytes[12..16].try_into().unwrap());
        assert_eq!(first, img.pixel(0, 1)[0]);
        assert_eq!(decode_pfm(&bytes).unwrap(), img);
        let gray = Image::<f32>::from_vec(2, 2, 1, vec![0.5, 1.5, -2.0, 3.0]).unwrap();
        let b = encode_pfm(&gray).unwrap();
        assert!(b.starts_with(b"Pf\n"));
        assert_eq!(decode_pfm(&b).unwrap(), gray);
        assert!(matches!(decode_pfm(&b[..b.len() - 1]), Err(Error::Format { .. })));
        assert!(matches!(decode_pfm(b"P6\n1 1\n255\n"), Err(Error::Format { .. })));
    }

    #[test]
    fn big_endian_pfm_is_read() {
        let mut bytes = b"Pf\n1 1\n1.0\n".to_vec();
        bytes.extend_from_slice(&2.5f32.to_be_bytes());
        assert_eq!(decode_pfm(&bytes).unwrap().data, vec![2.5]);
    }

    #[test]
    fn png_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Image::<f64>::from_vec(4, 3, 3, (0..36).map(|v| v as f64 / 35.0).collect()).unwrap();
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert!(back.cast::<f64>().max_abs_diff(&img) <= 0.5 / 255.0 + 1e-6);
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.ply");
        let pts = vec![
            InitPoint { position: Vec3::new(1.0, 2.0, 3.0), normal: Vec3::new(0.0, 0.0, 1.0) },
            InitPoint { position: Vec3::new(-0.5, 0.25, 0.0), normal: Vec3::new(1.0, 0.0, 0.0) },
        ];
        write_ply(&p, &pts).unwrap();
        assert_eq!(read_ply(&p).unwrap(), pts);
        let no_normals = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert_eq!(parse_ply(no_normals).unwrap()[0].normal, Vec3::zero());
        assert!(parse_ply("ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n").is_err());
    }
}
