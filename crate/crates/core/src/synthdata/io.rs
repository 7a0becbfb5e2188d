use std::fs;
use std::path::{Path, PathBuf};

use super::render::{quantize, DepthMap, Image, Intrinsics};
use super::SequenceSample;
use crate::error::{Error, Result};
use crate::pose::PoseVector;

pub const POSES_HEADER: &str = "frame,rx,ry,rz,tx,ty,tz";

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian single-channel PFM, rows stored bottom to top.
pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    for i in (0..depth.height).rev() {
        for j in 0..depth.width {
            out.extend_from_slice(&depth.at(i, j).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8], file: &Path) -> Result<DepthMap> {
    // Header: three whitespace-terminated tokens after the magic line.
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<(String, usize)> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::parse(file, start, "truncated PFM header"));
        }
        let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::parse(file, start, "non-ASCII PFM header"))?;
        Ok((s.to_string(), start))
    };
    let (magic, at) = token(&mut pos)?;
    if magic != "Pf" {
        return Err(Error::parse(file, at, format!("expected single-channel PFM magic \"Pf\", found {magic:?}")));
    }
    let number = |pos: &mut usize, what: &str| -> Result<(String, usize)> {
        let (s, at) = token(pos)?;
        if s.is_empty() {
            return Err(Error::parse(file, at, format!("missing {what}")));
        }
        Ok((s, at))
    };
    let (w, at_w) = number(&mut pos, "width")?;
    let width: usize = w.parse().map_err(|_| Error::parse(file, at_w, format!("bad width {w:?}")))?;
    let (h, at_h) = number(&mut pos, "height")?;
    let height: usize = h.parse().map_err(|_| Error::parse(file, at_h, format!("bad height {h:?}")))?;
    let (s, at_s) = number(&mut pos, "scale")?;
    let scale: f64 = s.parse().map_err(|_| Error::parse(file, at_s, format!("bad scale {s:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::parse(file, at_s, "scale must be nonzero"));
    }
    if width == 0 || height == 0 {
        return Err(Error::parse(file, at_w, "empty PFM image"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    pos += 1;
    let need = width * height * 4;
    if bytes.len() < pos + need {
        return Err(Error::parse(file, bytes.len(), format!("payload has {} bytes, need {need}", bytes.len().saturating_sub(pos))));
    }
    let little = scale < 0.0;
    let mut data = vec![0f32; width * height];
    for (k, chunk) in bytes[pos..pos + need].chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row_from_bottom, j) = (k / width, k % width);
        data[(height - 1 - row_from_bottom) * width + j] = v;
    }
    Ok(DepthMap { height, width, data })
}

pub fn encode_poses(poses: &[PoseVector]) -> String {
    let mut s = String::from(POSES_HEADER);
    s.push('\n');
    for (k, p) in poses.iter().enumerate() {
        let v = p.as_array();
        s.push_str(&format!("{k},{},{},{},{},{},{}\n", v[0], v[1], v[2], v[3], v[4], v[5]));
    }
    s
}

pub fn decode_poses(text: &str, file: &Path) -> Result<Vec<PoseVector>> {
    let mut offset = 0;
    let mut poses = Vec::new();
    for (line_no, line) in text.split_inclusive('\n').enumerate() {
        let body = line.trim_end_matches(['\n', '\r']);
        let start = offset;
        offset += line.len();
        if line_no == 0 {
            if body.trim() != POSES_HEADER {
                return Err(Error::parse(file, start, format!("expected header {POSES_HEADER:?}")));
            }
            continue;
        }
        if body.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = body.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::parse(file, start, format!("expected 7 columns, found {}", fields.len())));
        }
        let index: usize = fields[0].trim().parse().map_err(|_| Error::parse(file, start, "bad frame index"))?;
        if index != poses.len() {
            return Err(Error::parse(file, start, format!("frame {index} out of order")));
        }
        let mut v = [0.0; 6];
        let mut col = start + fields[0].len() + 1;
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.trim().parse().map_err(|_| Error::parse(file, col, format!("bad number {f:?}")))?;
            col += f.len() + 1;
        }
        poses.push(PoseVector::from_array(v));
    }
    if poses.is_empty() {
        return Err(Error::parse(file, offset, "no poses"));
    }
    Ok(poses)
}

pub fn decode_intrinsics(text: &str, file: &Path) -> Result<Intrinsics> {
    let mut values = Vec::new();
    let mut offset = 0;
    for tok in text.split_inclusive(char::is_whitespace) {
        let t = tok.trim();
        if !t.is_empty() {
            let v: f64 = t.parse().map_err(|_| Error::parse(file, offset, format!("bad number {t:?}")))?;
            values.push(v);
        }
        offset += tok.len();
    }
    match values[..] {
        [fx, fy, cx, cy] => Ok(Intrinsics { fx, fy, cx, cy }),
        _ => Err(Error::parse(file, offset, format!("expected 4 values fx fy cx cy, found {}", values.len()))),
    }
}

fn encode_png(image: &Image, path: &Path) -> Result<()> {
    let mut buf = image::RgbImage::new(image.width as u32, image.height as u32);
    for i in 0..image.height {
        for j in 0..image.width {
            let px = [0, 1, 2].map(|c| quantize(image.get(c, i, j)));
            buf.put_pixel(j as u32, i as u32, image::Rgb(px));
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn decode_png(path: &Path) -> Result<Image> {
    let bytes = read(path)?;
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Image::zeros(h, w);
    for (j, i, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out.set(c, i as usize, j as usize, px.0[c] as f32 / 255.0);
        }
    }
    Ok(out)
}

pub fn sequence_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("seq_{index:04}"))
}

/// Write every sample as `root/seq_XXXX/`.
pub fn write_dataset(samples: &[SequenceSample], root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    for (s, sample) in samples.iter().enumerate() {
        let dir = sequence_dir(root, s);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (k, (img, depth)) in sample.frames.iter().zip(&sample.depths).enumerate() {
            encode_png(img, &dir.join(format!("frame_{k:04}.png")))?;
            write(&dir.join(format!("depth_{k:04}.pfm")), &encode_pfm(depth))?;
        }
        write(&dir.join("poses.csv"), encode_poses(&sample.poses).as_bytes())?;
        let k = &sample.intrinsics;
        write(&dir.join("intrinsics.txt"), format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy).as_bytes())?;
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::parse(path, 0, "file is missing"));
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    String::from_utf8(bytes).map_err(|e| Error::parse(path, e.utf8_error().valid_up_to(), "invalid UTF-8"))
}

pub fn read_sequence(dir: &Path) -> Result<SequenceSample> {
    let poses_path = dir.join("poses.csv");
    let poses = decode_poses(&read_text(&poses_path)?, &poses_path)?;
    let intr_path = dir.join("intrinsics.txt");
    let intrinsics = decode_intrinsics(&read_text(&intr_path)?, &intr_path)?;
    let mut frames = Vec::with_capacity(poses.len());
    let mut depths = Vec::with_capacity(poses.len());
    for k in 0..poses.len() {
        let img = decode_png(&dir.join(format!("frame_{k:04}.png")))?;
        let depth_path = dir.join(format!("depth_{k:04}.pfm"));
        let depth = decode_pfm(&read(&depth_path)?, &depth_path)?;
        if depth.height != img.height || depth.width != img.width {
            return Err(Error::parse(&depth_path, 0, "depth and frame extents differ"));
        }
        frames.push(img);
        depths.push(depth);
    }
    let sample = SequenceSample {
        frames,
        depths,
        poses,
        intrinsics,
    };
    sample.validate()?;
    Ok(sample)
}

/// Read every `seq_XXXX` directory under `root`, in index order.
pub fn read_dataset(root: &Path) -> Result<Vec<SequenceSample>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seq_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Load(format!("no seq_XXXX directories under {}", root.display())));
    }
    dirs.iter().map(|d| read_sequence(d)).collect()
}
