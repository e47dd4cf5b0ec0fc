//! Scene directory format: `cameras.json`, `images/NNNN.png` (8-bit RGB),
//! `depth/NNNN.pfm` (little-endian float32) and optional degraded renders
//! in `renders/NNNN.png`.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use geofuse_numerics::Tensor;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{check_rotation, CameraPose, PinholeIntrinsics, PosedImage, SceneDataset};
use crate::error::{Error, Result};

pub const CAMERAS_FILE: &str = "cameras.json";
pub const SCENE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CamerasFile {
    version: u32,
    intrinsics: PinholeIntrinsics,
    views: Vec<ViewEntry>,
}

#[derive(Serialize, Deserialize)]
struct ViewEntry {
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    render: Option<String>,
}

pub fn save_scene(dataset: &SceneDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    let mut views = Vec::with_capacity(dataset.len());
    for (i, v) in dataset.views.iter().enumerate() {
        let image = format!("images/{i:04}.png");
        write_png(dir.join(&image), &v.rgb)?;
        let depth = match &v.depth {
            Some(d) => {
                fs::create_dir_all(dir.join("depth"))?;
                let name = format!("depth/{i:04}.pfm");
                write_pfm(dir.join(&name), d)?;
                Some(name)
            }
            None => None,
        };
        let render = match &dataset.renders {
            Some(r) => {
                fs::create_dir_all(dir.join("renders"))?;
                let name = format!("renders/{i:04}.png");
                write_png(dir.join(&name), &r[i])?;
                Some(name)
            }
            None => None,
        };
        let r = v.pose.rotation;
        views.push(ViewEntry {
            r: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: v.pose.translation.into(),
            image,
            depth,
            render,
        });
    }
    let file = CamerasFile {
        version: SCENE_VERSION,
        intrinsics: dataset.intrinsics,
        views,
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(dir.join(CAMERAS_FILE), text)?;
    Ok(())
}

pub fn load_scene(dir: impl AsRef<Path>) -> Result<SceneDataset> {
    let dir = dir.as_ref();
    let cams_path = dir.join(CAMERAS_FILE);
    let text = fs::read_to_string(&cams_path).map_err(|e| Error::load(&cams_path, e.to_string()))?;
    let file: CamerasFile = serde_json::from_str(&text).map_err(|e| Error::load(&cams_path, e.to_string()))?;
    if file.version != SCENE_VERSION {
        return Err(Error::load(
            &cams_path,
            format!("unsupported version {} (expected {SCENE_VERSION})", file.version),
        ));
    }
    let k = file.intrinsics;
    k.validate().map_err(|e| Error::load(&cams_path, e.to_string()))?;
    let (h, w) = (k.height, k.width);
    let all_renders = !file.views.is_empty() && file.views.iter().all(|v| v.render.is_some());
    let mut views = Vec::with_capacity(file.views.len());
    let mut renders = Vec::new();
    for (i, entry) in file.views.iter().enumerate() {
        let rotation = Matrix3::from_row_slice(&entry.r);
        check_rotation(&rotation).map_err(|e| Error::load(&cams_path, format!("view {i}: {e}")))?;
        let pose = CameraPose {
            rotation,
            translation: Vector3::from(entry.t),
        };
        let rgb = read_png(dir.join(&entry.image))?;
        expect_shape(&dir.join(&entry.image), &rgb, &[3, h, w])?;
        let depth = match &entry.depth {
            Some(name) => {
                let d = read_pfm(dir.join(name))?;
                expect_shape(&dir.join(name), &d, &[1, h, w])?;
                Some(d)
            }
            None => None,
        };
        if all_renders {
            let name = entry.render.as_ref().expect("checked");
            let r = read_png(dir.join(name))?;
            expect_shape(&dir.join(name), &r, &[3, h, w])?;
            renders.push(r);
        }
        let view = PosedImage {
            rgb,
            depth,
            pose,
            intrinsics: k,
        };
        view.validate().map_err(|e| Error::load(&cams_path, format!("view {i}: {e}")))?;
        views.push(view);
    }
    Ok(SceneDataset {
        intrinsics: k,
        views,
        renders: all_renders.then_some(renders),
    })
}

fn expect_shape(path: &Path, t: &Tensor<f64>, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::load(
            path,
            format!("expected shape {shape:?}, found {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// Writes a `[3, H, W]` map in `[0, 1]` as 8-bit RGB (round to nearest).
pub fn write_png(path: impl AsRef<Path>, rgb: &Tensor<f64>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = rgb.dims3()?;
    if c != 3 {
        return Err(Error::Argument(format!("write_png expects 3 channels, got {c}")));
    }
    let mut bytes = vec![0u8; 3 * h * w];
    for ch in 0..3 {
        for p in 0..h * w {
            bytes[3 * p + ch] = (rgb.data()[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let out = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(out, w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::load(path, e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::load(path, e.to_string()))?;
    writer.finish().map_err(|e| Error::load(path, e.to_string()))?;
    Ok(())
}

/// Reads any 8/16-bit PNG as a `[3, H, W]` map in `[0, 1]`; grayscale is
/// replicated and alpha dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut dec = png::Decoder::new(BufReader::new(file));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::load(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::load(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::load(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(Error::load(path, format!("unsupported color type {other:?}"))),
    };
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for ch in 0..3 {
            let src = if stride < 3 { 0 } else { ch };
            data[ch * h * w + p] = buf[p * stride + src] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

/// Writes a `[1, H, W]` map as a little-endian single-channel PFM (rows
/// stored bottom to top).
pub fn write_pfm(path: impl AsRef<Path>, depth: &Tensor<f64>) -> Result<()> {
    let (c, h, w) = depth.dims3()?;
    if c != 1 {
        return Err(Error::Argument(format!("write_pfm expects 1 channel, got {c}")));
    }
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    write!(out, "Pf\n{w} {h}\n-1.0\n")?;
    for y in (0..h).rev() {
        for x in 0..w {
            out.write_all(&(depth.data()[y * w + x] as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut r = BufReader::new(file);
    let mut header_line = |what: &str| -> Result<String> {
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::load(path, e.to_string()))?;
        if !line.ends_with('\n') {
            return Err(Error::load(path, format!("truncated header before {what}")));
        }
        Ok(line.trim().to_string())
    };
    let magic = header_line("magic")?;
    if magic != "Pf" {
        return Err(Error::load(path, format!("expected single-channel PFM magic \"Pf\", found {magic:?}")));
    }
    let dims = header_line("dimensions")?;
    let parsed: Vec<usize> = dims.split_whitespace().filter_map(|s| s.parse().ok()).collect();
    let [w, h] = parsed[..] else {
        return Err(Error::load(path, format!("malformed dimensions line {dims:?}")));
    };
    let scale_line = header_line("scale")?;
    let scale: f64 = scale_line
        .parse()
        .map_err(|_| Error::load(path, format!("malformed scale {scale_line:?}")))?;
    if scale >= 0.0 {
        return Err(Error::load(path, "big-endian PFM is not supported"));
    }
    let mut raw = Vec::new();
    r.read_to_end(&mut raw).map_err(|e| Error::load(path, e.to_string()))?;
    if raw.len() != 4 * w * h {
        return Err(Error::load(
            path,
            format!("expected {} bytes of pixel data, found {}", 4 * w * h, raw.len()),
        ));
    }
    let mut data = vec![0.0; w * h];
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let (row, x) = (i / w, i % w);
        let y = h - 1 - row;
        data[y * w + x] = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
    }
    Ok(Tensor::new(&[1, h, w], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{DegradationConfig, SynthSpec};

    fn scene() -> SceneDataset {
        let mut spec = SynthSpec::desk(1, 8, 32);
        spec.supersample = 1;
        spec.build().unwrap()
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for sub in ["", "images", "depth", "renders"] {
            let Ok(entries) = fs::read_dir(dir.join(sub)) else { continue };
            for e in entries {
                let p = e.unwrap().path();
                if p.is_file() {
                    out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn save_load_save_is_fixpoint() {
        let tmp = tempfile::tempdir().unwrap();
        let s = scene()
            .with_degraded_renders(&DegradationConfig::default())
            .unwrap();
        save_scene(&s, tmp.path().join("a")).unwrap();
        let loaded = load_scene(tmp.path().join("a")).unwrap();
        assert!(loaded.renders.is_some());
        save_scene(&loaded, tmp.path().join("b")).unwrap();
        let (a, b) = (dir_bytes(&tmp.path().join("a")), dir_bytes(&tmp.path().join("b")));
        assert_eq!(a.len(), b.len());
        for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            assert!(ba == bb, "{na} differs after a round trip");
        }
        for (a, b) in s.views.iter().zip(&loaded.views) {
            assert_eq!(a.pose, b.pose);
            let da = a.depth.as_ref().unwrap().data().iter().map(|&z| z as f32);
            let db = b.depth.as_ref().unwrap().data().iter().map(|&z| z as f32);
            assert!(da.eq(db));
        }
    }

    #[test]
    fn non_orthonormal_rotation_names_view() {
        let tmp = tempfile::tempdir().unwrap();
        save_scene(&scene(), tmp.path()).unwrap();
        let path = tmp.path().join(CAMERAS_FILE);
        let mut json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        json["views"][3]["R"][0] = serde_json::json!(1.5);
        fs::write(&path, json.to_string()).unwrap();
        let err = load_scene(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("view 3") && err.contains(CAMERAS_FILE), "{err}");
    }

    #[test]
    fn missing_and_malformed_files_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_scene(tmp.path()), Err(Error::Load { .. })));
        let pfm = tmp.path().join("bad.pfm");
        fs::write(&pfm, b"PF\n2 2\n-1.0\n").unwrap();
        assert!(matches!(read_pfm(&pfm), Err(Error::Load { .. })));
        fs::write(&pfm, b"Pf\n2 2\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(read_pfm(&pfm), Err(Error::Load { .. })));
    }

    #[test]
    fn pfm_round_trip_and_orientation() {
        let tmp = tempfile::tempdir().unwrap();
        let d = Tensor::from_fn(&[1, 3, 4], |i| 1.0 + i as f64 * 0.1);
        let p = tmp.path().join("d.pfm");
        write_pfm(&p, &d).unwrap();
        let back = read_pfm(&p).unwrap();
        for (a, b) in d.data().iter().zip(back.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // First stored row is the bottom image row.
        let bytes = fs::read(&p).unwrap();
        let header = b"Pf\n4 3\n-1.0\n".len();
        let first = f32::from_le_bytes(bytes[header..header + 4].try_into().unwrap());
        assert_eq!(first, d.data()[8] as f32);
    }
}
