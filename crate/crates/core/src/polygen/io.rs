//! On-disk layout: `manifest.json` plus `NNNN.img` / `NNNN.msk` grid files.
//!
//! Grid file: `"FBSG"` | dtype u8 (1 = f64, 2 = u8) | H u32 | W u32 | payload
//! (little-endian) | crc32 u32 of every preceding byte.

use std::fs;
use std::path::Path;

use super::{Dataset, DatasetManifest, PolygenError, PolygonInstance};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"FBSG";
const DTYPE_F64: u8 = 1;
const DTYPE_U8: u8 = 2;
const HEADER: usize = 4 + 1 + 4 + 4;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PolygenError + '_ {
    move |source| PolygenError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn encode(dtype: u8, height: usize, width: usize, payload: &[u8]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + payload.len() + 4);
    buf.extend_from_slice(MAGIC);
    buf.push(dtype);
    buf.extend_from_slice(&(height as u32).to_le_bytes());
    buf.extend_from_slice(&(width as u32).to_le_bytes());
    buf.extend_from_slice(payload);
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

fn decode(path: &Path, dtype: u8, height: usize, width: usize) -> Result<Vec<u8>, PolygenError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let name = path.display().to_string();
    let elem = if dtype == DTYPE_F64 { 8 } else { 1 };
    let expected = HEADER + height * width * elem + 4;
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(PolygenError::Load {
            path: name,
            reason: "bad magic bytes".into(),
        });
    }
    if bytes.len() != expected {
        return Err(PolygenError::Checksum { path: name });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
        return Err(PolygenError::Checksum { path: name });
    }
    let h = u32::from_le_bytes(body[5..9].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(body[9..13].try_into().unwrap()) as usize;
    if body[4] != dtype || (h, w) != (height, width) {
        return Err(PolygenError::Load {
            path: name,
            reason: format!(
                "header says dtype {} {h}x{w}, manifest expects dtype {dtype} {height}x{width}",
                body[4]
            ),
        });
    }
    Ok(body[HEADER..].to_vec())
}

pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<(), PolygenError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let m = &dataset.manifest;
    if m.count != dataset.instances.len() {
        return Err(PolygenError::Consistency {
            path: dir.display().to_string(),
            expected: m.count,
            found: dataset.instances.len(),
        });
    }
    for (i, inst) in dataset.instances.iter().enumerate() {
        let img: Vec<u8> = inst.image.iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = dir.join(format!("{i:04}.img"));
        fs::write(&p, encode(DTYPE_F64, inst.height, inst.width, &img)).map_err(io_err(&p))?;
        let p = dir.join(format!("{i:04}.msk"));
        fs::write(&p, encode(DTYPE_U8, inst.height, inst.width, &inst.mask)).map_err(io_err(&p))?;
    }
    let p = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(&p, json).map_err(io_err(&p))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, PolygenError> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| PolygenError::Load {
            path: mpath.display().to_string(),
            reason: format!("malformed manifest: {e}"),
        })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(PolygenError::Load {
            path: mpath.display().to_string(),
            reason: format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            ),
        });
    }
    let found = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(Result::ok)
        .filter(|e| e.path().extension().is_some_and(|x| x == "img"))
        .count();
    if found != manifest.count || manifest.instances.len() != manifest.count {
        return Err(PolygenError::Consistency {
            path: dir.display().to_string(),
            expected: manifest.count,
            found,
        });
    }
    let (h, w) = (manifest.height, manifest.width);
    let mut instances = Vec::with_capacity(manifest.count);
    for (i, meta) in manifest.instances.iter().enumerate() {
        let ipath = dir.join(format!("{i:04}.img"));
        let mpath = dir.join(format!("{i:04}.msk"));
        if !ipath.exists() || !mpath.exists() {
            return Err(PolygenError::Consistency {
                path: dir.display().to_string(),
                expected: manifest.count,
                found,
            });
        }
        let image = decode(&ipath, DTYPE_F64, h, w)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mask = decode(&mpath, DTYPE_U8, h, w)?;
        instances.push(PolygonInstance {
            height: h,
            width: w,
            image,
            mask,
            seed: meta.seed,
            sigma: manifest.sigma,
            noise_seed: meta.noise_seed,
            vertices: meta.vertices.iter().map(|v| (v[0], v[1])).collect(),
        });
    }
    Ok(Dataset {
        manifest,
        instances,
    })
}
