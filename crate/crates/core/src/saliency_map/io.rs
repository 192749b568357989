//! Map export and import: 16-bit greyscale PNG, and raw little-endian f32
//! with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use super::SaliencyMap;
use crate::error::{data, Result};

/// Metadata written next to a raw float map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub width: usize,
    pub height: usize,
    pub layer_index: usize,
    pub method: Option<String>,
    pub seed: Option<u64>,
}

/// The sidecar path for a raw map: `foo.f32` -> `foo.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a 16-bit greyscale PNG. Values are min-max scaled first unless
/// the map is already normalised.
pub fn write_png16(map: &SaliencyMap, path: impl AsRef<Path>) -> Result<()> {
    let scaled = if map.normalized { map.clone() } else { map.clone().normalized() };
    let pixels: Vec<u16> = scaled
        .values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width as u32, map.height as u32, pixels).expect("buffer matches dims");
    buf.save(path)?;
    Ok(())
}

/// Reads any greyscale/colour image as a map with values in `[0, 1]`.
pub fn read_map_image(path: impl AsRef<Path>, layer_index: usize) -> Result<SaliencyMap> {
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    SaliencyMap::new(w as usize, h as usize, values, layer_index)
}

/// Writes row-major f32 samples to `path` and the sidecar next to it.
pub fn write_f32(map: &SaliencyMap, path: impl AsRef<Path>, method: Option<&str>, seed: Option<u64>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = map.values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    fs::write(path, bytes)?;
    let sidecar = MapSidecar {
        width: map.width,
        height: map.height,
        layer_index: map.layer_index,
        method: method.map(str::to_owned),
        seed,
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_f32(path: impl AsRef<Path>) -> Result<SaliencyMap> {
    let path = path.as_ref();
    let sidecar: MapSidecar = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
    let bytes = fs::read(path)?;
    if bytes.len() != sidecar.width * sidecar.height * 4 {
        return data(format!(
            "{}: {} bytes do not hold a {}x{} f32 map",
            path.display(),
            bytes.len(),
            sidecar.width,
            sidecar.height
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    SaliencyMap::new(sidecar.width, sidecar.height, values, sidecar.layer_index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.f32");
        let map = SaliencyMap::new(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125], 2).unwrap();
        write_f32(&map, &p, Some("cs"), Some(7)).unwrap();
        let back = read_f32(&p).unwrap();
        assert_eq!(back.values, map.values);
        assert_eq!(back.layer_index, 2);
        let side: MapSidecar = serde_json::from_str(&fs::read_to_string(dir.path().join("m.json")).unwrap()).unwrap();
        assert_eq!(side.method.as_deref(), Some("cs"));
        fs::write(&p, [0u8; 5]).unwrap();
        assert!(read_f32(&p).is_err());
    }

    #[test]
    fn png16_round_trip_is_close() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let map = SaliencyMap::new(4, 1, vec![0.0, 0.3, 0.6, 1.0], 0).unwrap().normalized();
        write_png16(&map, &p).unwrap();
        let back = read_map_image(&p, 0).unwrap();
        for (a, b) in back.values.iter().zip(&map.values) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }
}
