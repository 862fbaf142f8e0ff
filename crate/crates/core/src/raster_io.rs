//! 8-bit PGM rasters with a one-line georeferencing sidecar.
//!
//! Image row 0 is the raster row adjacent to the origin (southernmost). The
//! sidecar lives next to the image as `<image>.txt` and holds
//! `origin_x origin_y pixel_size` in meters.

use std::fs;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::error::{Error, Result};
use crate::fractal_field::ClearSkyField;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Georef {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".txt");
    PathBuf::from(s)
}

pub fn write_pgm(path: &Path, width: u32, height: u32, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width as usize * height as usize {
        return Err(Error::Size(format!("pixel buffer does not match {width} x {height}")));
    }
    let mut buf = Vec::with_capacity(pixels.len() + 32);
    PnmEncoder::new(&mut buf)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(pixels, width, height, ExtendedColorType::L8)
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit grayscale PNM, returning (width, height, pixels).
pub fn read_pgm(path: &Path) -> Result<(u32, u32, Vec<u8>)> {
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_owned(),
            source,
        })?;
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    Ok((w, h, gray.into_raw()))
}

pub fn write_sidecar(image: &Path, geo: Georef) -> Result<()> {
    let path = sidecar_path(image);
    fs::write(
        &path,
        format!("{} {} {}\n", geo.origin_x, geo.origin_y, geo.pixel_size),
    )
    .map_err(|e| Error::io(path, e))
}

pub fn read_sidecar(image: &Path) -> Result<Georef> {
    let path = sidecar_path(image);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let parse_err = |message: String| Error::Parse {
        path: path.clone(),
        line: 1,
        message,
    };
    let nums: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| parse_err(format!("{t:?}: {e}"))))
        .collect::<Result<_>>()?;
    match *nums.as_slice() {
        [origin_x, origin_y, pixel_size] if pixel_size > 0.0 && pixel_size.is_finite() => {
            Ok(Georef {
                origin_x,
                origin_y,
                pixel_size,
            })
        }
        [_, _, _] => Err(parse_err("pixel size must be positive".into())),
        _ => Err(parse_err(format!(
            "expected `origin_x origin_y pixel_size`, got {} values",
            nums.len()
        ))),
    }
}

/// Writes a clear-sky field as 8-bit levels plus sidecar (origin 0 0).
pub fn export_field(field: &ClearSkyField, path: &Path) -> Result<()> {
    let side = field.side_px() as u32;
    write_pgm(path, side, side, &field.levels())?;
    write_sidecar(
        path,
        Georef {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: field.pixel_size_m(),
        },
    )
}

pub fn import_field(path: &Path) -> Result<ClearSkyField> {
    let (w, h, px) = read_pgm(path)?;
    if w != h {
        return Err(Error::Size(format!(
            "{}: field image must be square, got {w} x {h}",
            path.display()
        )));
    }
    let geo = read_sidecar(path)?;
    ClearSkyField::from_levels(&px, w as usize, geo.pixel_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fractal_field::{quantize_8bit, synthesize, FieldConfig};

    #[test]
    fn field_round_trips_through_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let field = synthesize(&FieldConfig {
            side_px: 32,
            seed: 1,
            pixel_size_m: 2.5,
            ..FieldConfig::default()
        })
        .unwrap();
        export_field(&field, &path).unwrap();
        let back = import_field(&path).unwrap();
        assert_eq!(back.pixel_size_m(), 2.5);
        assert_eq!(back, quantize_8bit(field));
        let bytes = fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5"));
    }

    #[test]
    fn malformed_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("m.pgm");
        fs::write(sidecar_path(&img), "1 2\n").unwrap();
        assert!(matches!(read_sidecar(&img), Err(Error::Parse { .. })));
        fs::write(sidecar_path(&img), "1 2 -1\n").unwrap();
        assert!(matches!(read_sidecar(&img), Err(Error::Parse { .. })));
        fs::write(sidecar_path(&img), "100.5 -20 0.5\n").unwrap();
        let g = read_sidecar(&img).unwrap();
        assert_eq!((g.origin_x, g.origin_y, g.pixel_size), (100.5, -20.0, 0.5));
    }
}
