//! Multispectral cube data model: in-memory representation, the
//! `.mscube` on-disk format, min–max normalization, the 8×8×3
//! spectral–spatial tokenizer, and RGB composite export.

mod io;
mod manifest;
mod token;

pub use io::{read_cube, write_cube};
pub use manifest::{read_manifest, write_manifest, DatasetManifest, Label, ManifestEntry};
pub use token::{detokenize, tokenize, TokenGrid, TOKEN_BANDS, TOKEN_LEN, TOKEN_SIDE};

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use crate::error::{Error, Result};

/// A width × height × bands reflectance raster. Data is band-planar and
/// row-major within each band, so the value at (band, row, col) sits at
/// `band * width * height + row * width + col`. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    width: usize,
    height: usize,
    bands: usize,
    band_names: Vec<String>,
    data: Vec<f32>,
    scale_note: String,
}

impl SpectralCube {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        band_names: Vec<String>,
        data: Vec<f32>,
        scale_note: String,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::Shape(format!(
                "cube dimensions must be positive, got {width}×{height}×{bands}"
            )));
        }
        if data.len() != width * height * bands {
            return Err(Error::Shape(format!(
                "cube data length {} does not match {width}×{height}×{bands} = {}",
                data.len(),
                width * height * bands
            )));
        }
        if band_names.len() != bands {
            return Err(Error::Shape(format!(
                "{} band names for {bands} bands",
                band_names.len()
            )));
        }
        for (i, name) in band_names.iter().enumerate() {
            if band_names[..i].contains(name) {
                return Err(Error::Data(format!("duplicate band name {name:?}")));
            }
        }
        Ok(SpectralCube {
            width,
            height,
            bands,
            band_names,
            data,
            scale_note,
        })
    }

    /// Default band naming b00, b01, ...
    pub fn with_default_names(
        width: usize,
        height: usize,
        bands: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let names = (0..bands).map(|i| format!("b{i:02}")).collect();
        SpectralCube::new(width, height, bands, names, data, String::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn scale_note(&self) -> &str {
        &self.scale_note
    }

    #[inline]
    pub fn value(&self, band: usize, row: usize, col: usize) -> f32 {
        self.data[band * self.width * self.height + row * self.width + col]
    }

    /// One band as a contiguous row-major plane.
    pub fn band_plane(&self, band: usize) -> &[f32] {
        let plane = self.width * self.height;
        &self.data[band * plane..(band + 1) * plane]
    }

    /// The spectrum at one pixel, gathered across bands.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.value(b, row, col)).collect()
    }

    /// Per-band minimum and maximum over the cube.
    pub fn band_range(&self, band: usize) -> (f32, f32) {
        let plane = self.band_plane(band);
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in plane {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Maps each band through (v − min) / (max − min) and clips to [0, 1].
/// The applied statistics are recorded in the result's scale note.
pub fn normalize(
    cube: &SpectralCube,
    per_band_min: &[f64],
    per_band_max: &[f64],
) -> Result<SpectralCube> {
    if per_band_min.len() != cube.bands || per_band_max.len() != cube.bands {
        return Err(Error::Parameter(format!(
            "normalization statistics cover {}/{} bands, cube has {}",
            per_band_min.len(),
            per_band_max.len(),
            cube.bands
        )));
    }
    for b in 0..cube.bands {
        if !(per_band_max[b] > per_band_min[b]) {
            return Err(Error::Parameter(format!(
                "degenerate range for band {b}: min {} max {}",
                per_band_min[b], per_band_max[b]
            )));
        }
    }
    let plane = cube.width * cube.height;
    let mut data = Vec::with_capacity(cube.data.len());
    for b in 0..cube.bands {
        let (lo, span) = (per_band_min[b], per_band_max[b] - per_band_min[b]);
        for &v in cube.band_plane(b) {
            let scaled = ((v as f64 - lo) / span).clamp(0.0, 1.0);
            data.push(scaled as f32);
        }
    }
    debug_assert_eq!(data.len(), plane * cube.bands);
    let note = format!(
        "minmax per band: {}",
        serde_json::to_string(
            &per_band_min
                .iter()
                .zip(per_band_max)
                .map(|(a, b)| [*a, *b])
                .collect::<Vec<_>>()
        )
        .expect("stats serialize")
    );
    SpectralCube::new(
        cube.width,
        cube.height,
        cube.bands,
        cube.band_names.clone(),
        data,
        note,
    )
}

/// Writes a binary PPM (P6) composite of three bands, each channel
/// linearly stretched to 0–255 from its own min/max over the cube.
/// A degenerate stretch (max = min) maps the whole channel to 0.
pub fn render_rgb(
    cube: &SpectralCube,
    red_band: usize,
    green_band: usize,
    blue_band: usize,
    out: &Path,
) -> Result<()> {
    for (name, idx) in [("red", red_band), ("green", green_band), ("blue", blue_band)] {
        if idx >= cube.bands {
            return Err(Error::Parameter(format!(
                "{name} band index {idx} out of range for {} bands",
                cube.bands
            )));
        }
    }
    let file = File::create(out).map_err(|e| Error::io(out, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P6\n{} {}\n255\n", cube.width, cube.height).map_err(|e| Error::io(out, e))?;

    let channels: Vec<(usize, f64, f64)> = [red_band, green_band, blue_band]
        .into_iter()
        .map(|b| {
            let (lo, hi) = cube.band_range(b);
            (b, lo as f64, hi as f64)
        })
        .collect();
    let mut buf = Vec::with_capacity(cube.width * cube.height * 3);
    for row in 0..cube.height {
        for col in 0..cube.width {
            for &(b, lo, hi) in &channels {
                let v = cube.value(b, row, col) as f64;
                let byte = if hi > lo {
                    (((v - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    0
                };
                buf.push(byte);
            }
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(out, e))?;
    w.flush().map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cube() -> SpectralCube {
        let data: Vec<f32> = (0..2 * 2 * 3).map(|i| i as f32).collect();
        SpectralCube::with_default_names(2, 2, 3, data).unwrap()
    }

    #[test]
    fn constructor_checks_shape() {
        assert!(matches!(
            SpectralCube::with_default_names(2, 2, 3, vec![0.0; 11]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            SpectralCube::new(0, 2, 3, vec![], vec![], String::new()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn duplicate_band_names_rejected() {
        let names = vec!["a".into(), "a".into()];
        assert!(matches!(
            SpectralCube::new(1, 1, 2, names, vec![0.0, 0.0], String::new()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn normalize_boundaries_and_clipping() {
        let cube = SpectralCube::with_default_names(1, 1, 3, vec![2.0, 6.0, 8.0]).unwrap();
        let out = normalize(&cube, &[2.0, 2.0, 2.0], &[6.0, 6.0, 6.0]).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 1.0]); // min → 0, max → 1, above → clipped
        assert!(out.scale_note().contains("minmax"));
    }

    #[test]
    fn normalize_rejects_degenerate_range() {
        let cube = small_cube();
        assert!(matches!(
            normalize(&cube, &[0.0, 0.0, 0.0], &[1.0, 0.0, 1.0]),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn normalize_unit_range_is_identity() {
        let data: Vec<f32> = vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125];
        let cube = SpectralCube::with_default_names(2, 1, 3, data.clone()).unwrap();
        let out = normalize(&cube, &[0.0; 3], &[1.0; 3]).unwrap();
        assert_eq!(out.data(), data.as_slice());
    }

    #[test]
    fn render_rgb_header_and_degenerate_stretch() {
        let dir = std::env::temp_dir().join("aurum_rgb_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("flat.ppm");
        let cube = SpectralCube::with_default_names(4, 2, 3, vec![0.7; 24]).unwrap();
        render_rgb(&cube, 0, 1, 2, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P6\n4 2\n255\n"));
        // Constant cube: stretch degenerates, every channel byte is 0.
        assert!(bytes[b"P6\n4 2\n255\n".len()..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), b"P6\n4 2\n255\n".len() + 4 * 2 * 3);
    }

    #[test]
    fn render_rgb_rejects_bad_band() {
        let cube = small_cube();
        let err = render_rgb(&cube, 0, 1, 9, Path::new("/tmp/never.ppm"));
        assert!(matches!(err, Err(Error::Parameter(_))));
    }

    #[test]
    fn render_rgb_unwritable_path() {
        let cube = small_cube();
        let err = render_rgb(&cube, 0, 1, 2, Path::new("/no/such/dir/out.ppm"));
        assert!(matches!(err, Err(Error::Io { .. })));
    }
}
