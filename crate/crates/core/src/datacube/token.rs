//! Spectral–spatial tokenization: an 8×8 spatial window over 3
//! consecutive bands forms one token of 192 values.

use crate::datacube::SpectralCube;
use crate::error::{Error, Result};

pub const TOKEN_SIDE: usize = 8;
pub const TOKEN_BANDS: usize = 3;
pub const TOKEN_LEN: usize = TOKEN_SIDE * TOKEN_SIDE * TOKEN_BANDS;

/// The token decomposition of a cube. Tokens are stored contiguously in
/// enumeration order: spectral group major, then row block, then column
/// block. Within a token the layout mirrors the cube: local band planar,
/// row-major (local_band * 64 + local_row * 8 + local_col).
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    data: Vec<f32>,
    spatial_rows: usize,
    spatial_cols: usize,
    spectral_groups: usize,
    band_names: Vec<String>,
    scale_note: String,
}

impl TokenGrid {
    /// Assembles a grid from raw token values (used by reconstruction).
    pub fn from_tokens(
        data: Vec<f32>,
        spatial_rows: usize,
        spatial_cols: usize,
        spectral_groups: usize,
        band_names: Vec<String>,
        scale_note: String,
    ) -> Result<Self> {
        let count = spatial_rows * spatial_cols * spectral_groups;
        if data.len() != count * TOKEN_LEN {
            return Err(Error::Shape(format!(
                "token data holds {} values, grid {spatial_rows}×{spatial_cols}×{spectral_groups} requires {}",
                data.len(),
                count * TOKEN_LEN
            )));
        }
        if band_names.len() != spectral_groups * TOKEN_BANDS {
            return Err(Error::Shape(format!(
                "{} band names for {} spectral groups",
                band_names.len(),
                spectral_groups
            )));
        }
        Ok(TokenGrid {
            data,
            spatial_rows,
            spatial_cols,
            spectral_groups,
            band_names,
            scale_note,
        })
    }

    pub fn token_count(&self) -> usize {
        self.spatial_rows * self.spatial_cols * self.spectral_groups
    }

    pub fn spatial_rows(&self) -> usize {
        self.spatial_rows
    }

    pub fn spatial_cols(&self) -> usize {
        self.spatial_cols
    }

    pub fn spectral_groups(&self) -> usize {
        self.spectral_groups
    }

    pub fn token(&self, index: usize) -> &[f32] {
        &self.data[index * TOKEN_LEN..(index + 1) * TOKEN_LEN]
    }

    pub fn tokens_flat(&self) -> &[f32] {
        &self.data
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    /// (row_block, col_block, spectral_group) for a token index.
    pub fn index_of(&self, token_index: usize) -> (usize, usize, usize) {
        let per_group = self.spatial_rows * self.spatial_cols;
        let group = token_index / per_group;
        let rest = token_index % per_group;
        (rest / self.spatial_cols, rest % self.spatial_cols, group)
    }
}

/// Splits a cube into 8×8×3 tokens. Width and height must be multiples
/// of 8 and the band count a multiple of 3; spectral groups take bands
/// in cube order, three at a time.
pub fn tokenize(cube: &SpectralCube) -> Result<TokenGrid> {
    if cube.width() % TOKEN_SIDE != 0
        || cube.height() % TOKEN_SIDE != 0
        || cube.bands() % TOKEN_BANDS != 0
    {
        return Err(Error::Shape(format!(
            "cube {}×{}×{} not tokenizable: width and height must be multiples of {TOKEN_SIDE}, bands a multiple of {TOKEN_BANDS}",
            cube.width(),
            cube.height(),
            cube.bands()
        )));
    }
    let rows = cube.height() / TOKEN_SIDE;
    let cols = cube.width() / TOKEN_SIDE;
    let groups = cube.bands() / TOKEN_BANDS;
    let mut data = Vec::with_capacity(rows * cols * groups * TOKEN_LEN);
    for g in 0..groups {
        for rb in 0..rows {
            for cb in 0..cols {
                for lb in 0..TOKEN_BANDS {
                    let band = g * TOKEN_BANDS + lb;
                    for lr in 0..TOKEN_SIDE {
                        let row = rb * TOKEN_SIDE + lr;
                        let base =
                            band * cube.width() * cube.height() + row * cube.width();
                        let col0 = cb * TOKEN_SIDE;
                        data.extend_from_slice(&cube.data()[base + col0..base + col0 + TOKEN_SIDE]);
                    }
                }
            }
        }
    }
    TokenGrid::from_tokens(
        data,
        rows,
        cols,
        groups,
        cube.band_names().to_vec(),
        cube.scale_note().to_string(),
    )
}

/// Reassembles the cube; the inverse of [`tokenize`], value-exact.
pub fn detokenize(grid: &TokenGrid) -> Result<SpectralCube> {
    let width = grid.spatial_cols * TOKEN_SIDE;
    let height = grid.spatial_rows * TOKEN_SIDE;
    let bands = grid.spectral_groups * TOKEN_BANDS;
    let expected = grid.token_count() * TOKEN_LEN;
    if grid.data.len() != expected {
        return Err(Error::Shape(format!(
            "grid holds {} values, declared shape requires {expected}",
            grid.data.len()
        )));
    }
    let mut data = vec![0.0f32; width * height * bands];
    for (idx, token) in grid.data.chunks_exact(TOKEN_LEN).enumerate() {
        let (rb, cb, g) = grid.index_of(idx);
        for lb in 0..TOKEN_BANDS {
            let band = g * TOKEN_BANDS + lb;
            for lr in 0..TOKEN_SIDE {
                let row = rb * TOKEN_SIDE + lr;
                let dst = band * width * height + row * width + cb * TOKEN_SIDE;
                let src = lb * TOKEN_SIDE * TOKEN_SIDE + lr * TOKEN_SIDE;
                data[dst..dst + TOKEN_SIDE].copy_from_slice(&token[src..src + TOKEN_SIDE]);
            }
        }
    }
    SpectralCube::new(
        width,
        height,
        bands,
        grid.band_names.clone(),
        data,
        grid.scale_note.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_cube(w: usize, h: usize, b: usize, seed: u64) -> SpectralCube {
        let mut rng = Rng::new(seed);
        let data: Vec<f32> = (0..w * h * b).map(|_| rng.uniform01() as f32).collect();
        SpectralCube::with_default_names(w, h, b, data).unwrap()
    }

    #[test]
    fn canonical_cube_has_1024_tokens() {
        let grid = tokenize(&random_cube(128, 128, 12, 1)).unwrap();
        assert_eq!(grid.token_count(), 1024);
        assert_eq!(grid.spatial_rows(), 16);
        assert_eq!(grid.spatial_cols(), 16);
        assert_eq!(grid.spectral_groups(), 4);
    }

    #[test]
    fn single_token_cube_is_identity() {
        let cube = random_cube(8, 8, 3, 2);
        let grid = tokenize(&cube).unwrap();
        assert_eq!(grid.token_count(), 1);
        assert_eq!(grid.token(0), cube.data());
        let back = detokenize(&grid).unwrap();
        assert_eq!(back, cube);
    }

    #[test]
    fn sixteen_by_sixteen_by_six_has_8_tokens() {
        // Brute-force count: 2×2 spatial blocks × 2 spectral groups.
        let grid = tokenize(&random_cube(16, 16, 6, 3)).unwrap();
        assert_eq!(grid.token_count(), 8);
    }

    #[test]
    fn non_divisible_shapes_error_names_multiples() {
        let cube = random_cube(12, 16, 6, 4);
        match tokenize(&cube) {
            Err(Error::Shape(msg)) => {
                assert!(msg.contains("multiples of 8") && msg.contains("multiple of 3"), "{msg}");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_is_value_exact() {
        let cube = random_cube(32, 16, 6, 5);
        let back = detokenize(&tokenize(&cube).unwrap()).unwrap();
        assert_eq!(cube, back);
        let a: Vec<u32> = cube.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn token_window_carries_three_consecutive_bands() {
        let cube = random_cube(16, 8, 6, 6);
        let grid = tokenize(&cube).unwrap();
        // Token order: group-major, then row block, then col block.
        // Token 3 is group 1, row block 0, col block 1.
        assert_eq!(grid.index_of(3), (0, 1, 1));
        let token = grid.token(3);
        for lb in 0..3 {
            for lr in 0..8 {
                for lc in 0..8 {
                    let expect = cube.value(3 + lb, lr, 8 + lc);
                    assert_eq!(token[lb * 64 + lr * 8 + lc], expect);
                }
            }
        }
    }

    #[test]
    fn tampered_grid_shape_errors() {
        let cube = random_cube(16, 16, 3, 7);
        let grid = tokenize(&cube).unwrap();
        let mut data = grid.tokens_flat().to_vec();
        data.truncate(data.len() - TOKEN_LEN); // drop one token
        assert!(matches!(
            TokenGrid::from_tokens(
                data,
                grid.spatial_rows(),
                grid.spatial_cols(),
                grid.spectral_groups(),
                grid.band_names().to_vec(),
                String::new()
            ),
            Err(Error::Shape(_))
        ));
    }
}
