//! Reconstruction quality metrics, each computed per cube pair and
//! aggregated as mean ± standard deviation across a corpus.
//!
//! All five metrics treat the cube as normalized reflectance (peak 1).
//! SSIM uses 8×8 uniform windows with stride 1, matching the token
//! geometry; SAM is reported in radians.

mod report;

pub use report::{recon_report, write_recon_report, ImageRecon, ReconReport};

use crate::datacube::SpectralCube;
use crate::error::{Error, Result};

/// PSNR reported for a zero-MSE pair, keeping aggregates finite.
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM stabilizers for unit dynamic range.
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// SSIM window edge, aligned with the 8×8 token geometry.
pub const SSIM_WINDOW: usize = 8;

fn check_shapes(x: &SpectralCube, y: &SpectralCube) -> Result<()> {
    if x.width() != y.width() || x.height() != y.height() || x.bands() != y.bands() {
        return Err(Error::Shape(format!(
            "cube shapes differ: {}×{}×{} vs {}×{}×{}",
            x.width(),
            x.height(),
            x.bands(),
            y.width(),
            y.height(),
            y.bands()
        )));
    }
    Ok(())
}

/// Mean squared error over all W·H·B values.
pub fn mse(x: &SpectralCube, y: &SpectralCube) -> Result<f64> {
    check_shapes(x, y)?;
    let mut acc = 0.0f64;
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let d = a as f64 - b as f64;
        acc += d * d;
    }
    Ok(acc / x.data().len() as f64)
}

/// Peak signal-to-noise ratio in decibels; capped at [`PSNR_CAP_DB`]
/// when the error is exactly zero.
pub fn psnr(x: &SpectralCube, y: &SpectralCube, peak: f64) -> Result<f64> {
    let err = mse(x, y)?;
    if err == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// Mean spectral angle in radians, plus the number of pixels skipped
/// because either spectrum had zero norm.
pub fn sam_with_tally(x: &SpectralCube, y: &SpectralCube) -> Result<(f64, usize)> {
    check_shapes(x, y)?;
    let plane = x.width() * x.height();
    let bands = x.bands();
    let mut total = 0.0f64;
    let mut used = 0usize;
    for p in 0..plane {
        let mut dot = 0.0f64;
        let mut nx = 0.0f64;
        let mut ny = 0.0f64;
        for b in 0..bands {
            let a = x.data()[b * plane + p] as f64;
            let c = y.data()[b * plane + p] as f64;
            dot += a * c;
            nx += a * a;
            ny += c * c;
        }
        if nx == 0.0 || ny == 0.0 {
            continue;
        }
        let cos = (dot / (nx.sqrt() * ny.sqrt())).clamp(-1.0, 1.0);
        total += cos.acos();
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every pixel has a zero-norm spectrum; spectral angle undefined".into(),
        ));
    }
    Ok((total / used as f64, plane - used))
}

/// Mean spectral angle in radians.
pub fn sam(x: &SpectralCube, y: &SpectralCube) -> Result<f64> {
    sam_with_tally(x, y).map(|(v, _)| v)
}

/// Relative global dimensional error. Bands whose reference mean is zero
/// are skipped; the tally of skipped bands is returned alongside.
pub fn ergas_with_tally(
    x: &SpectralCube,
    y: &SpectralCube,
    scale_ratio: f64,
) -> Result<(f64, usize)> {
    check_shapes(x, y)?;
    let plane = x.width() * x.height();
    let mut acc = 0.0f64;
    let mut used = 0usize;
    for b in 0..x.bands() {
        let xb = x.band_plane(b);
        let yb = y.band_plane(b);
        let mean: f64 = xb.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        if mean == 0.0 {
            continue;
        }
        let mse_b: f64 = xb
            .iter()
            .zip(yb)
            .map(|(&a, &c)| {
                let d = a as f64 - c as f64;
                d * d
            })
            .sum::<f64>()
            / plane as f64;
        let ratio = mse_b.sqrt() / mean;
        acc += ratio * ratio;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every band has zero reference mean; relative error undefined".into(),
        ));
    }
    Ok((
        100.0 * scale_ratio * (acc / used as f64).sqrt(),
        x.bands() - used,
    ))
}

pub fn ergas(x: &SpectralCube, y: &SpectralCube, scale_ratio: f64) -> Result<f64> {
    ergas_with_tally(x, y, scale_ratio).map(|(v, _)| v)
}

/// Structural similarity: per band, mean over all 8×8 stride-1 uniform
/// windows; the cube value is the mean over bands. Uses summed-area
/// tables; the test suite checks it against a naive window oracle.
pub fn ssim(x: &SpectralCube, y: &SpectralCube) -> Result<f64> {
    check_shapes(x, y)?;
    let (w, h) = (x.width(), x.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "cube {w}×{h} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"
        )));
    }
    let mut band_means = 0.0f64;
    for b in 0..x.bands() {
        band_means += ssim_band(x.band_plane(b), y.band_plane(b), w, h);
    }
    Ok(band_means / x.bands() as f64)
}

/// Summed-area table with a zero first row/column, (w+1)×(h+1).
fn sat(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let stride = w + 1;
    let mut out = vec![0.0f64; stride * (h + 1)];
    for r in 0..h {
        let mut row_acc = 0.0f64;
        for c in 0..w {
            row_acc += plane[r * w + c];
            out[(r + 1) * stride + c + 1] = out[r * stride + c + 1] + row_acc;
        }
    }
    out
}

fn window_sum(table: &[f64], stride: usize, r: usize, c: usize, k: usize) -> f64 {
    table[(r + k) * stride + c + k] + table[r * stride + c]
        - table[r * stride + c + k]
        - table[(r + k) * stride + c]
}

fn ssim_band(xb: &[f32], yb: &[f32], w: usize, h: usize) -> f64 {
    let xf: Vec<f64> = xb.iter().map(|&v| v as f64).collect();
    let yf: Vec<f64> = yb.iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = xf.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = yf.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = xf.iter().zip(&yf).map(|(a, b)| a * b).collect();

    let sx = sat(&xf, w, h);
    let sy = sat(&yf, w, h);
    let sxx = sat(&xx, w, h);
    let syy = sat(&yy, w, h);
    let sxy = sat(&xy, w, h);

    let stride = w + 1;
    let k = SSIM_WINDOW;
    let n = (k * k) as f64;
    let mut acc = 0.0f64;
    let mut count = 0usize;
    for r in 0..=(h - k) {
        for c in 0..=(w - k) {
            let mx = window_sum(&sx, stride, r, c, k) / n;
            let my = window_sum(&sy, stride, r, c, k) / n;
            let vx = window_sum(&sxx, stride, r, c, k) / n - mx * mx;
            let vy = window_sum(&syy, stride, r, c, k) / n - my * my;
            let cov = window_sum(&sxy, stride, r, c, k) / n - mx * my;
            let num = (2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2);
            acc += num / den;
            count += 1;
        }
    }
    acc / count as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datacube::SpectralCube;
    use crate::numerics::Rng;

    fn cube_from(data: Vec<f32>, w: usize, h: usize, b: usize) -> SpectralCube {
        SpectralCube::with_default_names(w, h, b, data).unwrap()
    }

    fn random_pair(w: usize, h: usize, b: usize, seed: u64) -> (SpectralCube, SpectralCube) {
        let mut rng = Rng::new(seed);
        let x: Vec<f32> = (0..w * h * b).map(|_| rng.uniform01() as f32).collect();
        let y: Vec<f32> = (0..w * h * b).map(|_| rng.uniform01() as f32).collect();
        (cube_from(x, w, h, b), cube_from(y, w, h, b))
    }

    #[test]
    fn mse_hand_cases() {
        let x = cube_from(vec![0.0, 0.0], 2, 1, 1);
        let y = cube_from(vec![1.0, 0.0], 2, 1, 1);
        assert_eq!(mse(&x, &x).unwrap(), 0.0);
        assert_eq!(mse(&x, &y).unwrap(), 0.5);
        let ones = cube_from(vec![1.0, 1.0], 2, 1, 1);
        assert_eq!(mse(&x, &ones).unwrap(), 1.0);
    }

    #[test]
    fn mse_shape_mismatch() {
        let x = cube_from(vec![0.0; 4], 2, 2, 1);
        let y = cube_from(vec![0.0; 2], 2, 1, 1);
        assert!(matches!(mse(&x, &y), Err(Error::Shape(_))));
    }

    #[test]
    fn psnr_hand_cases() {
        let x = cube_from(vec![0.0; 100], 10, 10, 1);
        let mut tenth = vec![0.0f32; 100];
        tenth[0] = 1.0; // mse = 0.01
        let y = cube_from(tenth, 10, 10, 1);
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
        let ones = cube_from(vec![1.0; 100], 10, 10, 1);
        assert!((psnr(&x, &ones, 1.0).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn sam_orthogonal_and_scale_invariant() {
        // Spectra (1,0,0) vs (0,1,0) at every pixel.
        let mut x = vec![0.0f32; 2 * 2 * 3];
        let mut y = vec![0.0f32; 2 * 2 * 3];
        for p in 0..4 {
            x[p] = 1.0; // band 0
            y[4 + p] = 1.0; // band 1
        }
        let xc = cube_from(x, 2, 2, 3);
        let yc = cube_from(y, 2, 2, 3);
        assert!((sam(&xc, &yc).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(sam(&xc, &xc).unwrap(), 0.0);

        let doubled: Vec<f32> = xc.data().iter().map(|v| v * 2.0).collect();
        let dc = cube_from(doubled, 2, 2, 3);
        assert_eq!(sam(&xc, &dc).unwrap(), 0.0);
    }

    #[test]
    fn sam_skips_zero_norm_pixels() {
        let mut x = vec![0.0f32; 2 * 1 * 2];
        // Pixel 0 has spectrum (1, 1); pixel 1 is all zero.
        x[0] = 1.0;
        x[2] = 1.0;
        let xc = cube_from(x.clone(), 2, 1, 2);
        let (angle, skipped) = sam_with_tally(&xc, &xc).unwrap();
        assert_eq!(angle, 0.0);
        assert_eq!(skipped, 1);

        let zeros = cube_from(vec![0.0; 4], 2, 1, 2);
        assert!(matches!(sam(&zeros, &zeros), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ergas_identity_and_unit_case() {
        let (x, _) = random_pair(4, 4, 2, 7);
        assert_eq!(ergas(&x, &x, 1.0).unwrap(), 0.0);

        // Single band with RMSE = mean gives exactly 100·scale_ratio.
        let xb = cube_from(vec![0.5; 16], 4, 4, 1);
        let yb = cube_from(vec![0.0; 16], 4, 4, 1); // RMSE 0.5 = mean 0.5
        assert!((ergas(&xb, &yb, 1.0).unwrap() - 100.0).abs() < 1e-9);
        assert!((ergas(&xb, &yb, 0.25).unwrap() - 25.0).abs() < 1e-9);
    }

    #[test]
    fn ergas_two_band_hand_value() {
        // Band 0: mean 1.0, RMSE 0.1. Band 1: mean 1.0, RMSE 0.2.
        let mut x = Vec::new();
        x.extend(std::iter::repeat(1.0f32).take(16));
        x.extend(std::iter::repeat(1.0f32).take(16));
        let mut y = Vec::new();
        y.extend(std::iter::repeat(0.9f32).take(16));
        y.extend(std::iter::repeat(0.8f32).take(16));
        let xc = cube_from(x, 4, 4, 2);
        let yc = cube_from(y, 4, 4, 2);
        let got = ergas(&xc, &yc, 1.0).unwrap();
        let expect = 100.0 * (0.025f64).sqrt(); // ≈ 15.811
        assert!((got - expect).abs() < 1e-6, "{got} vs {expect}");
    }

    #[test]
    fn ergas_all_bands_skipped_is_degenerate() {
        let zeros = cube_from(vec![0.0; 8], 2, 2, 2);
        assert!(matches!(
            ergas(&zeros, &zeros, 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn ssim_identity_and_constant_pair() {
        let (x, _) = random_pair(16, 16, 3, 8);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);

        // Constant a vs constant b: variance terms vanish analytically.
        let xa = cube_from(vec![0.25; 64], 8, 8, 1);
        let xb = cube_from(vec![0.75; 64], 8, 8, 1);
        let a = xa.data()[0] as f64;
        let b = xb.data()[0] as f64;
        let expect = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        assert!((ssim(&xa, &xb).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = cube_from(vec![0.0; 4 * 4], 4, 4, 1);
        assert!(matches!(ssim(&x, &x), Err(Error::Shape(_))));
    }

    #[test]
    fn symmetry_of_mse_and_ssim() {
        let (x, y) = random_pair(16, 16, 4, 21);
        assert_eq!(mse(&x, &y).unwrap(), mse(&y, &x).unwrap());
        let a = ssim(&x, &y).unwrap();
        let b = ssim(&y, &x).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn monotone_degradation_under_noise() {
        let mut rng = Rng::new(31);
        let n = 16 * 16 * 6;
        let base: Vec<f32> = (0..n).map(|_| rng.uniform01() as f32 * 0.8 + 0.1).collect();
        let x = cube_from(base.clone(), 16, 16, 6);
        let noise: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();

        let mut last_mse = -1.0f64;
        let mut last_ergas = -1.0f64;
        let mut last_psnr = f64::INFINITY;
        let mut last_ssim = 2.0f64;
        for sigma in [0.01, 0.05, 0.1] {
            let yv: Vec<f32> = base
                .iter()
                .zip(&noise)
                .map(|(&v, &z)| (v as f64 + sigma * z) as f32)
                .collect();
            let y = cube_from(yv, 16, 16, 6);
            let m = mse(&x, &y).unwrap();
            let e = ergas(&x, &y, 1.0).unwrap();
            let p = psnr(&x, &y, 1.0).unwrap();
            let s = ssim(&x, &y).unwrap();
            assert!(m >= last_mse && e >= last_ergas, "mse/ergas not monotone");
            assert!(p <= last_psnr && s <= last_ssim, "psnr/ssim not monotone");
            last_mse = m;
            last_ergas = e;
            last_psnr = p;
            last_ssim = s;
        }
    }
}
