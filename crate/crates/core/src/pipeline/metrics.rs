use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn check(a: &Image, b: &Image) -> Result<()> {
    if !a.same_extents(b) {
        return Err(Error::shape(format!(
            "metric inputs differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio for unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let n = a.values().len() as f64;
    let mse = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum::<f64>()
        / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over all 8x8 windows (stride 1) of every channel. Window
/// statistics use population variance and covariance.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..a.channels() {
        let (pa, pb) = (a.plane(c), b.plane(c));
        for y0 in 0..=h - SSIM_WINDOW {
            for x0 in 0..=w - SSIM_WINDOW {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in y0..y0 + SSIM_WINDOW {
                    for x in x0..x0 + SSIM_WINDOW {
                        let (u, v) = (pa[y * w + x] as f64, pb[y * w + x] as f64);
                        sa += u;
                        sb += v;
                        saa += u * u;
                        sbb += v * v;
                        sab += u * v;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = (saa / n - ma * ma).max(0.0);
                let vb = (sbb / n - mb * mb).max(0.0);
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(h: usize, w: usize, inv: bool) -> Image {
        Image::from_fn(h, w, 1, |_, y, x| if ((y + x) % 2 == 0) ^ inv { 1.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn psnr_cases() {
        let a = checker(8, 8, false);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert!(psnr(&a, &checker(8, 8, true)).unwrap().abs() < 1e-12);
        let lo = Image::filled(4, 4, 3, 0.2).unwrap();
        let hi = Image::filled(4, 4, 3, 0.3).unwrap();
        assert!((psnr(&lo, &hi).unwrap() - 20.0).abs() < 1e-4);
        assert!(psnr(&lo, &checker(8, 8, false)).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = checker(9, 10, false);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let (x, y) = (0.3f64, 0.7f64);
        let expected = (2.0 * x * y + SSIM_C1) / (x * x + y * y + SSIM_C1);
        let got = ssim(
            &Image::filled(8, 8, 1, 0.3).unwrap(),
            &Image::filled(8, 8, 1, 0.7).unwrap(),
        )
        .unwrap();
        assert!((got - expected).abs() < 1e-6);
    }

    #[test]
    fn negative_is_anticorrelated() {
        let a = Image::from_fn(10, 10, 1, |_, y, x| {
            0.5 + 0.4 * (((y * 3 + x * 5) % 7) as f32 / 6.0 - 0.5)
        })
        .unwrap();
        let neg = Image::from_fn(10, 10, 1, |_, y, x| 1.0 - a.get(0, y, x)).unwrap();
        assert!(ssim(&a, &neg).unwrap() < 0.0);
        assert!(ssim(
            &Image::filled(7, 8, 1, 0.0).unwrap(),
            &Image::filled(7, 8, 1, 0.0).unwrap()
        )
        .is_err());
    }
}
