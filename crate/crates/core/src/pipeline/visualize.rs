use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Tensor;

/// Piecewise-linear "heat" colormap through black (0), red (1/3),
/// yellow (2/3) and white (1).
pub fn heat_colormap(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0) * 3.0;
    [v.min(1.0), (v - 1.0).clamp(0.0, 1.0), (v - 2.0).clamp(0.0, 1.0)]
}

/// Heatmap of a `[C, H, W]` feature: per-pixel mean absolute activation over
/// channels, min-max normalised (a flat map normalises to 0), then coloured
/// with [`heat_colormap`].
pub fn visualize_feature(x_e: &Tensor) -> Result<Image> {
    let &[c, h, w] = x_e.dims() else {
        return Err(Error::shape(format!("feature must be [C,H,W], got {:?}", x_e.dims())));
    };
    let plane = h * w;
    let act: Vec<f64> = (0..plane)
        .map(|i| (0..c).map(|ch| (x_e.data()[ch * plane + i] as f64).abs()).sum::<f64>() / c as f64)
        .collect();
    let lo = act.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = act.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: Vec<f32> = act
        .iter()
        .map(|&a| if hi > lo { ((a - lo) / (hi - lo)) as f32 } else { 0.0 })
        .collect();
    Image::from_fn(h, w, 3, |ch, y, x| heat_colormap(norm[y * w + x])[ch])
}
