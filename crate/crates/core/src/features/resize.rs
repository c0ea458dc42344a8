//! Bilinear resampling with half-pixel (align-corners = false) sampling.
//!
//! Output index `o` along an axis of input length `n` and output length `m`
//! samples the source coordinate
//!
//! ```text
//! s  = max(0, (o + 0.5) · n / m − 0.5)
//! i0 = min(floor(s), n − 1),  i1 = min(i0 + 1, n − 1),  t = s − i0
//! out = v[i0] + t · (v[i1] − v[i0])
//! ```
//!
//! and the 2-D case applies this along columns, then along rows. Writing the
//! blend as `a + t·(b − a)` keeps constant inputs bit-exact.

/// Precomputed interpolation taps for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub t: f32,
}

pub fn axis_taps(input: usize, output: usize) -> Vec<Tap> {
    assert!(input >= 1 && output >= 1, "axis lengths must be >= 1");
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let s = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let t = if hi == lo { 0.0 } else { (s - lo as f64) as f32 };
            Tap { lo, hi, t }
        })
        .collect()
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Resizes one row-major `src_h × src_w` plane into `dst` (`dst_h × dst_w`).
pub fn resize_plane(
    src: &[f32],
    src_h: usize,
    src_w: usize,
    dst: &mut [f32],
    dst_h: usize,
    dst_w: usize,
) {
    debug_assert_eq!(src.len(), src_h * src_w);
    debug_assert_eq!(dst.len(), dst_h * dst_w);
    if src_h == dst_h && src_w == dst_w {
        dst.copy_from_slice(src);
        return;
    }
    let rows = axis_taps(src_h, dst_h);
    let cols = axis_taps(src_w, dst_w);
    for (r, rt) in rows.iter().enumerate() {
        let top = &src[rt.lo * src_w..(rt.lo + 1) * src_w];
        let bottom = &src[rt.hi * src_w..(rt.hi + 1) * src_w];
        let out = &mut dst[r * dst_w..(r + 1) * dst_w];
        for (o, ct) in out.iter_mut().zip(&cols) {
            let a = lerp(top[ct.lo], top[ct.hi], ct.t);
            let b = lerp(bottom[ct.lo], bottom[ct.hi], ct.t);
            *o = lerp(a, b, rt.t);
        }
    }
}

pub fn resize(src: &[f32], src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Vec<f32> {
    let mut dst = vec![0.0; dst_h * dst_w];
    resize_plane(src, src_h, src_w, &mut dst, dst_h, dst_w);
    dst
}
