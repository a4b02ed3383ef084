//! Separable Gaussian filtering.

/// Normalized 1D Gaussian taps of length `2 · radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    if sigma <= 0.0 {
        let mut k = vec![0.0; 2 * radius + 1];
        k[radius] = 1.0;
        return k;
    }
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-0.5 * x * x / (sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Radius covering three standard deviations.
pub fn default_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(0.0) as usize
}

/// Convolves one axis in place with edge replication.
pub(crate) fn convolve_axis(data: &mut [f32], dims: [usize; 3], axis: usize, kernel: &[f64]) {
    let n = dims[axis];
    if kernel.len() <= 1 || n == 0 {
        return;
    }
    let radius = kernel.len() / 2;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let (outer_a, outer_b) = match axis {
        0 => (dims[1], dims[2]),
        1 => (dims[0], dims[2]),
        _ => (dims[0], dims[1]),
    };
    let mut line = vec![0f64; n];
    for b in 0..outer_b {
        for a in 0..outer_a {
            let base = match axis {
                0 => dims[0] * (a + dims[1] * b),
                1 => a + dims[0] * dims[1] * b,
                _ => a + dims[0] * b,
            };
            for (t, slot) in line.iter_mut().enumerate() {
                *slot = data[base + t * stride] as f64;
            }
            for t in 0..n {
                let mut acc = 0.0;
                for (o, &w) in kernel.iter().enumerate() {
                    let s = (t + o).saturating_sub(radius).min(n - 1);
                    acc += w * line[s];
                }
                data[base + t * stride] = acc as f32;
            }
        }
    }
}

/// Gaussian blur with per-axis sigma in voxels. Axes with sigma 0 are untouched.
pub fn gaussian_blur(data: &mut [f32], dims: [usize; 3], sigma: [f64; 3]) {
    for (axis, &s) in sigma.iter().enumerate() {
        if s > 0.0 {
            let kernel = gaussian_kernel(s, default_radius(s));
            convolve_axis(data, dims, axis, &kernel);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.5, 5);
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..5 {
            assert!((k[i] - k[10 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn blur_preserves_constants() {
        let dims = [6, 5, 4];
        let mut d = vec![0.25f32; 120];
        gaussian_blur(&mut d, dims, [1.0, 2.0, 0.7]);
        assert!(d.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }

    #[test]
    fn blur_matches_direct_convolution_along_y() {
        let dims = [3, 9, 2];
        let src: Vec<f32> = (0..54).map(|i| ((i * 37) % 11) as f32 / 11.0).collect();
        let mut d = src.clone();
        let k = gaussian_kernel(1.2, 4);
        convolve_axis(&mut d, dims, 1, &k);
        for z in 0..2 {
            for y in 0..9i64 {
                for x in 0..3 {
                    let mut acc = 0.0;
                    for o in -4i64..=4 {
                        let yy = (y + o).clamp(0, 8) as usize;
                        acc += k[(o + 4) as usize] * src[x + 3 * (yy + 9 * z)] as f64;
                    }
                    let got = d[x + 3 * (y as usize + 9 * z)];
                    assert!((got as f64 - acc).abs() < 1e-6);
                }
            }
        }
    }
}
