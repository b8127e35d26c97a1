use super::{conv2_fft, Image, Kernel};

/// Blend weight along one axis of length `n`: one minus the normalized
/// circular autocorrelation (period `n - 1`) of the kernel projection, with
/// the last sample repeating the first. Zero at both borders, exactly one
/// farther than the projection length from either border.
fn axis_weights(projection: &[f64], n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let period = n - 1;
    let mut z = vec![0.0; period];
    let k = projection.len();
    for lag in 0..k {
        let v: f64 = (0..k - lag).map(|m| projection[m] * projection[m + lag]).sum();
        if v == 0.0 {
            continue;
        }
        z[lag % period] += v;
        if lag != 0 {
            z[(period - lag % period) % period] += v;
        }
    }
    let peak = z.iter().cloned().fold(0.0, f64::max);
    let mut alpha: Vec<f64> = if peak > 0.0 {
        z.iter().map(|v| 1.0 - v / peak).collect()
    } else {
        vec![1.0; period]
    };
    alpha.push(alpha[0]);
    alpha
}

/// Blends the border band of each channel toward its periodically blurred
/// version so the image becomes nearly periodic, which suppresses wrap-around
/// ringing in Fourier-domain deconvolution. Pixels farther than the kernel
/// size from every border are returned untouched.
pub fn edge_taper(image: &Image, kernel: &Kernel) -> Image {
    let (w, h) = image.dims();
    let ax = axis_weights(&kernel.col_sums(), w);
    let ay = axis_weights(&kernel.row_sums(), h);
    let blurred = conv2_fft(image, kernel);
    let mut out = image.clone();
    for c in 0..image.channels() {
        let src = image.plane(c);
        let blur = blurred.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for x in 0..w {
                let a = ay[y] * ax[x];
                if a != 1.0 {
                    let i = y * w + x;
                    dst[i] = a * src[i] + (1.0 - a) * blur[i];
                }
            }
        }
    }
    out
}
