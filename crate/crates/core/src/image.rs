//! RGB frames, square crops with mean fill, PNG IO.
//!
//! Coordinates are continuous: pixel `(i, j)` covers `[j, j+1) x [i, i+1)`,
//! so its center sits at `(j + 0.5, i + 0.5)`.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::path::Path;

/// Planar RGB image with values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// `3 * height * width` values, channel-major.
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height || width == 0 || height == 0 {
            return Err(Error::Shape(format!(
                "frame {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, width * height));
        }
        Frame { width, height, data }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel_means(&self) -> [f64; 3] {
        let n = (self.width * self.height) as f64;
        [0, 1, 2].map(|c| self.data[c * self.width * self.height..(c + 1) * self.width * self.height].iter().sum::<f64>() / n)
    }

    /// `(1, 3, H, W)` tensor view of the frame.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, 3, self.height, self.width], self.data.clone()).expect("frame size is consistent")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if n != 1 || c != 3 {
            return Err(Error::Shape(format!("expected (1, 3, H, W), got {:?}", t.shape())));
        }
        Frame::new(w, h, t.data().to_vec())
    }
}

/// Square crop of side `side` centered at `center`, resampled bilinearly to
/// `out_size` pixels. Area outside the frame takes the per-channel mean.
///
/// Returns `(1, 3, out_size, out_size)`.
pub fn crop_and_resize(frame: &Frame, center: (f64, f64), side: f64, out_size: usize) -> Result<Tensor> {
    if !(side.is_finite() && side > 0.0) || out_size == 0 {
        return Err(Error::Usage(format!("crop side {side} / size {out_size} must be positive")));
    }
    let means = frame.channel_means();
    let scale = side / out_size as f64;
    let x0 = center.0 - side / 2.0;
    let y0 = center.1 - side / 2.0;
    let (w, h) = (frame.width as isize, frame.height as isize);
    let mut out = vec![0.0; 3 * out_size * out_size];
    // source pixel-index coordinate of each output row/column
    let coords = |origin: f64| -> Vec<(isize, f64)> {
        (0..out_size)
            .map(|u| {
                let s = origin + (u as f64 + 0.5) * scale - 0.5;
                let f = s.floor();
                (f as isize, s - f)
            })
            .collect()
    };
    let xs = coords(x0);
    let ys = coords(y0);
    for c in 0..3 {
        let fetch = |y: isize, x: isize| {
            if y < 0 || x < 0 || y >= h || x >= w {
                means[c]
            } else {
                frame.get(c, y as usize, x as usize)
            }
        };
        let plane = &mut out[c * out_size * out_size..(c + 1) * out_size * out_size];
        for (v, &(yi, fy)) in ys.iter().enumerate() {
            for (u, &(xi, fx)) in xs.iter().enumerate() {
                let a = fetch(yi, xi);
                let b = fetch(yi, xi + 1);
                let top = if fx == 0.0 { a } else { a + (b - a) * fx };
                let val = if fy == 0.0 {
                    top
                } else {
                    let c0 = fetch(yi + 1, xi);
                    let c1 = fetch(yi + 1, xi + 1);
                    let bottom = if fx == 0.0 { c0 } else { c0 + (c1 - c0) * fx };
                    top + (bottom - top) * fy
                };
                plane[v * out_size + u] = val;
            }
        }
    }
    Tensor::from_vec(&[1, 3, out_size, out_size], out)
}

pub fn load_png(path: &Path) -> Result<Frame> {
    let img = ::image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f64;
        }
    }
    Frame::new(w, h, data)
}

pub fn save_png(frame: &Frame, path: &Path) -> Result<()> {
    let mut img = ::image::RgbImage::new(frame.width as u32, frame.height as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            px[c] = frame.get(c, y as usize, x as usize).round().clamp(0.0, 255.0) as u8;
        }
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Draws a one-pixel rectangle outline (continuous-coordinate box corners).
pub fn draw_box(frame: &mut Frame, corners: (f64, f64, f64, f64), rgb: [f64; 3]) {
    let clampx = |v: f64| (v.floor().max(0.0) as usize).min(frame.width - 1);
    let clampy = |v: f64| (v.floor().max(0.0) as usize).min(frame.height - 1);
    let (x0, y0, x1, y1) = (clampx(corners.0), clampy(corners.1), clampx(corners.2), clampy(corners.3));
    for (c, v) in rgb.iter().enumerate() {
        for x in x0..=x1 {
            frame.set(c, y0, x, *v);
            frame.set(c, y1, x, *v);
        }
        for y in y0..=y1 {
            frame.set(c, y, x0, *v);
            frame.set(c, y, x1, *v);
        }
    }
}

/// Grayscale rendering of a nonnegative grid, scaled so the maximum is white.
pub fn heatmap_frame(grid: &[f64], h: usize, w: usize) -> Result<Frame> {
    if grid.len() != h * w {
        return Err(Error::Shape(format!("grid of {} values is not {h}x{w}", grid.len())));
    }
    let max = grid.iter().cloned().fold(0.0, f64::max);
    let norm = if max > 0.0 { 255.0 / max } else { 0.0 };
    let plane: Vec<f64> = grid.iter().map(|v| v * norm).collect();
    let mut data = plane.clone();
    data.extend_from_slice(&plane);
    data.extend_from_slice(&plane);
    Frame::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Frame {
        let data = (0..3 * w * h).map(|i| (i % 251) as f64).collect();
        Frame::new(w, h, data).unwrap()
    }

    #[test]
    fn inside_crop_is_identity() {
        let f = ramp(40, 30);
        let t = crop_and_resize(&f, (20.0, 15.0), 10.0, 10).unwrap();
        for c in 0..3 {
            for y in 0..10 {
                for x in 0..10 {
                    assert_eq!(t.data()[(c * 10 + y) * 10 + x], f.get(c, 10 + y, 15 + x));
                }
            }
        }
    }

    #[test]
    fn outside_crop_is_mean() {
        let f = ramp(20, 20);
        let m = f.channel_means();
        let t = crop_and_resize(&f, (-500.0, 300.0), 16.0, 8).unwrap();
        for c in 0..3 {
            assert!(t.data()[c * 64..(c + 1) * 64].iter().all(|v| *v == m[c]));
        }
    }

    #[test]
    fn constant_downscale() {
        let f = Frame::filled(64, 64, [17.0, 99.5, 3.25]);
        let t = crop_and_resize(&f, (32.0, 32.0), 64.0, 32).unwrap();
        for c in 0..3 {
            let v = [17.0, 99.5, 3.25][c];
            assert!(t.data()[c * 1024..(c + 1) * 1024].iter().all(|x| *x == v));
        }
        assert!(crop_and_resize(&f, (0.0, 0.0), 0.0, 4).is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.png");
        let f = ramp(9, 7);
        save_png(&f, &p).unwrap();
        assert_eq!(load_png(&p).unwrap(), f);
    }
}
