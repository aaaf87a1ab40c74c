//! Raster images, PNG I/O, colour conversion and the bicubic degradation.

mod patches;
mod resample;
pub mod synth;

pub use patches::{read_manifest, PatchPair, PatchSampler, SamplerState};
pub(crate) use resample::resize_plane;
pub use resample::{bicubic_downsample, bicubic_upsample, cubic_kernel, nearest_upsample, resample_weights, Taps};

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Planar (CHW) image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    pub source: Option<PathBuf>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::usage(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::usage(format!(
                "{}x{}x{} image needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::usage("image values must lie in [0, 1]"));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
            source: None,
        })
    }

    /// Builds an image, clamping values into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            if !v.is_finite() {
                return Err(Error::Numeric("image construction".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(height, width, channels, data)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn map_planes(&self, height: usize, width: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let p = f(self.plane(c));
            debug_assert_eq!(p.len(), height * width);
            data.extend(p);
        }
        Self::from_clamped(height, width, self.channels, data)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::usage(format!(
                "crop {}x{} at ({top},{left}) exceeds {}x{} image",
                height, width, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for c in 0..self.channels {
            let p = self.plane(c);
            for y in top..top + height {
                data.extend_from_slice(&p[y * self.width + left..y * self.width + left + width]);
            }
        }
        Self::new(height, width, self.channels, data)
    }

    /// Removes `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<Self> {
        if self.height <= 2 * border || self.width <= 2 * border {
            return Err(Error::usage(format!(
                "cannot remove a {border}-pixel border from a {}x{} image",
                self.height, self.width
            )));
        }
        self.crop(border, border, self.height - 2 * border, self.width - 2 * border)
    }

    /// Centre crop to the largest extents divisible by `factor`.
    pub fn crop_to_multiple(&self, factor: usize) -> Result<Self> {
        let h = self.height / factor * factor;
        let w = self.width / factor * factor;
        if h == 0 || w == 0 {
            return Err(Error::usage(format!(
                "{}x{} image is smaller than the scale factor {factor}",
                self.height, self.width
            )));
        }
        self.crop((self.height - h) / 2, (self.width - w) / 2, h, w)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            for row in self.plane(c).chunks(self.width) {
                data.extend(row.iter().rev());
            }
        }
        Image { data, ..self.clone() }
    }

    /// Quarter turn counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.channels {
            let p = self.plane(c);
            for y in 0..w {
                for x in 0..h {
                    data.push(p[x * w + (w - 1 - y)]);
                }
            }
        }
        Image {
            height: w,
            width: h,
            data,
            ..self.clone()
        }
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|e| Error::io(path, e))?;
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let mut img = match decoded {
            image::DynamicImage::ImageLuma8(buf) => {
                let data = buf.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
                Image::new(h, w, 1, data)?
            }
            image::DynamicImage::ImageRgb8(buf) => {
                let raw = buf.into_raw();
                let mut data = vec![0.0; raw.len()];
                for (i, px) in raw.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        data[c * h * w + i] = px[c] as f64 / 255.0;
                    }
                }
                Image::new(h, w, 3, data)?
            }
            other => {
                return Err(Error::io(
                    path,
                    format!("unsupported pixel format {:?}; expected 8-bit RGB or grayscale", other.color()),
                ))
            }
        };
        img.source = Some(path.to_path_buf());
        Ok(img)
    }

    /// 8-bit quantisation with round-half-up.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.height * self.width;
        let mut out = vec![0u8; n * self.channels];
        for c in 0..self.channels {
            for (i, &v) in self.plane(c).iter().enumerate() {
                out[i * self.channels + c] = (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let color = if self.channels == 3 {
            image::ExtendedColorType::Rgb8
        } else {
            image::ExtendedColorType::L8
        };
        image::save_buffer_with_format(
            path,
            &self.to_bytes(),
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::io(path, e))
    }

    /// Stacks same-sized images into an `N × C × H × W` tensor.
    pub fn batch_to_tensor<T: Scalar>(images: &[Image]) -> Result<Tensor<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::usage("cannot build a tensor from zero images"))?;
        let (c, h, w) = (first.channels, first.height, first.width);
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if (img.channels, img.height, img.width) != (c, h, w) {
                return Err(Error::usage("images in a batch must share extents"));
            }
            data.extend(img.data.iter().map(|&v| T::from_f64(v)));
        }
        Tensor::from_vec(&[images.len(), c, h, w], data)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Self::batch_to_tensor(std::slice::from_ref(self))
    }

    /// Item `index` of an NCHW tensor, clamped into `[0, 1]`.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let s = t.shape();
        if s.len() != 4 || index >= s[0] {
            return Err(Error::usage(format!("no item {index} in tensor of shape {:?}", s)));
        }
        let per = s[1] * s[2] * s[3];
        let data = t.data()[index * per..(index + 1) * per]
            .iter()
            .map(|v| v.as_f64())
            .collect();
        Self::from_clamped(s[2], s[3], s[1], data)
    }
}

pub const Y_OFFSET: f64 = 16.0;
const Y_COEFFS: [f64; 3] = [65.481, 128.553, 24.966];

/// Studio-swing BT.601 luma, stored as `Y/255`.
pub fn rgb_to_y(image: &Image) -> Result<Image> {
    if image.channels != 3 {
        return Err(Error::usage(format!(
            "luma conversion needs an RGB image, got {} channel(s)",
            image.channels
        )));
    }
    let (r, g, b) = (image.plane(0), image.plane(1), image.plane(2));
    let data = (0..image.height * image.width)
        .map(|i| (Y_OFFSET + Y_COEFFS[0] * r[i] + Y_COEFFS[1] * g[i] + Y_COEFFS[2] * b[i]) / 255.0)
        .collect();
    let mut y = Image::new(image.height, image.width, 1, data)?;
    y.source = image.source.clone();
    Ok(y)
}

/// Separable Gaussian blur with edge replication; radius `ceil(3σ)`.
pub fn gaussian_blur(image: &Image, sigma: f64) -> Result<Image> {
    if sigma <= 0.0 {
        return Err(Error::usage("blur sigma must be positive"));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (h, w) = (image.height, image.width);
    image.map_planes(h, w, |p| {
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| {
                        let xx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                        kv * p[y * w + xx]
                    })
                    .sum();
            }
        }
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                out[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| {
                        let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                        kv * tmp[yy * w + x]
                    })
                    .sum();
            }
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_of_black_white_gray() {
        let cases = [(0.0, 16.0 / 255.0), (1.0, 235.0 / 255.0), (0.5, (16.0 + 109.5) / 255.0)];
        for (v, expected) in cases {
            let img = Image::constant(2, 2, 3, v).unwrap();
            let y = rgb_to_y(&img).unwrap();
            assert!((y.data()[0] - expected).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn luma_rejects_gray_input() {
        let img = Image::constant(2, 2, 1, 0.5).unwrap();
        assert!(matches!(rgb_to_y(&img), Err(Error::Usage(_))));
    }

    #[test]
    fn byte_normalisation_endpoints_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let bytes: Vec<f64> = (0..12).map(|i| [0.0, 255.0, 7.0, 128.0][i % 4] / 255.0).collect();
        let img = Image::new(2, 2, 3, bytes).unwrap();
        img.save_png(&path).unwrap();
        let back = Image::load_png(&path).unwrap();
        assert_eq!(back.plane(0)[0], 0.0);
        assert_eq!(back.plane(0)[1], 1.0);
        back.save_png(dir.path().join("b.png")).unwrap();
        let again = Image::load_png(dir.path().join("b.png")).unwrap();
        assert_eq!(back.to_bytes(), again.to_bytes());
        assert_eq!(
            std::fs::read(dir.path().join("a.png")).unwrap(),
            std::fs::read(dir.path().join("b.png")).unwrap()
        );
    }

    #[test]
    fn sixteen_bit_png_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> = image::ImageBuffer::from_pixel(4, 4, image::Luma([1000u16]));
        buf.save(&path).unwrap();
        let err = Image::load_png(&path).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("deep.png"));
    }

    #[test]
    fn missing_file_names_path() {
        let err = Image::load_png("/nonexistent/x.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.png"));
    }

    #[test]
    fn round_half_up_quantisation() {
        let img = Image::new(1, 1, 1, vec![0.5 / 255.0]).unwrap();
        assert_eq!(img.to_bytes(), vec![1]);
    }

    #[test]
    fn crop_to_multiple_centres() {
        let img = Image::constant(10, 9, 1, 0.2).unwrap();
        let c = img.crop_to_multiple(4).unwrap();
        assert_eq!((c.height(), c.width()), (8, 8));
    }

    #[test]
    fn rotations_compose_to_identity() {
        let data: Vec<f64> = (0..6).map(|v| v as f64 / 10.0).collect();
        let img = Image::new(2, 3, 1, data).unwrap();
        let r = img.rotate90().rotate90().rotate90().rotate90();
        assert_eq!(r, img);
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }
}
