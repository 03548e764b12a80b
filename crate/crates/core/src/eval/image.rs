use crate::error::{config_err, usage_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Colorspace {
    Gray,
    Rgb,
}

impl Colorspace {
    pub fn channels(self) -> usize {
        match self {
            Colorspace::Gray => 1,
            Colorspace::Rgb => 3,
        }
    }

    pub fn from_channels(c: usize) -> Result<Self> {
        match c {
            1 => Ok(Colorspace::Gray),
            3 => Ok(Colorspace::Rgb),
            _ => Err(config_err!("images have 1 or 3 channels, not {c}")),
        }
    }
}

/// Interleaved (row-major, channel-last) pixel storage.
#[derive(Clone, Debug, PartialEq)]
pub enum Pixels {
    /// 8-bit samples on the 0–255 scale.
    U8(Vec<u8>),
    /// Unit-scale reals (nominally 0–1, not clipped).
    Real(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    colorspace: Colorspace,
    pixels: Pixels,
}

impl ImageBuffer {
    pub fn from_u8(width: usize, height: usize, colorspace: Colorspace, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, colorspace, Pixels::U8(data))
    }

    pub fn from_real(width: usize, height: usize, colorspace: Colorspace, data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::Error::Numeric("image contains non-finite samples".into()));
        }
        Self::new(width, height, colorspace, Pixels::Real(data))
    }

    fn new(width: usize, height: usize, colorspace: Colorspace, pixels: Pixels) -> Result<Self> {
        let len = match &pixels {
            Pixels::U8(d) => d.len(),
            Pixels::Real(d) => d.len(),
        };
        if width == 0 || height == 0 {
            return Err(config_err!("image extents must be positive"));
        }
        if len != width * height * colorspace.channels() {
            return Err(config_err!(
                "{width}x{height} {colorspace:?} image needs {} samples, got {len}",
                width * height * colorspace.channels()
            ));
        }
        Ok(ImageBuffer {
            width,
            height,
            colorspace,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn colorspace(&self) -> Colorspace {
        self.colorspace
    }

    pub fn channels(&self) -> usize {
        self.colorspace.channels()
    }

    pub fn pixels(&self) -> &Pixels {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples on the unit scale.
    pub fn to_unit(&self) -> Vec<f64> {
        match &self.pixels {
            Pixels::U8(d) => d.iter().map(|&v| f64::from(v) / 255.0).collect(),
            Pixels::Real(d) => d.clone(),
        }
    }

    /// Samples on the 0–255 scale.
    pub fn to_255(&self) -> Vec<f64> {
        match &self.pixels {
            Pixels::U8(d) => d.iter().map(|&v| f64::from(v)).collect(),
            Pixels::Real(d) => d.iter().map(|&v| v * 255.0).collect(),
        }
    }

    pub fn to_real(&self) -> ImageBuffer {
        ImageBuffer {
            pixels: Pixels::Real(self.to_unit()),
            ..self.clone()
        }
    }

    /// Rounds and clips to 8 bits.
    pub fn to_u8(&self) -> ImageBuffer {
        let data = match &self.pixels {
            Pixels::U8(d) => d.clone(),
            Pixels::Real(d) => d
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        };
        ImageBuffer {
            pixels: Pixels::U8(data),
            ..self.clone()
        }
    }

    /// Clips real samples to [0, 1]; 8-bit images are returned unchanged.
    pub fn clamped(&self) -> ImageBuffer {
        match &self.pixels {
            Pixels::U8(_) => self.clone(),
            Pixels::Real(d) => ImageBuffer {
                pixels: Pixels::Real(d.iter().map(|v| v.clamp(0.0, 1.0)).collect()),
                ..self.clone()
            },
        }
    }

    /// BT.601 luma on the 0–255 scale, one value per pixel.
    pub fn luma_255(&self) -> Vec<f64> {
        let s = self.to_255();
        match self.colorspace {
            Colorspace::Gray => s,
            Colorspace::Rgb => s
                .chunks(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }

    /// Converts to the requested colorspace (luma for RGB→gray, replication for gray→RGB).
    pub fn convert(&self, target: Colorspace) -> ImageBuffer {
        if target == self.colorspace {
            return self.clone();
        }
        let unit = self.to_unit();
        let data: Vec<f64> = match target {
            Colorspace::Gray => unit
                .chunks(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
            Colorspace::Rgb => unit.iter().flat_map(|&v| [v, v, v]).collect(),
        };
        let out = ImageBuffer {
            width: self.width,
            height: self.height,
            colorspace: target,
            pixels: Pixels::Real(data),
        };
        match self.pixels {
            Pixels::U8(_) => out.to_u8(),
            Pixels::Real(_) => out,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageBuffer> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(usage_err!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} image",
                self.width,
                self.height
            ));
        }
        let c = self.channels();
        let pick = |src_w: usize| -> Vec<usize> {
            (0..h)
                .flat_map(|y| (0..w * c).map(move |i| ((y0 + y) * src_w + x0) * c + i))
                .collect()
        };
        let idx = pick(self.width);
        let pixels = match &self.pixels {
            Pixels::U8(d) => Pixels::U8(idx.iter().map(|&i| d[i]).collect()),
            Pixels::Real(d) => Pixels::Real(idx.iter().map(|&i| d[i]).collect()),
        };
        Ok(ImageBuffer {
            width: w,
            height: h,
            colorspace: self.colorspace,
            pixels,
        })
    }

    /// Builds a `w × h` image whose pixel `(x, y)` is this image's pixel `src(x, y)`.
    pub(crate) fn remap(&self, w: usize, h: usize, src: impl Fn(usize, usize) -> (usize, usize)) -> ImageBuffer {
        let c = self.channels();
        let idx: Vec<usize> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .flat_map(|(x, y)| {
                let (sx, sy) = src(x, y);
                let base = (sy * self.width + sx) * c;
                base..base + c
            })
            .collect();
        let pixels = match &self.pixels {
            Pixels::U8(d) => Pixels::U8(idx.iter().map(|&i| d[i]).collect()),
            Pixels::Real(d) => Pixels::Real(idx.iter().map(|&i| d[i]).collect()),
        };
        ImageBuffer {
            width: w,
            height: h,
            colorspace: self.colorspace,
            pixels,
        }
    }

    /// `[1, C, H, W]` tensor on the unit scale.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let (w, h, c) = (self.width, self.height, self.channels());
        let unit = self.to_unit();
        Tensor::from_fn(vec![1, c, h, w], |i| {
            let ch = i / (h * w);
            let p = i % (h * w);
            T::of(unit[p * c + ch])
        })
    }

    /// Inverse of [`ImageBuffer::to_tensor`] for one batch entry, producing real samples.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<ImageBuffer> {
        let s = t.shape();
        if s.len() != 4 || index >= s[0] {
            return Err(usage_err!("expected [N, C, H, W] tensor with N > {index}, got {s:?}"));
        }
        let (c, h, w) = (s[1], s[2], s[3]);
        let colorspace = Colorspace::from_channels(c)?;
        let plane = &t.data()[index * c * h * w..(index + 1) * c * h * w];
        let mut data = vec![0.0; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                data[p * c + ch] = plane[ch * h * w + p].as_f64();
            }
        }
        ImageBuffer::from_real(w, h, colorspace, data)
    }
}
