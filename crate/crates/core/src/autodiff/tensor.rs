use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// Dense `channels × height × width` tensor in planar layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != c * h * w {
            return Err(Error::shape(format!(
                "tensor data length {} does not match {c}x{h}x{w}",
                data.len()
            )));
        }
        Ok(Self { c, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a += b);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        debug_assert!(self.same_shape(other));
        Tensor {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..*self
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Interleaved HWC image to planar CHW.
    pub fn from_image(img: &ImageTensor) -> Tensor {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let mut out = Tensor::zeros(c, h, w);
        for (i, px) in img.data().chunks_exact(c).enumerate() {
            for (ch, v) in px.iter().enumerate() {
                out.data[ch * h * w + i] = *v;
            }
        }
        out
    }

    /// Planar CHW back to an interleaved image. Fails on non-image channel
    /// counts or non-finite values.
    pub fn to_image(&self) -> Result<ImageTensor> {
        let n = self.plane_len();
        let mut data = vec![0.0; self.len()];
        for ch in 0..self.c {
            for (i, v) in self.plane(ch).iter().enumerate() {
                data[i * self.c + ch] = *v;
            }
        }
        debug_assert_eq!(data.len(), n * self.c);
        ImageTensor::new(self.h, self.w, self.c, data)
    }
}
