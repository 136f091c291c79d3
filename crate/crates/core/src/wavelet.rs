//! Single-level orthonormal 2-D Haar transform.
//!
//! For each 2×2 block `[a b; c d]`:
//! `ll = (a+b+c+d)/2`, `lh = (a-b+c-d)/2`, `hl = (a+b-c-d)/2`, `hh = (a-b-c+d)/2`.
//! The transform matrix is symmetric and orthogonal, so the inverse applies
//! the same butterfly.

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

#[inline]
pub(crate) fn butterfly(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    [
        0.5 * (a + b + c + d),
        0.5 * (a - b + c - d),
        0.5 * (a + b - c - d),
        0.5 * (a - b - c + d),
    ]
}

/// Forward transform of one `h × w` plane into four `h/2 × w/2` planes.
pub(crate) fn forward_plane(src: &[f64], h: usize, w: usize, bands: [&mut [f64]; 4]) {
    let [ll, lh, hl, hh] = bands;
    let w2 = w / 2;
    for i in 0..h / 2 {
        let top = &src[2 * i * w..(2 * i + 1) * w];
        let bot = &src[(2 * i + 1) * w..(2 * i + 2) * w];
        for j in 0..w2 {
            let [s0, s1, s2, s3] = butterfly(top[2 * j], top[2 * j + 1], bot[2 * j], bot[2 * j + 1]);
            let o = i * w2 + j;
            ll[o] = s0;
            lh[o] = s1;
            hl[o] = s2;
            hh[o] = s3;
        }
    }
}

/// Inverse of [`forward_plane`].
pub(crate) fn inverse_plane(bands: [&[f64]; 4], h: usize, w: usize, dst: &mut [f64]) {
    let [ll, lh, hl, hh] = bands;
    let w2 = w / 2;
    for i in 0..h / 2 {
        for j in 0..w2 {
            let o = i * w2 + j;
            let [a, b, c, d] = butterfly(ll[o], lh[o], hl[o], hh[o]);
            dst[2 * i * w + 2 * j] = a;
            dst[2 * i * w + 2 * j + 1] = b;
            dst[(2 * i + 1) * w + 2 * j] = c;
            dst[(2 * i + 1) * w + 2 * j + 1] = d;
        }
    }
}

/// One raster per subband, each `(H/2) × (W/2) × C` with interleaved
/// channels like [`ImageTensor`]. Subband values are not restricted to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub ll: Vec<f64>,
    pub lh: Vec<f64>,
    pub hl: Vec<f64>,
    pub hh: Vec<f64>,
    pub channels: usize,
    pub source_height: usize,
    pub source_width: usize,
}

impl SubbandSet {
    pub fn band_height(&self) -> usize {
        self.source_height / 2
    }

    pub fn band_width(&self) -> usize {
        self.source_width / 2
    }

    pub fn bands(&self) -> [&[f64]; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    pub fn energy(&self) -> f64 {
        self.bands()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum()
    }
}

fn deinterleave(img: &ImageTensor, c: usize) -> Vec<f64> {
    img.data()
        .iter()
        .skip(c)
        .step_by(img.channels())
        .copied()
        .collect()
}

pub fn dwt(img: &ImageTensor) -> Result<SubbandSet> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    if !img.is_even_sized() {
        return Err(Error::shape(format!("dwt needs even dimensions, got {h}x{w}")));
    }
    let n = (h / 2) * (w / 2);
    let mut out = [
        vec![0.0; n * ch],
        vec![0.0; n * ch],
        vec![0.0; n * ch],
        vec![0.0; n * ch],
    ];
    let mut planes = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for c in 0..ch {
        let plane = deinterleave(img, c);
        let [p0, p1, p2, p3] = &mut planes;
        forward_plane(&plane, h, w, [p0, p1, p2, p3]);
        for (band, plane) in out.iter_mut().zip(&planes) {
            for (i, v) in plane.iter().enumerate() {
                band[i * ch + c] = *v;
            }
        }
    }
    let [ll, lh, hl, hh] = out;
    Ok(SubbandSet {
        ll,
        lh,
        hl,
        hh,
        channels: ch,
        source_height: h,
        source_width: w,
    })
}

/// Inverse transform. Output values are not clamped.
pub fn idwt(sb: &SubbandSet) -> Result<ImageTensor> {
    let (h, w, ch) = (sb.source_height, sb.source_width, sb.channels);
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::shape(format!("source size {h}x{w} is not even")));
    }
    let n = (h / 2) * (w / 2) * ch;
    for (name, band) in ["ll", "lh", "hl", "hh"].iter().zip(sb.bands()) {
        if band.len() != n {
            return Err(Error::shape(format!(
                "subband {name} has {} values, expected {n}",
                band.len()
            )));
        }
    }
    let mut data = vec![0.0; h * w * ch];
    let mut plane = vec![0.0; h * w];
    for c in 0..ch {
        let pick = |b: &[f64]| -> Vec<f64> { b.iter().skip(c).step_by(ch).copied().collect() };
        let (ll, lh, hl, hh) = (pick(&sb.ll), pick(&sb.lh), pick(&sb.hl), pick(&sb.hh));
        inverse_plane([&ll, &lh, &hl, &hh], h, w, &mut plane);
        for (i, v) in plane.iter().enumerate() {
            data[i * ch + c] = *v;
        }
    }
    ImageTensor::new(h, w, ch, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_image_goes_to_ll() {
        let sb = dwt(&ImageTensor::filled(4, 6, 3, 0.3)).unwrap();
        assert!(sb.ll.iter().all(|v| (v - 0.6).abs() < 1e-15));
        assert!(sb.lh.iter().chain(&sb.hl).chain(&sb.hh).all(|v| *v == 0.0));
    }

    #[test]
    fn single_impulse_block() {
        let img = ImageTensor::new(2, 2, 1, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let sb = dwt(&img).unwrap();
        assert_eq!((sb.ll[0], sb.lh[0], sb.hl[0], sb.hh[0]), (0.5, 0.5, 0.5, 0.5));
    }

    #[test]
    fn zero_in_zero_out() {
        let sb = dwt(&ImageTensor::filled(4, 4, 1, 0.0)).unwrap();
        assert_eq!(sb.energy(), 0.0);
        assert!(idwt(&sb).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ll_constant_inverts_to_constant() {
        let sb = SubbandSet {
            ll: vec![0.8; 4],
            lh: vec![0.0; 4],
            hl: vec![0.0; 4],
            hh: vec![0.0; 4],
            channels: 1,
            source_height: 4,
            source_width: 4,
        };
        assert!(idwt(&sb).unwrap().data().iter().all(|v| (v - 0.4).abs() < 1e-15));
    }

    #[test]
    fn odd_sizes_and_bad_bands_rejected() {
        assert!(matches!(dwt(&ImageTensor::filled(3, 4, 1, 0.0)), Err(Error::Shape(_))));
        let mut sb = dwt(&ImageTensor::filled(4, 4, 1, 0.0)).unwrap();
        sb.hh.pop();
        assert!(matches!(idwt(&sb), Err(Error::Shape(_))));
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data = (0..6 * 8 * 3).map(|_| rng.gen::<f64>()).collect();
        let img = ImageTensor::new(6, 8, 3, data).unwrap();
        let back = idwt(&dwt(&img).unwrap()).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
