use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;

/// The agreed-upon pattern hidden in every protected image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapPattern {
    /// Alternates `colors[0]`/`colors[1]` every `cell` pixels, `colors[0]` at the origin.
    Checkerboard { cell: usize, colors: [[f64; 3]; 2] },
    Solid { color: [f64; 3] },
}

impl Default for MapPattern {
    fn default() -> Self {
        MapPattern::Checkerboard {
            cell: 16,
            colors: [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]],
        }
    }
}

/// A pattern together with its rendering at a concrete size.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationMap {
    pub pattern: MapPattern,
    pub realized: ImageTensor,
}

impl LocationMap {
    pub fn new(pattern: MapPattern, height: usize, width: usize, channels: usize) -> Result<Self> {
        let realized = realize_location_map(&pattern, height, width, channels)?;
        Ok(Self { pattern, realized })
    }
}

fn to_channels(color: &[f64; 3], channels: usize) -> Vec<f64> {
    if channels == 3 {
        color.to_vec()
    } else {
        vec![color.iter().sum::<f64>() / 3.0]
    }
}

pub fn realize_location_map(
    pattern: &MapPattern,
    height: usize,
    width: usize,
    channels: usize,
) -> Result<ImageTensor> {
    if !height.is_multiple_of(2) || !width.is_multiple_of(2) || height == 0 || width == 0 {
        return Err(Error::shape(format!("location map size {height}x{width} must be even")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::arg("location map channels must be 1 or 3"));
    }
    match pattern {
        MapPattern::Solid { color } => Ok(ImageTensor::solid(height, width, &to_channels(color, channels))),
        MapPattern::Checkerboard { cell, colors } => {
            if *cell == 0 {
                return Err(Error::arg("checkerboard cell must be positive"));
            }
            let c0 = to_channels(&colors[0], channels);
            let c1 = to_channels(&colors[1], channels);
            let mut img = ImageTensor::filled(height, width, channels, 0.0);
            for y in 0..height {
                for x in 0..width {
                    let parity = (x / cell + y / cell) % 2;
                    img.set_pixel(y, x, if parity == 0 { &c0 } else { &c1 });
                }
            }
            Ok(img)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_white() {
        let img = realize_location_map(&MapPattern::Solid { color: [1.0; 3] }, 4, 4, 3).unwrap();
        assert!(img.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn checkerboard_parity() {
        let p = MapPattern::Checkerboard {
            cell: 2,
            colors: [[0.0; 3], [1.0; 3]],
        };
        let img = realize_location_map(&p, 4, 4, 3).unwrap();
        // pixel(y, x)
        assert_eq!(img.pixel(0, 0), &[0.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 2), &[1.0, 1.0, 1.0]);
        assert_eq!(img.pixel(2, 0), &[1.0, 1.0, 1.0]);
        assert_eq!(img.pixel(2, 2), &[0.0, 0.0, 0.0]);
        assert_eq!(img, realize_location_map(&p, 4, 4, 3).unwrap());
    }

    #[test]
    fn bad_arguments() {
        let p = MapPattern::Checkerboard {
            cell: 0,
            colors: [[0.0; 3], [1.0; 3]],
        };
        assert!(matches!(realize_location_map(&p, 4, 4, 3), Err(Error::Argument(_))));
        assert!(matches!(
            realize_location_map(&MapPattern::default(), 5, 4, 3),
            Err(Error::Shape(_))
        ));
    }
}
