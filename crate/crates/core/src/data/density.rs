//! Ground-truth density maps from head annotations.

use crate::error::DataError;
use crate::tensor::{Shape, Tensor};

/// Head annotation: position in pixel units (`0 <= x <= width`,
/// `0 <= y <= height`, pixel `(i, j)` covering `[j, j+1) x [i, i+1)`).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Dot {
    pub x: f32,
    pub y: f32,
}

pub fn check_dot(d: Dot, width: usize, height: usize) -> Result<(), DataError> {
    let ok = d.x.is_finite()
        && d.y.is_finite()
        && (0.0..=width as f32).contains(&d.x)
        && (0.0..=height as f32).contains(&d.y);
    if ok {
        Ok(())
    } else {
        Err(DataError::DotOutOfBounds {
            x: d.x,
            y: d.y,
            width,
            height,
        })
    }
}

/// Adds one unit of mass for a head at `d` with radius `radius`: a Gaussian
/// with `sigma = radius / 3`, evaluated at pixel centers, truncated at the
/// radius and renormalized. When no pixel center lies within the radius the
/// whole unit goes to the nearest pixel.
fn splat(acc: &mut [f64], width: usize, height: usize, d: Dot, radius: f32) {
    let (x, y, r) = (d.x as f64, d.y as f64, radius as f64);
    let sigma = r / 3.0;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let i0 = ((y - r - 0.5).floor().max(0.0)) as usize;
    let i1 = (((y + r - 0.5).ceil()) as isize).clamp(0, height as isize - 1) as usize;
    let j0 = ((x - r - 0.5).floor().max(0.0)) as usize;
    let j1 = (((x + r - 0.5).ceil()) as isize).clamp(0, width as isize - 1) as usize;
    let mut cells = Vec::new();
    let mut total = 0.0;
    for i in i0..=i1.min(height - 1) {
        for j in j0..=j1.min(width - 1) {
            let dy = i as f64 + 0.5 - y;
            let dx = j as f64 + 0.5 - x;
            let d2 = dx * dx + dy * dy;
            if d2 <= r * r {
                let v = (-d2 * inv).exp();
                total += v;
                cells.push((i * width + j, v));
            }
        }
    }
    if cells.is_empty() || total <= 0.0 {
        let i = (y.floor() as usize).min(height - 1);
        let j = (x.floor() as usize).min(width - 1);
        acc[i * width + j] += 1.0;
        return;
    }
    for (k, v) in cells {
        acc[k] += v / total;
    }
}

/// Renders a `1 x 1 x height x width` density map whose sum equals the
/// number of dots, using the same kernel radius for every dot.
pub fn density_map(dots: &[Dot], height: usize, width: usize, radius: f32) -> Result<Tensor<f32>, DataError> {
    if height == 0 || width == 0 {
        return Err(DataError::ImageSize(height.min(width)));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(DataError::Radius(radius));
    }
    let mut acc = vec![0.0f64; height * width];
    for &d in dots {
        check_dot(d, width, height)?;
        splat(&mut acc, width, height, d, radius);
    }
    Ok(Tensor::from_vec(Shape::new(1, 1, height, width), acc.into_iter().map(|v| v as f32).collect())
        .expect("density shape"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dot_sums_to_one() {
        let m = density_map(&[Dot { x: 10.3, y: 4.9 }], 16, 16, 2.5).unwrap();
        assert!((m.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn corner_dots_conserve_mass() {
        let dots = [
            Dot { x: 0.0, y: 0.0 },
            Dot { x: 16.0, y: 16.0 },
            Dot { x: 16.0, y: 0.0 },
            Dot { x: 0.0, y: 8.0 },
        ];
        for r in [3.0, 0.2, 1.0, 0.6] {
            let m = density_map(&dots, 16, 16, r).unwrap();
            assert!((m.sum() - 4.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rejects_out_of_bounds_dots_and_bad_radii() {
        assert!(matches!(
            density_map(&[Dot { x: 17.0, y: 1.0 }], 16, 16, 1.0),
            Err(DataError::DotOutOfBounds { .. })
        ));
        assert!(matches!(
            density_map(&[Dot { x: 1.0, y: 1.0 }], 16, 16, 0.0),
            Err(DataError::Radius(_))
        ));
    }

    #[test]
    fn mass_is_centered_on_the_dot() {
        let m = density_map(&[Dot { x: 8.5, y: 8.5 }], 17, 17, 3.0).unwrap();
        let peak = m.data().iter().copied().fold(0.0f32, f32::max);
        assert_eq!(m.at(0, 0, 8, 8), peak);
        assert!((m.at(0, 0, 8, 7) - m.at(0, 0, 8, 9)).abs() < 1e-7);
    }
}
