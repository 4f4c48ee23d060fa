//! Per-pixel containers shared by the renderer and the reconstruction
//! pipeline. Pixel `(x, y)` is column `x`, row `y`, stored row-major.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "grid of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Iterates `(x, y, value)` in row-major order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| (i % w, i / w, v))
    }
}

/// Pixels where the object touches the gel.
pub type ContactMask = Grid<bool>;

impl ContactMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Grid::filled(width, height, false)
    }

    pub fn count(&self) -> usize {
        self.as_slice().iter().filter(|&&m| m).count()
    }

    pub fn any(&self) -> bool {
        self.as_slice().iter().any(|&m| m)
    }

    /// Mean `(x, y)` pixel coordinate of the masked region.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for (x, y, &m) in self.indexed() {
            if m {
                sx += x as f64;
                sy += y as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sx / n as f64, sy / n as f64))
    }
}

/// True when any contact pixel lies on the outermost image row or column.
pub fn contact_touches_border(mask: &ContactMask) -> bool {
    let (w, h) = mask.dims();
    mask.indexed()
        .any(|(x, y, &m)| m && (x == 0 || y == 0 || x + 1 == w || y + 1 == h))
}

pub const FLAT_NORMAL: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Gel surface normals in the sensor frame; unmasked pixels hold `(0, 0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalImage {
    pub normals: Grid<Vector3<f64>>,
    pub mask: ContactMask,
}

impl NormalImage {
    pub fn flat(width: usize, height: usize) -> Self {
        Self {
            normals: Grid::filled(width, height, FLAT_NORMAL),
            mask: ContactMask::empty(width, height),
        }
    }

    pub fn new(normals: Grid<Vector3<f64>>, mask: ContactMask) -> Result<Self> {
        if normals.dims() != mask.dims() {
            return Err(Error::Argument(format!(
                "normal image {:?} and mask {:?} differ in size",
                normals.dims(),
                mask.dims()
            )));
        }
        Ok(Self { normals, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

/// Indentation depth in millimetres, positive into the gel, zero off contact.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub depth: Grid<f64>,
    pub mask: ContactMask,
}

impl DepthImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            depth: Grid::filled(width, height, 0.0),
            mask: ContactMask::empty(width, height),
        }
    }

    pub fn new(depth: Grid<f64>, mask: ContactMask) -> Result<Self> {
        if depth.dims() != mask.dims() {
            return Err(Error::Argument(format!(
                "depth image {:?} and mask {:?} differ in size",
                depth.dims(),
                mask.dims()
            )));
        }
        Ok(Self { depth, mask })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }

    pub fn max_depth(&self) -> f64 {
        self.depth.as_slice().iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn border_detection() {
        let mut mask = ContactMask::empty(8, 6);
        assert!(!contact_touches_border(&mask));
        for y in 2..4 {
            for x in 3..5 {
                mask.set(x, y, true);
            }
        }
        assert!(!contact_touches_border(&mask));
        mask.set(7, 3, true);
        assert!(contact_touches_border(&mask));
        let mut mask = ContactMask::empty(8, 6);
        mask.set(4, 0, true);
        assert!(contact_touches_border(&mask));
    }

    #[test]
    fn grid_indexing_is_row_major() {
        let g = Grid::from_fn(3, 2, |x, y| 10 * y + x);
        assert_eq!(g.as_slice(), &[0, 1, 2, 10, 11, 12]);
        assert_eq!(*g.get(2, 1), 12);
        let seen: Vec<_> = g.indexed().map(|(x, y, v)| (x, y, *v)).collect();
        assert_eq!(seen[4], (1, 1, 11));
        assert!(Grid::from_vec(2, 2, vec![0; 3]).is_err());
    }

    #[test]
    fn mask_centroid() {
        let mut mask = ContactMask::empty(5, 5);
        assert_eq!(mask.centroid(), None);
        mask.set(1, 1, true);
        mask.set(3, 2, true);
        assert_eq!(mask.centroid(), Some((2.0, 1.5)));
        assert_eq!(mask.count(), 2);
    }
}
