//! Dense `(n, channels, height, width)` sample container.
//!
//! Every module exchanges samples through [`ImageBatch`]. Vector-valued data
//! (Gaussian oracles, feature vectors) uses `height = width = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a single item: `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ItemShape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Flat vector shape `(dim, 1, 1)`.
    pub const fn vector(dim: usize) -> Self {
        Self::new(dim, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for ItemShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    n: usize,
    shape: ItemShape,
    data: Vec<f64>,
}

impl ImageBatch {
    pub fn zeros(n: usize, shape: ItemShape) -> Self {
        Self {
            n,
            shape,
            data: vec![0.0; n * shape.len()],
        }
    }

    pub fn from_vec(n: usize, shape: ItemShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * shape.len() {
            return Err(Error::Length {
                expected: n * shape.len(),
                got: data.len(),
            });
        }
        Ok(Self { n, shape, data })
    }

    /// Builds a vector-shaped batch from rows of equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::Length {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), ItemShape::vector(dim), data)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn shape(&self) -> ItemShape {
        self.shape
    }

    /// Number of scalars per item.
    pub fn item_len(&self) -> usize {
        self.shape.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self, i: usize) -> &[f64] {
        let len = self.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn item_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.item_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn items(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.item_len().max(1))
    }

    /// Reinterprets the item layout without touching the data.
    pub fn reshaped(mut self, shape: ItemShape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::Shape(format!(
                "cannot reshape items of {} into {}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copies the selected items, in the given order, into a new batch.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            data.extend_from_slice(self.item(i));
        }
        Self {
            n: indices.len(),
            shape: self.shape,
            data,
        }
    }

    /// Concatenates batches of the same item shape.
    pub fn concat(parts: &[&ImageBatch]) -> Result<Self> {
        let shape = parts
            .first()
            .map(|b| b.shape)
            .ok_or_else(|| Error::InvalidArgument("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut n = 0;
        for part in parts {
            if part.shape != shape {
                return Err(Error::Shape(format!(
                    "cannot concatenate {} with {}",
                    shape, part.shape
                )));
            }
            data.extend_from_slice(&part.data);
            n += part.n;
        }
        Ok(Self { n, shape, data })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ImageBatch) -> bool {
        self.n == other.n && self.shape == other.shape
    }

    /// Element-wise `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ImageBatch) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::Shape(format!(
                "axpy between {}x{} and {}x{}",
                self.n, self.shape, other.n, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts to rows of `f64`, one per item.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.items().take(self.n).map(<[f64]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_and_concat_preserve_items() {
        let b = ImageBatch::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let s = b.select(&[2, 0]);
        assert_eq!(s.as_slice(), &[5.0, 6.0, 1.0, 2.0]);
        let c = ImageBatch::concat(&[&s, &b]).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.item(4), &[5.0, 6.0]);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(ImageBatch::from_vec(2, ItemShape::new(1, 2, 2), vec![0.0; 7]).is_err());
    }

    #[test]
    fn reshape_checks_item_size() {
        let b = ImageBatch::zeros(3, ItemShape::new(1, 2, 2));
        assert!(b.clone().reshaped(ItemShape::vector(4)).is_ok());
        assert!(b.reshaped(ItemShape::vector(5)).is_err());
    }
}
