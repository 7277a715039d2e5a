use crate::error::{PtrError, Result};
use serde::{Deserialize, Serialize};

/// Row-major dense matrix over `f64`. All loops run in fixed index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(PtrError::ShapeMismatch(format!(
                "from_vec: {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.cols || y.len() != self.rows {
            return Err(PtrError::ShapeMismatch(format!(
                "matvec: A is {}x{}, x len {}, y len {}",
                self.rows,
                self.cols,
                x.len(),
                y.len()
            )));
        }
        for (r, out) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            *out = acc;
        }
        Ok(())
    }

    /// y = A' g  (transpose product, used for input gradients)
    pub fn matvec_t(&self, g: &[f64], y: &mut [f64]) -> Result<()> {
        if g.len() != self.rows || y.len() != self.cols {
            return Err(PtrError::ShapeMismatch(format!(
                "matvec_t: A is {}x{}, g len {}, y len {}",
                self.rows,
                self.cols,
                g.len(),
                y.len()
            )));
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        for (r, &gr) in g.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (out, a) in y.iter_mut().zip(row.iter()) {
                *out += gr * a;
            }
        }
        Ok(())
    }

    /// A += g x'  (outer-product accumulation into gradient buffers)
    pub fn add_outer(&mut self, g: &[f64], x: &[f64]) -> Result<()> {
        if g.len() != self.rows || x.len() != self.cols {
            return Err(PtrError::ShapeMismatch(format!(
                "add_outer: A is {}x{}, g len {}, x len {}",
                self.rows,
                self.cols,
                g.len(),
                x.len()
            )));
        }
        for (r, &gr) in g.iter().enumerate() {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (a, b) in row.iter_mut().zip(x.iter()) {
                *a += gr * b;
            }
        }
        Ok(())
    }
}
