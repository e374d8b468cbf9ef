use rand::Rng;

use super::NumericsError;

/// Dense row-major tensor of `f64` values.
///
/// Invariants, enforced at construction: the element count equals the product
/// of the dimensions, and every value is finite. Graph operations view every
/// tensor as a matrix (rank-1 `[n]` reads as `[1, n]`); higher-rank data such
/// as image batches or convolution kernels is packed into matrix columns by
/// the layer that owns it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel == 0 {
            return Err(NumericsError::InvalidTensor(format!(
                "empty shape {shape:?} is not allowed"
            )));
        }
        if numel != data.len() {
            return Err(NumericsError::InvalidTensor(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(NumericsError::InvalidTensor(format!(
                "non-finite element {bad}"
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            data: vec![0.0; numel.max(1)],
            shape: if shape.is_empty() { vec![1] } else { shape },
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        Tensor::new(shape, vec![value; numel])
    }

    /// A `[1, 1]` tensor holding one value.
    pub fn scalar(value: f64) -> Result<Self, NumericsError> {
        Tensor::new(vec![1, 1], vec![value])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        if rows.is_empty() {
            return Err(NumericsError::InvalidTensor("no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NumericsError::InvalidTensor("ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    /// Seeded uniform draw over `[lo, hi)`, consumed in row-major order.
    pub fn uniform<R: Rng>(
        shape: Vec<usize>,
        lo: f64,
        hi: f64,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        if !(lo < hi) {
            return Err(NumericsError::InvalidArg(format!(
                "uniform bounds [{lo}, {hi}) are inverted"
            )));
        }
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Matrix view `(rows, cols)`: rank-1 is a single row, rank-2 as-is.
    pub fn matrix_dims(&self) -> Result<(usize, usize), NumericsError> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => Err(NumericsError::InvalidTensor(format!(
                "rank-{} tensor {:?} has no matrix view; pack it into columns first",
                self.shape.len(),
                self.shape
            ))),
        }
    }

    /// Same data, new shape; element counts must agree.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, NumericsError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(NumericsError::InvalidTensor(format!(
                "cannot view {} elements as {shape:?}",
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Element at `(r, c)` of the matrix view.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.matrix_dims().expect("matrix view");
        self.data[r * cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_count_and_finiteness() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 4]).is_ok());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::NAN, 0.0]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn matrix_view_of_vector_is_one_row() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.matrix_dims().unwrap(), (1, 3));
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.clone().reshaped(vec![3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(vec![4, 2]).is_err());
    }
}
