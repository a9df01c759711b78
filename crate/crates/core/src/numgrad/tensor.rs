use super::NumError;

/// Dense row-major `f32` tensor. Immutable once built; every element is finite.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self, NumError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::ElementCount {
                shape,
                len: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumError::NonFinite { index });
        }
        Ok(Self { shape, data })
    }

    /// Rounds `f64` values to storage precision.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self, NumError> {
        Self::new(shape, data.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// A `1×n` row vector.
    pub fn row(data: Vec<f32>) -> Result<Self, NumError> {
        let n = data.len();
        Self::new(vec![1, n], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, NumError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Interprets the tensor as a matrix: rank 0 is `1×1`, rank 1 is a row
    /// vector, rank 2 is itself. Higher ranks fold leading dimensions into rows.
    pub fn matrix_dims(&self) -> (usize, usize) {
        match self.shape.len() {
            0 => (1, 1),
            1 => (1, self.shape[0]),
            n => (self.shape[..n - 1].iter().product(), self.shape[n - 1]),
        }
    }

    /// Returns a tensor of the same shape with `f` applied elementwise, or an
    /// error if any result is non-finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self, NumError> {
        Self::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_count_must_match_shape() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(NumError::ElementCount { .. })
        ));
    }

    #[test]
    fn non_finite_rejected() {
        let err = Tensor::new(vec![3], vec![0.0, f32::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, NumError::NonFinite { index: 1 }));
        assert!(Tensor::row(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn matrix_view() {
        assert_eq!(Tensor::zeros(vec![4]).matrix_dims(), (1, 4));
        assert_eq!(Tensor::zeros(vec![2, 5]).matrix_dims(), (2, 5));
        assert_eq!(Tensor::zeros(Vec::<usize>::new()).matrix_dims(), (1, 1));
    }
}
