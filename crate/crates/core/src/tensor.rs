use crate::error::{Error, Result};

/// Dense row-major array of up to four dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::invalid(format!(
                "tensor rank must be 1..=4, got {}",
                shape.len()
            )));
        }
        let count: usize = shape.iter().product();
        if count != data.len() {
            return Err(Error::mismatch(format!(
                "shape {shape:?} needs {count} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.iter().product()])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::mismatch(format!(
                "shapes differ: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
