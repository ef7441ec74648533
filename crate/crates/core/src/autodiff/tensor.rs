use crate::error::{Error, Result};
use crate::field::{Field, Grid};

/// Dense f64 array with a row-major shape, `(batch, channels, spatial...)`
/// for activations and `(out, in, kernel...)` for convolution weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    /// Stacks same-grid fields into a `(batch, 1, spatial...)` tensor.
    pub fn from_fields<'a>(fields: impl IntoIterator<Item = &'a Field>) -> Result<Self> {
        let mut data = Vec::new();
        let mut grid: Option<Grid> = None;
        let mut batch = 0;
        for f in fields {
            match grid {
                None => grid = Some(f.grid()),
                Some(g) => g.check_same(&f.grid())?,
            }
            data.extend_from_slice(f.values());
            batch += 1;
        }
        let grid = grid.ok_or_else(|| Error::Model("empty batch".into()))?;
        let mut shape = vec![batch, 1];
        shape.extend(grid.shape());
        Ok(Self { shape, data })
    }

    /// Splits a `(batch, 1, spatial...)` tensor back into fields.
    pub fn to_fields(&self, grid: Grid) -> Result<Vec<Field>> {
        let mut expected = vec![self.shape.first().copied().unwrap_or(0), 1];
        expected.extend(grid.shape());
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                op: "to_fields",
                left: self.shape.clone(),
                right: expected,
            });
        }
        self.data
            .chunks_exact(grid.len())
            .map(|c| Field::new(grid, c.to_vec()))
            .collect()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.check_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape == other.shape {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            })
        }
    }
}
