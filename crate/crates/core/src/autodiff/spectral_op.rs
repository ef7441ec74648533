use super::Tensor;
use crate::error::{Error, Result};
use crate::field::{g_inverse, neg_laplacian, Field, Grid, OperatorKind};

/// Applies `G^{-1}` to every `(batch, channel)` slice of a tensor. For
/// `-Laplacian` this is the pseudo-inverse: each slice is first projected to
/// zero mean. The map is a real symmetric Fourier multiplier, hence
/// self-adjoint, and the same routine serves the backward pass.
pub(crate) fn apply_g_inverse(x: &Tensor, kind: OperatorKind) -> Result<Tensor> {
    per_slice(x, kind, "g_inverse", |f| {
        let mean = f.mean();
        g_inverse(&f.map(|v| v - mean), kind)
    })
}

/// Applies `G` itself (`-Laplacian` for the non-identity kind) per slice.
/// Also self-adjoint.
pub(crate) fn apply_g(x: &Tensor, kind: OperatorKind) -> Result<Tensor> {
    per_slice(x, kind, "g_apply", |f| Ok(neg_laplacian(&f)))
}

fn per_slice(
    x: &Tensor,
    kind: OperatorKind,
    op: &'static str,
    f: impl Fn(Field) -> Result<Field>,
) -> Result<Tensor> {
    if kind == OperatorKind::Identity {
        return Ok(x.clone());
    }
    let shape = x.shape();
    if shape.len() < 3 {
        return Err(Error::ShapeMismatch {
            op,
            left: shape.to_vec(),
            right: vec![0, 0, 0],
        });
    }
    let grid = Grid::new(shape.len() - 2, shape[2])?;
    let mut out = Vec::with_capacity(x.len());
    for chunk in x.data().chunks_exact(grid.len()) {
        let field = Field::from_vec_unchecked(grid, chunk.to_vec());
        out.extend_from_slice(f(field)?.values());
    }
    Tensor::new(shape.to_vec(), out)
}
