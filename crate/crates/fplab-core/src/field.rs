//! Dense node-valued fields on a [`Grid`]: scalar, vector, and symmetric
//! matrix valued. Matrix fields store only the lower triangle, so symmetry
//! holds by construction. All constructors reject non-finite entries.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::CoreError;
use crate::grid::{Grid, MAX_DIM};

fn check_finite(data: &[f64], context: &'static str) -> Result<(), CoreError> {
    for (index, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(CoreError::NonFinite { context, index });
        }
    }
    Ok(())
}

pub fn same_grid(a: &Grid, b: &Grid, context: &'static str) -> Result<(), CoreError> {
    if a == b {
        Ok(())
    } else {
        Err(CoreError::GridMismatch { context })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            data: vec![0.0; grid.num_nodes()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField {
            grid,
            data: vec![c; grid.num_nodes()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self, CoreError> {
        let data: Vec<f64> = (0..grid.num_nodes())
            .map(|i| f(&grid.coords(i)[..grid.dim()]))
            .collect();
        check_finite(&data, "scalar field from_fn")?;
        Ok(ScalarField { grid, data })
    }

    pub fn from_data(grid: Grid, data: Vec<f64>) -> Result<Self, CoreError> {
        if data.len() != grid.num_nodes() {
            return Err(CoreError::BadDataLength {
                context: "scalar field",
                got: data.len(),
                want: grid.num_nodes(),
            });
        }
        check_finite(&data, "scalar field")?;
        Ok(ScalarField { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    /// Quadrature of the field over the box: sum of node values times h^d.
    pub fn integral(&self) -> f64 {
        self.data.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        ScalarField {
            grid: self.grid,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn axpy(&mut self, s: f64, other: &ScalarField) -> Result<(), CoreError> {
        same_grid(&self.grid, &other.grid, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField, CoreError> {
        same_grid(&self.grid, &other.grid, "field difference")?;
        Ok(ScalarField {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn mul_pointwise(&self, other: &ScalarField) -> Result<ScalarField, CoreError> {
        same_grid(&self.grid, &other.grid, "pointwise product")?;
        Ok(ScalarField {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }
}

/// d-component vector field, component-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    data: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            data: vec![0.0; grid.dim() * grid.num_nodes()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(usize, &[f64]) -> f64) -> Result<Self, CoreError> {
        let nn = grid.num_nodes();
        let mut data = vec![0.0; grid.dim() * nn];
        for c in 0..grid.dim() {
            for i in 0..nn {
                data[c * nn + i] = f(c, &grid.coords(i)[..grid.dim()]);
            }
        }
        check_finite(&data, "vector field from_fn")?;
        Ok(VectorField { grid, data })
    }

    pub fn from_components(grid: Grid, comps: Vec<ScalarField>) -> Result<Self, CoreError> {
        if comps.len() != grid.dim() {
            return Err(CoreError::BadDataLength {
                context: "vector field components",
                got: comps.len(),
                want: grid.dim(),
            });
        }
        let mut data = Vec::with_capacity(grid.dim() * grid.num_nodes());
        for c in comps {
            same_grid(&grid, c.grid(), "vector component")?;
            data.extend_from_slice(c.values());
        }
        Ok(VectorField { grid, data })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn comp(&self, c: usize) -> &[f64] {
        let nn = self.grid.num_nodes();
        &self.data[c * nn..(c + 1) * nn]
    }

    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let nn = self.grid.num_nodes();
        &mut self.data[c * nn..(c + 1) * nn]
    }

    pub fn comp_field(&self, c: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            data: self.comp(c).to_vec(),
        }
    }

    /// sup over nodes of the Euclidean norm |v(x)|.
    pub fn max_norm(&self) -> f64 {
        let nn = self.grid.num_nodes();
        let mut m = 0.0f64;
        for i in 0..nn {
            let mut s = 0.0;
            for c in 0..self.grid.dim() {
                let v = self.data[c * nn + i];
                s += v * v;
            }
            m = m.max(s);
        }
        libm::sqrt(m)
    }

    pub fn sub(&self, other: &VectorField) -> Result<VectorField, CoreError> {
        same_grid(&self.grid, &other.grid, "vector difference")?;
        Ok(VectorField {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

/// Number of stored components of a symmetric d x d matrix.
pub fn tri_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Position of entry (i, j), i >= j, in lower-triangle storage.
pub fn tri_index(i: usize, j: usize) -> usize {
    debug_assert!(i >= j);
    i * (i + 1) / 2 + j
}

/// Symmetric matrix field; only the lower triangle is stored, so
/// a_ij == a_ji identically.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixField {
    grid: Grid,
    data: Vec<f64>,
}

impl MatrixField {
    pub fn zeros(grid: Grid) -> Self {
        MatrixField {
            grid,
            data: vec![0.0; tri_len(grid.dim()) * grid.num_nodes()],
        }
    }

    /// alpha times the identity matrix at every node.
    pub fn scaled_identity(grid: Grid, alpha: f64) -> Self {
        let mut m = MatrixField::zeros(grid);
        let nn = grid.num_nodes();
        for i in 0..grid.dim() {
            let t = tri_index(i, i);
            m.data[t * nn..(t + 1) * nn].fill(alpha);
        }
        m
    }

    /// Build from a closure over lower-triangle entries (i >= j).
    pub fn from_lower_fn(
        grid: Grid,
        f: impl Fn(usize, usize, &[f64]) -> f64,
    ) -> Result<Self, CoreError> {
        let nn = grid.num_nodes();
        let mut data = vec![0.0; tri_len(grid.dim()) * nn];
        for i in 0..grid.dim() {
            for j in 0..=i {
                let t = tri_index(i, j);
                for idx in 0..nn {
                    data[t * nn + idx] = f(i, j, &grid.coords(idx)[..grid.dim()]);
                }
            }
        }
        check_finite(&data, "matrix field from_lower_fn")?;
        Ok(MatrixField { grid, data })
    }

    /// Build from a full-entry closure, rejecting any asymmetry.
    pub fn from_entries_fn(
        grid: Grid,
        f: impl Fn(usize, usize, &[f64]) -> f64,
    ) -> Result<Self, CoreError> {
        let nn = grid.num_nodes();
        for i in 0..grid.dim() {
            for j in 0..i {
                for idx in 0..nn {
                    let x = grid.coords(idx);
                    let lo = f(i, j, &x[..grid.dim()]);
                    let hi = f(j, i, &x[..grid.dim()]);
                    if lo != hi {
                        return Err(CoreError::NotSymmetric {
                            i,
                            j,
                            node: idx,
                            dev: (lo - hi).abs(),
                        });
                    }
                }
            }
        }
        Self::from_lower_fn(grid, f)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entry(&self, node: usize, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        self.data[tri_index(i, j) * self.grid.num_nodes() + node]
    }

    /// Component (i, j) as a slice over nodes; (i, j) and (j, i) alias the
    /// same storage.
    pub fn comp(&self, i: usize, j: usize) -> &[f64] {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let nn = self.grid.num_nodes();
        let t = tri_index(i, j);
        &self.data[t * nn..(t + 1) * nn]
    }

    pub fn comp_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let nn = self.grid.num_nodes();
        let t = tri_index(i, j);
        &mut self.data[t * nn..(t + 1) * nn]
    }

    pub fn comp_field(&self, i: usize, j: usize) -> ScalarField {
        ScalarField {
            grid: self.grid,
            data: self.comp(i, j).to_vec(),
        }
    }

    pub fn set_comp(&mut self, i: usize, j: usize, values: &ScalarField) -> Result<(), CoreError> {
        same_grid(&self.grid, values.grid(), "matrix component")?;
        self.comp_mut(i, j).copy_from_slice(values.values());
        Ok(())
    }

    /// The full d x d matrix at one node, padded with zeros beyond d.
    pub fn at_node(&self, node: usize) -> [[f64; MAX_DIM]; MAX_DIM] {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..self.grid.dim() {
            for j in 0..self.grid.dim() {
                m[i][j] = self.entry(node, i, j);
            }
        }
        m
    }

    pub fn sub(&self, other: &MatrixField) -> Result<MatrixField, CoreError> {
        same_grid(&self.grid, &other.grid, "matrix difference")?;
        Ok(MatrixField {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1() -> Grid {
        Grid::new(1, 16, core::f64::consts::TAU).unwrap()
    }

    #[test]
    fn scalar_rejects_non_finite() {
        let g = grid1();
        let err = ScalarField::from_fn(g, |x| 1.0 / (x[0] - x[0])).unwrap_err();
        assert!(matches!(err, CoreError::NonFinite { .. }));
    }

    #[test]
    fn scalar_integral_of_constant() {
        let g = grid1();
        let f = ScalarField::constant(g, 2.0);
        assert!((f.integral() - 2.0 * g.length()).abs() < 1e-14);
    }

    #[test]
    fn vector_component_layout() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let v = VectorField::from_fn(g, |c, x| if c == 0 { x[1] } else { -x[0] }).unwrap();
        let idx = g.flat_index(&[3, 5, 0]);
        let h = g.spacing();
        assert!((v.comp(0)[idx] - 5.0 * h).abs() < 1e-15);
        assert!((v.comp(1)[idx] + 3.0 * h).abs() < 1e-15);
    }

    #[test]
    fn matrix_symmetry_is_structural() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let m = MatrixField::from_lower_fn(g, |i, j, x| (i + j) as f64 + x[0]).unwrap();
        for node in 0..g.num_nodes() {
            assert_eq!(m.entry(node, 0, 1), m.entry(node, 1, 0));
        }
    }

    #[test]
    fn matrix_from_entries_rejects_asymmetric() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let err =
            MatrixField::from_entries_fn(g, |i, j, _| if (i, j) == (0, 1) { 1.0 } else { 0.0 })
                .unwrap_err();
        assert!(matches!(err, CoreError::NotSymmetric { i: 1, j: 0, .. }));
    }

    #[test]
    fn scaled_identity_entries() {
        let g = Grid::new(3, 8, 1.0).unwrap();
        let m = MatrixField::scaled_identity(g, 2.5);
        assert_eq!(m.entry(0, 2, 2), 2.5);
        assert_eq!(m.entry(0, 2, 1), 0.0);
    }
}
