//! Periodic box [0, L)^d sampled at n equispaced nodes per axis, with node
//! coordinates x_k = k h, h = L/n. Grid sizes are restricted to powers of two
//! so that every spectral transform is an exact radix-2 FFT.

use crate::error::CoreError;

pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    d: usize,
    n: usize,
    len: f64,
}

impl Grid {
    pub fn new(d: usize, n: usize, len: f64) -> Result<Self, CoreError> {
        if !(1..=MAX_DIM).contains(&d) {
            return Err(CoreError::BadDimension { d });
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(CoreError::BadGridSize { n });
        }
        if !(len.is_finite() && len > 0.0) {
            return Err(CoreError::BadBoxLength { len });
        }
        Ok(Grid { d, n, len })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.len
    }

    /// Node spacing h = L/n (uniform and equal on every axis).
    pub fn spacing(&self) -> f64 {
        self.len / self.n as f64
    }

    pub fn num_nodes(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Volume h^d of one node cell; the quadrature weight of every node.
    pub fn cell_volume(&self) -> f64 {
        libm::pow(self.spacing(), self.d as f64)
    }

    /// Stride of `axis` in the flat node ordering (axis 0 is contiguous).
    pub fn stride(&self, axis: usize) -> usize {
        debug_assert!(axis < self.d);
        self.n.pow(axis as u32)
    }

    /// Decompose a flat node index into per-axis indices.
    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_DIM] {
        let mut m = [0usize; MAX_DIM];
        for ax in 0..self.d {
            m[ax] = idx % self.n;
            idx /= self.n;
        }
        m
    }

    pub fn flat_index(&self, m: &[usize; MAX_DIM]) -> usize {
        let mut idx = 0usize;
        for ax in (0..self.d).rev() {
            idx = idx * self.n + m[ax];
        }
        idx
    }

    /// Coordinates of a node; entries beyond `dim()` are zero.
    pub fn coords(&self, idx: usize) -> [f64; MAX_DIM] {
        let m = self.multi_index(idx);
        let h = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for ax in 0..self.d {
            x[ax] = m[ax] as f64 * h;
        }
        x
    }

    /// Neighbour of a node along `axis` with periodic wrap.
    pub fn neighbor(&self, idx: usize, axis: usize, off: isize) -> usize {
        let mut m = self.multi_index(idx);
        let n = self.n as isize;
        let c = (m[axis] as isize + off).rem_euclid(n);
        m[axis] = c as usize;
        self.flat_index(&m)
    }

    /// Shortest periodic displacement from `from` to `to` on one axis.
    pub fn wrap_dist(&self, from: f64, to: f64) -> f64 {
        let mut s = (to - from) % self.len;
        if s > 0.5 * self.len {
            s -= self.len;
        } else if s < -0.5 * self.len {
            s += self.len;
        }
        s
    }

    /// Wrap a coordinate into [0, L).
    pub fn wrap(&self, x: f64) -> f64 {
        let w = x % self.len;
        if w < 0.0 {
            w + self.len
        } else {
            w
        }
    }
}

/// Uniform partition of [0, T] into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, CoreError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(CoreError::BadHorizon { horizon });
        }
        if steps == 0 {
            return Err(CoreError::NoTimeSteps);
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.steps as f64
    }
}
