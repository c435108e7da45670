//! Flat parameter storage with a layout descriptor.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Which part of the network a slice of parameters belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    LiftWeight,
    LiftBias,
    /// First affine map of block `i` (hidden × trunk, row-major).
    Weight1(usize),
    Bias1(usize),
    /// Second affine map of block `i` (trunk × hidden, row-major).
    Weight2(usize),
    Bias2(usize),
    HeadWeight,
    HeadBias,
}

/// Shape of a residual potential network's parameter vector.
///
/// Order: optional lift (weight, bias), then for each block
/// `W¹, b¹, W², b²`, then the scalar head (weight, bias).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub input_dim: usize,
    pub depth: usize,
    pub hidden: usize,
    /// Width of the residual trunk: `input_dim` for literal blocks, `hidden` when lifted.
    pub trunk: usize,
    pub lifted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub role: Role,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl ParamLayout {
    pub fn lift_len(&self) -> usize {
        if self.lifted {
            self.hidden * self.input_dim + self.hidden
        } else {
            0
        }
    }

    pub fn block_len(&self) -> usize {
        2 * (self.hidden * self.trunk) + self.hidden + self.trunk
    }

    pub fn head_len(&self) -> usize {
        self.trunk + 1
    }

    pub fn len(&self) -> usize {
        self.lift_len() + self.depth * self.block_len() + self.head_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block_offset(&self, block: usize) -> usize {
        self.lift_len() + block * self.block_len()
    }

    pub fn head_offset(&self) -> usize {
        self.lift_len() + self.depth * self.block_len()
    }

    pub fn segment(&self, role: Role) -> Segment {
        let (h, t, n) = (self.hidden, self.trunk, self.input_dim);
        let (rows, cols, offset) = match role {
            Role::LiftWeight => (h, n, 0),
            Role::LiftBias => (h, 1, h * n),
            Role::Weight1(b) => (h, t, self.block_offset(b)),
            Role::Bias1(b) => (h, 1, self.block_offset(b) + h * t),
            Role::Weight2(b) => (t, h, self.block_offset(b) + h * t + h),
            Role::Bias2(b) => (t, 1, self.block_offset(b) + 2 * h * t + h),
            Role::HeadWeight => (1, t, self.head_offset()),
            Role::HeadBias => (1, 1, self.head_offset() + t),
        };
        Segment {
            role,
            rows,
            cols,
            offset,
        }
    }

    /// All segments in storage order.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(4 * self.depth + 4);
        if self.lifted {
            out.push(self.segment(Role::LiftWeight));
            out.push(self.segment(Role::LiftBias));
        }
        for b in 0..self.depth {
            out.push(self.segment(Role::Weight1(b)));
            out.push(self.segment(Role::Bias1(b)));
            out.push(self.segment(Role::Weight2(b)));
            out.push(self.segment(Role::Bias2(b)));
        }
        out.push(self.segment(Role::HeadWeight));
        out.push(self.segment(Role::HeadBias));
        out
    }
}

/// Row-major dense matrix used by the unpacked view.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Copy> Matrix<T> {
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }
}

/// Parameters grouped by role.
#[derive(Clone, Debug, PartialEq)]
pub struct Unpacked<T> {
    pub segments: Vec<(Role, Matrix<T>)>,
}

impl<T: Copy> Unpacked<T> {
    pub fn get(&self, role: Role) -> Option<&Matrix<T>> {
        self.segments.iter().find(|(r, _)| *r == role).map(|(_, m)| m)
    }
}

/// θ: every trainable real of the network in one contiguous array.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector<T> {
    layout: ParamLayout,
    values: Vec<T>,
}

impl<T: Real> ParameterVector<T> {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            values: vec![T::zero(); layout.len()],
        }
    }

    /// Wraps a flat array; `None` when the length does not match the layout.
    pub fn from_flat(layout: ParamLayout, values: Vec<T>) -> Option<Self> {
        (values.len() == layout.len()).then_some(Self { layout, values })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }

    pub fn slice(&self, role: Role) -> &[T] {
        &self.values[self.layout.segment(role).range()]
    }

    pub fn slice_mut(&mut self, role: Role) -> &mut [T] {
        let r = self.layout.segment(role).range();
        &mut self.values[r]
    }

    pub fn unpack(&self) -> Unpacked<T> {
        let segments = self
            .layout
            .segments()
            .into_iter()
            .map(|s| {
                let m = Matrix {
                    rows: s.rows,
                    cols: s.cols,
                    data: self.values[s.range()].to_vec(),
                };
                (s.role, m)
            })
            .collect();
        Unpacked { segments }
    }

    /// Inverse of [`unpack`](Self::unpack). Missing or mis-shaped segments yield `None`.
    pub fn pack(layout: ParamLayout, parts: &Unpacked<T>) -> Option<Self> {
        let mut out = Self::zeros(layout);
        for seg in layout.segments() {
            let m = parts.get(seg.role)?;
            if m.rows != seg.rows || m.cols != seg.cols {
                return None;
            }
            out.values[seg.range()].copy_from_slice(&m.data);
        }
        Some(out)
    }
}
