//! Dense 3-way tensors and the matrix algebra the CP solvers are built on:
//! mode-n matricization and its inverse, the Khatri-Rao product, and norm
//! based error metrics.
//!
//! A tensor holds values indexed by (frequency bin f, time slot t, day n)
//! with dims (F, T, N). The linear layout is f fastest, then t, then n:
//!
//! ```text
//! index(f, t, n) = f + F * (t + T * n)
//! ```
//!
//! Under this layout the mode-1 unfolding is a plain reshape and the three
//! unfoldings use column orders
//!
//! ```text
//! mode 1: F x (T*N),  column t + T*n
//! mode 2: T x (F*N),  column f + F*n
//! mode 3: N x (F*T),  column f + F*t
//! ```
//!
//! which is exactly the convention under which X_(1) = A (C ⊙ B)^T and the
//! analogous mode-2/3 identities hold, with ⊙ the Khatri-Rao product below.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense double-precision matrix used for unfoldings and factors.
pub type Mat = nalgebra::DMatrix<f64>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let needed = dims.0 * dims.1 * dims.2;
        if data.len() != needed {
            return Err(Error::DataLength {
                len: data.len(),
                dims,
                needed,
            });
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Result<Self> {
        check_dims(dims)?;
        Ok(Tensor3 {
            dims,
            data: vec![0.0; dims.0 * dims.1 * dims.2],
        })
    }

    pub fn from_fn(
        dims: (usize, usize, usize),
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(dims)?;
        let (nf, nt, nn) = dims;
        let mut data = Vec::with_capacity(nf * nt * nn);
        for n in 0..nn {
            for t in 0..nt {
                for fi in 0..nf {
                    data.push(f(fi, t, n));
                }
            }
        }
        Ok(Tensor3 { dims, data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub(crate) fn index_of(&self, f: usize, t: usize, n: usize) -> usize {
        debug_assert!(f < self.dims.0 && t < self.dims.1 && n < self.dims.2);
        f + self.dims.0 * (t + self.dims.1 * n)
    }

    pub fn get(&self, f: usize, t: usize, n: usize) -> Result<f64> {
        if f >= self.dims.0 || t >= self.dims.1 || n >= self.dims.2 {
            return Err(Error::IndexOutOfRange {
                index: (f, t, n),
                dims: self.dims,
            });
        }
        Ok(self.data[self.index_of(f, t, n)])
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dense boolean tensor with the same dims and layout as `Tensor3`.
/// Serves both as an observation mask (true = observed) and as ground-truth
/// occupancy labels (true = occupied).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoolTensor3 {
    dims: (usize, usize, usize),
    bits: Vec<bool>,
}

/// Observation mask over a `Tensor3`: true marks an observed entry.
pub type MaskTensor3 = BoolTensor3;

impl BoolTensor3 {
    pub fn new(dims: (usize, usize, usize), bits: Vec<bool>) -> Result<Self> {
        check_dims(dims)?;
        let needed = dims.0 * dims.1 * dims.2;
        if bits.len() != needed {
            return Err(Error::DataLength {
                len: bits.len(),
                dims,
                needed,
            });
        }
        Ok(BoolTensor3 { dims, bits })
    }

    pub fn filled(dims: (usize, usize, usize), value: bool) -> Result<Self> {
        check_dims(dims)?;
        Ok(BoolTensor3 {
            dims,
            bits: vec![value; dims.0 * dims.1 * dims.2],
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub(crate) fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    pub fn get(&self, f: usize, t: usize, n: usize) -> Result<bool> {
        if f >= self.dims.0 || t >= self.dims.1 || n >= self.dims.2 {
            return Err(Error::IndexOutOfRange {
                index: (f, t, n),
                dims: self.dims,
            });
        }
        Ok(self.bits[f + self.dims.0 * (t + self.dims.1 * n)])
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn count_false(&self) -> usize {
        self.bits.len() - self.count_true()
    }

    /// Observed-entry count when used as a mask.
    pub fn observed_count(&self) -> usize {
        self.count_true()
    }

    /// Missing-entry count when used as a mask.
    pub fn missing_count(&self) -> usize {
        self.count_false()
    }
}

fn check_dims(dims: (usize, usize, usize)) -> Result<()> {
    if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
        return Err(Error::InvalidDims(dims));
    }
    Ok(())
}

/// Shape of the mode-`mode` unfolding of a tensor with the given dims.
pub fn unfolding_shape(mode: usize, dims: (usize, usize, usize)) -> Result<(usize, usize)> {
    let (f, t, n) = dims;
    match mode {
        1 => Ok((f, t * n)),
        2 => Ok((t, f * n)),
        3 => Ok((n, f * t)),
        _ => Err(Error::InvalidMode(mode)),
    }
}

/// Mode-n unfolding. Column orders are documented at module level; mode 1 is
/// a reshape of the backing storage.
pub fn matricize(x: &Tensor3, mode: usize) -> Result<Mat> {
    let (nf, nt, nn) = x.dims();
    let (rows, cols) = unfolding_shape(mode, x.dims())?;
    let data = x.data();
    let m = match mode {
        1 => Mat::from_column_slice(rows, cols, data),
        2 => {
            let mut m = Mat::zeros(rows, cols);
            for n in 0..nn {
                for t in 0..nt {
                    for f in 0..nf {
                        m[(t, f + nf * n)] = data[f + nf * (t + nt * n)];
                    }
                }
            }
            m
        }
        3 => {
            let mut m = Mat::zeros(rows, cols);
            for n in 0..nn {
                for t in 0..nt {
                    for f in 0..nf {
                        m[(n, f + nf * t)] = data[f + nf * (t + nt * n)];
                    }
                }
            }
            m
        }
        _ => unreachable!(),
    };
    Ok(m)
}

/// Inverse of `matricize`: folds a mode-n unfolding back into a tensor.
pub fn fold(m: &Mat, mode: usize, dims: (usize, usize, usize)) -> Result<Tensor3> {
    check_dims(dims)?;
    let (rows, cols) = unfolding_shape(mode, dims)?;
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::FoldShape {
            rows: m.nrows(),
            cols: m.ncols(),
            mode,
            dims,
        });
    }
    let (nf, nt, nn) = dims;
    let mut out = Tensor3::zeros(dims)?;
    {
        let data = out.data_mut();
        match mode {
            1 => data.copy_from_slice(m.as_slice()),
            2 => {
                for n in 0..nn {
                    for t in 0..nt {
                        for f in 0..nf {
                            data[f + nf * (t + nt * n)] = m[(t, f + nf * n)];
                        }
                    }
                }
            }
            3 => {
                for n in 0..nn {
                    for t in 0..nt {
                        for f in 0..nf {
                            data[f + nf * (t + nt * n)] = m[(n, f + nf * t)];
                        }
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(out)
}

/// Khatri-Rao product: columnwise Kronecker. For u of shape I x R and v of
/// shape J x R the result is (I*J) x R with row i*J + j equal to u[i,:]*v[j,:].
pub fn khatri_rao(u: &Mat, v: &Mat) -> Result<Mat> {
    if u.ncols() != v.ncols() {
        return Err(Error::ColumnMismatch {
            left: u.ncols(),
            right: v.ncols(),
        });
    }
    let (i, j, r) = (u.nrows(), v.nrows(), u.ncols());
    let mut out = Mat::zeros(i * j, r);
    for c in 0..r {
        for a in 0..i {
            let ua = u[(a, c)];
            for b in 0..j {
                out[(a * j + b, c)] = ua * v[(b, c)];
            }
        }
    }
    Ok(out)
}

/// ‖x − xhat‖_F / ‖x‖_F.
pub fn normalized_error(x: &Tensor3, xhat: &Tensor3) -> Result<f64> {
    if x.dims() != xhat.dims() {
        return Err(Error::DimMismatch {
            expected: x.dims(),
            got: xhat.dims(),
        });
    }
    let denom = x.frob_norm();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num = x
        .data()
        .iter()
        .zip(xhat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(num / denom)
}

/// ‖x − xhat‖_F restricted to mask-true entries, divided by the same
/// restriction of ‖x‖_F. Errors if the masked reference has zero norm.
pub fn masked_normalized_error(x: &Tensor3, xhat: &Tensor3, m: &MaskTensor3) -> Result<f64> {
    if x.dims() != xhat.dims() {
        return Err(Error::DimMismatch {
            expected: x.dims(),
            got: xhat.dims(),
        });
    }
    if x.dims() != m.dims() {
        return Err(Error::DimMismatch {
            expected: x.dims(),
            got: m.dims(),
        });
    }
    let mut num = 0.0;
    let mut denom = 0.0;
    for ((a, b), keep) in x.data().iter().zip(xhat.data()).zip(m.bits()) {
        if *keep {
            num += (a - b) * (a - b);
            denom += a * a;
        }
    }
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok((num / denom).sqrt())
}
