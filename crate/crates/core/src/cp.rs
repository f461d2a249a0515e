//! CP (canonical polyadic) decomposition by alternating least squares, in a
//! plain variant and a mask-aware variant for tensors with missing entries,
//! plus a rank-sweep diagnostic.
//!
//! The plain update is the normal-equation form: for mode 1,
//! A <- X_(1) (C ⊙ B) pinv((CᵀC) ∘ (BᵀB)), and cyclically for B and C. The
//! masked variant instead solves, for every row of every unfolding, a least
//! squares problem restricted to that row's observed columns; with a full
//! mask it reduces to the plain update.

use crate::error::{Error, Result};
use crate::linalg::pinv;
use crate::tensor::{fold, khatri_rao, matricize, MaskTensor3, Mat, Tensor3};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// CP factor matrices A (F x R), B (T x R), C (N x R).
///
/// After any solver returns, the columns of A and B have unit Euclidean
/// norm and all component scale is carried by C.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSet {
    a: Mat,
    b: Mat,
    c: Mat,
}

impl FactorSet {
    pub fn new(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        if a.ncols() != b.ncols() || a.ncols() != c.ncols() {
            return Err(Error::FactorRankMismatch {
                a: a.ncols(),
                b: b.ncols(),
                c: c.ncols(),
            });
        }
        if a.ncols() == 0 {
            return Err(Error::RankOutOfBounds { rank: 0, bound: 0 });
        }
        if a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidDims((a.nrows(), b.nrows(), c.nrows())));
        }
        Ok(FactorSet { a, b, c })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Mat {
        &self.b
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    /// Tensor dims (F, T, N) this factor set reconstructs to.
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.a.nrows(), self.b.nrows(), self.c.nrows())
    }

    /// Replace the temporal factor, e.g. with a forecast continuation.
    /// The new C must have the same column count.
    pub fn with_temporal(&self, c: Mat) -> Result<Self> {
        FactorSet::new(self.a.clone(), self.b.clone(), c)
    }

    pub fn reconstruct(&self) -> Tensor3 {
        reconstruct(self)
    }
}

/// Entrywise sum of rank-1 components: x[f,t,n] = sum_r A[f,r] B[t,r] C[n,r].
pub fn reconstruct(fs: &FactorSet) -> Tensor3 {
    let kr = khatri_rao(&fs.c, &fs.b).expect("factor ranks agree by construction");
    let x1 = &fs.a * kr.transpose();
    fold(&x1, 1, fs.dims()).expect("unfolding shape is consistent by construction")
}

/// Stopping controls and the seed for random factor initialization.
///
/// A run stops when the change of the fit error between consecutive sweeps
/// drops below `rel_tol` relative to the previous error, when the error
/// itself falls below machine-noise level (1e-14), or after `max_sweeps`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlsOptions {
    pub max_sweeps: usize,
    pub rel_tol: f64,
    pub seed: u64,
    /// Relative Tikhonov weight added to every least-squares solve:
    /// λ = ridge · trace(G)/R on the Gram matrix G. Zero (the default) is
    /// plain alternating least squares. A small positive value suppresses
    /// the large mutually cancelling component pairs an over-specified rank
    /// otherwise grows while it chases noise; reconstruction barely changes,
    /// but the individual columns stay meaningful.
    pub ridge: f64,
}

impl Default for AlsOptions {
    fn default() -> Self {
        AlsOptions {
            max_sweeps: 500,
            rel_tol: 1e-6,
            seed: 0,
            ridge: 0.0,
        }
    }
}

impl AlsOptions {
    fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidOption("max_sweeps must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) || !self.rel_tol.is_finite() {
            return Err(Error::InvalidOption("rel_tol must be finite and > 0".into()));
        }
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::InvalidOption("ridge must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// G + λI with λ = ridge · trace(G)/R. ridge = 0 returns G untouched, so the
/// unregularized paths stay bit-identical.
fn add_ridge(mut g: Mat, ridge: f64) -> Mat {
    if ridge > 0.0 {
        let lambda = ridge * g.trace() / g.nrows() as f64;
        for i in 0..g.nrows() {
            g[(i, i)] += lambda;
        }
    }
    g
}

/// Largest representable CP rank for the given dims: min(FT, FN, TN).
pub fn rank_bound(dims: (usize, usize, usize)) -> usize {
    let (f, t, n) = dims;
    (f * t).min(f * n).min(t * n)
}

fn check_rank(dims: (usize, usize, usize), r: usize) -> Result<()> {
    let bound = rank_bound(dims);
    if r < 1 || r > bound {
        return Err(Error::RankOutOfBounds { rank: r, bound });
    }
    Ok(())
}

/// Factor entries drawn independently and uniformly from [0, 1), seeded.
/// Fill order is A, then B, then C, each column-major.
fn init_factors(dims: (usize, usize, usize), r: usize, seed: u64) -> (Mat, Mat, Mat) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |rows: usize| {
        let mut m = Mat::zeros(rows, r);
        for v in m.iter_mut() {
            *v = rng.random::<f64>();
        }
        m
    };
    let a = draw(dims.0);
    let b = draw(dims.1);
    let c = draw(dims.2);
    (a, b, c)
}

/// Rescale every column of A and B to unit norm, pushing scale into C.
/// An exactly zero column is replaced by e_1; its C column becomes zero, so
/// the reconstruction is unchanged.
fn normalize_columns(a: &mut Mat, b: &mut Mat, c: &mut Mat) {
    for r in 0..a.ncols() {
        let na = a.column(r).norm();
        let nb = b.column(r).norm();
        if na > 0.0 {
            a.column_mut(r).unscale_mut(na);
        } else {
            a.column_mut(r).fill(0.0);
            a[(0, r)] = 1.0;
        }
        if nb > 0.0 {
            b.column_mut(r).unscale_mut(nb);
        } else {
            b.column_mut(r).fill(0.0);
            b[(0, r)] = 1.0;
        }
        c.column_mut(r).scale_mut(na * nb);
    }
}

fn should_stop(history: &[f64], rel_tol: f64) -> bool {
    let k = history.len();
    let cur = history[k - 1];
    if cur <= 1e-14 {
        return true;
    }
    if k >= 2 {
        let prev = history[k - 2];
        if (prev - cur).abs() <= rel_tol * prev.max(f64::MIN_POSITIVE) {
            return true;
        }
    }
    false
}

/// Plain CP-ALS with seeded uniform initialization.
///
/// Returns the factor set and the fit history: the normalized error
/// ‖x − reconstruct‖_F / ‖x‖_F after each sweep.
pub fn cp_als(x: &Tensor3, r: usize, opts: &AlsOptions) -> Result<(FactorSet, Vec<f64>)> {
    opts.validate()?;
    check_rank(x.dims(), r)?;
    let (a, b, c) = init_factors(x.dims(), r, opts.seed);
    run_plain(x, a, b, c, opts)
}

/// Plain CP-ALS warm-started from an existing factor set (rank and dims are
/// taken from `init`).
pub fn cp_als_from(x: &Tensor3, init: &FactorSet, opts: &AlsOptions) -> Result<(FactorSet, Vec<f64>)> {
    opts.validate()?;
    check_init(x, init)?;
    run_plain(x, init.a.clone(), init.b.clone(), init.c.clone(), opts)
}

fn check_init(x: &Tensor3, init: &FactorSet) -> Result<()> {
    if init.dims() != x.dims() {
        return Err(Error::FactorShapeMismatch {
            expected: x.dims(),
            got: init.dims(),
        });
    }
    check_rank(x.dims(), init.rank())
}

fn run_plain(
    x: &Tensor3,
    mut a: Mat,
    mut b: Mat,
    mut c: Mat,
    opts: &AlsOptions,
) -> Result<(FactorSet, Vec<f64>)> {
    let denom2 = x.data().iter().map(|v| v * v).sum::<f64>();
    if denom2 == 0.0 {
        return Err(Error::ZeroReference);
    }
    let x1 = matricize(x, 1)?;
    let x2 = matricize(x, 2)?;
    let x3 = matricize(x, 3)?;

    let mut history = Vec::new();
    for _ in 0..opts.max_sweeps {
        let gram_c = self_gram(&c);
        let gram_b = self_gram(&b);
        a = &x1
            * khatri_rao(&c, &b)?
            * pinv(&add_ridge(gram_c.component_mul(&gram_b), opts.ridge))?;

        let gram_a = self_gram(&a);
        b = &x2
            * khatri_rao(&c, &a)?
            * pinv(&add_ridge(gram_c.component_mul(&gram_a), opts.ridge))?;

        let gram_b = self_gram(&b);
        c = &x3
            * khatri_rao(&b, &a)?
            * pinv(&add_ridge(gram_b.component_mul(&gram_a), opts.ridge))?;

        let num2 = mode1_error_sq(x, &a, &b, &c, None)?;
        history.push((num2 / denom2).sqrt());

        normalize_columns(&mut a, &mut b, &mut c);
        if should_stop(&history, opts.rel_tol) {
            break;
        }
    }
    Ok((FactorSet::new(a, b, c)?, history))
}

/// Squared reconstruction error against the mode-1 unfolding, summed in
/// storage order so masked and plain runs agree exactly on a full mask.
fn mode1_error_sq(
    x: &Tensor3,
    a: &Mat,
    b: &Mat,
    c: &Mat,
    mask: Option<&MaskTensor3>,
) -> Result<f64> {
    let kr = khatri_rao(c, b)?;
    let xhat1 = a * kr.transpose();
    let diffs = x.data().iter().zip(xhat1.as_slice().iter());
    Ok(match mask {
        None => diffs.map(|(v, w)| (v - w) * (v - w)).sum(),
        Some(m) => diffs
            .zip(m.bits())
            .filter(|(_, keep)| **keep)
            .map(|((v, w), _)| (v - w) * (v - w))
            .sum(),
    })
}

fn self_gram(m: &Mat) -> Mat {
    m.transpose() * m
}

/// Per-row column bookkeeping for one unfolding of the mask.
enum RowCols {
    AllObserved,
    /// Missing column indices (the minority); solve by subtracting their
    /// contributions from the full-mask normal equations.
    Missing(Vec<u32>),
    /// Observed column indices (the minority); accumulate directly.
    Observed(Vec<u32>),
}

struct ModeIndex {
    rows: Vec<RowCols>,
    all_observed: bool,
}

/// Builds per-row missing/observed column lists for all three unfoldings and
/// rejects rows with zero observed entries.
fn index_mask(m: &MaskTensor3) -> Result<[ModeIndex; 3]> {
    let (nf, nt, nn) = m.dims();
    let cols = [nt * nn, nf * nn, nf * nt];
    let rows = [nf, nt, nn];
    let mut missing_count: [Vec<u32>; 3] =
        [vec![0; nf], vec![0; nt], vec![0; nn]];
    for (i, bit) in m.bits().iter().enumerate() {
        if !*bit {
            let f = i % nf;
            let t = (i / nf) % nt;
            let n = i / (nf * nt);
            missing_count[0][f] += 1;
            missing_count[1][t] += 1;
            missing_count[2][n] += 1;
        }
    }
    for mode in 0..3 {
        for (row, miss) in missing_count[mode].iter().enumerate() {
            let observed = cols[mode] as u32 - miss;
            if observed == 0 {
                return Err(Error::UnderdeterminedRow {
                    mode: mode + 1,
                    row,
                    observed: 0,
                });
            }
        }
    }

    let mut out: Vec<ModeIndex> = (0..3)
        .map(|mode| ModeIndex {
            rows: (0..rows[mode])
                .map(|row| {
                    let miss = missing_count[mode][row] as usize;
                    if miss == 0 {
                        RowCols::AllObserved
                    } else if 2 * miss <= cols[mode] {
                        RowCols::Missing(Vec::with_capacity(miss))
                    } else {
                        RowCols::Observed(Vec::with_capacity(cols[mode] - miss))
                    }
                })
                .collect(),
            all_observed: missing_count[mode].iter().all(|m| *m == 0),
        })
        .collect();

    for (i, bit) in m.bits().iter().enumerate() {
        let f = i % nf;
        let t = (i / nf) % nt;
        let n = i / (nf * nt);
        let per_mode = [(0, f, t + nt * n), (1, t, f + nf * n), (2, n, f + nf * t)];
        for (mode, row, col) in per_mode {
            match &mut out[mode].rows[row] {
                RowCols::AllObserved => {}
                RowCols::Missing(v) => {
                    if !*bit {
                        v.push(col as u32);
                    }
                }
                RowCols::Observed(v) => {
                    if *bit {
                        v.push(col as u32);
                    }
                }
            }
        }
    }
    let mut it = out.into_iter();
    Ok([
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    ])
}

/// One masked mode update. Every row of the factor is the minimum-norm
/// least-squares fit of that row of the unfolding over observed columns only.
fn masked_mode_update(
    x_k: &Mat,
    z: &Mat,
    g_full: &Mat,
    index: &ModeIndex,
    ridge: f64,
) -> Result<Mat> {
    let r = z.ncols();
    let w_full = x_k * z;
    let p_full = pinv(&add_ridge(g_full.clone(), ridge))?;
    if index.all_observed {
        // identical operation sequence to the unmasked update, so a full
        // mask reproduces it bit for bit
        return Ok(&w_full * &p_full);
    }
    let rows: Vec<Result<DVector<f64>>> = index
        .rows
        .par_iter()
        .enumerate()
        .map(|(i, kind)| -> Result<DVector<f64>> {
            match kind {
                RowCols::AllObserved => Ok(&p_full * w_full.row(i).transpose()),
                RowCols::Missing(js) => {
                    let mut g = g_full.clone();
                    let mut w = w_full.row(i).transpose();
                    for &j in js {
                        let j = j as usize;
                        let xv = x_k[(i, j)];
                        for p in 0..r {
                            let zp = z[(j, p)];
                            w[p] -= xv * zp;
                            for q in 0..r {
                                g[(p, q)] -= zp * z[(j, q)];
                            }
                        }
                    }
                    Ok(pinv(&add_ridge(g, ridge))? * w)
                }
                RowCols::Observed(js) => {
                    let mut g = Mat::zeros(r, r);
                    let mut w = DVector::zeros(r);
                    for &j in js {
                        let j = j as usize;
                        let xv = x_k[(i, j)];
                        for p in 0..r {
                            let zp = z[(j, p)];
                            w[p] += xv * zp;
                            for q in 0..r {
                                g[(p, q)] += zp * z[(j, q)];
                            }
                        }
                    }
                    Ok(pinv(&add_ridge(g, ridge))? * w)
                }
            }
        })
        .collect();

    let mut out = Mat::zeros(index.rows.len(), r);
    for (i, row) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from(&row?.transpose());
    }
    Ok(out)
}

/// Mask-aware CP-ALS. Only observed entries of `x` enter the objective; the
/// fit history records the normalized error restricted to observed entries.
///
/// Rows of an unfolding with zero observed entries are rejected up front
/// (reported with mode and row index). Rows with fewer observed entries than
/// the rank are underdetermined; they receive the minimum-norm solution.
pub fn masked_cp_als(
    x: &Tensor3,
    m: &MaskTensor3,
    r: usize,
    opts: &AlsOptions,
) -> Result<(FactorSet, Vec<f64>)> {
    opts.validate()?;
    check_rank(x.dims(), r)?;
    check_mask_dims(x, m)?;
    let (a, b, c) = init_factors(x.dims(), r, opts.seed);
    run_masked(x, m, a, b, c, opts)
}

/// Mask-aware CP-ALS warm-started from an existing factor set.
pub fn masked_cp_als_from(
    x: &Tensor3,
    m: &MaskTensor3,
    init: &FactorSet,
    opts: &AlsOptions,
) -> Result<(FactorSet, Vec<f64>)> {
    opts.validate()?;
    check_init(x, init)?;
    check_mask_dims(x, m)?;
    run_masked(x, m, init.a.clone(), init.b.clone(), init.c.clone(), opts)
}

fn check_mask_dims(x: &Tensor3, m: &MaskTensor3) -> Result<()> {
    if x.dims() != m.dims() {
        return Err(Error::DimMismatch {
            expected: x.dims(),
            got: m.dims(),
        });
    }
    Ok(())
}

fn run_masked(
    x: &Tensor3,
    m: &MaskTensor3,
    mut a: Mat,
    mut b: Mat,
    mut c: Mat,
    opts: &AlsOptions,
) -> Result<(FactorSet, Vec<f64>)> {
    let denom2: f64 = x
        .data()
        .iter()
        .zip(m.bits())
        .filter(|(_, keep)| **keep)
        .map(|(v, _)| v * v)
        .sum();
    if denom2 == 0.0 {
        return Err(Error::ZeroReference);
    }
    let index = index_mask(m)?;
    let x1 = matricize(x, 1)?;
    let x2 = matricize(x, 2)?;
    let x3 = matricize(x, 3)?;

    let mut history = Vec::new();
    for _ in 0..opts.max_sweeps {
        let gram_c = self_gram(&c);
        let gram_b = self_gram(&b);
        a = masked_mode_update(
            &x1,
            &khatri_rao(&c, &b)?,
            &gram_c.component_mul(&gram_b),
            &index[0],
            opts.ridge,
        )?;

        let gram_a = self_gram(&a);
        b = masked_mode_update(
            &x2,
            &khatri_rao(&c, &a)?,
            &gram_c.component_mul(&gram_a),
            &index[1],
            opts.ridge,
        )?;

        let gram_b = self_gram(&b);
        c = masked_mode_update(
            &x3,
            &khatri_rao(&b, &a)?,
            &gram_b.component_mul(&gram_a),
            &index[2],
            opts.ridge,
        )?;

        let num2 = mode1_error_sq(x, &a, &b, &c, Some(m))?;
        history.push((num2 / denom2).sqrt());

        normalize_columns(&mut a, &mut b, &mut c);
        if should_stop(&history, opts.rel_tol) {
            break;
        }
    }
    Ok((FactorSet::new(a, b, c)?, history))
}

/// Fits every requested rank independently (identical seed policy) and
/// returns the final normalized reconstruction error per rank.
pub fn rank_sweep(x: &Tensor3, ranks: &[usize], opts: &AlsOptions) -> Result<Vec<(usize, f64)>> {
    if ranks.is_empty() {
        return Err(Error::EmptyInput("ranks"));
    }
    let results: Vec<Result<(usize, f64)>> = ranks
        .par_iter()
        .map(|&r| {
            let (_, history) = cp_als(x, r, opts)?;
            Ok((r, *history.last().expect("at least one sweep runs")))
        })
        .collect();
    results.into_iter().collect()
}
