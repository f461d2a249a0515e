//! Tensor completion by alternating CP fits and imputation.
//!
//! Missing entries are mean-filled, a first CP fit runs, and then the loop
//! replaces missing entries with the current reconstruction and refits from
//! the previous factors until the imputed block stops moving. Refits can use
//! the plain solver on the imputed tensor or the mask-aware solver on the
//! observed entries only; the latter typically settles in fewer passes.

use crate::cp::{cp_als, cp_als_from, masked_cp_als, masked_cp_als_from, reconstruct, AlsOptions, FactorSet};
use crate::error::{Error, Result};
use crate::tensor::{masked_normalized_error, MaskTensor3, Tensor3};
use serde::{Deserialize, Serialize};

/// Which CP solver runs inside the completion loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CpVariant {
    Plain,
    Masked,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompletionOptions {
    pub rank: usize,
    pub cp_variant: CpVariant,
    pub max_outer_iters: usize,
    /// Stop when the imputed entries change by less than this, relative to
    /// their previous Frobenius norm.
    pub outer_rel_tol: f64,
    pub als: AlsOptions,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        CompletionOptions {
            rank: 10,
            cp_variant: CpVariant::Masked,
            max_outer_iters: 50,
            outer_rel_tol: 1e-4,
            als: AlsOptions::default(),
        }
    }
}

impl CompletionOptions {
    fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidOption("max_outer_iters must be >= 1".into()));
        }
        if !(self.outer_rel_tol > 0.0) || !self.outer_rel_tol.is_finite() {
            return Err(Error::InvalidOption(
                "outer_rel_tol must be finite and > 0".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the completion error history. Iteration 0 is the fit before
/// any imputation; `hidden_error` is present only when a ground-truth tensor
/// was supplied and the mask actually hides something.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub iteration: usize,
    pub observed_error: f64,
    pub hidden_error: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct CompletionResult {
    /// Observed entries verbatim from the input, missing entries from the
    /// final factors.
    pub tensor: Tensor3,
    pub factors: FactorSet,
    pub history: Vec<CompletionRecord>,
    /// False when the outer loop hit `max_outer_iters` without the imputed
    /// block settling. The result is still usable.
    pub converged: bool,
}

/// Observed entries from `x`, missing entries from the reconstruction.
pub fn impute(x: &Tensor3, m: &MaskTensor3, fs: &FactorSet) -> Result<Tensor3> {
    check_dims(x, m)?;
    if fs.dims() != x.dims() {
        return Err(Error::FactorShapeMismatch {
            expected: x.dims(),
            got: fs.dims(),
        });
    }
    let xhat = reconstruct(fs);
    let mut out = x.clone();
    for ((v, w), keep) in out.data_mut().iter_mut().zip(xhat.data()).zip(m.bits()) {
        if !keep {
            *v = *w;
        }
    }
    Ok(out)
}

fn check_dims(x: &Tensor3, m: &MaskTensor3) -> Result<()> {
    if x.dims() != m.dims() {
        return Err(Error::DimMismatch {
            expected: x.dims(),
            got: m.dims(),
        });
    }
    Ok(())
}

pub fn complete(x: &Tensor3, m: &MaskTensor3, opts: &CompletionOptions) -> Result<CompletionResult> {
    complete_with_reference(x, m, opts, None)
}

/// Like [`complete`], additionally scoring each iteration's reconstruction
/// against `truth` on the hidden entries.
pub fn complete_with_reference(
    x: &Tensor3,
    m: &MaskTensor3,
    opts: &CompletionOptions,
    truth: Option<&Tensor3>,
) -> Result<CompletionResult> {
    opts.validate()?;
    check_dims(x, m)?;
    if let Some(t) = truth {
        if t.dims() != x.dims() {
            return Err(Error::DimMismatch {
                expected: x.dims(),
                got: t.dims(),
            });
        }
    }

    let hidden_mask = truth.map(|_| invert_mask(m));
    let mut x_work = mean_fill(x, m)?;

    let mut fs = match opts.cp_variant {
        CpVariant::Plain => cp_als(&x_work, opts.rank, &opts.als)?.0,
        CpVariant::Masked => masked_cp_als(&x_work, m, opts.rank, &opts.als)?.0,
    };

    let mut history = Vec::new();
    history.push(record(0, x, m, truth, hidden_mask.as_ref(), &fs)?);

    let mut converged = false;
    for k in 1..=opts.max_outer_iters {
        let xhat = reconstruct(&fs);
        let mut change2 = 0.0;
        let mut old2 = 0.0;
        for ((v, w), keep) in x_work
            .data_mut()
            .iter_mut()
            .zip(xhat.data())
            .zip(m.bits())
        {
            if !keep {
                let d = *w - *v;
                change2 += d * d;
                old2 += *v * *v;
                *v = *w;
            }
        }
        let change = (change2 / old2.max(f64::MIN_POSITIVE)).sqrt();
        if change <= opts.outer_rel_tol {
            converged = true;
            break;
        }

        fs = match opts.cp_variant {
            CpVariant::Plain => cp_als_from(&x_work, &fs, &opts.als)?.0,
            CpVariant::Masked => masked_cp_als_from(&x_work, m, &fs, &opts.als)?.0,
        };
        history.push(record(k, x, m, truth, hidden_mask.as_ref(), &fs)?);
    }

    let tensor = impute(x, m, &fs)?;
    Ok(CompletionResult {
        tensor,
        factors: fs,
        history,
        converged,
    })
}

fn invert_mask(m: &MaskTensor3) -> MaskTensor3 {
    MaskTensor3::new(m.dims(), m.bits().iter().map(|b| !b).collect())
        .expect("inverted mask has matching length")
}

fn mean_fill(x: &Tensor3, m: &MaskTensor3) -> Result<Tensor3> {
    let observed = m.observed_count();
    if observed == 0 {
        return Err(Error::EmptyInput("mask leaves no observed entries"));
    }
    let sum: f64 = x
        .data()
        .iter()
        .zip(m.bits())
        .filter(|(_, keep)| **keep)
        .map(|(v, _)| *v)
        .sum();
    let mean = sum / observed as f64;
    let mut out = x.clone();
    for (v, keep) in out.data_mut().iter_mut().zip(m.bits()) {
        if !keep {
            *v = mean;
        }
    }
    Ok(out)
}

fn record(
    iteration: usize,
    x: &Tensor3,
    m: &MaskTensor3,
    truth: Option<&Tensor3>,
    hidden_mask: Option<&MaskTensor3>,
    fs: &FactorSet,
) -> Result<CompletionRecord> {
    let xhat = reconstruct(fs);
    let observed_error = masked_normalized_error(x, &xhat, m)?;
    let hidden_error = match (truth, hidden_mask) {
        (Some(t), Some(h)) if m.missing_count() > 0 => {
            Some(masked_normalized_error(t, &xhat, h)?)
        }
        _ => None,
    };
    Ok(CompletionRecord {
        iteration,
        observed_error,
        hidden_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_factors(dims: (usize, usize, usize), r: usize, seed: u64) -> FactorSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |rows: usize| {
            let mut m = Mat::zeros(rows, r);
            for v in m.iter_mut() {
                *v = rng.random::<f64>() + 0.1;
            }
            m
        };
        let a = draw(dims.0);
        let b = draw(dims.1);
        let c = draw(dims.2);
        FactorSet::new(a, b, c).unwrap()
    }

    fn random_mask(dims: (usize, usize, usize), hidden_ratio: f64, seed: u64) -> MaskTensor3 {
        let total = dims.0 * dims.1 * dims.2;
        let hidden = (hidden_ratio * total as f64).round() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mask = MaskTensor3::filled(dims, true).unwrap();
        for idx in rand::seq::index::sample(&mut rng, total, hidden) {
            mask.bits_mut()[idx] = false;
        }
        mask
    }

    fn hide(x: &Tensor3, m: &MaskTensor3) -> Tensor3 {
        let mut out = x.clone();
        for (v, keep) in out.data_mut().iter_mut().zip(m.bits()) {
            if !keep {
                *v = 0.0;
            }
        }
        out
    }

    #[test]
    fn impute_full_mask_returns_input() {
        let fs = random_factors((3, 4, 5), 2, 1);
        let x = Tensor3::from_fn((3, 4, 5), |f, t, n| (f + 10 * t + 100 * n) as f64).unwrap();
        let m = MaskTensor3::filled((3, 4, 5), true).unwrap();
        assert_eq!(impute(&x, &m, &fs).unwrap(), x);
    }

    #[test]
    fn impute_empty_mask_returns_reconstruction() {
        let fs = random_factors((3, 4, 5), 2, 1);
        let x = Tensor3::zeros((3, 4, 5)).unwrap();
        let m = MaskTensor3::filled((3, 4, 5), false).unwrap();
        assert_eq!(impute(&x, &m, &fs).unwrap(), reconstruct(&fs));
    }

    #[test]
    fn impute_single_hidden_entry() {
        let a = Mat::from_column_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = Mat::from_column_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let c = Mat::from_column_slice(2, 2, &[9.0, 10.0, 11.0, 12.0]);
        let fs = FactorSet::new(a, b, c).unwrap();
        let x = Tensor3::from_fn((2, 2, 2), |_, _, _| -1.0).unwrap();
        let mut m = MaskTensor3::filled((2, 2, 2), true).unwrap();
        // hide (f,t,n) = (1,0,1): linear index 1 + 2*(0 + 2*1) = 5
        m.bits_mut()[5] = false;
        let out = impute(&x, &m, &fs).unwrap();
        // sum_r A[1,r]B[0,r]C[1,r] = 2*5*10 + 4*7*12 = 436
        assert_eq!(out.get(1, 0, 1).unwrap(), 436.0);
        let mut diffs = 0;
        for (i, (v, w)) in out.data().iter().zip(x.data()).enumerate() {
            if v != w {
                assert_eq!(i, 5);
                diffs += 1;
            }
        }
        assert_eq!(diffs, 1);
    }

    #[test]
    fn impute_rejects_dim_mismatch() {
        let fs = random_factors((3, 4, 5), 2, 1);
        let x = Tensor3::zeros((3, 4, 6)).unwrap();
        let m = MaskTensor3::filled((3, 4, 6), true).unwrap();
        assert!(matches!(
            impute(&x, &m, &fs).unwrap_err(),
            Error::FactorShapeMismatch { .. }
        ));
    }

    #[test]
    fn full_mask_completion_is_one_direct_fit() {
        let x = reconstruct(&random_factors((8, 9, 10), 2, 3));
        let m = MaskTensor3::filled(x.dims(), true).unwrap();
        let opts = CompletionOptions {
            rank: 2,
            cp_variant: CpVariant::Plain,
            ..CompletionOptions::default()
        };
        let res = complete(&x, &m, &opts).unwrap();
        assert_eq!(res.tensor, x);
        assert!(res.converged);
        assert_eq!(res.history.len(), 1);
        assert!(res.history[0].hidden_error.is_none());
        let (direct, _) = cp_als(&x, 2, &opts.als).unwrap();
        assert_eq!(res.factors, direct);
    }

    #[test]
    fn masked_variant_recovers_hidden_entries_at_desk_scale() {
        let truth = reconstruct(&random_factors((15, 20, 25), 3, 7));
        let m = random_mask(truth.dims(), 0.30, 11);
        let x = hide(&truth, &m);
        let opts = CompletionOptions {
            rank: 3,
            cp_variant: CpVariant::Masked,
            outer_rel_tol: 1e-8,
            als: AlsOptions {
                rel_tol: 1e-10,
                seed: 5,
                ..AlsOptions::default()
            },
            ..CompletionOptions::default()
        };
        let res = complete_with_reference(&x, &m, &opts, Some(&truth)).unwrap();
        let last = res.history.last().unwrap();
        let hidden = last.hidden_error.unwrap();
        assert!(hidden <= 1e-3, "hidden error {hidden}");
        // observed entries pass through untouched
        for ((v, w), keep) in res.tensor.data().iter().zip(x.data()).zip(m.bits()) {
            if *keep {
                assert_eq!(v, w);
            }
        }
    }

    #[test]
    fn plain_variant_hidden_error_is_monotone() {
        let truth = reconstruct(&random_factors((10, 12, 14), 2, 13));
        let m = random_mask(truth.dims(), 0.25, 17);
        let x = hide(&truth, &m);
        let opts = CompletionOptions {
            rank: 2,
            cp_variant: CpVariant::Plain,
            max_outer_iters: 30,
            outer_rel_tol: 1e-10,
            als: AlsOptions {
                rel_tol: 1e-9,
                seed: 2,
                ..AlsOptions::default()
            },
        };
        let res = complete_with_reference(&x, &m, &opts, Some(&truth)).unwrap();
        assert!(res.history.len() > 1, "expected several outer iterations");
        let errs: Vec<f64> = res
            .history
            .iter()
            .map(|r| r.hidden_error.unwrap())
            .collect();
        for k in 1..errs.len() {
            assert!(
                errs[k] <= errs[k - 1] + 1e-8,
                "hidden error rose at outer iteration {k}: {} -> {}",
                errs[k - 1],
                errs[k]
            );
        }
    }

    #[test]
    fn masked_variant_needs_fewer_outer_iterations() {
        let truth = reconstruct(&random_factors((12, 15, 18), 3, 29));
        let m = random_mask(truth.dims(), 0.30, 31);
        let x = hide(&truth, &m);
        let base = CompletionOptions {
            rank: 3,
            cp_variant: CpVariant::Plain,
            max_outer_iters: 60,
            outer_rel_tol: 1e-6,
            als: AlsOptions {
                rel_tol: 1e-8,
                seed: 4,
                ..AlsOptions::default()
            },
        };
        let plain = complete_with_reference(&x, &m, &base, Some(&truth)).unwrap();
        let masked_opts = CompletionOptions {
            cp_variant: CpVariant::Masked,
            ..base
        };
        let masked = complete_with_reference(&x, &m, &masked_opts, Some(&truth)).unwrap();
        let iters = |h: &[CompletionRecord]| {
            let target = 2.0 * h.last().unwrap().hidden_error.unwrap();
            h.iter()
                .find(|r| r.hidden_error.unwrap() <= target)
                .unwrap()
                .iteration
        };
        let (pi, mi) = (iters(&plain.history), iters(&masked.history));
        assert!(
            mi < pi,
            "masked reached 2x-final in {mi} iterations, plain in {pi}"
        );
    }

    #[test]
    fn non_convergence_sets_warning_flag() {
        let truth = reconstruct(&random_factors((10, 12, 14), 3, 41));
        let m = random_mask(truth.dims(), 0.40, 43);
        let x = hide(&truth, &m);
        let opts = CompletionOptions {
            rank: 3,
            cp_variant: CpVariant::Plain,
            max_outer_iters: 1,
            outer_rel_tol: 1e-12,
            als: AlsOptions {
                max_sweeps: 5,
                ..AlsOptions::default()
            },
        };
        let res = complete(&x, &m, &opts).unwrap();
        assert!(!res.converged);
    }

    #[test]
    fn invalid_options_are_rejected() {
        let x = Tensor3::from_fn((3, 3, 3), |_, _, _| 1.0).unwrap();
        let m = MaskTensor3::filled((3, 3, 3), true).unwrap();
        let mut opts = CompletionOptions {
            rank: 2,
            ..CompletionOptions::default()
        };
        opts.max_outer_iters = 0;
        assert!(matches!(
            complete(&x, &m, &opts).unwrap_err(),
            Error::InvalidOption(_)
        ));
        opts.max_outer_iters = 5;
        opts.outer_rel_tol = 0.0;
        assert!(matches!(
            complete(&x, &m, &opts).unwrap_err(),
            Error::InvalidOption(_)
        ));
    }

    #[test]
    fn history_iterations_are_sequential() {
        let truth = reconstruct(&random_factors((8, 10, 12), 2, 51));
        let m = random_mask(truth.dims(), 0.2, 53);
        let x = hide(&truth, &m);
        let opts = CompletionOptions {
            rank: 2,
            cp_variant: CpVariant::Masked,
            ..CompletionOptions::default()
        };
        let res = complete(&x, &m, &opts).unwrap();
        for (k, rec) in res.history.iter().enumerate() {
            assert_eq!(rec.iteration, k);
            assert!(rec.hidden_error.is_none());
            assert!(rec.observed_error.is_finite());
        }
    }
}
