//! Dependence measures between groups of channels of a cross-spectrum.
//!
//! Every measure is a log ratio of determinants of the joint Hermitian
//! matrix and its block-diagonal restriction:
//!
//! ```text
//! total         = sum_i ln|S_ii|     - ln|S|        (complex matrices)
//! instantaneous = sum_i ln|Re S_ii|  - ln|Re S|     (real parts)
//! lagged        = total - instantaneous
//! ```
//!
//! computed on raw cross-spectra for the linear (coherence-type) measures
//! and on amplitude-normalized cross-spectra for the nonlinear
//! (phase-synchronization-type) measures. Squared coherence / phase
//! synchronization follow as `rho2 = 1 - exp(-measure)`.
//!
//! Determinants are never formed directly: [`logdet_hermitian`] and
//! [`logdet_symmetric`] sum logs of triangular-factorization pivots, which
//! stays finite far beyond the point where the raw determinant would
//! overflow or underflow.

use num_complex::Complex64;
use serde::Serialize;

use crate::crossspectra::{CrossSpectrum, FreqTag};
use crate::error::{Error, Result};
use crate::ingest::BlockPartition;
use crate::mat::{CMatrix, RMatrix};
use crate::spectral::NormMode;

/// Negative values no larger than this (in magnitude) are floating-point
/// jitter and get clamped to zero. For the total and instantaneous
/// measures anything more negative is a numerical failure and raises an
/// error; the lagged difference can genuinely dip further below zero for
/// multivariate blocks and is clamped and flagged instead.
pub const CLAMP_TOL: f64 = 1e-12;

/// Linear (amplitude-and-phase) vs nonlinear (phase-only) dependence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasureKind {
    Linear,
    Nonlinear,
}

/// How the channels were grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scope {
    #[serde(rename = "two-block")]
    TwoBlock,
    #[serde(rename = "k-block")]
    KBlock,
    #[serde(rename = "all-univariate")]
    AllUnivariate,
}

/// The squared-coherence (or squared-phase-synchronization) transforms of
/// the three measures; each lies in `[0, 1)` except for flagged perfect
/// dependence.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Rho2 {
    pub total: f64,
    pub lagged: f64,
    pub instantaneous: f64,
}

/// Measures before the jitter clamp; kept for diagnostics, not serialized.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawMeasures {
    pub total: f64,
    pub lagged: f64,
    pub instantaneous: f64,
}

/// One full decomposition `total = lagged + instantaneous` at one frequency
/// or band.
#[derive(Debug, Clone, Serialize)]
pub struct DependenceReport {
    pub kind: MeasureKind,
    pub scope: Scope,
    pub freq: FreqTag,
    pub block_dims: Vec<usize>,
    pub total: f64,
    pub lagged: f64,
    pub instantaneous: f64,
    pub rho2: Rho2,
    pub flags: Vec<String>,
    #[serde(skip)]
    pub raw: RawMeasures,
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite
/// matrix; pivots are returned separately so callers can sum their logs.
fn cholesky_hermitian(m: &CMatrix) -> Result<(CMatrix, Vec<f64>)> {
    let n = m.dim();
    let max_diag = (0..n).map(|i| m.get(i, i).re).fold(0.0f64, f64::max);
    let tol = max_diag * n as f64 * 1e-14;
    let mut l = CMatrix::zeros(n);
    let mut pivots = Vec::with_capacity(n);
    for k in 0..n {
        let mut d = m.get(k, k).re;
        for j in 0..k {
            d -= l.get(k, j).norm_sqr();
        }
        if d.is_nan() || d <= tol {
            return Err(Error::SingularOrIndefinite { pivot: k, value: d });
        }
        pivots.push(d);
        let lkk = d.sqrt();
        l.set(k, k, Complex64::new(lkk, 0.0));
        for i in k + 1..n {
            let mut s = m.get(i, k);
            for j in 0..k {
                s -= l.get(i, j) * l.get(k, j).conj();
            }
            l.set(i, k, s / lkk);
        }
    }
    Ok((l, pivots))
}

fn cholesky_symmetric(m: &RMatrix) -> Result<(RMatrix, Vec<f64>)> {
    let n = m.dim();
    let max_diag = (0..n).map(|i| m.get(i, i)).fold(0.0f64, f64::max);
    let tol = max_diag * n as f64 * 1e-14;
    let mut l = RMatrix::zeros(n);
    let mut pivots = Vec::with_capacity(n);
    for k in 0..n {
        let mut d = m.get(k, k);
        for j in 0..k {
            let v = l.get(k, j);
            d -= v * v;
        }
        if d.is_nan() || d <= tol {
            return Err(Error::SingularOrIndefinite { pivot: k, value: d });
        }
        pivots.push(d);
        let lkk = d.sqrt();
        l.set(k, k, lkk);
        for i in k + 1..n {
            let mut s = m.get(i, k);
            for j in 0..k {
                s -= l.get(i, j) * l.get(k, j);
            }
            l.set(i, k, s / lkk);
        }
    }
    Ok((l, pivots))
}

/// `ln |M|` for Hermitian positive-definite `M`, via pivot logs.
pub fn logdet_hermitian(m: &CMatrix) -> Result<f64> {
    let (_, pivots) = cholesky_hermitian(m)?;
    Ok(pivots.iter().map(|d| d.ln()).sum())
}

/// `ln |M|` for real symmetric positive-definite `M`.
pub fn logdet_symmetric(m: &RMatrix) -> Result<f64> {
    let (_, pivots) = cholesky_symmetric(m)?;
    Ok(pivots.iter().map(|d| d.ln()).sum())
}

/// `rho2 = 1 - exp(-f)`, full precision for small `f`, exactly 1 at
/// infinity.
#[inline]
fn rho2_of(f: f64) -> f64 {
    if f.is_infinite() {
        1.0
    } else {
        -(-f).exp_m1()
    }
}

/// Clamp floating jitter to zero; material negatives are an internal error.
fn clamp_measure(raw: f64, what: &str) -> Result<f64> {
    if raw >= 0.0 || raw.is_infinite() {
        Ok(raw)
    } else if raw >= -CLAMP_TOL {
        Ok(0.0)
    } else {
        Err(Error::InternalConsistency(format!(
            "{what} measure came out {raw:e}, more negative than jitter allows"
        )))
    }
}

struct MeasureParts {
    total: f64,
    lagged: f64,
    instantaneous: f64,
    flags: Vec<String>,
}

/// The shared determinant arithmetic over a joint matrix split into blocks
/// at the given index ranges.
fn block_measure_parts(joint: &CMatrix, ranges: &[std::ops::Range<usize>]) -> Result<MeasureParts> {
    let mut flags = Vec::new();

    // numerators: block-diagonal determinants, complex and real-part
    let mut num_c = 0.0f64;
    let mut num_r = 0.0f64;
    for r in ranges {
        let idx: Vec<usize> = r.clone().collect();
        let sub = joint.submatrix(&idx);
        num_c += logdet_hermitian(&sub)?;
        num_r += logdet_symmetric(&sub.re())?;
    }

    // denominators: the joint determinants; a singular joint matrix with
    // healthy blocks is perfect dependence, reported as +inf with a flag
    let ld_joint = logdet_hermitian(joint);
    let ld_joint_re = logdet_symmetric(&joint.re());

    let (total, instantaneous, lagged) = match (ld_joint, ld_joint_re) {
        (Ok(c), Ok(r)) => {
            let total = num_c - c;
            let inst = num_r - r;
            (total, inst, total - inst)
        }
        (Err(Error::SingularOrIndefinite { .. }), Ok(r)) => {
            flags.push("perfect-dependence".into());
            let inst = num_r - r;
            (f64::INFINITY, inst, f64::INFINITY)
        }
        (Err(Error::SingularOrIndefinite { .. }), Err(Error::SingularOrIndefinite { .. })) => {
            // both determinant ratios diverge; the split between lagged and
            // instantaneous cannot be recovered, so the lagged part is
            // conservatively reported as zero
            flags.push("perfect-dependence".into());
            flags.push("lagged-indeterminate".into());
            (f64::INFINITY, f64::INFINITY, 0.0)
        }
        (_, Err(e)) | (Err(e), _) => return Err(e),
    };

    Ok(MeasureParts {
        total,
        lagged,
        instantaneous,
        flags,
    })
}

fn finish_report(
    parts: MeasureParts,
    kind: MeasureKind,
    scope: Scope,
    freq: FreqTag,
    block_dims: Vec<usize>,
) -> Result<DependenceReport> {
    let mut parts = parts;
    let raw = RawMeasures {
        total: parts.total,
        lagged: parts.lagged,
        instantaneous: parts.instantaneous,
    };
    let total = clamp_measure(parts.total, "total")?;
    let instantaneous = clamp_measure(parts.instantaneous, "instantaneous")?;
    // The total and instantaneous measures are nonnegative by Fischer's
    // determinant inequality, so material negatives there are numerical
    // failures. Their difference has no such bound: for multivariate
    // blocks the sample lagged measure genuinely dips below zero with
    // small probability (the blockwise real-part gains can exceed the
    // joint gain). Clamp and flag instead of erroring.
    let lagged = if parts.lagged < -CLAMP_TOL {
        parts.flags.push("negative-lagged-clamped".into());
        0.0
    } else {
        clamp_measure(parts.lagged, "lagged")?
    };
    Ok(DependenceReport {
        kind,
        scope,
        freq,
        block_dims,
        total,
        lagged,
        instantaneous,
        rho2: Rho2 {
            total: rho2_of(total),
            lagged: rho2_of(lagged),
            instantaneous: rho2_of(instantaneous),
        },
        flags: parts.flags,
        raw,
    })
}

fn check_partition(s: &CrossSpectrum, partition: &BlockPartition) -> Result<()> {
    if partition.max_channel() >= s.dim() {
        return Err(Error::Dimension(format!(
            "partition references channel {} but the cross-spectrum has {}",
            partition.max_channel(),
            s.dim()
        )));
    }
    if partition.n_blocks() < 2 {
        return Err(Error::InvalidArgument(
            "dependence between blocks needs at least two blocks".into(),
        ));
    }
    Ok(())
}

fn is_subpartition(query: &BlockPartition, stored: &BlockPartition) -> bool {
    let canon = |b: &[usize]| {
        let mut v = b.to_vec();
        v.sort_unstable();
        v
    };
    let stored_blocks: Vec<Vec<usize>> = stored.blocks().iter().map(|b| canon(b)).collect();
    query
        .blocks()
        .iter()
        .all(|qb| stored_blocks.contains(&canon(qb)))
}

fn scope_of(partition: &BlockPartition) -> Scope {
    if partition.n_blocks() == 2 {
        Scope::TwoBlock
    } else {
        Scope::KBlock
    }
}

/// Linear (coherence-type) dependence between the blocks of `partition`,
/// decomposed into lagged and instantaneous parts.
pub fn linear_dependence(
    s: &CrossSpectrum,
    partition: &BlockPartition,
) -> Result<DependenceReport> {
    if s.norm_mode() != NormMode::Raw {
        return Err(Error::NormMode {
            expected: "raw".into(),
            found: s.norm_mode().as_str().into(),
        });
    }
    check_partition(s, partition)?;
    let dense = s.dense();
    let joint = dense.submatrix(&partition.flat_channels());
    let parts = block_measure_parts(&joint, &partition.flat_ranges())?;
    finish_report(
        parts,
        MeasureKind::Linear,
        scope_of(partition),
        s.freq.clone(),
        partition.block_dims(),
    )
}

/// Nonlinear (phase-synchronization-type) dependence between the blocks of
/// `partition`; the cross-spectrum must come from block-normalized
/// coefficients under the same partition.
pub fn nonlinear_dependence(
    s: &CrossSpectrum,
    partition: &BlockPartition,
) -> Result<DependenceReport> {
    if s.norm_mode() != NormMode::Block {
        return Err(Error::NormMode {
            expected: "block".into(),
            found: s.norm_mode().as_str().into(),
        });
    }
    match s.norm_partition() {
        // every queried block must be one of the normalized blocks (order
        // within a block and order of blocks are immaterial), so measures
        // between any subset of the normalized blocks remain valid
        Some(p) if is_subpartition(partition, p) => {}
        Some(_) => {
            return Err(Error::NormMode {
                expected: "block normalization covering the queried blocks".into(),
                found: "a partition with different blocks".into(),
            })
        }
        None => {
            return Err(Error::NormMode {
                expected: "block normalization with a known partition".into(),
                found: "block normalization with no partition attached".into(),
            })
        }
    }
    check_partition(s, partition)?;
    let dense = s.dense();
    let joint = dense.submatrix(&partition.flat_channels());
    let parts = block_measure_parts(&joint, &partition.flat_ranges())?;
    finish_report(
        parts,
        MeasureKind::Nonlinear,
        scope_of(partition),
        s.freq.clone(),
        partition.block_dims(),
    )
}

/// Linear dependence between all channels of the cross-spectrum taken as
/// univariate series.
pub fn all_univariate_linear(s: &CrossSpectrum) -> Result<DependenceReport> {
    if s.norm_mode() != NormMode::Raw {
        return Err(Error::NormMode {
            expected: "raw".into(),
            found: s.norm_mode().as_str().into(),
        });
    }
    all_univariate_inner(s, MeasureKind::Linear)
}

/// Nonlinear dependence between all channels; requires channel-normalized
/// coefficients, whose cross-spectrum has unit diagonal.
pub fn all_univariate_nonlinear(s: &CrossSpectrum) -> Result<DependenceReport> {
    if s.norm_mode() != NormMode::Channel {
        return Err(Error::NormMode {
            expected: "channel".into(),
            found: s.norm_mode().as_str().into(),
        });
    }
    for i in 0..s.dim() {
        let d = s.entry(i, i).re;
        if (d - 1.0).abs() > 1e-10 {
            return Err(Error::NormMode {
                expected: "unit diagonal under channel normalization".into(),
                found: format!("diagonal entry {i} = {d}"),
            });
        }
    }
    all_univariate_inner(s, MeasureKind::Nonlinear)
}

fn all_univariate_inner(s: &CrossSpectrum, kind: MeasureKind) -> Result<DependenceReport> {
    let m = s.dim();
    if m < 2 {
        return Err(Error::InvalidArgument(
            "all-univariate measures need at least two channels".into(),
        ));
    }
    let dense = s.dense();
    // identical arithmetic to a partition into singleton blocks: the
    // block-diagonal numerator degenerates to the (real) diagonal entries
    let ranges: Vec<std::ops::Range<usize>> = (0..m).map(|i| i..i + 1).collect();
    let parts = block_measure_parts(&dense, &ranges)?;
    finish_report(
        parts,
        kind,
        Scope::AllUnivariate,
        s.freq.clone(),
        vec![1; m],
    )
}

/// The superseded two-block coherence definitions, kept as comparison
/// baselines: `rho2_general` lumps amplitude-and-phase dependence via the
/// Schur complement, `rho2_lagged` removes the zero-lag part by a single
/// determinant ratio that ignores the within-block structure.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LegacyCoherence {
    pub rho2_general: f64,
    pub rho2_lagged: f64,
}

/// Evaluate the legacy definitions for a two-block partition. On raw
/// spectra these are coherences; on block-normalized spectra they are the
/// corresponding phase-synchronization variants.
#[allow(clippy::needless_range_loop)] // triangular solves index by position
pub fn legacy_coherence(s: &CrossSpectrum, partition: &BlockPartition) -> Result<LegacyCoherence> {
    check_partition(s, partition)?;
    if partition.n_blocks() != 2 {
        return Err(Error::InvalidArgument(
            "legacy coherence is defined for exactly two blocks".into(),
        ));
    }
    let dense = s.dense();
    let joint = dense.submatrix(&partition.flat_channels());
    let ranges = partition.flat_ranges();
    let q = ranges[0].len();

    // Schur route: rho2_general = 1 - |S_yy - S_yx S_xx^-1 S_xy| / |S_yy|
    let first: Vec<usize> = ranges[0].clone().collect();
    let second: Vec<usize> = ranges[1].clone().collect();
    let s_yy = joint.submatrix(&first);
    let s_xx = joint.submatrix(&second);
    let (l_xx, _) = cholesky_hermitian(&s_xx)?;
    let p = second.len();
    // w = S_xx^{-1} S_xy, column by column through the triangular factor
    let mut schur = s_yy.clone();
    for col in 0..q {
        // rhs = S_xy[:, col] = joint[second, first[col]]
        let mut y = vec![Complex64::new(0.0, 0.0); p];
        for i in 0..p {
            let mut v = joint.get(second[i], col);
            for j in 0..i {
                v -= l_xx.get(i, j) * y[j];
            }
            y[i] = v / l_xx.get(i, i);
        }
        let mut w = vec![Complex64::new(0.0, 0.0); p];
        for i in (0..p).rev() {
            let mut v = y[i];
            for j in i + 1..p {
                v -= l_xx.get(j, i).conj() * w[j];
            }
            w[i] = v / l_xx.get(i, i);
        }
        // schur[:, col] -= S_yx w
        for r in 0..q {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..p {
                acc += joint.get(r, second[i]) * w[i];
            }
            schur.set(r, col, schur.get(r, col) - acc);
        }
    }
    let rho2_general = rho2_of(logdet_hermitian(&s_yy)? - logdet_hermitian(&schur)?);

    // lumped route: rho2_lagged = 1 - |S| / |Re S|
    let rho2_lagged = rho2_of(logdet_symmetric(&joint.re())? - logdet_hermitian(&joint)?);

    Ok(LegacyCoherence {
        rho2_general,
        rho2_lagged,
    })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Cofactor-expansion determinant, the independence oracle for the
    /// triangular-factorization path; exponential cost, fine for n <= 6.
    pub fn det_cofactor(m: &CMatrix) -> Complex64 {
        let n = m.dim();
        if n == 1 {
            return m.get(0, 0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for col in 0..n {
            let rows: Vec<usize> = (1..n).collect();
            let cols: Vec<usize> = (0..n).filter(|&c| c != col).collect();
            let minor = CMatrix::from_fn(n - 1, |i, j| m.get(rows[i], cols[j]));
            let sign = if col % 2 == 0 { 1.0 } else { -1.0 };
            acc += m.get(0, col) * det_cofactor(&minor) * sign;
        }
        acc
    }

    pub fn det_cofactor_real(m: &RMatrix) -> f64 {
        det_cofactor(&CMatrix::from_fn(m.dim(), |i, j| {
            Complex64::new(m.get(i, j), 0.0)
        }))
        .re
    }

    /// Random Hermitian positive-definite matrix from an average of
    /// `n_vec` outer products.
    pub fn random_hpd(rng: &mut impl rand::Rng, n: usize, n_vec: usize) -> CMatrix {
        let mut acc = CMatrix::zeros(n);
        for _ in 0..n_vec {
            let v: Vec<Complex64> = (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let z = acc.get(i, j) + v[i] * v[j].conj() / n_vec as f64;
                    acc.set(i, j, z);
                }
            }
        }
        acc
    }
}
