//! Hermitian covariance matrices of Fourier coefficients, per frequency or
//! pooled over frequency bands.
//!
//! Only one triangle is stored, so the Hermitian property holds by
//! construction. Accumulation over segments uses compensated summation so
//! the result is independent of segment order to well below the tolerances
//! asserted anywhere else.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BlockPartition;
use crate::mat::CMatrix;
use crate::spectral::{NormMode, SpectralEnsemble};

/// A named set of discrete frequency bins (need not be contiguous).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub name: String,
    pub freq_indices: Vec<usize>,
}

impl FrequencyBand {
    pub fn new(name: impl Into<String>, freq_indices: Vec<usize>) -> Result<Self> {
        if freq_indices.is_empty() {
            return Err(Error::InvalidArgument(
                "band needs at least one frequency".into(),
            ));
        }
        let mut sorted = freq_indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != freq_indices.len() {
            return Err(Error::InvalidArgument(
                "band frequencies must be distinct".into(),
            ));
        }
        Ok(FrequencyBand {
            name: name.into(),
            freq_indices,
        })
    }
}

/// What a cross-spectrum refers to: a single bin or a pooled band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FreqTag {
    Bin(usize),
    Band(String),
}

impl std::fmt::Display for FreqTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FreqTag::Bin(w) => write!(f, "bin {w}"),
            FreqTag::Band(name) => write!(f, "band {name}"),
        }
    }
}

/// One Hermitian PSD covariance matrix over all channels, at one frequency
/// or one pooled band.
#[derive(Debug, Clone)]
pub struct CrossSpectrum {
    /// Upper triangle (row-major, `a <= b`); the lower triangle is implied.
    upper: Vec<Complex64>,
    dim: usize,
    pub freq: FreqTag,
    pub n_segments: usize,
    norm_mode: NormMode,
    norm_partition: Option<BlockPartition>,
}

#[inline]
fn tri_index(dim: usize, a: usize, b: usize) -> usize {
    // a <= b; row-major packed upper triangle
    a * dim - a * (a + 1) / 2 + b
}

impl CrossSpectrum {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn norm_partition(&self) -> Option<&BlockPartition> {
        self.norm_partition.as_ref()
    }

    /// Entry (a, b); the lower triangle is the conjugate of the stored one.
    #[inline]
    pub fn entry(&self, a: usize, b: usize) -> Complex64 {
        if a <= b {
            self.upper[tri_index(self.dim, a, b)]
        } else {
            self.upper[tri_index(self.dim, b, a)].conj()
        }
    }

    /// Materialize the full Hermitian matrix.
    pub fn dense(&self) -> CMatrix {
        CMatrix::from_fn(self.dim, |a, b| self.entry(a, b))
    }

    /// Build from a dense matrix, validating that it is Hermitian within
    /// `1e-10 * max|entry|`. Exact Hermitian storage is then enforced by
    /// keeping one triangle with a real diagonal.
    pub fn from_dense(
        m: &CMatrix,
        freq: FreqTag,
        n_segments: usize,
        norm_mode: NormMode,
        norm_partition: Option<BlockPartition>,
    ) -> Result<Self> {
        let scale = m.max_abs();
        if m.hermitian_defect() > 1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument(
                "matrix is not Hermitian within tolerance".into(),
            ));
        }
        let dim = m.dim();
        let mut upper = Vec::with_capacity(dim * (dim + 1) / 2);
        for a in 0..dim {
            for b in a..dim {
                if a == b {
                    upper.push(Complex64::new(m.get(a, a).re, 0.0));
                } else {
                    // average the two triangles so the stored value is the
                    // Hermitian part of the input
                    let z = (m.get(a, b) + m.get(b, a).conj()) * 0.5;
                    upper.push(z);
                }
            }
        }
        Ok(CrossSpectrum {
            upper,
            dim,
            freq,
            n_segments,
            norm_mode,
            norm_partition,
        })
    }

    /// A copy with `lambda * (trace / dim)` added to every diagonal entry.
    /// Shrinks determinant ratios toward independence; useful when too few
    /// segments make the joint matrix singular.
    pub fn ridged(&self, lambda: f64) -> CrossSpectrum {
        let mean_diag: f64 =
            (0..self.dim).map(|a| self.entry(a, a).re).sum::<f64>() / self.dim as f64;
        let shift = lambda * mean_diag;
        let mut out = self.clone();
        for a in 0..self.dim {
            let idx = tri_index(self.dim, a, a);
            out.upper[idx] += Complex64::new(shift, 0.0);
        }
        out
    }
}

// Kahan-compensated complex accumulator.
#[derive(Clone, Copy, Default)]
struct KahanC {
    sum_re: f64,
    sum_im: f64,
    c_re: f64,
    c_im: f64,
}

impl KahanC {
    #[inline]
    fn add(&mut self, z: Complex64) {
        let y = z.re - self.c_re;
        let t = self.sum_re + y;
        self.c_re = (t - self.sum_re) - y;
        self.sum_re = t;
        let y = z.im - self.c_im;
        let t = self.sum_im + y;
        self.c_im = (t - self.sum_im) - y;
        self.sum_im = t;
    }

    #[inline]
    fn value(&self) -> Complex64 {
        Complex64::new(self.sum_re, self.sum_im)
    }
}

/// Average the per-segment outer products of the coefficient vectors at one
/// retained frequency: entry `(a, b) = mean_j v_a conj(v_b)`.
pub fn accumulate(e: &SpectralEnsemble, omega: usize) -> Result<CrossSpectrum> {
    let pos = e.freq_position(omega).ok_or(Error::FrequencyRange {
        index: omega,
        n_t: e.n_t(),
    })?;
    let dim = e.n_channels();
    let n_r = e.n_segments();
    let mut acc = vec![KahanC::default(); dim * (dim + 1) / 2];
    for j in 0..n_r {
        let v = e.vector(j, pos);
        let mut k = 0;
        for a in 0..dim {
            // diagonal: |v_a|^2, exactly real
            acc[k].add(Complex64::new(v[a].norm_sqr(), 0.0));
            k += 1;
            for b in a + 1..dim {
                acc[k].add(v[a] * v[b].conj());
                k += 1;
            }
        }
    }
    let inv = 1.0 / n_r as f64;
    let upper = acc.iter().map(|k| k.value() * inv).collect();
    Ok(CrossSpectrum {
        upper,
        dim,
        freq: FreqTag::Bin(omega),
        n_segments: n_r,
        norm_mode: e.norm_mode(),
        norm_partition: e.norm_partition().cloned(),
    })
}

/// Unweighted mean of per-frequency cross-spectra over a band.
pub fn pool(spectra: &[&CrossSpectrum], band: &FrequencyBand) -> Result<CrossSpectrum> {
    let first = spectra
        .first()
        .ok_or_else(|| Error::Coverage("no spectra supplied for pooling".into()))?;
    for s in spectra {
        if s.dim != first.dim {
            return Err(Error::Dimension(format!(
                "pool inputs disagree on channel count: {} vs {}",
                s.dim, first.dim
            )));
        }
        if s.n_segments != first.n_segments || s.norm_mode != first.norm_mode {
            return Err(Error::Dimension(
                "pool inputs disagree on segment count or normalization".into(),
            ));
        }
        if s.norm_partition != first.norm_partition {
            return Err(Error::Dimension("pool inputs disagree on partition".into()));
        }
    }
    // inputs must cover the band exactly, no more, no less
    let mut have: Vec<usize> = spectra
        .iter()
        .map(|s| match &s.freq {
            FreqTag::Bin(w) => Ok(*w),
            FreqTag::Band(name) => Err(Error::Coverage(format!(
                "cannot pool an already pooled band '{name}'"
            ))),
        })
        .collect::<Result<_>>()?;
    have.sort_unstable();
    let mut want = band.freq_indices.clone();
    want.sort_unstable();
    if have != want {
        return Err(Error::Coverage(format!(
            "band '{}' wants bins {:?} but inputs cover {:?}",
            band.name, want, have
        )));
    }

    let dim = first.dim;
    let inv = 1.0 / spectra.len() as f64;
    let mut upper = vec![Complex64::new(0.0, 0.0); dim * (dim + 1) / 2];
    for s in spectra {
        for (o, v) in upper.iter_mut().zip(&s.upper) {
            *o += *v;
        }
    }
    for v in &mut upper {
        *v *= inv;
    }
    Ok(CrossSpectrum {
        upper,
        dim,
        freq: FreqTag::Band(band.name.clone()),
        n_segments: first.n_segments,
        norm_mode: first.norm_mode,
        norm_partition: first.norm_partition.clone(),
    })
}

/// JSON form of a cross-spectrum (`--dump-spectra`).
#[derive(Debug, Serialize, Deserialize)]
pub struct CrossSpectrumJson {
    pub freq: FreqTag,
    pub n_segments: usize,
    pub norm_mode: String,
    pub matrix_re: Vec<f64>,
    pub matrix_im: Vec<f64>,
}

impl CrossSpectrumJson {
    pub fn from_spectrum(s: &CrossSpectrum) -> Self {
        let d = s.dense();
        let n = d.dim();
        let mut re = Vec::with_capacity(n * n);
        let mut im = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                re.push(d.get(a, b).re);
                im.push(d.get(a, b).im);
            }
        }
        CrossSpectrumJson {
            freq: s.freq.clone(),
            n_segments: s.n_segments,
            norm_mode: s.norm_mode().as_str().into(),
            matrix_re: re,
            matrix_im: im,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SegmentSet;
    use crate::spectral::test_support::ensemble_from_coeffs;
    use crate::spectral::{dft, FreqSelection};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_ensemble(seed: u64, n_r: usize, n_m: usize) -> SpectralEnsemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coeffs: Vec<Complex64> = (0..n_r * n_m)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ensemble_from_coeffs(coeffs, n_r, vec![1], n_m, 8, NormMode::Raw, None)
    }

    #[test]
    fn single_segment_outer_product() {
        let coeffs = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)];
        let e = ensemble_from_coeffs(coeffs, 1, vec![1], 2, 4, NormMode::Raw, None);
        let s = accumulate(&e, 1).unwrap();
        assert_eq!(s.entry(0, 0), Complex64::new(1.0, 0.0));
        assert_eq!(s.entry(1, 1), Complex64::new(1.0, 0.0));
        assert_eq!(s.entry(0, 1), Complex64::new(0.0, -1.0));
        assert_eq!(s.entry(1, 0), Complex64::new(0.0, 1.0));
    }

    #[test]
    fn two_segment_average() {
        let coeffs = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        ];
        let e = ensemble_from_coeffs(coeffs, 2, vec![1], 2, 4, NormMode::Raw, None);
        let s = accumulate(&e, 1).unwrap();
        assert_eq!(s.entry(0, 0), Complex64::new(0.5, 0.0));
        assert_eq!(s.entry(1, 1), Complex64::new(0.5, 0.0));
        assert_eq!(s.entry(0, 1), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn matches_entrywise_summation_oracle() {
        let e = random_ensemble(99, 17, 4);
        let s = accumulate(&e, 1).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..17 {
                    acc += e.coeff(j, 0, a) * e.coeff(j, 0, b).conj();
                }
                acc /= 17.0;
                assert!((s.entry(a, b) - acc).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn hermitian_by_construction_and_real_diagonal() {
        let e = random_ensemble(3, 9, 5);
        let s = accumulate(&e, 1).unwrap();
        assert_eq!(s.dense().hermitian_defect(), 0.0);
        for a in 0..5 {
            assert_eq!(s.entry(a, a).im, 0.0);
            assert!(s.entry(a, a).re >= 0.0);
        }
    }

    #[test]
    fn segment_order_does_not_matter() {
        let n_r = 64;
        let n_m = 3;
        let e = random_ensemble(21, n_r, n_m);
        let s1 = accumulate(&e, 1).unwrap();

        // rebuild with segments reversed
        let mut coeffs = Vec::with_capacity(n_r * n_m);
        for j in (0..n_r).rev() {
            for m in 0..n_m {
                coeffs.push(e.coeff(j, 0, m));
            }
        }
        let rev = ensemble_from_coeffs(coeffs, n_r, vec![1], n_m, 8, NormMode::Raw, None);
        let s2 = accumulate(&rev, 1).unwrap();

        let scale = s1.dense().max_abs();
        for a in 0..n_m {
            for b in 0..n_m {
                assert!((s1.entry(a, b) - s2.entry(a, b)).norm() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn pool_of_one_is_identity_and_mean_is_entrywise() {
        let e = random_ensemble(7, 5, 2);
        let s = accumulate(&e, 1).unwrap();
        let band = FrequencyBand::new("solo", vec![1]).unwrap();
        let p = pool(&[&s], &band).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                assert_eq!(p.entry(a, b), s.entry(a, b));
            }
        }
        assert_eq!(p.freq, FreqTag::Band("solo".into()));

        // [[1]] and [[3]] pool to [[2]]
        let one = CrossSpectrum::from_dense(
            &CMatrix::from_rows(&[vec![Complex64::new(1.0, 0.0)]]),
            FreqTag::Bin(1),
            4,
            NormMode::Raw,
            None,
        )
        .unwrap();
        let three = CrossSpectrum::from_dense(
            &CMatrix::from_rows(&[vec![Complex64::new(3.0, 0.0)]]),
            FreqTag::Bin(2),
            4,
            NormMode::Raw,
            None,
        )
        .unwrap();
        let band = FrequencyBand::new("two", vec![1, 2]).unwrap();
        let p = pool(&[&one, &three], &band).unwrap();
        assert_eq!(p.entry(0, 0), Complex64::new(2.0, 0.0));
    }

    #[test]
    fn pool_rejects_missing_band_member() {
        let e = random_ensemble(7, 5, 2);
        let s = accumulate(&e, 1).unwrap();
        let band = FrequencyBand::new("gap", vec![1, 2]).unwrap();
        assert!(matches!(pool(&[&s], &band), Err(Error::Coverage(_))));
    }

    #[test]
    fn pool_equals_accumulation_over_concatenated_pairs() {
        // two frequencies from a genuine DFT, pooled, vs manual mean over
        // all (segment, frequency) outer products
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let data: Vec<f64> = (0..6 * 16 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seg = SegmentSet::new(data, 6, 16, 3).unwrap();
        let e = dft(&seg, FreqSelection::PositiveHalf).unwrap();
        let s2 = accumulate(&e, 2).unwrap();
        let s5 = accumulate(&e, 5).unwrap();
        let band = FrequencyBand::new("b", vec![2, 5]).unwrap();
        let p = pool(&[&s2, &s5], &band).unwrap();

        for a in 0..3 {
            for b in 0..3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in 0..6 {
                    for &w in &[2usize, 5] {
                        let pos = e.freq_position(w).unwrap();
                        acc += e.coeff(j, pos, a) * e.coeff(j, pos, b).conj();
                    }
                }
                acc /= 12.0;
                assert!((p.entry(a, b) - acc).norm() < 1e-12 * p.dense().max_abs().max(1.0));
            }
        }
    }

    #[test]
    fn from_dense_rejects_non_hermitian() {
        let m = CMatrix::from_rows(&[
            vec![Complex64::new(1.0, 0.0), Complex64::new(0.5, 0.0)],
            vec![Complex64::new(0.4, 0.0), Complex64::new(1.0, 0.0)],
        ]);
        assert!(CrossSpectrum::from_dense(&m, FreqTag::Bin(1), 4, NormMode::Raw, None).is_err());
    }

    #[test]
    fn ridge_shifts_the_diagonal_by_lambda_times_mean_diag() {
        let e = random_ensemble(31, 8, 3);
        let s = accumulate(&e, 1).unwrap();
        let r = s.ridged(0.5);
        let mean_diag: f64 = (0..3).map(|a| s.entry(a, a).re).sum::<f64>() / 3.0;
        for a in 0..3 {
            assert!((r.entry(a, a).re - s.entry(a, a).re - 0.5 * mean_diag).abs() < 1e-15);
        }
        assert_eq!(r.entry(0, 1), s.entry(0, 1));
    }
}
