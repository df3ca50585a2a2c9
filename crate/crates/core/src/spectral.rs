//! Discrete Fourier transform of segmented series and the two
//! normalizations that strip amplitude information.
//!
//! The transform is the plain unscaled sum `X_jw = sum_t x_jt e^{-2pi i w t / n}`;
//! no spectral-density factor is applied anywhere because every dependence
//! measure is a ratio in which such factors cancel.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::ingest::{BlockPartition, SegmentSet};

/// Magic bytes of the spectral binary format.
pub const SPECTRA_MAGIC: &[u8; 6] = b"SDSPC1";

/// Which amplitude normalization the coefficients carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Raw Fourier coefficients.
    Raw,
    /// Each block sub-vector scaled to unit Euclidean norm per segment and
    /// frequency (phase information within and across blocks survives).
    Block,
    /// Each coefficient scaled to unit modulus (pure per-channel phase).
    Channel,
}

impl NormMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormMode::Raw => "raw",
            NormMode::Block => "block",
            NormMode::Channel => "channel",
        }
    }

    fn to_byte(self) -> u8 {
        match self {
            NormMode::Raw => 0,
            NormMode::Block => 1,
            NormMode::Channel => 2,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(NormMode::Raw),
            1 => Ok(NormMode::Block),
            2 => Ok(NormMode::Channel),
            _ => Err(Error::MalformedInput(format!("unknown norm mode byte {b}"))),
        }
    }
}

/// Which frequencies of the transform to retain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FreqSelection {
    /// Bins `1 ..= floor(n_t / 2)`. Bin 0 is excluded: after mean removal it
    /// is identically zero, and the negative-frequency bins are conjugate
    /// mirrors carrying no extra information for real inputs. For even
    /// `n_t` the last bin is the Nyquist bin, purely real for real inputs,
    /// so its lagged measures are structurally zero; it is retained rather
    /// than dropped.
    PositiveHalf,
    /// An explicit list of bins in `0 .. n_t`.
    Explicit(Vec<usize>),
}

/// Per-segment, per-frequency complex coefficient vectors.
#[derive(Debug, Clone)]
pub struct SpectralEnsemble {
    /// `[segment][frequency][channel]`, flattened.
    coeffs: Vec<Complex64>,
    n_segments: usize,
    n_channels: usize,
    freq_indices: Vec<usize>,
    /// Segment length of the source data; fixes the bin -> Hz mapping.
    n_t: usize,
    pub sampling_rate: Option<f64>,
    norm_mode: NormMode,
    /// Present when `norm_mode == Block`: the partition that was normalized.
    norm_partition: Option<BlockPartition>,
}

impl SpectralEnsemble {
    #[inline]
    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    #[inline]
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    pub fn n_freqs(&self) -> usize {
        self.freq_indices.len()
    }

    #[inline]
    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn freq_indices(&self) -> &[usize] {
        &self.freq_indices
    }

    pub fn norm_mode(&self) -> NormMode {
        self.norm_mode
    }

    pub fn norm_partition(&self) -> Option<&BlockPartition> {
        self.norm_partition.as_ref()
    }

    /// Position of bin `omega` inside the retained list.
    pub fn freq_position(&self, omega: usize) -> Option<usize> {
        self.freq_indices.iter().position(|&w| w == omega)
    }

    #[inline]
    pub fn coeff(&self, segment: usize, freq_pos: usize, channel: usize) -> Complex64 {
        self.coeffs[(segment * self.freq_indices.len() + freq_pos) * self.n_channels + channel]
    }

    /// The full channel vector of one segment at one retained frequency.
    pub fn vector(&self, segment: usize, freq_pos: usize) -> &[Complex64] {
        let base = (segment * self.freq_indices.len() + freq_pos) * self.n_channels;
        &self.coeffs[base..base + self.n_channels]
    }
}

/// Unscaled DFT of every segment and channel.
pub fn dft(s: &SegmentSet, selection: FreqSelection) -> Result<SpectralEnsemble> {
    let n_t = s.n_samples();
    let freq_indices: Vec<usize> = match selection {
        FreqSelection::PositiveHalf => (1..=n_t / 2).collect(),
        FreqSelection::Explicit(list) => {
            for &w in &list {
                if w >= n_t {
                    return Err(Error::FrequencyRange { index: w, n_t });
                }
            }
            list
        }
    };
    let n_f = freq_indices.len();
    let n_r = s.n_segments();
    let n_m = s.n_channels();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_t);
    let mut coeffs = vec![Complex64::new(0.0, 0.0); n_r * n_f * n_m];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_t];
    for j in 0..n_r {
        for m in 0..n_m {
            for (t, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(s.get(j, t, m), 0.0);
            }
            fft.process(&mut buf);
            for (pos, &w) in freq_indices.iter().enumerate() {
                coeffs[(j * n_f + pos) * n_m + m] = buf[w];
            }
        }
    }
    Ok(SpectralEnsemble {
        coeffs,
        n_segments: n_r,
        n_channels: n_m,
        freq_indices,
        n_t,
        sampling_rate: s.sampling_rate,
        norm_mode: NormMode::Raw,
        norm_partition: None,
    })
}

/// Scale each block sub-vector to unit Euclidean norm, per segment and
/// frequency. Channels outside every block are left untouched.
pub fn normalize_block(
    e: &SpectralEnsemble,
    partition: &BlockPartition,
) -> Result<SpectralEnsemble> {
    if e.norm_mode != NormMode::Raw {
        return Err(Error::NormMode {
            expected: "raw".into(),
            found: e.norm_mode.as_str().into(),
        });
    }
    if partition.max_channel() >= e.n_channels {
        return Err(Error::Dimension(format!(
            "partition references channel {} but the ensemble has {}",
            partition.max_channel(),
            e.n_channels
        )));
    }
    let mut out = e.clone();
    let n_f = e.freq_indices.len();
    for j in 0..e.n_segments {
        for pos in 0..n_f {
            for (b, block) in partition.blocks().iter().enumerate() {
                let norm_sq: f64 = block.iter().map(|&m| e.coeff(j, pos, m).norm_sqr()).sum();
                if norm_sq <= 0.0 {
                    return Err(Error::DegenerateSegment {
                        segment: j,
                        freq: e.freq_indices[pos],
                        what: format!("block {b}"),
                    });
                }
                let inv = 1.0 / norm_sq.sqrt();
                for &m in block {
                    let idx = (j * n_f + pos) * e.n_channels + m;
                    out.coeffs[idx] = e.coeffs[idx] * inv;
                }
            }
        }
    }
    out.norm_mode = NormMode::Block;
    out.norm_partition = Some(partition.clone());
    Ok(out)
}

/// Scale every coefficient to unit modulus.
pub fn normalize_channel(e: &SpectralEnsemble) -> Result<SpectralEnsemble> {
    if e.norm_mode != NormMode::Raw {
        return Err(Error::NormMode {
            expected: "raw".into(),
            found: e.norm_mode.as_str().into(),
        });
    }
    let mut out = e.clone();
    let n_f = e.freq_indices.len();
    for j in 0..e.n_segments {
        for pos in 0..n_f {
            for m in 0..e.n_channels {
                let idx = (j * n_f + pos) * e.n_channels + m;
                let norm_sq = e.coeffs[idx].norm_sqr();
                if norm_sq <= 0.0 {
                    return Err(Error::DegenerateSegment {
                        segment: j,
                        freq: e.freq_indices[pos],
                        what: format!("channel {m}"),
                    });
                }
                out.coeffs[idx] = e.coeffs[idx] / norm_sq.sqrt();
            }
        }
    }
    out.norm_mode = NormMode::Channel;
    out.norm_partition = None;
    Ok(out)
}

/// Export coefficients as `SDSPC1` binary: magic, u32 counts
/// `(n_segments, n_freqs, n_channels)`, a norm-mode byte, then interleaved
/// little-endian `(re, im)` pairs in `[segment][frequency][channel]` order.
pub fn write_spectra_binary(e: &SpectralEnsemble, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(19 + e.coeffs.len() * 16);
    out.extend_from_slice(SPECTRA_MAGIC);
    out.extend_from_slice(&(e.n_segments as u32).to_le_bytes());
    out.extend_from_slice(&(e.freq_indices.len() as u32).to_le_bytes());
    out.extend_from_slice(&(e.n_channels as u32).to_le_bytes());
    out.push(e.norm_mode.to_byte());
    for z in &e.coeffs {
        out.extend_from_slice(&z.re.to_le_bytes());
        out.extend_from_slice(&z.im.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Import `SDSPC1` coefficients (e.g. precomputed wavelet coefficients).
///
/// The format does not carry the bin list, so the retained frequencies are
/// assumed to be the positive half `1 ..= F` of a length `2F` transform; a
/// block-normalized file additionally needs the partition re-supplied by
/// the caller before nonlinear block measures can run.
pub fn read_spectra_binary(path: &Path) -> Result<SpectralEnsemble> {
    let bytes = fs::read(path)?;
    if bytes.len() < 19 {
        return Err(Error::MalformedInput(format!(
            "file too short ({} bytes) for SDSPC1 header",
            bytes.len()
        )));
    }
    if &bytes[0..6] != SPECTRA_MAGIC {
        return Err(Error::MalformedInput(
            "byte 0: bad magic, expected SDSPC1".into(),
        ));
    }
    let rd_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let n_segments = rd_u32(6);
    let n_freqs = rd_u32(10);
    let n_channels = rd_u32(14);
    let norm_mode = NormMode::from_byte(bytes[18])?;
    let expected = 19 + n_segments * n_freqs * n_channels * 16;
    if bytes.len() != expected {
        return Err(Error::Dimension(format!(
            "byte 19: payload is {} bytes, header implies {}",
            bytes.len() - 19,
            expected - 19
        )));
    }
    let coeffs: Vec<Complex64> = bytes[19..]
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[0..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..16].try_into().unwrap()),
            )
        })
        .collect();
    if let Some(bad) = coeffs
        .iter()
        .position(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::MalformedInput(format!(
            "non-finite coefficient at flat index {bad}"
        )));
    }
    Ok(SpectralEnsemble {
        coeffs,
        n_segments,
        n_channels,
        freq_indices: (1..=n_freqs).collect(),
        n_t: 2 * n_freqs,
        sampling_rate: None,
        norm_mode,
        norm_partition: None,
    })
}

/// Attach a partition to a block-normalized ensemble loaded from disk,
/// verifying numerically that each block sub-vector really has unit norm.
pub fn attach_block_partition(
    e: &SpectralEnsemble,
    partition: &BlockPartition,
) -> Result<SpectralEnsemble> {
    if e.norm_mode != NormMode::Block {
        return Err(Error::NormMode {
            expected: "block".into(),
            found: e.norm_mode.as_str().into(),
        });
    }
    let n_f = e.freq_indices.len();
    for j in 0..e.n_segments {
        for pos in 0..n_f {
            for (b, block) in partition.blocks().iter().enumerate() {
                let norm_sq: f64 = block.iter().map(|&m| e.coeff(j, pos, m).norm_sqr()).sum();
                if (norm_sq - 1.0).abs() > 1e-10 {
                    return Err(Error::NormMode {
                        expected: format!("unit-norm block {b}"),
                        found: format!(
                            "norm^2 = {norm_sq} at segment {j}, bin {}",
                            e.freq_indices[pos]
                        ),
                    });
                }
            }
        }
    }
    let mut out = e.clone();
    out.norm_partition = Some(partition.clone());
    Ok(out)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Direct O(n^2) evaluation of the transform sum; the independence
    /// oracle for the FFT path.
    pub fn dft_direct(s: &SegmentSet, freq_indices: &[usize]) -> Vec<Complex64> {
        let n_t = s.n_samples();
        let mut out = Vec::with_capacity(s.n_segments() * freq_indices.len() * s.n_channels());
        for j in 0..s.n_segments() {
            for &w in freq_indices {
                for m in 0..s.n_channels() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in 0..n_t {
                        let phase =
                            -2.0 * std::f64::consts::PI * (w as f64) * (t as f64) / n_t as f64;
                        acc += Complex64::new(s.get(j, t, m), 0.0)
                            * Complex64::new(phase.cos(), phase.sin());
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    /// Build an ensemble directly from coefficients; test fixtures only.
    pub fn ensemble_from_coeffs(
        coeffs: Vec<Complex64>,
        n_segments: usize,
        freq_indices: Vec<usize>,
        n_channels: usize,
        n_t: usize,
        norm_mode: NormMode,
        norm_partition: Option<BlockPartition>,
    ) -> SpectralEnsemble {
        assert_eq!(coeffs.len(), n_segments * freq_indices.len() * n_channels);
        SpectralEnsemble {
            coeffs,
            n_segments,
            n_channels,
            freq_indices,
            n_t,
            sampling_rate: None,
            norm_mode,
            norm_partition,
        }
    }
}
