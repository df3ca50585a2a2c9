//! Signal generators and the zero-lag covariance oracle.
//!
//! Generators draw from a ChaCha8 stream keyed by the config seed with
//! ziggurat normal sampling; the same seed yields the same samples on every
//! platform, which keeps simulated acceptance numbers reproducible.

use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::crossspectra::accumulate;
use crate::error::{Error, Result};
use crate::ingest::{BlockPartition, SegmentSet};
use crate::mat::RMatrix;
use crate::spectral::{dft, FreqSelection, SpectralEnsemble};

/// Identifier of the generator stack recorded in simulation sidecars.
pub const GENERATOR_ID: &str = "chacha8+ziggurat-v1";

/// Spectrum of the common-source signal in [`volume_conduction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SourceSpec {
    /// Independent standard Gaussian samples.
    White,
    /// Two components: the second is the first delayed by `lag` samples and
    /// scaled by `coupling`, plus unit white innovations.
    ArPair { lag: usize, coupling: f64 },
}

/// Configuration of the common-source (volume-conduction) generator:
/// `X = C Z + noise`, `Y = D Z + noise`, with `Z` the hidden source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_segments: usize,
    pub n_samples: usize,
    /// p x r mixing of the source into the X channels.
    pub mixing_c: Vec<Vec<f64>>,
    /// q x r mixing of the source into the Y channels.
    pub mixing_d: Vec<Vec<f64>>,
    pub source: SourceSpec,
    pub noise_sd: f64,
    pub seed: u64,
    /// Zero sensor noise makes the cross-spectra exactly singular; require
    /// an explicit acknowledgment before generating such data.
    #[serde(default)]
    pub allow_zero_noise: bool,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(usize, usize, usize)> {
        if self.n_segments < 1 || self.n_samples < 2 {
            return Err(Error::InvalidArgument(
                "need at least 1 segment of at least 2 samples".into(),
            ));
        }
        let p = self.mixing_c.len();
        let q = self.mixing_d.len();
        if p == 0 || q == 0 {
            return Err(Error::InvalidArgument(
                "mixing matrices must be nonempty".into(),
            ));
        }
        let r = self.mixing_c[0].len();
        if r == 0
            || self.mixing_c.iter().any(|row| row.len() != r)
            || self.mixing_d.iter().any(|row| row.len() != r)
        {
            return Err(Error::Dimension(
                "mixing matrices must have matching nonzero source dimension".into(),
            ));
        }
        if let SourceSpec::ArPair { lag, .. } = self.source {
            if r != 2 {
                return Err(Error::Dimension(
                    "an ar-pair source has exactly 2 components".into(),
                ));
            }
            if lag == 0 || lag >= self.n_samples {
                return Err(Error::InvalidArgument(format!(
                    "ar-pair lag must be in 1..{}",
                    self.n_samples
                )));
            }
        }
        if self.noise_sd.is_nan() || self.noise_sd < 0.0 {
            return Err(Error::InvalidArgument(
                "noise_sd must be nonnegative".into(),
            ));
        }
        if self.noise_sd == 0.0 && !self.allow_zero_noise {
            return Err(Error::InvalidArgument(
                "zero noise makes cross-spectra singular; set allow_zero_noise to proceed".into(),
            ));
        }
        Ok((p, q, r))
    }
}

/// Independent standard Gaussian samples in `[segment][time][channel]`
/// order; a pure function of the seed.
pub fn white_noise(
    n_segments: usize,
    n_samples: usize,
    n_channels: usize,
    seed: u64,
) -> SegmentSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n_segments * n_samples * n_channels)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    SegmentSet::new(data, n_segments, n_samples, n_channels)
        .expect("generator produced invalid shape")
}

/// The common-source confound: two blocks that share only an instantaneous
/// hidden signal, so any dependence between them is zero-lag by
/// construction. Returns the recording and the X/Y block partition.
pub fn volume_conduction(cfg: &SimulationConfig) -> Result<(SegmentSet, BlockPartition)> {
    let (p, q, r) = cfg.validate()?;
    let m = p + q;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut data = vec![0.0f64; cfg.n_segments * cfg.n_samples * m];
    let mut z_prev: Vec<Vec<f64>> = Vec::new(); // per-segment source history
    for j in 0..cfg.n_segments {
        z_prev.clear();
        for t in 0..cfg.n_samples {
            let z: Vec<f64> = match cfg.source {
                SourceSpec::White => (0..r).map(|_| rng.sample(StandardNormal)).collect(),
                SourceSpec::ArPair { lag, coupling } => {
                    let z1: f64 = rng.sample(StandardNormal);
                    let innov: f64 = rng.sample(StandardNormal);
                    let delayed = if t >= lag { z_prev[t - lag][0] } else { 0.0 };
                    vec![z1, coupling * delayed + innov]
                }
            };
            let base = (j * cfg.n_samples + t) * m;
            for (row, cell) in cfg.mixing_c.iter().zip(&mut data[base..base + p]) {
                let sig: f64 = row.iter().zip(&z).map(|(c, zv)| c * zv).sum();
                let eps: f64 = rng.sample(StandardNormal);
                *cell = sig + cfg.noise_sd * eps;
            }
            for (row, cell) in cfg.mixing_d.iter().zip(&mut data[base + p..base + m]) {
                let sig: f64 = row.iter().zip(&z).map(|(d, zv)| d * zv).sum();
                let eps: f64 = rng.sample(StandardNormal);
                *cell = sig + cfg.noise_sd * eps;
            }
            z_prev.push(z);
        }
    }
    let set = SegmentSet::new(data, cfg.n_segments, cfg.n_samples, m)?;
    let partition = BlockPartition::new(vec![(0..p).collect(), (p..m).collect()], m)?;
    Ok((set, partition))
}

/// Positive control: channel 0 is white, channel 1 is channel 0 delayed by
/// `lag` samples (zero-padded at the segment head), scaled by `coupling`,
/// plus independent noise. Lagged measures must fire on this.
pub fn lagged_coupling(
    n_segments: usize,
    n_samples: usize,
    lag: usize,
    coupling: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<SegmentSet> {
    if lag == 0 || lag >= n_samples {
        return Err(Error::InvalidArgument(format!(
            "lag must be in 1..{n_samples}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f64; n_segments * n_samples * 2];
    let mut driver = vec![0.0f64; n_samples];
    for j in 0..n_segments {
        for d in driver.iter_mut() {
            *d = rng.sample(StandardNormal);
        }
        for t in 0..n_samples {
            let delayed = if t >= lag { driver[t - lag] } else { 0.0 };
            let eps: f64 = rng.sample(StandardNormal);
            let base = (j * n_samples + t) * 2;
            data[base] = driver[t];
            data[base + 1] = coupling * delayed + noise_sd * eps;
        }
    }
    SegmentSet::new(data, n_segments, n_samples, 2)
}

/// Outcome of the zero-lag covariance identity check at one frequency bin.
#[derive(Debug, Clone)]
pub struct ParsevalReport {
    /// Time-domain zero-lag covariance of the bin-filtered series.
    pub a: RMatrix,
    /// Real part of the frequency-domain covariance at the same bin.
    pub lhs: RMatrix,
    /// Max entrywise relative discrepancy of `lhs` against `n_t^2 / 2 * a`.
    pub max_rel_err: f64,
}

fn interior_bin_check(omega: usize, n_t: usize) -> Result<()> {
    if omega == 0 || 2 * omega >= n_t {
        return Err(Error::FrequencyRange { index: omega, n_t });
    }
    Ok(())
}

/// Check the identity `Re(S_w) = n_t^2 / 2 * A_w` for a recording at a
/// strictly interior bin, where `A_w` is the plain time-domain covariance
/// of the series ideal-filtered to that single bin.
///
/// The filter keeps bins `w` and `n_t - w`, zeroes the rest, and inverts;
/// that is the unique filter making the identity exact at finite length.
pub fn parseval_check(s: &SegmentSet, omega: usize) -> Result<ParsevalReport> {
    interior_bin_check(omega, s.n_samples())?;
    let e = dft(s, FreqSelection::Explicit(vec![omega]))?;
    parseval_check_ensemble(&e, omega)
}

/// Same check starting from coefficients (raw or normalized): the filtered
/// series is synthesized from the single retained bin and its conjugate
/// mirror.
pub fn parseval_check_ensemble(e: &SpectralEnsemble, omega: usize) -> Result<ParsevalReport> {
    let n_t = e.n_t();
    interior_bin_check(omega, n_t)?;
    let pos = e
        .freq_position(omega)
        .ok_or(Error::FrequencyRange { index: omega, n_t })?;
    let m = e.n_channels();
    let n_r = e.n_segments();

    // phase table e^{+2 pi i w t / n_t}
    let phases: Vec<Complex64> = (0..n_t)
        .map(|t| {
            let th = 2.0 * std::f64::consts::PI * (omega as f64) * (t as f64) / n_t as f64;
            Complex64::new(th.cos(), th.sin())
        })
        .collect();

    let mut a = RMatrix::zeros(m);
    let mut x_t = vec![0.0f64; m];
    let two_over_nt = 2.0 / n_t as f64;
    for j in 0..n_r {
        let v = e.vector(j, pos);
        for ph in &phases {
            for (c, vc) in x_t.iter_mut().zip(v) {
                // inverse transform of the two retained conjugate bins
                *c = two_over_nt * (vc * ph).re;
            }
            for r in 0..m {
                for cidx in r..m {
                    let val = a.get(r, cidx) + x_t[r] * x_t[cidx];
                    a.set(r, cidx, val);
                }
            }
        }
    }
    let inv = 1.0 / (n_t as f64 * n_r as f64);
    for r in 0..m {
        for cidx in r..m {
            let val = a.get(r, cidx) * inv;
            a.set(r, cidx, val);
            a.set(cidx, r, val);
        }
    }

    let lhs = accumulate(e, omega)?.dense().re();
    let scale = (n_t as f64) * (n_t as f64) / 2.0;
    let mut denom = 0.0f64;
    let mut worst = 0.0f64;
    for r in 0..m {
        for cidx in 0..m {
            denom = denom
                .max(lhs.get(r, cidx).abs())
                .max(scale * a.get(r, cidx).abs());
        }
    }
    for r in 0..m {
        for cidx in 0..m {
            let diff = (lhs.get(r, cidx) - scale * a.get(r, cidx)).abs();
            if denom > 0.0 {
                worst = worst.max(diff / denom);
            } else if diff > 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(ParsevalReport {
        a,
        lhs,
        max_rel_err: worst,
    })
}
