//! The pipeline behind the command-line interface: configuration types,
//! the analyze / simulate / selftest entry points, and deterministic
//! serialization of the outputs.
//!
//! Everything here is callable as a library; the binary only parses flags,
//! forwards to these functions, and maps errors to exit codes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::crossspectra::{
    accumulate, pool, CrossSpectrum, CrossSpectrumJson, FreqTag, FrequencyBand,
};
use crate::error::{Error, Result};
use crate::inference::{test_dependence, ScaleChoice, TestResult};
use crate::ingest::{
    detrend, hann_taper, load_segments, write_segments_binary, BlockPartition, DetrendMode,
    SegmentFormat, SegmentSet,
};
use crate::measures::{
    all_univariate_linear, all_univariate_nonlinear, linear_dependence, nonlinear_dependence,
    DependenceReport, MeasureKind,
};
use crate::simulate::{
    lagged_coupling, volume_conduction, white_noise, SimulationConfig, GENERATOR_ID,
};
use crate::spectral::{
    dft, normalize_block, normalize_channel, read_spectra_binary, FreqSelection, SpectralEnsemble,
};

/// Input kinds `analyze` understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    CsvLong,
    BinaryF64,
    /// Precomputed coefficients (`SDSPC1`), e.g. from a wavelet transform.
    SpectraBin,
}

/// Which measure families to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureSel {
    Linear,
    Nonlinear,
    AllUnivariate,
}

/// Which normalizations to prepare.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormSel {
    Block,
    Channel,
}

/// A frequency band before resolution against the retained bins.
#[derive(Debug, Clone, PartialEq)]
pub enum BandSpec {
    Bins { name: String, bins: Vec<usize> },
    HzRange { name: String, lo: f64, hi: f64 },
}

/// Fully parsed configuration of one `analyze` run.
#[derive(Debug, Clone)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub format: InputKind,
    /// Named blocks of channel names or indices; empty means no partition.
    pub partition: Vec<(String, Vec<String>)>,
    pub bands: Vec<BandSpec>,
    pub measures: Vec<MeasureSel>,
    pub norms: Vec<NormSel>,
    pub scale: ScaleChoice,
    pub ridge: Option<f64>,
    /// Overrides the sampling rate (needed for Hz bands on rate-less files).
    pub sampling_rate: Option<f64>,
    pub detrend: bool,
    pub taper_hann: bool,
    pub out_dir: PathBuf,
    pub dump_spectra: bool,
}

/// `name=a,b;other=c,...` → named lists, for partitions.
pub fn parse_partition_spec(spec: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
        let (name, list) = part.split_once('=').ok_or_else(|| {
            Error::InvalidArgument(format!("partition block '{part}' is missing '='"))
        })?;
        let members: Vec<String> = list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "partition block '{name}' has no channels"
            )));
        }
        out.push((name.trim().to_string(), members));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty partition spec".into()));
    }
    Ok(out)
}

/// `alpha=8-12hz;beta=3,4,5;gamma=7-9` → band specs (Hz range, explicit
/// bins, or an inclusive bin range).
pub fn parse_band_spec(spec: &str) -> Result<Vec<BandSpec>> {
    let mut out = Vec::new();
    for part in spec.split(';').filter(|s| !s.trim().is_empty()) {
        let (name, body) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("band '{part}' is missing '='")))?;
        let name = name.trim().to_string();
        let body = body.trim();
        let lower = body.to_ascii_lowercase();
        if let Some(range) = lower.strip_suffix("hz") {
            let (lo, hi) = range.split_once('-').ok_or_else(|| {
                Error::InvalidArgument(format!("band '{name}': Hz spec needs 'lo-hihz'"))
            })?;
            let lo: f64 = lo.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("band '{name}': bad Hz bound '{lo}'"))
            })?;
            let hi: f64 = hi.trim().parse().map_err(|_| {
                Error::InvalidArgument(format!("band '{name}': bad Hz bound '{hi}'"))
            })?;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "band '{name}': invalid Hz range {lo}-{hi}"
                )));
            }
            out.push(BandSpec::HzRange { name, lo, hi });
        } else if let Some((lo, hi)) = body.split_once('-') {
            let lo: usize = lo
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("band '{name}': bad bin '{lo}'")))?;
            let hi: usize = hi
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("band '{name}': bad bin '{hi}'")))?;
            if hi < lo {
                return Err(Error::InvalidArgument(format!(
                    "band '{name}': empty bin range {lo}-{hi}"
                )));
            }
            out.push(BandSpec::Bins {
                name,
                bins: (lo..=hi).collect(),
            });
        } else {
            let bins: Vec<usize> = body
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::InvalidArgument(format!("band '{name}': bad bin '{s}'"))
                    })
                })
                .collect::<Result<_>>()?;
            if bins.is_empty() {
                return Err(Error::InvalidArgument(format!("band '{name}' is empty")));
            }
            out.push(BandSpec::Bins { name, bins });
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty band spec".into()));
    }
    Ok(out)
}

/// Resolve channel references (names or indices) into a [`BlockPartition`]
/// plus block names.
fn resolve_partition(
    spec: &[(String, Vec<String>)],
    channel_names: &[String],
) -> Result<(Vec<String>, BlockPartition)> {
    let mut names = Vec::with_capacity(spec.len());
    let mut blocks = Vec::with_capacity(spec.len());
    for (name, members) in spec {
        let mut idx = Vec::with_capacity(members.len());
        for m in members {
            if let Some(pos) = channel_names.iter().position(|c| c == m) {
                idx.push(pos);
            } else if let Ok(i) = m.parse::<usize>() {
                if i >= channel_names.len() {
                    return Err(Error::InvalidArgument(format!(
                        "block '{name}': channel index {i} out of range ({} channels)",
                        channel_names.len()
                    )));
                }
                idx.push(i);
            } else {
                return Err(Error::InvalidArgument(format!(
                    "block '{name}': unknown channel '{m}'"
                )));
            }
        }
        names.push(name.clone());
        blocks.push(idx);
    }
    let partition = BlockPartition::new(blocks, channel_names.len())?;
    Ok((names, partition))
}

/// Resolve band specs to concrete bins and check they are all retained.
fn resolve_bands(
    specs: &[BandSpec],
    retained: &[usize],
    n_t: usize,
    rate: Option<f64>,
) -> Result<Vec<FrequencyBand>> {
    let mut out = Vec::with_capacity(specs.len());
    for spec in specs {
        let band = match spec {
            BandSpec::Bins { name, bins } => FrequencyBand::new(name.clone(), bins.clone())?,
            BandSpec::HzRange { name, lo, hi } => {
                let rate = rate.ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "band '{name}' is in Hz but no sampling rate is available; pass --rate"
                    ))
                })?;
                let bins: Vec<usize> = retained
                    .iter()
                    .copied()
                    .filter(|&w| {
                        let f = w as f64 * rate / n_t as f64;
                        f >= *lo && f <= *hi
                    })
                    .collect();
                if bins.is_empty() {
                    return Err(Error::Coverage(format!(
                        "band '{name}' ({lo}-{hi} Hz) matches no retained bin"
                    )));
                }
                FrequencyBand::new(name.clone(), bins)?
            }
        };
        for &w in &band.freq_indices {
            if !retained.contains(&w) {
                return Err(Error::Coverage(format!(
                    "band '{}' references bin {w}, which is not retained",
                    band.name
                )));
            }
        }
        out.push(band);
    }
    Ok(out)
}

/// One row of the connectivity table: squared coherence (or phase
/// synchronization) between two named blocks at one frequency or band.
#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityRow {
    pub kind: MeasureKind,
    pub block_a: String,
    pub block_b: String,
    pub freq: FreqTag,
    pub rho2_total: f64,
    pub rho2_lagged: f64,
    pub rho2_instantaneous: f64,
}

/// Chi-square tests of one report, with enough context to pair them up.
#[derive(Debug, Clone, Serialize)]
pub struct TestBundle {
    pub kind: MeasureKind,
    pub scope: crate::measures::Scope,
    pub freq: FreqTag,
    pub block_dims: Vec<usize>,
    pub n_t: usize,
    pub n_r: usize,
    pub tests: Vec<TestResult>,
}

/// Everything an `analyze` run produces, before serialization.
pub struct AnalyzeOutputs {
    pub reports: Vec<DependenceReport>,
    pub tests: Vec<TestBundle>,
    pub connectivity: Vec<ConnectivityRow>,
}

enum LoadedInput {
    Time(SegmentSet),
    Spectra(SpectralEnsemble),
}

fn load_input(cfg: &AnalysisConfig) -> Result<LoadedInput> {
    match cfg.format {
        InputKind::CsvLong => Ok(LoadedInput::Time(load_segments(
            &cfg.input,
            SegmentFormat::CsvLong,
        )?)),
        InputKind::BinaryF64 => Ok(LoadedInput::Time(load_segments(
            &cfg.input,
            SegmentFormat::BinaryF64,
        )?)),
        InputKind::SpectraBin => Ok(LoadedInput::Spectra(read_spectra_binary(&cfg.input)?)),
    }
}

fn validate_config(cfg: &AnalysisConfig) -> Result<()> {
    if cfg.measures.is_empty() {
        return Err(Error::InvalidArgument("no measures requested".into()));
    }
    let wants_nonlinear = cfg.measures.contains(&MeasureSel::Nonlinear);
    if wants_nonlinear && !cfg.norms.contains(&NormSel::Block) {
        return Err(Error::InvalidArgument(
            "nonlinear block measures need '--norm block'".into(),
        ));
    }
    let needs_partition = wants_nonlinear || cfg.measures.contains(&MeasureSel::Linear);
    if needs_partition && cfg.partition.is_empty() {
        return Err(Error::InvalidArgument(
            "linear/nonlinear block measures need '--partition'".into(),
        ));
    }
    if cfg.format == InputKind::SpectraBin && cfg.taper_hann {
        return Err(Error::InvalidArgument(
            "a taper applies to time-domain input only".into(),
        ));
    }
    if let Some(r) = cfg.ridge {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::InvalidArgument(
                "ridge must be a nonnegative number".into(),
            ));
        }
    }
    Ok(())
}

fn maybe_ridge(s: &CrossSpectrum, ridge: Option<f64>) -> CrossSpectrum {
    match ridge {
        Some(l) if l > 0.0 => s.ridged(l),
        _ => s.clone(),
    }
}

/// Run the full analysis pipeline and write `reports.json`, `tests.json`,
/// and `connectivity.csv` (plus spectra dumps on request) into the output
/// directory.
pub fn run_analyze(cfg: &AnalysisConfig) -> Result<AnalyzeOutputs> {
    validate_config(cfg)?;

    // ingest + transform
    let (ensemble, n_t, n_r, channel_names) = match load_input(cfg)? {
        LoadedInput::Time(mut set) => {
            set.sampling_rate = cfg.sampling_rate.or(set.sampling_rate);
            let set = if cfg.detrend {
                detrend(&set, DetrendMode::Mean)
            } else {
                set
            };
            let set = if cfg.taper_hann {
                hann_taper(&set)
            } else {
                set
            };
            let names = set.channel_names.clone();
            let (n_t, n_r) = (set.n_samples(), set.n_segments());
            (dft(&set, FreqSelection::PositiveHalf)?, n_t, n_r, names)
        }
        LoadedInput::Spectra(e) => {
            let names: Vec<String> = (0..e.n_channels()).map(|m| format!("ch_{m}")).collect();
            let (n_t, n_r) = (e.n_t(), e.n_segments());
            (e, n_t, n_r, names)
        }
    };
    let rate = cfg.sampling_rate.or(ensemble.sampling_rate);

    let partition_info = if cfg.partition.is_empty() {
        None
    } else {
        Some(resolve_partition(&cfg.partition, &channel_names)?)
    };
    let bands = resolve_bands(&cfg.bands, ensemble.freq_indices(), n_t, rate)?;

    let wants = |m: MeasureSel| cfg.measures.contains(&m);
    let wants_channel_norm = cfg.norms.contains(&NormSel::Channel);

    // normalized ensembles, prepared once
    let block_ensemble = if cfg.norms.contains(&NormSel::Block) {
        let (_, p) = partition_info
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("'--norm block' needs '--partition'".into()))?;
        Some(normalize_block(&ensemble, p)?)
    } else {
        None
    };
    let channel_ensemble = if wants_channel_norm {
        Some(normalize_channel(&ensemble)?)
    } else {
        None
    };

    // per-frequency cross-spectra for every prepared normalization
    let retained: Vec<usize> = ensemble.freq_indices().to_vec();
    let spectra_for = |e: &SpectralEnsemble| -> Result<Vec<CrossSpectrum>> {
        retained
            .par_iter()
            .map(|&w| accumulate(e, w))
            .collect::<Result<Vec<_>>>()
    };
    let raw_spectra = spectra_for(&ensemble)?;
    let block_spectra = block_ensemble.as_ref().map(&spectra_for).transpose()?;
    let channel_spectra = channel_ensemble.as_ref().map(&spectra_for).transpose()?;

    // pooled band matrices
    let pool_over = |per_freq: &[CrossSpectrum]| -> Result<Vec<CrossSpectrum>> {
        bands
            .iter()
            .map(|band| {
                let members: Vec<&CrossSpectrum> = per_freq
                    .iter()
                    .filter(|s| match s.freq {
                        FreqTag::Bin(w) => band.freq_indices.contains(&w),
                        FreqTag::Band(_) => false,
                    })
                    .collect();
                pool(&members, band)
            })
            .collect()
    };
    let raw_pooled = pool_over(&raw_spectra)?;
    let block_pooled = block_spectra.as_ref().map(|s| pool_over(s)).transpose()?;
    let channel_pooled = channel_spectra.as_ref().map(|s| pool_over(s)).transpose()?;

    // measures
    let mut reports: Vec<DependenceReport> = Vec::new();
    let ridge = cfg.ridge;
    if wants(MeasureSel::Linear) {
        let (_, p) = partition_info.as_ref().unwrap();
        for s in raw_spectra.iter().chain(&raw_pooled) {
            reports.push(linear_dependence(&maybe_ridge(s, ridge), p)?);
        }
    }
    if wants(MeasureSel::Nonlinear) {
        let (_, p) = partition_info.as_ref().unwrap();
        let per_freq = block_spectra.as_ref().unwrap();
        let pooled = block_pooled.as_ref().unwrap();
        for s in per_freq.iter().chain(pooled) {
            reports.push(nonlinear_dependence(&maybe_ridge(s, ridge), p)?);
        }
    }
    if wants(MeasureSel::AllUnivariate) {
        for s in raw_spectra.iter().chain(&raw_pooled) {
            reports.push(all_univariate_linear(&maybe_ridge(s, ridge))?);
        }
        if let (Some(per_freq), Some(pooled)) = (&channel_spectra, &channel_pooled) {
            for s in per_freq.iter().chain(pooled) {
                reports.push(all_univariate_nonlinear(&maybe_ridge(s, ridge))?);
            }
        }
    }

    // chi-square tests for the linear reports
    let mut tests = Vec::new();
    for r in &reports {
        if r.kind == MeasureKind::Linear {
            tests.push(TestBundle {
                kind: r.kind,
                scope: r.scope,
                freq: r.freq.clone(),
                block_dims: r.block_dims.clone(),
                n_t,
                n_r,
                tests: test_dependence(r, n_t, n_r, cfg.scale)?,
            });
        }
    }

    // pairwise connectivity table; singleton channel blocks when no
    // partition was given
    let pair_source: Option<(Vec<String>, BlockPartition)> = match &partition_info {
        Some((names, p)) => Some((names.clone(), p.clone())),
        None if wants(MeasureSel::AllUnivariate) => {
            let blocks: Vec<Vec<usize>> = (0..channel_names.len()).map(|i| vec![i]).collect();
            Some((
                channel_names.clone(),
                BlockPartition::new(blocks, channel_names.len())?,
            ))
        }
        None => None,
    };
    let mut connectivity: Vec<ConnectivityRow> = Vec::new();
    if let Some((names, p)) = &pair_source {
        // rows per band when bands were requested, per bin otherwise
        let row_tags: Vec<FreqTag> = if bands.is_empty() {
            retained.iter().map(|&w| FreqTag::Bin(w)).collect()
        } else {
            bands
                .iter()
                .map(|b| FreqTag::Band(b.name.clone()))
                .collect()
        };
        let lookup = |set: &[CrossSpectrum],
                      pooled: Option<&Vec<CrossSpectrum>>,
                      tag: &FreqTag|
         -> Option<CrossSpectrum> {
            match tag {
                FreqTag::Bin(_) => set.iter().find(|s| &s.freq == tag).cloned(),
                FreqTag::Band(_) => pooled.and_then(|v| v.iter().find(|s| &s.freq == tag).cloned()),
            }
        };
        for i in 0..p.n_blocks() {
            for j in i + 1..p.n_blocks() {
                let sub = BlockPartition::new(
                    vec![p.blocks()[i].clone(), p.blocks()[j].clone()],
                    channel_names.len(),
                )?;
                for tag in &row_tags {
                    if wants(MeasureSel::Linear) || wants(MeasureSel::AllUnivariate) {
                        let s = lookup(&raw_spectra, Some(&raw_pooled), tag)
                            .ok_or_else(|| Error::Coverage(format!("no raw spectrum for {tag}")))?;
                        let r = linear_dependence(&maybe_ridge(&s, ridge), &sub)?;
                        connectivity.push(ConnectivityRow {
                            kind: MeasureKind::Linear,
                            block_a: names[i].clone(),
                            block_b: names[j].clone(),
                            freq: tag.clone(),
                            rho2_total: r.rho2.total,
                            rho2_lagged: r.rho2.lagged,
                            rho2_instantaneous: r.rho2.instantaneous,
                        });
                    }
                    if wants(MeasureSel::Nonlinear) {
                        let set = block_spectra.as_ref().unwrap();
                        let s = lookup(set, block_pooled.as_ref(), tag).ok_or_else(|| {
                            Error::Coverage(format!("no normalized spectrum for {tag}"))
                        })?;
                        let r = nonlinear_dependence(&maybe_ridge(&s, ridge), &sub)?;
                        connectivity.push(ConnectivityRow {
                            kind: MeasureKind::Nonlinear,
                            block_a: names[i].clone(),
                            block_b: names[j].clone(),
                            freq: tag.clone(),
                            rho2_total: r.rho2.total,
                            rho2_lagged: r.rho2.lagged,
                            rho2_instantaneous: r.rho2.instantaneous,
                        });
                    }
                }
            }
        }
    }

    // write artifacts
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("reports.json"), &reports)?;
    write_json(&cfg.out_dir.join("tests.json"), &tests)?;
    write_connectivity_csv(&cfg.out_dir.join("connectivity.csv"), &connectivity)?;
    if cfg.dump_spectra {
        let dir = cfg.out_dir.join("spectra");
        fs::create_dir_all(&dir)?;
        let dump = |set: &[CrossSpectrum], label: &str| -> Result<()> {
            for s in set {
                let name = match &s.freq {
                    FreqTag::Bin(w) => format!("{label}_bin_{w}.json"),
                    FreqTag::Band(b) => format!("{label}_band_{b}.json"),
                };
                write_json(&dir.join(name), &CrossSpectrumJson::from_spectrum(s))?;
            }
            Ok(())
        };
        dump(&raw_spectra, "raw")?;
        dump(&raw_pooled, "raw")?;
        if let Some(s) = &block_spectra {
            dump(s, "block")?;
        }
        if let Some(s) = &block_pooled {
            dump(s, "block")?;
        }
        if let Some(s) = &channel_spectra {
            dump(s, "channel")?;
        }
        if let Some(s) = &channel_pooled {
            dump(s, "channel")?;
        }
    }

    Ok(AnalyzeOutputs {
        reports,
        tests,
        connectivity,
    })
}

/// What `simulate` can generate, as read from the spec file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum SimulateSpec {
    /// Common-source confound, the default scenario.
    VolumeConduction(SimulationConfig),
    WhiteNoise {
        n_segments: usize,
        n_samples: usize,
        n_channels: usize,
        seed: u64,
    },
    LaggedCoupling {
        n_segments: usize,
        n_samples: usize,
        lag: usize,
        coupling: f64,
        noise_sd: f64,
        seed: u64,
    },
}

#[derive(Serialize)]
struct SimulateSidecar<'a> {
    generator: &'a str,
    spec: &'a SimulateSpec,
    n_channels: usize,
    partition: Option<Vec<Vec<usize>>>,
}

/// Generate data from a JSON spec file: writes `segments.bin` plus a
/// `config.json` sidecar echoing the spec.
pub fn run_simulate(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let text = fs::read_to_string(spec_path)?;
    let spec: SimulateSpec = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidArgument(format!("bad simulate spec: {e}")))?;
    let (set, partition) = match &spec {
        SimulateSpec::VolumeConduction(cfg) => {
            let (set, p) = volume_conduction(cfg)?;
            (set, Some(p.blocks().to_vec()))
        }
        SimulateSpec::WhiteNoise {
            n_segments,
            n_samples,
            n_channels,
            seed,
        } => (
            white_noise(*n_segments, *n_samples, *n_channels, *seed),
            None,
        ),
        SimulateSpec::LaggedCoupling {
            n_segments,
            n_samples,
            lag,
            coupling,
            noise_sd,
            seed,
        } => (
            lagged_coupling(*n_segments, *n_samples, *lag, *coupling, *noise_sd, *seed)?,
            Some(vec![vec![0], vec![1]]),
        ),
    };
    fs::create_dir_all(out_dir)?;
    write_segments_binary(&set, &out_dir.join("segments.bin"))?;
    write_json(
        &out_dir.join("config.json"),
        &SimulateSidecar {
            generator: GENERATOR_ID,
            spec: &spec,
            n_channels: set.n_channels(),
            partition,
        },
    )?;
    Ok(())
}

/// Built-in sanity suite: closed-form parity, additivity, the zero-lag
/// identity, and the degrees-of-freedom table. Prints one PASS/FAIL line
/// per group and returns whether everything passed.
///
/// `perturb` offsets the measure outputs before comparison; harness hook
/// for verifying that the suite actually detects a broken kernel (see the
/// `SPECDEP_SELFTEST_PERTURB` environment variable in `main`).
pub fn run_selftest(perturb: f64, out: &mut dyn Write) -> Result<bool> {
    use num_complex::Complex64;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    let mut all_ok = true;
    let report = |name: &str, ok: bool, out: &mut dyn Write| -> Result<()> {
        writeln!(out, "{} {name}", if ok { "PASS" } else { "FAIL" })?;
        Ok(())
    };

    // univariate closed forms vs the determinant path
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut ok = true;
    for _ in 0..200 {
        let s_yy: f64 = rng.gen_range(0.2..3.0);
        let s_xx: f64 = rng.gen_range(0.2..3.0);
        let coh: f64 = rng.gen_range(0.0..0.95);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let s_yx = Complex64::from_polar((coh * s_yy * s_xx).sqrt(), phase);
        let m = crate::mat::CMatrix::from_rows(&[
            vec![Complex64::new(s_yy, 0.0), s_yx],
            vec![s_yx.conj(), Complex64::new(s_xx, 0.0)],
        ]);
        let spec = CrossSpectrum::from_dense(
            &m,
            FreqTag::Bin(1),
            16,
            crate::spectral::NormMode::Raw,
            None,
        )?;
        let r = linear_dependence(&spec, &BlockPartition::univariate_pair())?;
        let re2 = s_yx.re * s_yx.re;
        let im2 = s_yx.im * s_yx.im;
        let total = -(1.0 - (re2 + im2) / (s_yy * s_xx)).ln();
        let inst = -(1.0 - re2 / (s_yy * s_xx)).ln();
        let lagged = ((s_yy * s_xx - re2) / (s_yy * s_xx - re2 - im2)).ln();
        if (r.total + perturb - total).abs() > 1e-10
            || (r.instantaneous + perturb - inst).abs() > 1e-10
            || (r.lagged + perturb - lagged).abs() > 1e-10
        {
            ok = false;
            break;
        }
    }
    report("univariate-closed-forms", ok, out)?;
    all_ok &= ok;

    // additivity and nonnegativity across random ensembles
    let mut ok = true;
    'outer: for trial in 0..100 {
        let set = white_noise(12, 32, 6, 7_000 + trial);
        let e = dft(&set, FreqSelection::PositiveHalf)?;
        let p = BlockPartition::new(vec![vec![0, 1, 2], vec![3, 4], vec![5]], 6)?;
        let en = normalize_block(&e, &p)?;
        for &w in &[1usize, 5, 11] {
            for r in [
                linear_dependence(&accumulate(&e, w)?, &p)?,
                nonlinear_dependence(&accumulate(&en, w)?, &p)?,
            ] {
                if (r.raw.total - (r.raw.lagged + r.raw.instantaneous)).abs() > 1e-9
                    || r.raw.total < -1e-12
                    || r.raw.lagged < -1e-12
                    || r.raw.instantaneous < -1e-12
                {
                    ok = false;
                    break 'outer;
                }
            }
        }
    }
    report("additivity-nonnegativity", ok, out)?;
    all_ok &= ok;

    // zero-lag identity
    let mut ok = true;
    for trial in 0..20 {
        let set = white_noise(6, 64, 3, 9_000 + trial);
        for w in [1usize, 13, 31] {
            if crate::simulate::parseval_check(&set, w)?.max_rel_err > 1e-8 {
                ok = false;
            }
        }
    }
    report("zero-lag-identity", ok, out)?;
    all_ok &= ok;

    // degrees-of-freedom table
    use crate::inference::{
        degrees_of_freedom_all_univariate, degrees_of_freedom_blocks, MeasureComponent::*,
    };
    let ok = degrees_of_freedom_blocks(&[1, 1], Total) == 2
        && degrees_of_freedom_blocks(&[1, 1], Lagged) == 1
        && degrees_of_freedom_blocks(&[3, 2, 1], Total) == 22
        && degrees_of_freedom_blocks(&[3, 2, 1], Instantaneous) == 11
        && degrees_of_freedom_all_univariate(4, Total) == 12
        && degrees_of_freedom_all_univariate(4, Lagged) == 6;
    report("degrees-of-freedom", ok, out)?;
    all_ok &= ok;

    Ok(all_ok)
}

// ---- deterministic serialization ----------------------------------------

/// JSON formatter printing every finite float with 17 significant digits;
/// output is locale-independent and round-trips bit-exactly.
struct SigDigits17;

impl serde_json::ser::Formatter for SigDigits17 {
    fn write_f64<W: ?Sized + std::io::Write>(
        &mut self,
        writer: &mut W,
        value: f64,
    ) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// Serialize to JSON with the 17-significant-digit float convention.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits17);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::InvalidArgument(format!("serialization failed: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = to_json_string(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn write_connectivity_csv(path: &Path, rows: &[ConnectivityRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(
        f,
        "kind,block_a,block_b,freq,rho2_total,rho2_lagged,rho2_instantaneous"
    )?;
    for r in rows {
        let kind = match r.kind {
            MeasureKind::Linear => "linear",
            MeasureKind::Nonlinear => "nonlinear",
        };
        let freq = match &r.freq {
            FreqTag::Bin(w) => w.to_string(),
            FreqTag::Band(b) => b.clone(),
        };
        writeln!(
            f,
            "{kind},{},{},{freq},{:.16e},{:.16e},{:.16e}",
            r.block_a, r.block_b, r.rho2_total, r.rho2_lagged, r.rho2_instantaneous
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Exit code class of an error: 2 config, 3 data, 4 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_)
        | Error::Coverage(_)
        | Error::NormMode { .. }
        | Error::FrequencyRange { .. } => 2,
        Error::MalformedInput(_)
        | Error::Dimension(_)
        | Error::DegenerateSegment { .. }
        | Error::Io(_) => 3,
        Error::SingularOrIndefinite { .. } | Error::InternalConsistency(_) => 4,
    }
}

/// Stderr category tag for an error, matching [`exit_code`].
pub fn error_category(e: &Error) -> &'static str {
    match exit_code(e) {
        2 => "config",
        3 => "data",
        _ => "numerical",
    }
}
