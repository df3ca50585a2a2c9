//! Loading, segmenting, and preconditioning of multichannel recordings.
//!
//! Everything downstream assumes the data comes as `n_segments` epochs of
//! equal length with per-segment zero mean; [`detrend`] establishes the
//! zero-mean part, [`segment`] cuts a continuous recording into epochs.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Magic bytes of the segmented binary format.
pub const SEGMENT_MAGIC: &[u8; 6] = b"SDSEG1";

/// A segmented multichannel recording: `n_segments` epochs of `n_samples`
/// samples over `n_channels` channels, stored `[segment][time][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet {
    data: Vec<f64>,
    n_segments: usize,
    n_samples: usize,
    n_channels: usize,
    /// Samples per second; only needed when frequency bands are given in Hz.
    pub sampling_rate: Option<f64>,
    pub channel_names: Vec<String>,
}

impl SegmentSet {
    /// Wrap raw `[segment][time][channel]` data, checking the invariants.
    pub fn new(
        data: Vec<f64>,
        n_segments: usize,
        n_samples: usize,
        n_channels: usize,
    ) -> Result<Self> {
        if n_segments < 1 || n_channels < 1 {
            return Err(Error::Dimension(format!(
                "need at least 1 segment and 1 channel, got {n_segments} x {n_channels}"
            )));
        }
        if n_samples < 2 {
            return Err(Error::Dimension(format!(
                "segments must have at least 2 samples, got {n_samples}"
            )));
        }
        if data.len() != n_segments * n_samples * n_channels {
            return Err(Error::Dimension(format!(
                "data length {} does not match {n_segments} x {n_samples} x {n_channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::MalformedInput(format!(
                "non-finite sample at flat index {bad}"
            )));
        }
        let channel_names = (0..n_channels).map(|m| format!("ch_{m}")).collect();
        Ok(SegmentSet {
            data,
            n_segments,
            n_samples,
            n_channels,
            sampling_rate: None,
            channel_names,
        })
    }

    #[inline]
    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    #[inline]
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline]
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    pub fn get(&self, segment: usize, t: usize, channel: usize) -> f64 {
        self.data[(segment * self.n_samples + t) * self.n_channels + channel]
    }

    #[inline]
    pub fn set(&mut self, segment: usize, t: usize, channel: usize, v: f64) {
        self.data[(segment * self.n_samples + t) * self.n_channels + channel] = v;
    }

    /// One channel of one segment as a contiguous vector.
    pub fn series(&self, segment: usize, channel: usize) -> Vec<f64> {
        (0..self.n_samples)
            .map(|t| self.get(segment, t, channel))
            .collect()
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    /// Apply a real channel-space transform per block: channels of block `b`
    /// are replaced by `mat_b * channels`. Used to probe the invariance of
    /// the linear measures under within-block mixing.
    pub fn transform_block(&self, block: &[usize], mat: &[Vec<f64>]) -> Result<SegmentSet> {
        let k = block.len();
        if mat.len() != k || mat.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension(format!(
                "transform must be {k} x {k} for a block of {k} channels"
            )));
        }
        let mut out = self.clone();
        let mut buf = vec![0.0; k];
        for j in 0..self.n_segments {
            for t in 0..self.n_samples {
                for (r, row) in mat.iter().enumerate() {
                    buf[r] = row
                        .iter()
                        .zip(block)
                        .map(|(a, &c)| a * self.get(j, t, c))
                        .sum();
                }
                for (r, &c) in block.iter().enumerate() {
                    out.set(j, t, c, buf[r]);
                }
            }
        }
        Ok(out)
    }
}

/// Ordered, disjoint grouping of channel indices into blocks.
///
/// The union need not cover all channels; unused channels are simply
/// ignored by the measures.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
}

impl BlockPartition {
    pub fn new(blocks: Vec<Vec<usize>>, n_channels: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument(
                "partition needs at least one block".into(),
            ));
        }
        let mut seen = vec![false; n_channels];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(Error::InvalidArgument(format!("block {b} is empty")));
            }
            for &c in block {
                if c >= n_channels {
                    return Err(Error::InvalidArgument(format!(
                        "block {b} references channel {c}, but only {n_channels} channels exist"
                    )));
                }
                if seen[c] {
                    return Err(Error::InvalidArgument(format!(
                        "channel {c} appears in more than one block"
                    )));
                }
                seen[c] = true;
            }
        }
        Ok(BlockPartition { blocks })
    }

    /// Two singleton blocks over the first two channels; the workhorse for
    /// pairwise analyses.
    pub fn univariate_pair() -> Self {
        BlockPartition {
            blocks: vec![vec![0], vec![1]],
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(Vec::len).collect()
    }

    /// All channel indices in block order, concatenated.
    pub fn flat_channels(&self) -> Vec<usize> {
        self.blocks.iter().flatten().copied().collect()
    }

    /// Index ranges of each block inside [`Self::flat_channels`].
    pub fn flat_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut start = 0;
        for b in &self.blocks {
            out.push(start..start + b.len());
            start += b.len();
        }
        out
    }

    pub fn max_channel(&self) -> usize {
        self.blocks.iter().flatten().copied().max().unwrap_or(0)
    }
}

/// File formats understood by [`load_segments`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentFormat {
    /// Header `segment,time,<name>,...`; one row per (segment, time).
    CsvLong,
    /// `SDSEG1` magic, three little-endian u32 counts, then f64 samples.
    BinaryF64,
}

/// Load a segmented recording from disk.
pub fn load_segments(path: &Path, format: SegmentFormat) -> Result<SegmentSet> {
    match format {
        SegmentFormat::CsvLong => load_csv_long(path),
        SegmentFormat::BinaryF64 => load_binary(path),
    }
}

fn load_csv_long(path: &Path) -> Result<SegmentSet> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::MalformedInput("empty file".into()))?;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.len() < 3 || cols[0] != "segment" || cols[1] != "time" {
        return Err(Error::MalformedInput(format!(
            "line 1: expected header 'segment,time,<channel>,...', got '{header}'"
        )));
    }
    let channel_names: Vec<String> = cols[2..].iter().map(|s| s.to_string()).collect();
    let n_channels = channel_names.len();

    let mut data: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    let mut expect_seg = 0usize;
    let mut expect_time = 0usize;
    let mut n_samples: Option<usize> = None;
    for (lineno, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_channels + 2 {
            return Err(Error::Dimension(format!(
                "line {}: row has {} channel values but header declares {}",
                lineno + 1,
                fields.len().saturating_sub(2),
                n_channels
            )));
        }
        let seg: usize = fields[0].parse().map_err(|_| {
            Error::MalformedInput(format!(
                "line {}: bad segment index '{}'",
                lineno + 1,
                fields[0]
            ))
        })?;
        let time: usize = fields[1].parse().map_err(|_| {
            Error::MalformedInput(format!(
                "line {}: bad time index '{}'",
                lineno + 1,
                fields[1]
            ))
        })?;
        // rows must arrive sorted by (segment, time) with no gaps
        if seg != expect_seg || time != expect_time {
            if seg == expect_seg + 1 && time == 0 {
                match n_samples {
                    None => n_samples = Some(expect_time),
                    Some(n) if n != expect_time => {
                        return Err(Error::Dimension(format!(
                            "line {}: segment {} has {} samples, expected {}",
                            lineno + 1,
                            expect_seg,
                            expect_time,
                            n
                        )));
                    }
                    _ => {}
                }
                expect_seg = seg;
                expect_time = 0;
            } else {
                return Err(Error::MalformedInput(format!(
                    "line {}: rows out of order, expected segment {} time {}, got {} {}",
                    lineno + 1,
                    expect_seg,
                    expect_time,
                    seg,
                    time
                )));
            }
        }
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|_| {
                Error::MalformedInput(format!("line {}: bad value '{}'", lineno + 1, f))
            })?;
            data.push(v);
        }
        expect_time += 1;
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(Error::MalformedInput("no data rows".into()));
    }
    let n_samples = match n_samples {
        Some(n) => {
            if expect_time != n {
                return Err(Error::Dimension(format!(
                    "last segment has {expect_time} samples, expected {n}"
                )));
            }
            n
        }
        None => expect_time,
    };
    let n_segments = expect_seg + 1;
    let mut s = SegmentSet::new(data, n_segments, n_samples, n_channels)?;
    s.channel_names = channel_names;
    Ok(s)
}

fn load_binary(path: &Path) -> Result<SegmentSet> {
    let bytes = fs::read(path)?;
    if bytes.len() < 18 {
        return Err(Error::MalformedInput(format!(
            "file too short ({} bytes) for SDSEG1 header",
            bytes.len()
        )));
    }
    if &bytes[0..6] != SEGMENT_MAGIC {
        return Err(Error::MalformedInput(
            "byte 0: bad magic, expected SDSEG1".into(),
        ));
    }
    let rd_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    let n_segments = rd_u32(6);
    let n_samples = rd_u32(10);
    let n_channels = rd_u32(14);
    let expected = 18 + n_segments * n_samples * n_channels * 8;
    if bytes.len() != expected {
        return Err(Error::Dimension(format!(
            "byte 18: payload is {} bytes, header implies {}",
            bytes.len() - 18,
            expected - 18
        )));
    }
    let data: Vec<f64> = bytes[18..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SegmentSet::new(data, n_segments, n_samples, n_channels)
}

/// Write the binary form; [`load_segments`] round-trips it bit-exactly.
pub fn write_segments_binary(s: &SegmentSet, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(18 + s.data.len() * 8);
    out.extend_from_slice(SEGMENT_MAGIC);
    out.extend_from_slice(&(s.n_segments as u32).to_le_bytes());
    out.extend_from_slice(&(s.n_samples as u32).to_le_bytes());
    out.extend_from_slice(&(s.n_channels as u32).to_le_bytes());
    for v in &s.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

/// Write the csv-long form.
pub fn write_segments_csv(s: &SegmentSet, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(f, "segment,time")?;
    for name in &s.channel_names {
        write!(f, ",{name}")?;
    }
    writeln!(f)?;
    for j in 0..s.n_segments {
        for t in 0..s.n_samples {
            write!(f, "{j},{t}")?;
            for m in 0..s.n_channels {
                write!(f, ",{:.16e}", s.get(j, t, m))?;
            }
            writeln!(f)?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Cut a continuous `[time][channel]` recording into fixed-length windows.
///
/// The hop between window starts is `round(n_t * (1 - overlap))`; trailing
/// samples that do not fill a whole window are dropped, never padded.
pub fn segment(continuous: &[Vec<f64>], n_t: usize, overlap: f64) -> Result<SegmentSet> {
    let total = continuous.len();
    if total < n_t {
        return Err(Error::Dimension(format!(
            "recording has {total} samples, shorter than the window {n_t}"
        )));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::InvalidArgument(format!(
            "overlap must be in [0, 1), got {overlap}"
        )));
    }
    let n_channels = continuous[0].len();
    if continuous.iter().any(|row| row.len() != n_channels) {
        return Err(Error::Dimension("ragged rows in continuous input".into()));
    }
    let step = (n_t as f64 * (1.0 - overlap)).round() as usize;
    if step < 1 {
        return Err(Error::InvalidArgument(format!(
            "overlap {overlap} yields a zero-sample hop for window {n_t}"
        )));
    }
    let n_segments = (total - n_t) / step + 1;
    let mut data = Vec::with_capacity(n_segments * n_t * n_channels);
    for j in 0..n_segments {
        let start = j * step;
        for t in 0..n_t {
            data.extend_from_slice(&continuous[start + t]);
        }
    }
    SegmentSet::new(data, n_segments, n_t, n_channels)
}

/// Detrend modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetrendMode {
    /// Subtract the per-(segment, channel) sample mean.
    Mean,
    /// Leave the data untouched.
    None,
}

/// Remove the per-segment per-channel mean (or do nothing).
pub fn detrend(s: &SegmentSet, mode: DetrendMode) -> SegmentSet {
    match mode {
        DetrendMode::None => s.clone(),
        DetrendMode::Mean => {
            let mut out = s.clone();
            let n_t = s.n_samples as f64;
            for j in 0..s.n_segments {
                for m in 0..s.n_channels {
                    let mean: f64 = (0..s.n_samples).map(|t| s.get(j, t, m)).sum::<f64>() / n_t;
                    for t in 0..s.n_samples {
                        out.set(j, t, m, s.get(j, t, m) - mean);
                    }
                }
            }
            out
        }
    }
}

/// Multiply every segment by a periodic Hann window. Optional preprocessing;
/// the measures themselves are taper-agnostic.
pub fn hann_taper(s: &SegmentSet) -> SegmentSet {
    let n = s.n_samples();
    let w: Vec<f64> = (0..n)
        .map(|t| {
            let x = std::f64::consts::PI * t as f64 / n as f64;
            let sn = x.sin();
            sn * sn
        })
        .collect();
    let mut out = s.clone();
    for j in 0..s.n_segments() {
        for (t, &wt) in w.iter().enumerate() {
            for m in 0..s.n_channels() {
                out.set(j, t, m, s.get(j, t, m) * wt);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpfile(content: &[u8]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content).unwrap();
        f
    }

    #[test]
    fn csv_long_round_trips_the_documented_example() {
        // 1 segment, 2 channels, 4 samples, values 0..7
        let f = tmpfile(b"segment,time,ch_0,ch_1\n0,0,0,1\n0,1,2,3\n0,2,4,5\n0,3,6,7\n");
        let s = load_segments(f.path(), SegmentFormat::CsvLong).unwrap();
        assert_eq!(s.n_segments(), 1);
        assert_eq!(s.n_samples(), 4);
        assert_eq!(s.n_channels(), 2);
        for t in 0..4 {
            for m in 0..2 {
                assert_eq!(s.get(0, t, m), (2 * t + m) as f64);
            }
        }
    }

    #[test]
    fn empty_file_is_malformed() {
        let f = tmpfile(b"");
        match load_segments(f.path(), SegmentFormat::CsvLong) {
            Err(Error::MalformedInput(_)) => {}
            other => panic!("expected malformed-input, got {other:?}"),
        }
    }

    #[test]
    fn header_only_file_is_malformed() {
        let f = tmpfile(b"segment,time,ch_0\n");
        assert!(matches!(
            load_segments(f.path(), SegmentFormat::CsvLong),
            Err(Error::MalformedInput(_))
        ));
    }

    #[test]
    fn wrong_column_count_is_dimension_error() {
        // header claims 3 channels but rows carry 2
        let f = tmpfile(b"segment,time,a,b,c\n0,0,1.0,2.0\n0,1,3.0,4.0\n");
        match load_segments(f.path(), SegmentFormat::CsvLong) {
            Err(Error::Dimension(msg)) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_segments_are_dimension_error() {
        let f = tmpfile(b"segment,time,a\n0,0,1\n0,1,2\n1,0,3\n1,1,4\n1,2,5\n2,0,6\n");
        assert!(matches!(
            load_segments(f.path(), SegmentFormat::CsvLong),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn bad_value_names_the_line() {
        let f = tmpfile(b"segment,time,a\n0,0,1.5\n0,1,oops\n");
        match load_segments(f.path(), SegmentFormat::CsvLong) {
            Err(Error::MalformedInput(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected malformed-input, got {other:?}"),
        }
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let data: Vec<f64> = (0..2 * 4 * 3)
            .map(|i| (i as f64).sin() * 1e3 + 0.1234567890123456)
            .collect();
        let s = SegmentSet::new(data, 2, 4, 3).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_segments_binary(&s, f.path()).unwrap();
        let r = load_segments(f.path(), SegmentFormat::BinaryF64).unwrap();
        assert_eq!(s.raw_data(), r.raw_data());
        assert_eq!(r.n_segments(), 2);
        assert_eq!(r.n_samples(), 4);
        assert_eq!(r.n_channels(), 3);
    }

    #[test]
    fn binary_truncated_payload_is_dimension_error() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(SEGMENT_MAGIC);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&4u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 16]); // far too short
        let f = tmpfile(&bytes);
        assert!(matches!(
            load_segments(f.path(), SegmentFormat::BinaryF64),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn segment_tiles_exactly_without_overlap() {
        let continuous: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64]).collect();
        let s = segment(&continuous, 4, 0.0).unwrap();
        assert_eq!(s.n_segments(), 2);
        assert_eq!(s.series(0, 0), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.series(1, 0), vec![4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn segment_half_overlap_starts_at_0_2_4() {
        let continuous: Vec<Vec<f64>> = (0..8).map(|t| vec![t as f64]).collect();
        let s = segment(&continuous, 4, 0.5).unwrap();
        assert_eq!(s.n_segments(), 3);
        for (j, start) in [(0usize, 0.0), (1, 2.0), (2, 4.0)] {
            assert_eq!(s.get(j, 0, 0), start);
        }
    }

    #[test]
    fn segment_too_short_errors() {
        let continuous: Vec<Vec<f64>> = (0..3).map(|t| vec![t as f64]).collect();
        assert!(matches!(
            segment(&continuous, 4, 0.0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn detrend_mean_subtracts_per_channel_mean() {
        let s = SegmentSet::new(vec![1.0, 2.0, 3.0, 4.0], 1, 4, 1).unwrap();
        let d = detrend(&s, DetrendMode::Mean);
        assert_eq!(d.series(0, 0), vec![-1.5, -0.5, 0.5, 1.5]);
        // idempotent within fp noise
        let dd = detrend(&d, DetrendMode::Mean);
        for t in 0..4 {
            assert!((dd.get(0, t, 0) - d.get(0, t, 0)).abs() < 1e-15);
        }
    }

    #[test]
    fn detrend_none_is_identity() {
        let s = SegmentSet::new(vec![1.0, 2.0, 3.0, 4.0], 1, 4, 1).unwrap();
        let d = detrend(&s, DetrendMode::None);
        assert_eq!(s.raw_data(), d.raw_data());
    }

    #[test]
    fn partition_rejects_overlap_and_out_of_range() {
        assert!(BlockPartition::new(vec![vec![0], vec![0]], 2).is_err());
        assert!(BlockPartition::new(vec![vec![0], vec![5]], 2).is_err());
        assert!(BlockPartition::new(vec![vec![]], 2).is_err());
        let p = BlockPartition::new(vec![vec![2, 0], vec![1]], 3).unwrap();
        assert_eq!(p.block_dims(), vec![2, 1]);
        assert_eq!(p.flat_channels(), vec![2, 0, 1]);
    }

    #[test]
    fn nonfinite_samples_rejected() {
        assert!(SegmentSet::new(vec![0.0, f64::NAN, 1.0, 2.0], 1, 4, 1).is_err());
    }
}
