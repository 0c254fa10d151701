//! Ingest of IMU and throat-microphone data.
//!
//! IMU streams are CSV files with the fixed header `t,ax,ay,az,roll,pitch,yaw`
//! (seconds, m/s², degrees). Audio is 16-bit mono PCM WAV. Both formats
//! round-trip bit-exactly through the writers in this module.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMU_CSV_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "roll", "pitch", "yaw"];

/// Sample rates the throat microphone is expected to deliver.
pub const AUDIO_RATES: [u32; 2] = [16_000, 60_000];

/// One IMU reading: time, acceleration and Euler angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Seconds, strictly increasing within a stream.
    pub t: f64,
    /// m/s², sensor x/y/z.
    pub accel: [f64; 3],
    /// Degrees: roll, pitch, yaw.
    pub euler: [f64; 3],
}

impl ImuSample {
    pub fn new(t: f64, accel: [f64; 3], euler: [f64; 3]) -> Self {
        Self { t, accel, euler }
    }

    /// Bending angle (β).
    pub fn roll(&self) -> f64 {
        self.euler[0]
    }

    /// Extension/flexion angle (α).
    pub fn pitch(&self) -> f64 {
        self.euler[1]
    }

    /// Rotation angle (γ).
    pub fn yaw(&self) -> f64 {
        self.euler[2]
    }

    /// The six channels in the order used for template matching:
    /// ax, ay, az, roll, pitch, yaw.
    pub fn channels(&self) -> [f64; 6] {
        [
            self.accel[0],
            self.accel[1],
            self.accel[2],
            self.euler[0],
            self.euler[1],
            self.euler[2],
        ]
    }
}

/// Wraps an angle in degrees into (-180, 180].
pub fn normalize_angle(deg: f64) -> f64 {
    let mut a = deg % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    a
}

/// A run of PCM samples from the throat microphone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioSegment {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
    /// Start time of the first sample, seconds.
    pub t0: f64,
}

impl AudioSegment {
    pub fn new(sample_rate: u32, samples: Vec<i16>, t0: f64) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Validation("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::Validation("audio segment has no samples".into()));
        }
        Ok(Self {
            sample_rate,
            samples,
            t0,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Duration in seconds, `len / sample_rate`.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn duration_ms(&self) -> f64 {
        self.duration() * 1000.0
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.duration()
    }

    /// Samples scaled to [-1, 1).
    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64 / 32768.0).collect()
    }

    /// Sub-range `[start, end)` of the samples as a new segment with its own
    /// start time.
    pub fn slice(&self, start: usize, end: usize) -> Result<AudioSegment> {
        let end = end.min(self.samples.len());
        if start >= end {
            return Err(Error::arg(format!("empty slice {start}..{end}")));
        }
        AudioSegment::new(
            self.sample_rate,
            self.samples[start..end].to_vec(),
            self.t0 + start as f64 / self.sample_rate as f64,
        )
    }

    /// Splits into consecutive chunks of at most `len` samples.
    pub fn chunks(&self, len: usize) -> Vec<AudioSegment> {
        let len = len.max(1);
        (0..self.samples.len())
            .step_by(len)
            .map(|start| AudioSegment {
                sample_rate: self.sample_rate,
                samples: self.samples[start..(start + len).min(self.samples.len())].to_vec(),
                t0: self.t0 + start as f64 / self.sample_rate as f64,
            })
            .collect()
    }
}

/// Fixed-capacity sliding window; the oldest items are dropped first.
#[derive(Debug, Clone)]
pub struct StreamWindow<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> StreamWindow<T> {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Pushes an item, returning the evicted one if the window was full.
    pub fn push(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(item);
        evicted
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() == self.capacity
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &T> + ExactSizeIterator {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn as_slices(&self) -> (&[T], &[T]) {
        self.items.as_slices()
    }
}

impl<T: Clone> StreamWindow<T> {
    pub fn to_vec(&self) -> Vec<T> {
        self.items.iter().cloned().collect()
    }
}

#[derive(Debug, Deserialize)]
struct ImuRow {
    t: f64,
    ax: f64,
    ay: f64,
    az: f64,
    roll: f64,
    pitch: f64,
    yaw: f64,
}

/// Reads an IMU CSV stream. Euler angles are wrapped into (-180, 180].
pub fn read_imu_csv(path: impl AsRef<Path>) -> Result<Vec<ImuSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_imu_csv(file)
}

pub fn parse_imu_csv<R: Read>(reader: R) -> Result<Vec<ImuSample>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    if headers.iter().ne(IMU_CSV_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header `{}`, found `{}`",
                IMU_CSV_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut out: Vec<ImuSample> = Vec::new();
    for (i, row) in rdr.deserialize::<ImuRow>().enumerate() {
        // header is line 1
        let line = i as u64 + 2;
        let row = row.map_err(|e| csv_error(e, line))?;
        let sample = ImuSample {
            t: row.t,
            accel: [row.ax, row.ay, row.az],
            euler: [
                normalize_angle(row.roll),
                normalize_angle(row.pitch),
                normalize_angle(row.yaw),
            ],
        };
        if !sample.t.is_finite() {
            return Err(Error::Parse {
                line,
                message: "non-finite timestamp".into(),
            });
        }
        if let Some(prev) = out.last() {
            if sample.t <= prev.t {
                return Err(Error::Validation(format!(
                    "timestamps not strictly increasing at line {line}: {} after {}",
                    sample.t, prev.t
                )));
            }
        }
        out.push(sample);
    }
    Ok(out)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

pub fn write_imu_csv(path: impl AsRef<Path>, samples: &[ImuSample]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_imu_csv_to(file, samples).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn write_imu_csv_to<W: Write>(writer: W, samples: &[ImuSample]) -> Result<()> {
    let mut w = std::io::BufWriter::new(writer);
    let io = |e| Error::io("<imu csv>", e);
    writeln!(w, "{}", IMU_CSV_HEADER.join(",")).map_err(io)?;
    for s in samples {
        // `Display` for f64 prints the shortest string that parses back to
        // the same value.
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            s.t, s.accel[0], s.accel[1], s.accel[2], s.euler[0], s.euler[1], s.euler[2]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a 16-bit mono PCM WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSegment> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_wav(std::io::BufReader::new(file))
}

pub fn decode_wav<R: Read>(reader: R) -> Result<AudioSegment> {
    let wav = hound::WavReader::new(reader)?;
    let spec = wav.spec();
    if spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::UnsupportedFormat("floating-point WAV, expected PCM".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}-bit WAV, expected 16-bit",
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels, expected mono",
            spec.channels
        )));
    }
    let samples = wav
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()?;
    AudioSegment::new(spec.sample_rate, samples, 0.0)
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioSegment) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &audio.samples {
        w.write_sample(s)?;
    }
    w.finalize()?;
    Ok(())
}

/// Keeps every `factor`-th sample, starting with the first.
pub fn decimate_imu(stream: &[ImuSample], factor: usize) -> Result<Vec<ImuSample>> {
    if factor == 0 {
        return Err(Error::arg("decimation factor must be at least 1"));
    }
    Ok(stream.iter().step_by(factor).copied().collect())
}

/// Estimated sample rate of a stream from its mean sample spacing.
pub fn estimate_rate(stream: &[ImuSample]) -> Option<f64> {
    if stream.len() < 2 {
        return None;
    }
    let span = stream[stream.len() - 1].t - stream[0].t;
    (span > 0.0).then(|| (stream.len() - 1) as f64 / span)
}

/// Anything carrying a stream timestamp.
pub trait Timestamped {
    fn timestamp(&self) -> f64;
}

impl Timestamped for ImuSample {
    fn timestamp(&self) -> f64 {
        self.t
    }
}

impl Timestamped for AudioSegment {
    fn timestamp(&self) -> f64 {
        self.t0
    }
}

/// Result of pulling from a [`SampleSource`].
#[derive(Debug, Clone, PartialEq)]
pub enum Pull<T> {
    Sample(T),
    /// Nothing became available before the timeout elapsed.
    Timeout,
    Finished,
}

/// Pull-based producer shared by live sensors and file replay.
pub trait SampleSource {
    type Item;

    fn pull(&mut self, timeout: Duration) -> Pull<Self::Item>;
}

/// Replays recorded items, pacing them against the wall clock.
///
/// `speed` 1.0 is real time, 2.0 twice as fast; a non-positive or infinite
/// speed disables pacing entirely.
pub struct ReplaySource<T> {
    items: std::vec::IntoIter<T>,
    pending: Option<T>,
    speed: f64,
    origin: Option<(Instant, f64)>,
}

impl<T: Timestamped> ReplaySource<T> {
    pub fn new(items: Vec<T>, speed: f64) -> Self {
        Self {
            items: items.into_iter(),
            pending: None,
            speed,
            origin: None,
        }
    }

    fn paced(&self) -> bool {
        self.speed > 0.0 && self.speed.is_finite()
    }
}

impl<T: Timestamped> SampleSource for ReplaySource<T> {
    type Item = T;

    fn pull(&mut self, timeout: Duration) -> Pull<T> {
        let item = match self.pending.take().or_else(|| self.items.next()) {
            Some(item) => item,
            None => return Pull::Finished,
        };
        if !self.paced() {
            return Pull::Sample(item);
        }
        let (start, t_first) = *self
            .origin
            .get_or_insert_with(|| (Instant::now(), item.timestamp()));
        let due = start + Duration::from_secs_f64(((item.timestamp() - t_first) / self.speed).max(0.0));
        let now = Instant::now();
        if due <= now {
            return Pull::Sample(item);
        }
        let wait = due - now;
        if wait > timeout {
            thread::sleep(timeout);
            self.pending = Some(item);
            return Pull::Timeout;
        }
        thread::sleep(wait);
        Pull::Sample(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_rows_read_in_order() {
        let csv = "t,ax,ay,az,roll,pitch,yaw\n0.0,0,0,9.8,0,0,0\n0.002,0.1,0.2,9.8,0.0,45.0,0.0\n0.004,0,0,9.8,0,0,0\n";
        let s = parse_imu_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.windows(2).all(|w| w[0].t < w[1].t));
        assert_eq!(s[1].pitch(), 45.0);
        assert_eq!(s[1].accel, [0.1, 0.2, 9.8]);
    }

    #[test]
    fn repeated_timestamp_is_rejected() {
        let csv = "t,ax,ay,az,roll,pitch,yaw\n0.1,0,0,0,0,0,0\n0.1,0,0,0,0,0,0\n";
        let err = parse_imu_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("line 3")), "{err}");
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "t,ax,ay,az,roll,pitch,yaw\n0.1,0,0,0,0,0,0\n0.2,0,zz,0,0,0,0\n";
        match parse_imu_csv(csv.as_bytes()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let csv = "time,ax,ay,az,roll,pitch,yaw\n0.1,0,0,0,0,0,0\n";
        assert!(matches!(
            parse_imu_csv(csv.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn euler_angles_are_wrapped() {
        assert_eq!(normalize_angle(190.0), -170.0);
        assert_eq!(normalize_angle(-190.0), 170.0);
        assert_eq!(normalize_angle(180.0), 180.0);
        assert_eq!(normalize_angle(-180.0), 180.0);
        assert_eq!(normalize_angle(45.0), 45.0);
    }

    #[test]
    fn wav_duration_from_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let audio = AudioSegment::new(16_000, vec![0; 16_000], 0.0).unwrap();
        write_wav(&path, &audio).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.duration(), 1.0);
        assert!(back.samples.iter().all(|&s| s == 0));
    }

    #[test]
    fn eight_bit_wav_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i8).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn stereo_wav_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for _ in 0..100 {
            w.write_sample(0i16).unwrap();
        }
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::UnsupportedFormat(_))));
    }

    fn stream(n: usize, rate: f64) -> Vec<ImuSample> {
        (0..n)
            .map(|i| ImuSample::new(i as f64 / rate, [0.0; 3], [0.0, i as f64 * 0.01, 0.0]))
            .collect()
    }

    #[test]
    fn decimation_counts() {
        let s = stream(1003, 500.0);
        let d = decimate_imu(&s, 5).unwrap();
        assert_eq!(d.len(), 1003_usize.div_ceil(5));
        assert!((estimate_rate(&d).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(decimate_imu(&s, 1).unwrap(), s);
        assert!(decimate_imu(&[], 5).unwrap().is_empty());
        assert!(matches!(decimate_imu(&s, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn window_drops_oldest() {
        let mut w = StreamWindow::new(3);
        for i in 0..5 {
            w.push(i);
        }
        assert_eq!(w.to_vec(), vec![2, 3, 4]);
    }

    #[test]
    fn audio_segment_invariants() {
        assert!(AudioSegment::new(0, vec![1], 0.0).is_err());
        assert!(AudioSegment::new(16_000, vec![], 0.0).is_err());
        let a = AudioSegment::new(16_000, vec![1; 8000], 1.0).unwrap();
        assert_eq!(a.duration_ms(), 500.0);
        let c = a.chunks(3000);
        assert_eq!(c.len(), 3);
        assert_eq!(c[2].samples.len(), 2000);
        assert_eq!(c[1].t0, 1.0 + 3000.0 / 16000.0);
    }

    #[test]
    fn unpaced_replay_yields_everything() {
        let mut src = ReplaySource::new(stream(10, 100.0), 0.0);
        let mut n = 0;
        while let Pull::Sample(_) = src.pull(Duration::from_millis(1)) {
            n += 1;
        }
        assert_eq!(n, 10);
        assert_eq!(src.pull(Duration::from_millis(1)), Pull::Finished);
    }

    #[test]
    fn paced_replay_times_out_then_delivers() {
        let items = vec![
            ImuSample::new(0.0, [0.0; 3], [0.0; 3]),
            ImuSample::new(0.2, [0.0; 3], [0.0; 3]),
        ];
        let mut src = ReplaySource::new(items, 1.0);
        assert!(matches!(src.pull(Duration::from_millis(5)), Pull::Sample(_)));
        assert_eq!(src.pull(Duration::from_millis(5)), Pull::Timeout);
        assert!(matches!(src.pull(Duration::from_secs(1)), Pull::Sample(s) if s.t == 0.2));
    }
}
