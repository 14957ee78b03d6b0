//! Acoustic front-end: waveform → log-mel filterbank → utterance CMVN →
//! temporal downsampling and frame stacking.
//!
//! Framing uses a Hamming window with no pre-emphasis and no DC removal.
//! Power spectra come from a zero-padded FFT of `fft_size` points; the mel
//! filterbank is triangular on the HTK scale `2595·log10(1 + f/700)` and
//! spans 0 Hz to Nyquist. Energies are floored at 1e-10 before the natural
//! log.

use std::f64::consts::PI;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlannerScalar;

use crate::error::{Error, Result};

const ENERGY_FLOOR: f64 = 1e-10;
const VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Order of the two final reshaping steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StackOrder {
    /// Keep every `downsample_factor`-th frame, then stack neighbours.
    #[default]
    DownsampleThenStack,
    /// Stack neighbours at the full frame rate, then keep every n-th row.
    StackThenDownsample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub fft_size: usize,
    pub downsample_factor: usize,
    pub stack_size: usize,
    pub stack_order: StackOrder,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            n_mels: 80,
            frame_length_ms: 25.0,
            frame_shift_ms: 10.0,
            fft_size: 512,
            downsample_factor: 3,
            stack_size: 4,
            stack_order: StackOrder::DownsampleThenStack,
        }
    }
}

impl FeatureConfig {
    pub fn frame_samples(&self) -> usize {
        (self.sample_rate as f64 * self.frame_length_ms / 1000.0).round() as usize
    }

    pub fn shift_samples(&self) -> usize {
        (self.sample_rate as f64 * self.frame_shift_ms / 1000.0).round() as usize
    }

    /// Per-frame dimension after stacking.
    pub fn output_dim(&self) -> usize {
        self.n_mels * self.stack_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.sample_rate == 0 || self.n_mels == 0 {
            return bad("sample_rate and n_mels must be positive");
        }
        if self.frame_shift_ms <= 0.0 || self.frame_shift_ms > self.frame_length_ms {
            return bad("frame_shift must be positive and no longer than frame_length");
        }
        if self.downsample_factor == 0 || self.stack_size == 0 {
            return bad("downsample_factor and stack_size must be at least 1");
        }
        if !self.fft_size.is_power_of_two() || self.fft_size < self.frame_samples() {
            return bad("fft_size must be a power of two no smaller than the frame");
        }
        Ok(())
    }

    /// Number of frames produced from `n` samples, or `None` if shorter
    /// than one frame.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        let fl = self.frame_samples();
        (n >= fl).then(|| 1 + (n - fl) / self.shift_samples())
    }
}

/// `frames × dim` row-major matrix of features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if frames * dim != data.len() {
            return Err(Error::Dimension {
                op: "feature_matrix",
                lhs: vec![frames, dim],
                rhs: vec![data.len()],
            });
        }
        Ok(Self { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters as an `n_mels × (fft_size/2 + 1)` weight matrix.
pub fn mel_filterbank(cfg: &FeatureConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.fft_size / 2 + 1;
    let nyquist = cfg.sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.fft_size as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Log-mel filterbank energies, one row per frame.
pub fn compute_fbank(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    cfg.validate()?;
    if w.sample_rate != cfg.sample_rate {
        return Err(Error::Config(format!(
            "waveform sample rate {} does not match configured {}",
            w.sample_rate, cfg.sample_rate
        )));
    }
    let frame_len = cfg.frame_samples();
    let shift = cfg.shift_samples();
    let frames = cfg.frame_count(w.samples.len()).ok_or_else(|| {
        Error::Input(format!(
            "waveform of {} samples is shorter than one {frame_len}-sample frame",
            w.samples.len()
        ))
    })?;

    let window: Vec<f64> = (0..frame_len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (frame_len - 1) as f64).cos())
        .collect();
    let filters = mel_filterbank(cfg);
    let fft = FftPlannerScalar::<f64>::new().plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.fft_size / 2 + 1;

    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let mut power = vec![0.0f64; n_bins];
    let mut out = Vec::with_capacity(frames * cfg.n_mels);
    for t in 0..frames {
        let start = t * shift;
        for (i, c) in buf.iter_mut().enumerate() {
            *c = if i < frame_len {
                Complex::new(w.samples[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for f in &filters {
            let e: f64 = f.iter().zip(&power).map(|(a, b)| a * b).sum();
            out.push(e.max(ENERGY_FLOOR).ln() as f32);
        }
    }
    FeatureMatrix::new(frames, cfg.n_mels, out)
}

/// Per-utterance mean and variance normalization of every dimension.
pub fn cmvn_utterance(f: &FeatureMatrix) -> Result<FeatureMatrix> {
    if f.frames < 2 {
        return Err(Error::Input(format!("CMVN needs at least 2 frames, got {}", f.frames)));
    }
    let (t, d) = (f.frames, f.dim);
    let mut out = vec![0f32; t * d];
    for j in 0..d {
        let col = (0..t).map(|i| f.data[i * d + j] as f64);
        let mean = col.clone().sum::<f64>() / t as f64;
        let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / t as f64;
        let inv = 1.0 / var.max(VARIANCE_FLOOR).sqrt();
        for i in 0..t {
            out[i * d + j] = ((f.data[i * d + j] as f64 - mean) * inv) as f32;
        }
    }
    FeatureMatrix::new(t, d, out)
}

fn keep_every(f: &FeatureMatrix, factor: usize) -> FeatureMatrix {
    let rows: Vec<usize> = (0..f.frames).step_by(factor).collect();
    let data = rows.iter().flat_map(|&r| f.row(r).iter().copied()).collect();
    FeatureMatrix {
        frames: rows.len(),
        dim: f.dim,
        data,
    }
}

fn stack(f: &FeatureMatrix, size: usize) -> FeatureMatrix {
    let last = f.frames - 1;
    let data = (0..f.frames)
        .flat_map(|t| (0..size).flat_map(move |k| f.row((t + k).min(last)).iter().copied()))
        .collect();
    FeatureMatrix {
        frames: f.frames,
        dim: f.dim * size,
        data,
    }
}

/// Downsample by `downsample_factor` and stack `stack_size` consecutive
/// rows, repeating the final row to pad the right edge.
pub fn downsample_stack(f: &FeatureMatrix, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    if f.frames == 0 {
        return Err(Error::Input("cannot downsample an empty feature matrix".into()));
    }
    if cfg.downsample_factor == 0 || cfg.stack_size == 0 {
        return Err(Error::Config(
            "downsample_factor and stack_size must be at least 1".into(),
        ));
    }
    Ok(match cfg.stack_order {
        StackOrder::DownsampleThenStack => stack(&keep_every(f, cfg.downsample_factor), cfg.stack_size),
        StackOrder::StackThenDownsample => keep_every(&stack(f, cfg.stack_size), cfg.downsample_factor),
    })
}

/// The full front-end.
pub fn extract(w: &Waveform, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    let fbank = compute_fbank(w, cfg)?;
    let norm = cmvn_utterance(&fbank)?;
    downsample_stack(&norm, cfg)
}

/// Read a 16-bit signed PCM mono WAV file.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Input(format!(
            "{}: expected 16-bit PCM mono, found {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f32 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Write as 16-bit signed PCM mono, clipping to [-1, 1).
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v)?;
    }
    writer.finalize()?;
    Ok(())
}
