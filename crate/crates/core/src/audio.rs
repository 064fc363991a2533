//! Waveform I/O, resampling, log-mel features and the frozen speech encoder.

use std::f64::consts::PI;
use std::io::{Cursor, Read, Seek};
use std::path::Path;
use std::sync::Arc;

use aulm_tensor::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::AudioError;
use crate::Float;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioWave {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioWave {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, AudioError> {
        if sample_rate == 0 {
            return Err(AudioError::InvalidRate);
        }
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        let samples =
            samples.into_iter().map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 }).collect();
        Ok(AudioWave { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn resampled(&self, target_rate: u32) -> Result<AudioWave, AudioError> {
        if target_rate == 0 {
            return Err(AudioError::InvalidRate);
        }
        if target_rate == self.sample_rate {
            return Ok(self.clone());
        }
        AudioWave::new(resample(&self.samples, self.sample_rate, target_rate), target_rate)
    }

    /// 16-bit PCM WAV bytes.
    pub fn to_wav_bytes(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut cursor = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
            for &s in &self.samples {
                w.write_sample((s * i16::MAX as f32).round() as i16).expect("in-memory write");
            }
            w.finalize().expect("in-memory finalize");
        }
        cursor.into_inner()
    }

    pub fn write_wav(&self, path: &Path) -> Result<(), AudioError> {
        std::fs::write(path, self.to_wav_bytes())?;
        Ok(())
    }
}

/// Reads a PCM WAV or FLAC file, downmixes to mono by channel mean and
/// resamples to `target_rate`.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioWave, AudioError> {
    let bytes = std::fs::read(path)?;
    decode_audio_bytes(&bytes, target_rate).map_err(|e| match e {
        AudioError::Decode(msg) => AudioError::Decode(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Container is sniffed from the magic bytes.
pub fn decode_audio_bytes(bytes: &[u8], target_rate: u32) -> Result<AudioWave, AudioError> {
    if bytes.starts_with(b"fLaC") {
        decode_flac(Cursor::new(bytes), target_rate)
    } else {
        decode_wav(Cursor::new(bytes), target_rate)
    }
}

/// Header facts of an audio file, read without decoding the samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AudioInfo {
    pub sample_rate: u32,
    pub channels: u16,
    pub frames: u64,
}

/// Reads only the container header; cheap enough to run over a whole corpus.
pub fn probe_audio(path: &Path) -> Result<AudioInfo, AudioError> {
    let mut reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    let n = reader.read(&mut magic)?;
    reader.seek(std::io::SeekFrom::Start(0))?;
    let bad = |e: String| AudioError::Decode(format!("{}: {e}", path.display()));
    let info = if n == 4 && &magic == b"fLaC" {
        let r = claxon::FlacReader::new(reader).map_err(|e| bad(e.to_string()))?;
        let si = r.streaminfo();
        AudioInfo {
            sample_rate: si.sample_rate,
            channels: si.channels as u16,
            frames: si.samples.unwrap_or(0),
        }
    } else {
        let r = hound::WavReader::new(reader).map_err(|e| bad(e.to_string()))?;
        let spec = r.spec();
        AudioInfo { sample_rate: spec.sample_rate, channels: spec.channels, frames: r.duration() as u64 }
    };
    if info.frames == 0 {
        return Err(AudioError::Empty);
    }
    Ok(info)
}

pub fn decode_wav_bytes(bytes: &[u8], target_rate: u32) -> Result<AudioWave, AudioError> {
    decode_wav(Cursor::new(bytes), target_rate)
}

fn downmix(interleaved: &[f32], channels: usize, rate: u32, target: u32) -> Result<AudioWave, AudioError> {
    if interleaved.len() < channels {
        return Err(AudioError::Empty);
    }
    let mono: Vec<f32> =
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f32>() / channels as f32).collect();
    AudioWave::new(mono, rate)?.resampled(target)
}

fn decode_wav<R: Read + Seek>(reader: R, target_rate: u32) -> Result<AudioWave, AudioError> {
    let mut r = hound::WavReader::new(reader).map_err(|e| AudioError::Decode(e.to_string()))?;
    let spec = r.spec();
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            r.samples::<f32>().collect::<Result<_, _>>().map_err(|e| AudioError::Decode(e.to_string()))?
        }
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<Result<_, _>>()
                .map_err(|e| AudioError::Decode(e.to_string()))?
        }
    };
    downmix(&interleaved, spec.channels.max(1) as usize, spec.sample_rate, target_rate)
}

fn decode_flac<R: Read>(reader: R, target_rate: u32) -> Result<AudioWave, AudioError> {
    let mut r = claxon::FlacReader::new(reader).map_err(|e| AudioError::Decode(e.to_string()))?;
    let info = r.streaminfo();
    let scale = (1i64 << (info.bits_per_sample - 1)) as f32;
    let interleaved: Vec<f32> = r
        .samples()
        .map(|s| s.map(|v| v as f32 / scale))
        .collect::<Result<_, _>>()
        .map_err(|e| AudioError::Decode(e.to_string()))?;
    downmix(&interleaved, info.channels.max(1) as usize, info.sample_rate, target_rate)
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `round(len · to / from)`.
pub fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    const ZERO_CROSSINGS: f64 = 16.0;
    let ratio = to as f64 / from as f64;
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let out_len = ((input.len() as f64) * ratio).round().max(1.0) as usize;
    (0..out_len)
        .map(|n| {
            let x = n as f64 / ratio;
            let lo = (x - half_width).ceil().max(0.0) as usize;
            let hi = ((x + half_width).floor() as usize).min(input.len() - 1);
            let mut acc = 0.0;
            for (k, &s) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let d = x - k as f64;
                let arg = d * cutoff;
                let sinc = if arg.abs() < 1e-12 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let window = 0.5 + 0.5 * (PI * d / half_width).cos();
                acc += s as f64 * cutoff * sinc * window;
            }
            acc as f32
        })
        .collect()
}

/// Deterministic tone-coded rendering of `text`: one sine burst per
/// character, frequency keyed by the code point, silence for whitespace.
pub fn tone_code(text: &str, sample_rate: u32, max_seconds: f64) -> AudioWave {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len().max(1);
    let per_char = (0.06f64).min(max_seconds / n as f64);
    let seg = ((per_char * sample_rate as f64) as usize).max(1);
    let fade = (seg / 8).max(1);
    let mut samples = Vec::with_capacity(seg * n);
    for c in &chars {
        let code = *c as u32;
        let freq = 150.0 + 25.0 * (code % 128) as f64 + 7.0 * ((code / 128) % 16) as f64;
        for i in 0..seg {
            if c.is_whitespace() {
                samples.push(0.0);
                continue;
            }
            let env = (i.min(seg - 1 - i) as f64 / fade as f64).min(1.0);
            let t = i as f64 / sample_rate as f64;
            samples.push((0.5 * env * (2.0 * PI * freq * t).sin()) as f32);
        }
    }
    if samples.is_empty() {
        samples.push(0.0);
    }
    AudioWave::new(samples, sample_rate).expect("non-empty tone")
}

/// `num_frames × encoder_dim` output of a speech encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameEmbeddingMatrix<F> {
    values: Mat<F>,
}

impl<F: Float> FrameEmbeddingMatrix<F> {
    pub fn new(values: Mat<F>) -> Result<Self, AudioError> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(AudioError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AudioError::Decode("non-finite frame embedding".into()));
        }
        Ok(FrameEmbeddingMatrix { values })
    }

    pub fn values(&self) -> &Mat<F> {
        &self.values
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn encoder_dim(&self) -> usize {
        self.values.ncols()
    }
}

/// Capability interface for a frozen speech encoder.
pub trait SpeechEncoder<F: Float>: Send + Sync {
    fn encoder_dim(&self) -> usize;
    fn frames_per_second(&self) -> f64;
    fn encode(&self, wave: &AudioWave) -> Result<FrameEmbeddingMatrix<F>, AudioError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub encoder_dim: usize,
    pub max_duration_secs: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_fft: 400,
            win_length: 400,
            hop_length: 160,
            n_mels: 80,
            encoder_dim: 64,
            max_duration_secs: 30.0,
        }
    }
}

impl EncoderConfig {
    /// Frames produced for `num_samples` samples at the configured rate.
    pub fn num_frames(&self, num_samples: usize) -> usize {
        num_samples.div_ceil(self.hop_length).max(1)
    }
}

/// Log-mel power spectrogram, `frames × n_mels`, with whisper-style dynamic
/// range compression (8 decades below the peak, then `(x + 4) / 4`).
pub struct LogMel<F: Float> {
    config: EncoderConfig,
    window: Vec<F>,
    filters: Mat<F>,
    fft: Arc<dyn Fft<F>>,
}

impl<F: Float> LogMel<F> {
    pub fn new(config: &EncoderConfig) -> Self {
        let n_fft = config.n_fft;
        let win = config.win_length.min(n_fft);
        let offset = (n_fft - win) / 2;
        let mut window = vec![F::zero(); n_fft];
        for i in 0..win {
            window[offset + i] = F::lit(0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos());
        }
        let filters = mel_filterbank(config.sample_rate, n_fft, config.n_mels);
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        LogMel { config: config.clone(), window, filters, fft }
    }

    pub fn compute(&self, samples: &[f32]) -> Mat<F> {
        let cfg = &self.config;
        let n_fft = cfg.n_fft;
        let frames = cfg.num_frames(samples.len());
        let bins = n_fft / 2 + 1;
        let mut power = Mat::<F>::zeros((frames, bins));
        let mut buf = vec![Complex::new(F::zero(), F::zero()); n_fft];
        for f in 0..frames {
            let center = (f * cfg.hop_length) as isize;
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = center - (n_fft / 2) as isize + j as isize;
                let s = if idx >= 0 && (idx as usize) < samples.len() {
                    F::lit(samples[idx as usize] as f64)
                } else {
                    F::zero()
                };
                *slot = Complex::new(s * self.window[j], F::zero());
            }
            self.fft.process(&mut buf);
            for (b, c) in buf.iter().take(bins).enumerate() {
                power[[f, b]] = c.norm_sqr();
            }
        }
        let mut mel = power.dot(&self.filters.t());
        let floor = F::lit(1e-10);
        mel.mapv_inplace(|v| v.max(floor).log10());
        let peak = mel.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let lowest = peak - F::lit(8.0);
        let four = F::lit(4.0);
        mel.mapv_inplace(|v| (v.max(lowest) + four) / four);
        mel
    }
}

/// Triangular filters on the HTK mel scale with area normalisation,
/// `n_mels × (n_fft / 2 + 1)`.
pub fn mel_filterbank<F: Float>(sample_rate: u32, n_fft: usize, n_mels: usize) -> Mat<F> {
    let hz_to_mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let mel_to_hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Mat::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let norm = 2.0 / (hi - lo);
        for b in 0..bins {
            let f = b as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[[m, b]] = F::lit(w * norm);
        }
    }
    fb
}

/// Stand-in for a whisper-class encoder: log-mel features followed by a
/// seeded random linear projection. Never trained.
pub struct ToyEncoder<F: Float> {
    config: EncoderConfig,
    mel: LogMel<F>,
    pub(crate) weight: Mat<F>,
    pub(crate) bias: Mat<F>,
}

impl<F: Float> ToyEncoder<F> {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (config.n_mels as f64).sqrt()).expect("valid std");
        let weight =
            Mat::from_shape_fn((config.n_mels, config.encoder_dim), |_| F::lit(normal.sample(&mut rng)));
        let bias = Mat::zeros((1, config.encoder_dim));
        ToyEncoder { mel: LogMel::new(&config), config, weight, bias }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn log_mel(&self, wave: &AudioWave) -> Result<Mat<F>, AudioError> {
        let wave = self.check(wave)?;
        Ok(self.mel.compute(wave.samples()))
    }

    fn check(&self, wave: &AudioWave) -> Result<AudioWave, AudioError> {
        let seconds = wave.duration_secs();
        if seconds > self.config.max_duration_secs {
            return Err(AudioError::TooLong { seconds, max: self.config.max_duration_secs });
        }
        wave.resampled(self.config.sample_rate)
    }
}

impl<F: Float> SpeechEncoder<F> for ToyEncoder<F> {
    fn encoder_dim(&self) -> usize {
        self.config.encoder_dim
    }

    fn frames_per_second(&self) -> f64 {
        self.config.sample_rate as f64 / self.config.hop_length as f64
    }

    fn encode(&self, wave: &AudioWave) -> Result<FrameEmbeddingMatrix<F>, AudioError> {
        let mel = self.log_mel(wave)?;
        FrameEmbeddingMatrix::new(&mel.dot(&self.weight) + &self.bias)
    }
}
