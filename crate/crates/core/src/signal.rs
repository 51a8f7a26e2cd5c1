//! EMG-style processing of uniformly sampled signals: Butterworth filters as
//! cascaded second-order sections, rectification, linear envelope, peak
//! normalisation, RMS and stride averaging.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalTrace {
    samples: Vec<f64>,
    rate: f64,
}

impl SignalTrace {
    pub fn new(samples: Vec<f64>, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(invalid(format!("sample rate must be positive, got {rate}")));
        }
        if samples.len() < 2 {
            return Err(invalid(format!(
                "trace needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        Ok(Self { samples, rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample times in seconds, starting at zero.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(|i| i as f64 / self.rate)
    }

    pub fn max(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn with_samples(&self, samples: Vec<f64>) -> Self {
        Self {
            samples,
            rate: self.rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterKind {
    LowPass { cutoff: f64 },
    BandPass { low: f64, high: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub order: usize,
}

impl FilterSpec {
    pub fn low_pass(cutoff: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::LowPass { cutoff },
            order,
        }
    }

    pub fn band_pass(low: f64, high: f64, order: usize) -> Self {
        Self {
            kind: FilterKind::BandPass { low, high },
            order,
        }
    }

    pub fn validate(&self, rate: f64) -> Result<()> {
        let nyquist = rate / 2.0;
        let in_band = |f: f64| f > 0.0 && f < nyquist;
        if self.order == 0 {
            return Err(Error::FilterSpec("order must be >= 1".into()));
        }
        match self.kind {
            FilterKind::LowPass { cutoff } if !in_band(cutoff) => Err(Error::FilterSpec(format!(
                "cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz"
            ))),
            FilterKind::BandPass { low, high } if !(in_band(low) && in_band(high)) => {
                Err(Error::FilterSpec(format!(
                    "band edges {low}-{high} Hz must lie in (0, {nyquist}) Hz"
                )))
            }
            FilterKind::BandPass { low, high } if low >= high => Err(Error::FilterSpec(format!(
                "band-pass low edge {low} must be below high edge {high}"
            ))),
            _ => Ok(()),
        }
    }

    /// Digital Butterworth design by the bilinear transform with pre-warped
    /// edge frequencies.
    pub fn design(&self, rate: f64) -> Result<Sos> {
        self.validate(rate)?;
        let fs2 = 2.0 * rate;
        let warp = |f: f64| fs2 * (PI * f / rate).tan();
        let n = self.order;
        let prototype: Vec<Complex64> = (0..n)
            .map(|k| Complex64::from_polar(1.0, PI * (2 * k + n + 1) as f64 / (2 * n) as f64))
            .collect();
        let bilinear = |s: Complex64| (fs2 + s) / (fs2 - s);

        let (poles, zero_pair, reference) = match self.kind {
            FilterKind::LowPass { cutoff } => {
                let wc = warp(cutoff);
                let poles = prototype.iter().map(|&p| bilinear(p * wc)).collect();
                (poles, [-1.0, -1.0], Complex64::new(1.0, 0.0))
            }
            FilterKind::BandPass { low, high } => {
                let (w1, w2) = (warp(low), warp(high));
                let bw = w2 - w1;
                let w0sq = w1 * w2;
                let mut poles = Vec::with_capacity(2 * n);
                for &p in &prototype {
                    let half = p * (bw / 2.0);
                    let root = (half * half - w0sq).sqrt();
                    poles.push(bilinear(half + root));
                    poles.push(bilinear(half - root));
                }
                let center = 2.0 * (w0sq.sqrt() / fs2).atan();
                (poles, [1.0, -1.0], Complex64::from_polar(1.0, center))
            }
        };
        Ok(Sos::from_poles(poles, zero_pair, reference))
    }
}

/// One biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + zi * (self.b[1] + zi * self.b[2]);
        let den = 1.0 + zi * (self.a[0] + zi * self.a[1]);
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II state at steady state under unit input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        [g - self.b[0], self.b[2] - self.a[1] * g]
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *v = y;
        }
    }

    fn poles(&self) -> [Complex64; 2] {
        let [a1, a2] = self.a;
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sos {
    pub sections: Vec<Section>,
}

impl Sos {
    /// Pairs conjugate poles (then leftover real poles) into sections. Every
    /// section gets `zero_pair` as zeros, or only the first zero when it
    /// carries a single real pole, and is scaled to unit magnitude at
    /// `reference`.
    fn from_poles(poles: Vec<Complex64>, zero_pair: [f64; 2], reference: Complex64) -> Self {
        const IMAG_EPS: f64 = 1e-12;
        let mut complex: Vec<Complex64> =
            poles.iter().copied().filter(|p| p.im > IMAG_EPS).collect();
        let mut real: Vec<f64> = poles
            .iter()
            .filter(|p| p.im.abs() <= IMAG_EPS)
            .map(|p| p.re)
            .collect();
        complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
        real.sort_by(f64::total_cmp);

        let [z1, z2] = zero_pair;
        let quadratic_zeros = [1.0, -(z1 + z2), z1 * z2];
        let mut sections: Vec<Section> = complex
            .iter()
            .map(|p| Section {
                b: quadratic_zeros,
                a: [-2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        for pair in real.chunks(2) {
            sections.push(match *pair {
                [p, q] => Section {
                    b: quadratic_zeros,
                    a: [-(p + q), p * q],
                },
                [p] => Section {
                    b: [1.0, -z1, 0.0],
                    a: [-p, 0.0],
                },
                _ => unreachable!(),
            });
        }
        for s in &mut sections {
            let g = s.response(reference).norm();
            s.b.iter_mut().for_each(|b| *b /= g);
        }
        Self { sections }
    }

    /// Complex frequency response at `freq` Hz.
    pub fn response(&self, freq: f64, rate: f64) -> Complex64 {
        let z = Complex64::from_polar(1.0, 2.0 * PI * freq / rate);
        self.sections.iter().map(|s| s.response(z)).product()
    }

    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().map(Section::dc_gain).product()
    }

    /// Slowest pole decay time in samples.
    pub fn max_time_constant(&self) -> f64 {
        self.sections
            .iter()
            .flat_map(|s| s.poles())
            .map(|p| -1.0 / p.norm().ln())
            .fold(0.0, f64::max)
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [0.0; 2]);
        }
        y
    }

    /// Causal filtering with each section started at the steady state for a
    /// constant input equal to `x[0]`.
    fn filter_settled(&self, y: &mut [f64]) {
        let mut level = y[0];
        for s in &self.sections {
            let [z0, z1] = s.step_state();
            s.run(y, [z0 * level, z1 * level]);
            level *= s.dc_gain();
        }
    }

    /// Forward-backward filtering. Edges are extended by odd reflection over
    /// three slowest time constants (capped at the signal length).
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = ((3.0 * self.max_time_constant()).ceil() as usize).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.filter_settled(&mut ext);
        ext.reverse();
        self.filter_settled(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

pub fn butterworth_apply(
    trace: &SignalTrace,
    spec: &FilterSpec,
    zero_phase: bool,
) -> Result<SignalTrace> {
    let sos = spec.design(trace.rate)?;
    let out = if zero_phase {
        sos.filtfilt(&trace.samples)
    } else {
        sos.filter(&trace.samples)
    };
    Ok(trace.with_samples(out))
}

pub fn rectify(trace: &SignalTrace) -> SignalTrace {
    trace.with_samples(trace.samples.iter().map(|v| v.abs()).collect())
}

/// Envelope settings and stride-averaging defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvelopeConfig {
    pub band_low: f64,
    pub band_high: f64,
    pub band_order: usize,
    pub lowpass_cutoff: f64,
    pub lowpass_order: usize,
    pub zero_phase: bool,
    pub last_strides: usize,
    pub resample_points: usize,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            band_low: 20.0,
            band_high: 300.0,
            band_order: 4,
            lowpass_cutoff: 1.0,
            lowpass_order: 4,
            zero_phase: true,
            last_strides: 20,
            resample_points: 101,
        }
    }
}

impl EnvelopeConfig {
    pub fn band(&self) -> FilterSpec {
        FilterSpec::band_pass(self.band_low, self.band_high, self.band_order)
    }

    pub fn smoothing(&self) -> FilterSpec {
        FilterSpec::low_pass(self.lowpass_cutoff, self.lowpass_order)
    }
}

/// Band-pass, rectify, low-pass with the default settings.
pub fn linear_envelope(trace: &SignalTrace) -> Result<SignalTrace> {
    linear_envelope_with(trace, &EnvelopeConfig::default())
}

pub fn linear_envelope_with(trace: &SignalTrace, cfg: &EnvelopeConfig) -> Result<SignalTrace> {
    let band = butterworth_apply(trace, &cfg.band(), cfg.zero_phase)?;
    butterworth_apply(&rectify(&band), &cfg.smoothing(), cfg.zero_phase)
}

pub fn normalize_to_peak(trace: &SignalTrace, reference_peak: f64) -> Result<SignalTrace> {
    if !(reference_peak > 0.0 && reference_peak.is_finite()) {
        return Err(invalid(format!(
            "reference peak must be positive, got {reference_peak}"
        )));
    }
    Ok(trace.with_samples(trace.samples.iter().map(|v| v / reference_peak).collect()))
}

pub fn rms(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("rms of an empty signal"));
    }
    Ok((samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64).sqrt())
}

/// Pointwise mean and population standard deviation over strides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleAverage {
    /// Gait-cycle percentage of each point.
    pub phase: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Linearly resamples each of the last `last_n` strides onto
/// `resample_points` phases spanning 0–100 %, then averages.
///
/// A stride covers the samples from one start up to, not including, the
/// next; its first and last samples map to 0 % and 100 %.
pub fn cycle_average(
    samples: &[f64],
    cycle_starts: &[usize],
    last_n: usize,
    resample_points: usize,
) -> Result<CycleAverage> {
    if last_n == 0 || cycle_starts.len() < last_n + 1 {
        return Err(invalid(format!(
            "averaging {last_n} strides needs {} cycle starts, got {}",
            last_n + 1,
            cycle_starts.len()
        )));
    }
    if resample_points < 2 {
        return Err(invalid("resample_points must be >= 2"));
    }
    if cycle_starts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("cycle starts must be strictly increasing"));
    }
    if *cycle_starts.last().unwrap() > samples.len() {
        return Err(invalid("cycle start beyond the end of the signal"));
    }

    let bounds = &cycle_starts[cycle_starts.len() - last_n - 1..];
    let strides: Vec<Vec<f64>> = bounds
        .windows(2)
        .map(|w| resample(&samples[w[0]..w[1]], resample_points))
        .collect::<Result<_>>()?;

    let n = last_n as f64;
    let mean: Vec<f64> = (0..resample_points)
        .map(|i| strides.iter().map(|s| s[i]).sum::<f64>() / n)
        .collect();
    let std = (0..resample_points)
        .map(|i| {
            (strides
                .iter()
                .map(|s| (s[i] - mean[i]).powi(2))
                .sum::<f64>()
                / n)
                .sqrt()
        })
        .collect();
    let phase = (0..resample_points)
        .map(|i| 100.0 * i as f64 / (resample_points - 1) as f64)
        .collect();
    Ok(CycleAverage { phase, mean, std })
}

fn resample(segment: &[f64], points: usize) -> Result<Vec<f64>> {
    if segment.len() < 2 {
        return Err(invalid("stride shorter than 2 samples"));
    }
    let last = (segment.len() - 1) as f64;
    Ok((0..points)
        .map(|i| {
            let pos = last * i as f64 / (points - 1) as f64;
            let j = (pos.floor() as usize).min(segment.len() - 2);
            let frac = pos - j as f64;
            segment[j] + frac * (segment[j + 1] - segment[j])
        })
        .collect())
}
