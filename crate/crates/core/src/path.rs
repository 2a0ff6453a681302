//! Multivariate discrete paths: validation, basepoint/time augmentation,
//! total variation and gap filling.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("a path needs at least two observations, got {0}")]
    TooShort(usize),
    #[error("times and values have different lengths ({times} vs {values})")]
    LengthMismatch { times: usize, values: usize },
    #[error("time stamps must be finite and strictly increasing (violated at index {0})")]
    NonIncreasingTimes(usize),
    #[error("observation {index} has {got} channels, expected {expected}")]
    ChannelMismatch {
        index: usize,
        got: usize,
        expected: usize,
    },
    #[error("a path needs at least one channel")]
    NoChannels,
    #[error("non-finite value at observation {index}, channel {channel}")]
    NonFinite { index: usize, channel: usize },
    #[error("channel {channel} has {observed} observed values; at least 2 are required")]
    UnusableChannel { channel: usize, observed: usize },
}

/// A `P`-channel path observed at strictly increasing time stamps.
///
/// Values are stored row-major: observation `i` occupies
/// `values[i * channels..(i + 1) * channels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    times: Vec<f64>,
    values: Vec<f64>,
    channels: usize,
}

impl Path {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, PathError> {
        let channels = values.first().map(Vec::len).unwrap_or(0);
        let mut flat = Vec::with_capacity(values.len() * channels);
        for (i, row) in values.iter().enumerate() {
            if row.len() != channels {
                return Err(PathError::ChannelMismatch {
                    index: i,
                    got: row.len(),
                    expected: channels,
                });
            }
            flat.extend_from_slice(row);
        }
        if values.len() != times.len() {
            return Err(PathError::LengthMismatch {
                times: times.len(),
                values: values.len(),
            });
        }
        Self::from_flat(times, flat, channels)
    }

    pub fn from_flat(times: Vec<f64>, values: Vec<f64>, channels: usize) -> Result<Self, PathError> {
        if channels == 0 {
            return Err(PathError::NoChannels);
        }
        if values.len() != times.len() * channels {
            return Err(PathError::LengthMismatch {
                times: times.len(),
                values: values.len() / channels,
            });
        }
        if times.len() < 2 {
            return Err(PathError::TooShort(times.len()));
        }
        for (i, t) in times.iter().enumerate() {
            if !t.is_finite() || (i > 0 && *t <= times[i - 1]) {
                return Err(PathError::NonIncreasingTimes(i));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(PathError::NonFinite {
                index: pos / channels,
                channel: pos % channels,
            });
        }
        Ok(Self {
            times,
            values,
            channels,
        })
    }

    /// Path on equally spaced stamps `0, 1, ..., len - 1`.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self, PathError> {
        let times = (0..values.len()).map(|i| i as f64).collect();
        Self::new(times, values)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn values_flat(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.channels)
    }

    /// Keeps the first `len` observations.
    pub fn truncated(&self, len: usize) -> Result<Self, PathError> {
        let len = len.min(self.len());
        Self::from_flat(
            self.times[..len].to_vec(),
            self.values[..len * self.channels].to_vec(),
            self.channels,
        )
    }

    /// Adds `offset` to every observation.
    pub fn translated(&self, offset: &[f64]) -> Result<Self, PathError> {
        assert_eq!(offset.len(), self.channels, "offset dimension");
        let values = self
            .values
            .chunks_exact(self.channels)
            .flat_map(|row| row.iter().zip(offset).map(|(v, o)| v + o))
            .collect();
        Self::from_flat(self.times.clone(), values, self.channels)
    }
}

/// A path carrying a trailing time channel rescaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPath {
    pub inner: Path,
    pub basepointed: bool,
}

impl AugmentedPath {
    /// Channel count of the augmented path, `P + 1`.
    pub fn channels(&self) -> usize {
        self.inner.channels()
    }
}

fn rescale_unit(times: &[f64]) -> Vec<f64> {
    let (t0, t1) = (times[0], times[times.len() - 1]);
    let span = t1 - t0;
    times
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == times.len() - 1 {
                1.0
            } else {
                (t - t0) / span
            }
        })
        .collect()
}

fn with_time_channel(times: &[f64], rows: &[&[f64]], channels: usize) -> Result<Path, PathError> {
    let unit = rescale_unit(times);
    let mut flat = Vec::with_capacity(rows.len() * (channels + 1));
    for (row, t) in rows.iter().zip(&unit) {
        flat.extend_from_slice(row);
        flat.push(*t);
    }
    Path::from_flat(times.to_vec(), flat, channels + 1)
}

/// Prepends a zero observation one first-spacing step before the first
/// stamp and appends the rescaled time channel.
pub fn augment(p: &Path) -> AugmentedPath {
    let step = p.times[1] - p.times[0];
    let zero = vec![0.0; p.channels];
    let mut times = Vec::with_capacity(p.len() + 1);
    times.push(p.times[0] - step);
    times.extend_from_slice(&p.times);
    let rows: Vec<&[f64]> = std::iter::once(zero.as_slice()).chain(p.rows()).collect();
    let inner = with_time_channel(&times, &rows, p.channels)
        .expect("augmenting a valid path yields a valid path");
    AugmentedPath {
        inner,
        basepointed: true,
    }
}

/// Time augmentation only; the result keeps translation invariance.
pub fn augment_without_basepoint(p: &Path) -> AugmentedPath {
    let rows: Vec<&[f64]> = p.rows().collect();
    let inner = with_time_channel(&p.times, &rows, p.channels)
        .expect("augmenting a valid path yields a valid path");
    AugmentedPath {
        inner,
        basepointed: false,
    }
}

/// Sum of Euclidean increment norms over the observed partition.
pub fn total_variation(p: &Path) -> f64 {
    p.values
        .chunks_exact(p.channels)
        .zip(p.values.chunks_exact(p.channels).skip(1))
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (y - x) * (y - x))
                .sum::<f64>()
                .sqrt()
        })
        .sum()
}

/// Fills missing entries channel by channel: linear interpolation in time
/// between observed neighbours, flat extension beyond the first and last
/// observed value.
pub fn interpolate_missing(raw: &[(f64, Vec<Option<f64>>)]) -> Result<Path, PathError> {
    let channels = raw.first().map(|(_, v)| v.len()).unwrap_or(0);
    if channels == 0 {
        return Err(if raw.is_empty() {
            PathError::TooShort(0)
        } else {
            PathError::NoChannels
        });
    }
    for (i, (_, row)) in raw.iter().enumerate() {
        if row.len() != channels {
            return Err(PathError::ChannelMismatch {
                index: i,
                got: row.len(),
                expected: channels,
            });
        }
    }
    let times: Vec<f64> = raw.iter().map(|(t, _)| *t).collect();
    let mut flat = vec![0.0; raw.len() * channels];
    for c in 0..channels {
        let observed: Vec<(usize, f64)> = raw
            .iter()
            .enumerate()
            .filter_map(|(i, (_, row))| row[c].map(|v| (i, v)))
            .collect();
        if observed.len() < 2 {
            return Err(PathError::UnusableChannel {
                channel: c,
                observed: observed.len(),
            });
        }
        let mut k = 0;
        for i in 0..raw.len() {
            let value = if let Some(v) = raw[i].1[c] {
                v
            } else if i < observed[0].0 {
                observed[0].1
            } else if i > observed[observed.len() - 1].0 {
                observed[observed.len() - 1].1
            } else {
                while observed[k + 1].0 < i {
                    k += 1;
                }
                let (i0, v0) = observed[k];
                let (i1, v1) = observed[k + 1];
                let w = (times[i] - times[i0]) / (times[i1] - times[i0]);
                v0 + w * (v1 - v0)
            };
            flat[i * channels + c] = value;
        }
    }
    Path::from_flat(times, flat, channels)
}
