//! Window segmentation and channel stacking: recordings in, network
//! inputs out.
//!
//! Each recording is cut into overlapping 204-sample windows with stride 5;
//! window `k` covers samples `[5k, 5k+204)` and the tail that does not fill
//! a window is dropped. A window of an N-sensor configuration becomes a
//! `[6, 204, N]` block: row = signal component (ax, ay, az, gx, gy, gz),
//! column = time, channel = sensor in configuration order.
//!
//! [`Dataset`] keeps one stacked `[6, T, N]` tensor per recording and
//! materializes window blocks on demand, so a cohort of tens of thousands
//! of windows costs recording-sized memory, not window-sized.

use std::collections::BTreeSet;

use crate::data::activities::ActivityGroup;
use crate::data::recording::ImuRecording;
use crate::data::sensors::{SensorConfig, SensorId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples per window.
pub const WINDOW: usize = 204;
/// Samples between consecutive window starts.
pub const STRIDE: usize = 5;

/// Number of windows a recording of length `t` yields, or `None` when it
/// is too short for even one.
pub fn window_count(t: usize) -> Option<usize> {
    if t < WINDOW {
        None
    } else {
        Some((t - WINDOW) / STRIDE + 1)
    }
}

/// One network input with its label and provenance.
#[derive(Debug, Clone)]
pub struct Example {
    /// `[6, 204, N]` block.
    pub block: Tensor,
    /// Class index within the activity group.
    pub label: usize,
    pub subject: u32,
}

/// Stacks per-sensor `[6, 204]` slices into a `[6, 204, N]` block.
///
/// Slices arrive tagged with their sensor so misordered input is a hard
/// error rather than silently permuted channels.
pub fn stack_channels(slices: &[(SensorId, Tensor)], config: &SensorConfig) -> Result<Tensor> {
    let got: Vec<String> = slices.iter().map(|(s, _)| s.tag().to_string()).collect();
    let expected: Vec<String> = config.sensors.iter().map(|s| s.tag().to_string()).collect();
    if got != expected {
        return Err(Error::ChannelOrder { expected, got });
    }
    for (_, t) in slices {
        if t.shape() != [6, WINDOW] {
            return Err(Error::ShapeMismatch {
                context: "stack_channels",
                left: t.shape().to_vec(),
                right: vec![6, WINDOW],
            });
        }
    }
    let n = slices.len();
    Tensor::from_fn(&[6, WINDOW, n], |idx| slices[idx[2]].1.at(&[idx[0], idx[1]]))
}

/// The inverse of [`stack_channels`]: extracts channel `j` as `[6, 204]`.
pub fn unstack_channel(block: &Tensor, j: usize) -> Result<Tensor> {
    Tensor::from_fn(&[6, WINDOW], |idx| block.at(&[idx[0], idx[1], j]))
}

/// Stacks a whole recording into `[6, T, N]` for the given configuration.
fn stack_recording(rec: &ImuRecording, config: &SensorConfig) -> Result<Tensor> {
    let t_len = rec.len();
    let n = config.arity();
    let mut data = vec![0.0; 6 * t_len * n];
    for comp in 0..6 {
        for t in 0..t_len {
            let base = (comp * t_len + t) * n;
            for (j, &sensor) in config.sensors.iter().enumerate() {
                data[base + j] = rec.stream(sensor)[t][comp];
            }
        }
    }
    Tensor::from_vec(&[6, t_len, n], data)
}

/// Cuts one recording into labeled examples. `label` is the class index
/// the caller resolved from its activity group.
pub fn segment_windows(
    rec: &ImuRecording,
    config: &SensorConfig,
    label: usize,
) -> Result<Vec<Example>> {
    let count = window_count(rec.len()).ok_or(Error::RecordingTooShort {
        len: rec.len(),
        window: WINDOW,
    })?;
    let stacked = stack_recording(rec, config)?;
    let n = config.arity();
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let block = copy_window(&stacked, k * STRIDE, n);
        out.push(Example {
            block: Tensor::from_vec(&[6, WINDOW, n], block)?,
            label,
            subject: rec.subject,
        });
    }
    Ok(out)
}

/// Copies window columns `[start, start+204)` out of a `[6, T, N]` stack.
fn copy_window(stacked: &Tensor, start: usize, n: usize) -> Vec<f64> {
    let t_len = stacked.shape()[1];
    let data = stacked.data();
    let mut out = Vec::with_capacity(6 * WINDOW * n);
    for comp in 0..6 {
        let from = (comp * t_len + start) * n;
        out.extend_from_slice(&data[from..from + WINDOW * n]);
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct WindowRef {
    recording: u32,
    start: u32,
    label: u16,
    subject: u32,
}

/// A labeled window collection for one (group, configuration) pair.
///
/// Blocks are assembled lazily via [`Dataset::gather`]; indices are stable,
/// so shuffles and fold splits are just index manipulation.
#[derive(Debug, Clone)]
pub struct Dataset {
    group: ActivityGroup,
    config: &'static SensorConfig,
    /// One `[6, T, N]` stack per contributing recording.
    stacks: Vec<Tensor>,
    refs: Vec<WindowRef>,
    class_counts: Vec<u64>,
}

impl Dataset {
    /// Builds the dataset from every recording whose activity belongs to
    /// `group`, after checking the configuration applies. Recordings of
    /// other groups are skipped; a too-short recording of the group is an
    /// error. An empty selection yields an empty dataset, not an error.
    pub fn build(
        recordings: &[ImuRecording],
        group: ActivityGroup,
        config: &'static SensorConfig,
    ) -> Result<Dataset> {
        group.accepts(config)?;
        let mut stacks = Vec::new();
        let mut refs = Vec::new();
        let mut class_counts = vec![0u64; group.m()];
        for rec in recordings {
            let Some(label) = group.label_index(rec.activity) else {
                continue;
            };
            let count = window_count(rec.len()).ok_or(Error::RecordingTooShort {
                len: rec.len(),
                window: WINDOW,
            })?;
            let stack_id = stacks.len() as u32;
            stacks.push(stack_recording(rec, config)?);
            for k in 0..count {
                refs.push(WindowRef {
                    recording: stack_id,
                    start: (k * STRIDE) as u32,
                    label: label as u16,
                    subject: rec.subject,
                });
            }
            class_counts[label] += count as u64;
        }
        Ok(Dataset { group, config, stacks, refs, class_counts })
    }

    pub fn group(&self) -> ActivityGroup {
        self.group
    }

    pub fn config(&self) -> &'static SensorConfig {
        self.config
    }

    /// Number of windows.
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.refs[i].label as usize
    }

    pub fn subject(&self, i: usize) -> u32 {
        self.refs[i].subject
    }

    /// Windows per class, indexed by class label.
    pub fn class_counts(&self) -> &[u64] {
        &self.class_counts
    }

    /// Distinct subjects contributing windows, ascending.
    pub fn subjects(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.refs.iter().map(|r| r.subject).collect();
        set.into_iter().collect()
    }

    /// Splits into `(rest, held_out)` by subject: windows of subjects in
    /// `held_out_subjects` go to the second dataset, everything else to the
    /// first. Each side keeps only the recordings it references, so the two
    /// share no windows by construction.
    pub fn split_by_subjects(&self, held_out_subjects: &[u32]) -> Result<(Dataset, Dataset)> {
        let held: BTreeSet<u32> = held_out_subjects.iter().copied().collect();
        let side = |want_held: bool| -> Result<Dataset> {
            let mut stacks = Vec::new();
            let mut remap = vec![u32::MAX; self.stacks.len()];
            let mut refs = Vec::new();
            let mut class_counts = vec![0u64; self.group.m()];
            for r in &self.refs {
                if held.contains(&r.subject) != want_held {
                    continue;
                }
                let old = r.recording as usize;
                if remap[old] == u32::MAX {
                    remap[old] = stacks.len() as u32;
                    stacks.push(self.stacks[old].clone());
                }
                refs.push(WindowRef { recording: remap[old], ..*r });
                class_counts[r.label as usize] += 1;
            }
            Ok(Dataset {
                group: self.group,
                config: self.config,
                stacks,
                refs,
                class_counts,
            })
        };
        Ok((side(false)?, side(true)?))
    }

    /// Materializes one window as an [`Example`].
    pub fn example(&self, i: usize) -> Result<Example> {
        let r = self.refs[i];
        let n = self.config.arity();
        let block = copy_window(&self.stacks[r.recording as usize], r.start as usize, n);
        Ok(Example {
            block: Tensor::from_vec(&[6, WINDOW, n], block)?,
            label: r.label as usize,
            subject: r.subject,
        })
    }

    /// Materializes a batch `[B, 6, 204, N]` plus its labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let n = self.config.arity();
        let mut data = Vec::with_capacity(indices.len() * 6 * WINDOW * n);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = self.refs[i];
            data.extend_from_slice(&copy_window(
                &self.stacks[r.recording as usize],
                r.start as usize,
                n,
            ));
            labels.push(r.label as usize);
        }
        let batch = Tensor::from_vec(&[indices.len(), 6, WINDOW, n], data)?;
        Ok((batch, labels))
    }
}
