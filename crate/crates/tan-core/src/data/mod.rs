//! Datasets: deterministic synthetic multi-label video generation, binary
//! serialization, and ingestion of on-disk frame directories with dense
//! labels.

mod gen;
mod ingest;
mod io;

pub use gen::{
    default_catalog, generate, resample_dataset, resample_video, EventClass, Extent, GenSpec,
    Pattern,
};
pub use ingest::{ingest, parse_manifest, Interval};
pub use io::{load_dataset, save_dataset};

use crate::error::{Result, TanError};
use crate::tensor::Tensor;

/// One video: a [T,3,H,W] clip in [0,1] and its dense [T,K] binary label
/// matrix.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub id: String,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    /// Flat [T,3,H,W].
    pub data: Vec<f32>,
    /// Flat [T,K], values 0.0 or 1.0.
    pub labels: Vec<f32>,
}

impl VideoClip {
    pub fn label(&self, t: usize, class: usize) -> bool {
        self.labels[t * self.k + class] != 0.0
    }

    pub fn clip_tensor(&self) -> Result<Tensor<f32>> {
        Tensor::from_vec(vec![self.t, 3, self.h, self.w], self.data.clone())
    }

    /// OR-pooled video-level labels.
    pub fn video_labels(&self) -> Vec<bool> {
        (0..self.k)
            .map(|class| (0..self.t).any(|t| self.label(t, class)))
            .collect()
    }

    /// Active label count per frame, averaged.
    pub fn mean_active_labels(&self) -> f64 {
        let total: f64 = self.labels.iter().map(|&v| v as f64).sum();
        total / self.t as f64
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub videos: Vec<VideoClip>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn mean_active_labels_per_frame(&self) -> f64 {
        if self.videos.is_empty() {
            return 0.0;
        }
        self.videos.iter().map(|v| v.mean_active_labels()).sum::<f64>() / self.videos.len() as f64
    }

    /// Mean length of contiguous label runs for one class, across videos.
    pub fn mean_label_run_length(&self, class: usize) -> f64 {
        let mut runs = 0usize;
        let mut total = 0usize;
        for v in &self.videos {
            let mut current = 0usize;
            for t in 0..v.t {
                if v.label(t, class) {
                    current += 1;
                } else if current > 0 {
                    runs += 1;
                    total += current;
                    current = 0;
                }
            }
            if current > 0 {
                runs += 1;
                total += current;
            }
        }
        if runs == 0 {
            0.0
        } else {
            total as f64 / runs as f64
        }
    }

    pub fn validate_uniform_dims(&self) -> Result<(usize, usize, usize)> {
        let first = self.videos.first().ok_or_else(|| {
            TanError::Dataset("dataset is empty".into())
        })?;
        for v in &self.videos {
            if (v.t, v.h, v.w, v.k) != (first.t, first.h, first.w, first.k) {
                return Err(TanError::Dataset(format!(
                    "video '{}' has dims (t={},h={},w={},k={}) but '{}' has (t={},h={},w={},k={})",
                    v.id, v.t, v.h, v.w, v.k, first.id, first.t, first.h, first.w, first.k
                )));
            }
        }
        Ok((first.t, first.h, first.w))
    }
}
