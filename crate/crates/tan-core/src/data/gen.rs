//! Deterministic synthetic video generator.
//!
//! Events are soft blobs with one of three temporal patterns (intensity
//! pulse, linear drift, oscillation). Several classes share per-frame
//! appearance and differ only in duration or motion, so frame-level
//! recognition genuinely requires temporal context. Rendering uses only
//! +,-,*,/ and sqrt (all IEEE-exact), so generated bytes are identical
//! across platforms.
//!
//! Draw order per video, from the (seed, video_index) stream:
//!   1. event count (uniform in the configured range)
//!   2. per event, always 10 draws: class, duration, onset, cx, cy,
//!      direction-x, direction-y, speed, oscillation amplitude + phase
//!      folded into one pair, peak intensity
//!   3. background noise, one draw per scalar of the clip, in buffer order
//! Events are rendered additively after the noise fill, in draw order,
//! and the clip is clamped to [0,1].

use super::{Dataset, VideoClip};
use crate::error::{Result, TanError};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extent {
    Small,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// Static blob with a triangular intensity envelope.
    Blink,
    /// Blob translating at constant velocity.
    Drift,
    /// Blob shuttling along a direction with a triangle-wave offset.
    Oscillate,
}

#[derive(Debug, Clone)]
pub struct EventClass {
    pub id: usize,
    pub duration_range: (usize, usize),
    pub extent: Extent,
    pub pattern: Pattern,
    pub color: [f32; 3],
}

impl EventClass {
    pub fn is_short(&self) -> bool {
        self.duration_range.1 <= 3
    }

    pub fn is_long(&self) -> bool {
        self.duration_range.0 >= 10
    }
}

const WHITE: [f32; 3] = [0.9, 0.9, 0.9];
const RED: [f32; 3] = [0.9, 0.15, 0.15];
const GREEN: [f32; 3] = [0.15, 0.9, 0.2];
const BLUE: [f32; 3] = [0.25, 0.35, 0.95];

/// Catalog of event classes. The first eight form duration-ambiguous
/// pairs (0,1), (2,3), a motion-ambiguous pair (5,6) sharing per-frame
/// appearance, and two per-frame-identifiable classes (4, 7). Classes
/// beyond eight repeat the cycle with distinct colors.
pub fn default_catalog(k: usize) -> Result<Vec<EventClass>> {
    if k < 4 {
        return Err(TanError::Config(format!(
            "need at least 4 classes (one short and one long per appearance pair), got {k}"
        )));
    }
    let base = [
        (Pattern::Blink, Extent::Small, (1, 3), WHITE),
        (Pattern::Blink, Extent::Small, (10, 14), WHITE),
        (Pattern::Drift, Extent::Small, (2, 3), RED),
        (Pattern::Drift, Extent::Small, (10, 14), RED),
        (Pattern::Blink, Extent::Large, (2, 3), WHITE),
        (Pattern::Oscillate, Extent::Large, (10, 14), GREEN),
        (Pattern::Drift, Extent::Large, (10, 14), GREEN),
        (Pattern::Oscillate, Extent::Small, (10, 14), BLUE),
    ];
    Ok((0..k)
        .map(|id| {
            let (pattern, extent, duration_range, mut color) = base[id % 8];
            if id >= 8 {
                // Rotate the color so repeated patterns stay distinguishable.
                let shift = (id / 8) as f32 * 0.23;
                color = [
                    (color[0] + shift) % 1.0,
                    (color[1] + 2.0 * shift) % 1.0,
                    (color[2] + 3.0 * shift) % 1.0,
                ];
            }
            EventClass {
                id,
                duration_range,
                extent,
                pattern,
                color,
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct GenSpec {
    pub seed: u64,
    pub n_videos: usize,
    pub t: usize,
    pub k: usize,
    pub spatial: usize,
    /// Inclusive range of events per video; (0,0) forces empty videos.
    pub event_count: (usize, usize),
}

impl GenSpec {
    pub fn new(seed: u64, n_videos: usize, t: usize, k: usize, spatial: usize) -> Self {
        GenSpec {
            seed,
            n_videos,
            t,
            k,
            spatial,
            event_count: (2, 4),
        }
    }
}

struct Event {
    class: usize,
    onset: usize,
    duration: usize,
    cx: f32,
    cy: f32,
    dir: (f32, f32),
    speed: f32,
    amp: f32,
    phase: f32,
    peak: f32,
}

pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    let catalog = default_catalog(spec.k)?;
    if !catalog.iter().any(|c| c.is_short()) || !catalog.iter().any(|c| c.is_long()) {
        return Err(TanError::Config(
            "class catalog must contain at least one short and one long class".into(),
        ));
    }
    let longest_min = catalog.iter().map(|c| c.duration_range.0).max().unwrap();
    if spec.t < longest_min {
        return Err(TanError::Config(format!(
            "temporal length {} is shorter than the longest class's minimum duration {}",
            spec.t, longest_min
        )));
    }
    if spec.event_count.0 > spec.event_count.1 {
        return Err(TanError::Config(format!(
            "event count range {:?} is inverted",
            spec.event_count
        )));
    }
    if spec.spatial < 8 {
        return Err(TanError::Config("spatial side must be at least 8".into()));
    }

    let videos = (0..spec.n_videos)
        .map(|vi| generate_video(spec, &catalog, vi))
        .collect();
    Ok(Dataset {
        videos,
        num_classes: spec.k,
    })
}

fn generate_video(spec: &GenSpec, catalog: &[EventClass], index: usize) -> VideoClip {
    let mut rng = SplitMix64::for_stream(spec.seed, index as u64);
    let (t, s, k) = (spec.t, spec.spatial, spec.k);

    let n_events = if spec.event_count.1 == 0 {
        0
    } else {
        rng.next_range(spec.event_count.0, spec.event_count.1)
    };

    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        let class = rng.next_range(0, k - 1);
        let cls = &catalog[class];
        let dmax = cls.duration_range.1.min(t);
        let duration = rng.next_range(cls.duration_range.0, dmax);
        let onset = rng.next_range(0, t - duration);
        let radius = blob_radius(cls.extent, s);
        let margin = radius.ceil().min((s / 2) as f32 - 1.0).max(0.0) as usize;
        let cx = rng.next_f32_range(margin as f32, (s - 1 - margin) as f32);
        let cy = rng.next_f32_range(margin as f32, (s - 1 - margin) as f32);
        let vx = rng.next_f32_range(-1.0, 1.0);
        let vy = rng.next_f32_range(-1.0, 1.0);
        let norm = (vx * vx + vy * vy).sqrt();
        let dir = if norm < 0.1 { (1.0, 0.0) } else { (vx / norm, vy / norm) };
        let speed = rng.next_f32_range(1.5, 3.0) * s as f32 / 32.0;
        let amp = rng.next_f32_range(4.0, 8.0) * s as f32 / 32.0;
        let phase = rng.next_f32();
        let peak = rng.next_f32_range(0.6, 0.9);
        events.push(Event {
            class,
            onset,
            duration,
            cx,
            cy,
            dir,
            speed,
            amp,
            phase,
            peak,
        });
    }

    // Background noise, then events.
    let mut data = Vec::with_capacity(t * 3 * s * s);
    for _ in 0..t * 3 * s * s {
        data.push(rng.next_f32() * 0.08);
    }
    let mut labels = vec![0.0f32; t * k];

    for ev in &events {
        let cls = &catalog[ev.class];
        let radius = blob_radius(cls.extent, s);
        for frame in 0..ev.duration {
            let ti = ev.onset + frame;
            labels[ti * k + ev.class] = 1.0;

            let progress = if ev.duration == 1 {
                0.5
            } else {
                frame as f32 / (ev.duration - 1) as f32
            };
            let envelope = match cls.pattern {
                Pattern::Blink => 1.0 - (2.0 * progress - 1.0).abs(),
                _ => 1.0,
            };
            let (x, y) = match cls.pattern {
                Pattern::Blink => (ev.cx, ev.cy),
                Pattern::Drift => (
                    ev.cx + ev.speed * frame as f32 * ev.dir.0,
                    ev.cy + ev.speed * frame as f32 * ev.dir.1,
                ),
                Pattern::Oscillate => {
                    // Triangle wave with a 6-frame period.
                    let u = frame as f32 / 6.0 + ev.phase;
                    let tri = 4.0 * (u - u.floor() - 0.5).abs() - 1.0;
                    (
                        ev.cx + ev.amp * tri * ev.dir.0,
                        ev.cy + ev.amp * tri * ev.dir.1,
                    )
                }
            };
            render_blob(
                &mut data[ti * 3 * s * s..(ti + 1) * 3 * s * s],
                s,
                x,
                y,
                radius,
                ev.peak * envelope,
                &cls.color,
            );
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }

    VideoClip {
        id: format!("video_{index:05}"),
        t,
        h: s,
        w: s,
        k,
        data,
        labels,
    }
}

fn blob_radius(extent: Extent, spatial: usize) -> f32 {
    match extent {
        Extent::Small => spatial as f32 * 0.11,
        Extent::Large => spatial as f32 * 0.25,
    }
}

/// Additive compact-support bump: peak * (1 - r^2/R^2)^2 inside radius R.
fn render_blob(frame: &mut [f32], s: usize, x: f32, y: f32, radius: f32, peak: f32, color: &[f32; 3]) {
    let r2 = radius * radius;
    let y_lo = ((y - radius).floor().max(0.0)) as usize;
    let y_hi = ((y + radius).ceil().min((s - 1) as f32)) as usize;
    let x_lo = ((x - radius).floor().max(0.0)) as usize;
    let x_hi = ((x + radius).ceil().min((s - 1) as f32)) as usize;
    if y_lo > y_hi || x_lo > x_hi {
        return;
    }
    for py in y_lo..=y_hi {
        for px in x_lo..=x_hi {
            let dx = px as f32 - x;
            let dy = py as f32 - y;
            let q = 1.0 - (dx * dx + dy * dy) / r2;
            if q <= 0.0 {
                continue;
            }
            let w = peak * q * q;
            for (c, &col) in color.iter().enumerate() {
                let idx = c * s * s + py * s + px;
                frame[idx] += w * col;
            }
        }
    }
}

/// Keep every `factor`-th frame; a kept frame's label is the OR over the
/// window of original frames it stands for.
pub fn resample_video(v: &VideoClip, factor: usize) -> Result<VideoClip> {
    if factor == 0 || v.t % factor != 0 {
        return Err(TanError::Config(format!(
            "resample factor {factor} does not divide temporal length {}",
            v.t
        )));
    }
    if factor == 1 {
        return Ok(v.clone());
    }
    let tp = v.t / factor;
    let frame = 3 * v.h * v.w;
    let mut data = Vec::with_capacity(tp * frame);
    let mut labels = vec![0.0f32; tp * v.k];
    for i in 0..tp {
        let src = i * factor;
        data.extend_from_slice(&v.data[src * frame..(src + 1) * frame]);
        for class in 0..v.k {
            let covered = (src..src + factor).any(|t| v.label(t, class));
            if covered {
                labels[i * v.k + class] = 1.0;
            }
        }
    }
    Ok(VideoClip {
        id: v.id.clone(),
        t: tp,
        h: v.h,
        w: v.w,
        k: v.k,
        data,
        labels,
    })
}

pub fn resample_dataset(d: &Dataset, factor: usize) -> Result<Dataset> {
    Ok(Dataset {
        videos: d
            .videos
            .iter()
            .map(|v| resample_video(v, factor))
            .collect::<Result<_>>()?,
        num_classes: d.num_classes,
    })
}
