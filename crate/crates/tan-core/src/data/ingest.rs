//! Ingestion of on-disk frame-directory datasets: one directory of 8-bit
//! RGB raster frames per video (sorted by file name) plus a line-oriented
//! interval manifest, densified into [T,K] label matrices.

use std::collections::BTreeMap;
use std::path::Path;

use super::{Dataset, VideoClip};
use crate::error::{Result, TanError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Interval {
    pub video_id: String,
    pub start: usize,
    pub end: usize,
    pub class: usize,
    /// 1-based manifest line, for error context.
    pub line: usize,
}

/// Parse `video_id,start_frame,end_frame,class_id` lines. A header line is
/// required; `#` comments and blank lines are allowed.
pub fn parse_manifest(path: &Path) -> Result<Vec<Interval>> {
    let text = std::fs::read_to_string(path).map_err(|e| TanError::io(path, e))?;
    let mut intervals = Vec::new();
    let mut header_seen = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            if line != "video_id,start_frame,end_frame,class_id" {
                return Err(TanError::Manifest {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!(
                        "expected header 'video_id,start_frame,end_frame,class_id', got '{line}'"
                    ),
                });
            }
            header_seen = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TanError::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected 4 comma-separated fields, got {}", fields.len()),
            });
        }
        let parse_num = |s: &str, what: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| TanError::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("{what} '{s}' is not a non-negative integer"),
            })
        };
        let video_id = fields[0].trim().to_string();
        if video_id.is_empty() {
            return Err(TanError::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: "empty video_id".into(),
            });
        }
        let start = parse_num(fields[1], "start_frame")?;
        let end = parse_num(fields[2], "end_frame")?;
        let class = parse_num(fields[3], "class_id")?;
        if end < start {
            return Err(TanError::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("inverted interval: start {start} > end {end}"),
            });
        }
        intervals.push(Interval {
            video_id,
            start,
            end,
            class,
            line: line_no,
        });
    }
    if !header_seen {
        return Err(TanError::Manifest {
            path: path.to_path_buf(),
            line: text.lines().count().max(1),
            msg: "manifest has no header line".into(),
        });
    }
    Ok(intervals)
}

/// Ingest every video directory under `root` (sorted by name), decode and
/// bilinear-resize frames to `out_spatial`, and densify the manifest's
/// intervals into per-frame labels.
pub fn ingest(root: &Path, manifest_path: &Path, num_classes: usize, out_spatial: usize) -> Result<Dataset> {
    if num_classes == 0 {
        return Err(TanError::Config("num_classes must be >= 1".into()));
    }
    let intervals = parse_manifest(manifest_path)?;
    let mut by_video: BTreeMap<String, Vec<&Interval>> = BTreeMap::new();
    for iv in &intervals {
        by_video.entry(iv.video_id.clone()).or_default().push(iv);
    }

    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| TanError::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.path())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(TanError::Dataset(format!(
            "no per-video frame directories under {}",
            root.display()
        )));
    }

    // Every manifest video must exist on disk.
    for id in by_video.keys() {
        if !dirs.iter().any(|d| d.file_name().is_some_and(|n| n.to_string_lossy() == *id)) {
            return Err(TanError::Dataset(format!(
                "manifest references video '{id}' but {}/{id} does not exist",
                root.display()
            )));
        }
    }

    let mut videos = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let id = dir.file_name().unwrap().to_string_lossy().into_owned();
        let mut frames: Vec<_> = std::fs::read_dir(&dir)
            .map_err(|e| TanError::io(&dir, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        frames.sort();
        if frames.is_empty() {
            return Err(TanError::Dataset(format!(
                "video '{id}': no frame files in {}",
                dir.display()
            )));
        }
        let t = frames.len();
        let mut data = Vec::with_capacity(t * 3 * out_spatial * out_spatial);
        for frame_path in &frames {
            let img = image::open(frame_path)
                .map_err(|e| TanError::Dataset(format!("{}: {e}", frame_path.display())))?
                .to_rgb8();
            data.extend(resize_bilinear_planar(&img, out_spatial));
        }

        let mut labels = vec![0.0f32; t * num_classes];
        let ivs = by_video.get(&id).map(Vec::as_slice).unwrap_or(&[]);
        if ivs.is_empty() {
            log::warn!("video '{id}': no manifest intervals, labels are all zero");
        }
        for iv in ivs {
            if iv.class >= num_classes {
                return Err(TanError::Manifest {
                    path: manifest_path.to_path_buf(),
                    line: iv.line,
                    msg: format!("class_id {} >= num_classes {num_classes}", iv.class),
                });
            }
            if iv.end >= t {
                return Err(TanError::Manifest {
                    path: manifest_path.to_path_buf(),
                    line: iv.line,
                    msg: format!("interval end {} exceeds video '{id}' length {t}", iv.end),
                });
            }
            for ti in iv.start..=iv.end {
                labels[ti * num_classes + iv.class] = 1.0;
            }
        }
        videos.push(VideoClip {
            id,
            t,
            h: out_spatial,
            w: out_spatial,
            k: num_classes,
            data,
            labels,
        });
    }
    Ok(Dataset {
        videos,
        num_classes,
    })
}

/// Bilinear resample with pixel-center alignment, returning planar
/// [3,H,W] in [0,1].
fn resize_bilinear_planar(img: &image::RgbImage, out: usize) -> Vec<f32> {
    let (iw, ih) = (img.width() as usize, img.height() as usize);
    let mut planar = vec![0.0f32; 3 * out * out];
    let sx = iw as f32 / out as f32;
    let sy = ih as f32 / out as f32;
    for oy in 0..out {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (ih - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(ih - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (iw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(iw - 1);
            let wx = fx - x0 as f32;
            let p00 = img.get_pixel(x0 as u32, y0 as u32);
            let p01 = img.get_pixel(x1 as u32, y0 as u32);
            let p10 = img.get_pixel(x0 as u32, y1 as u32);
            let p11 = img.get_pixel(x1 as u32, y1 as u32);
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - wx) + p01[c] as f32 * wx;
                let bot = p10[c] as f32 * (1.0 - wx) + p11[c] as f32 * wx;
                planar[c * out * out + oy * out + ox] = (top * (1.0 - wy) + bot * wy) / 255.0;
            }
        }
    }
    planar
}
