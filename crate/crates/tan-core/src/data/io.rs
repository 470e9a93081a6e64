//! On-disk dataset layout: one binary tensor container per video (the
//! checkpoint entry format, entries "clip" [T,3,H,W] and "labels" [T,K])
//! plus a shared interval manifest reconstructed from the dense labels.

use std::path::Path;

use super::{Dataset, VideoClip};
use crate::checkpoint::Checkpoint;
use crate::error::{Result, TanError};

pub fn save_dataset(data: &Dataset, dir: &Path, header_comments: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TanError::io(dir, e))?;
    for v in &data.videos {
        let mut c = Checkpoint::new();
        c.insert("clip", vec![v.t, 3, v.h, v.w], v.data.clone())?;
        c.insert("labels", vec![v.t, v.k], v.labels.clone())?;
        c.save(&dir.join(format!("{}.bin", v.id)))?;
    }

    let mut manifest = String::new();
    for line in header_comments {
        manifest.push_str(&format!("# {line}\n"));
    }
    manifest.push_str("video_id,start_frame,end_frame,class_id\n");
    for v in &data.videos {
        for class in 0..v.k {
            let mut run_start = None;
            for t in 0..=v.t {
                let active = t < v.t && v.label(t, class);
                match (active, run_start) {
                    (true, None) => run_start = Some(t),
                    (false, Some(s)) => {
                        manifest.push_str(&format!("{},{},{},{}\n", v.id, s, t - 1, class));
                        run_start = None;
                    }
                    _ => {}
                }
            }
        }
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| TanError::io(&path, e))?;
    Ok(())
}

/// Load every `*.bin` container in `dir`, sorted by file name.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| TanError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(TanError::Dataset(format!(
            "no .bin video files under {}",
            dir.display()
        )));
    }
    let mut videos = Vec::with_capacity(paths.len());
    let mut num_classes = None;
    for path in paths {
        let c = Checkpoint::load(&path)?;
        let clip = c.get("clip").ok_or_else(|| {
            TanError::Dataset(format!("{}: missing 'clip' entry", path.display()))
        })?;
        let labels = c.get("labels").ok_or_else(|| {
            TanError::Dataset(format!("{}: missing 'labels' entry", path.display()))
        })?;
        if clip.dims.len() != 4 || clip.dims[1] != 3 {
            return Err(TanError::Dataset(format!(
                "{}: clip dims {:?} are not [T,3,H,W]",
                path.display(),
                clip.dims
            )));
        }
        if labels.dims.len() != 2 || labels.dims[0] != clip.dims[0] {
            return Err(TanError::Dataset(format!(
                "{}: labels dims {:?} do not pair with clip {:?}",
                path.display(),
                labels.dims,
                clip.dims
            )));
        }
        let k = labels.dims[1];
        if *num_classes.get_or_insert(k) != k {
            return Err(TanError::Dataset(format!(
                "{}: class count {k} differs from earlier videos",
                path.display()
            )));
        }
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        videos.push(VideoClip {
            id,
            t: clip.dims[0],
            h: clip.dims[2],
            w: clip.dims[3],
            k,
            data: clip.values.clone(),
            labels: labels.values.clone(),
        });
    }
    Ok(Dataset {
        videos,
        num_classes: num_classes.unwrap_or(0),
    })
}

#[cfg(test)]
mod tests {
    use super::super::gen::{generate, GenSpec};
    use super::*;

    #[test]
    fn round_trip_preserves_bytes_and_order() {
        let d = generate(&GenSpec::new(9, 3, 16, 4, 32)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&d, dir.path(), &["seed=9".into()]).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.num_classes, 4);
        for (a, b) in d.videos.iter().zip(&back.videos) {
            assert_eq!(a.id, b.id);
            assert_eq!(
                a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            assert_eq!(a.labels, b.labels);
        }
        let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert!(manifest.starts_with("# seed=9\n"));
        assert!(manifest.contains("video_id,start_frame,end_frame,class_id"));
    }
}
