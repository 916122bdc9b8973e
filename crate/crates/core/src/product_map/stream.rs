//! Detection stream records (one JSON frame per line) and a synthetic shelf stream.

use std::io::{BufRead, Write};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::camera::{project, BBox, CameraPose, Intrinsics};
use super::MapError;

/// Either a raw feature vector or a similarity computed upstream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionScore {
    Feature(Vec<f64>),
    Similarity(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    #[serde(flatten)]
    pub score: DetectionScore,
    pub depth_samples: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub t: f64,
    pub camera_pose: CameraPose,
    pub intrinsics: Intrinsics,
    pub detections: Vec<Detection>,
}

/// What to look for: a feature vector, or just a product id when the stream
/// already carries similarities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetDescriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Vec<f64>>,
}

pub fn read_frames<R: BufRead>(r: R) -> Result<Vec<DetectionFrame>, MapError> {
    let mut frames = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(
            serde_json::from_str(&line).map_err(|source| MapError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(frames)
}

pub fn write_frames<W: Write>(frames: &[DetectionFrame], mut w: W) -> std::io::Result<()> {
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Ground truth and frames of a synthetic shelf.
#[derive(Clone, Debug)]
pub struct SyntheticStream {
    pub frames: Vec<DetectionFrame>,
    /// `(x, y, z, w, h)` of each real product.
    pub products: Vec<[f64; 5]>,
    /// Position of the injected one-frame false detection, if any.
    pub spurious: Option<[f64; 3]>,
}

#[derive(Clone, Copy, Debug)]
pub struct SyntheticShelf {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    pub frame_dt: f64,
    /// Per-axis standard deviation of the observed product position, meters.
    pub jitter: f64,
    /// Frame index carrying a one-off false detection.
    pub spurious_frame: Option<usize>,
}

impl Default for SyntheticShelf {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 4,
            frames: 30,
            frame_dt: 0.1,
            jitter: 0.01,
            spurious_frame: Some(5),
        }
    }
}

const SHELF_INTRINSICS: Intrinsics = Intrinsics {
    fx: 600.0,
    fy: 600.0,
    cx: 320.0,
    cy: 240.0,
};

fn detection_at(
    center: Vector3<f64>,
    w: f64,
    h: f64,
    similarity: f64,
    pose: &CameraPose,
    rng: &mut ChaCha8Rng,
) -> Option<Detection> {
    let k = SHELF_INTRINSICS;
    let (u, v, depth) = project(&center, &k, pose)?;
    let (hw, hh) = (k.fx * w / depth / 2.0, k.fy * h / depth / 2.0);
    let fg = Normal::new(depth, 0.005).expect("finite");
    let bg = Normal::new(depth + 0.4, 0.02).expect("finite");
    let mut depth_samples: Vec<f64> = (0..24).map(|_| fg.sample(rng)).collect();
    depth_samples.extend((0..16).map(|_| bg.sample(rng)));
    Some(Detection {
        bbox: BBox {
            u_min: u - hw,
            v_min: v - hh,
            u_max: u + hw,
            v_max: v + hh,
        },
        score: DetectionScore::Similarity(similarity),
        depth_samples,
    })
}

/// Products on a shelf plane at z = 1 m seen from a fixed camera at the origin,
/// with observed positions jittered per frame.
pub fn synthetic_shelf_stream(shelf: &SyntheticShelf, seed: u64) -> SyntheticStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = CameraPose {
        position: [0.0, 1.3, 0.0],
        orientation: super::camera::Quat::IDENTITY,
    };
    let (w, h) = (0.08, 0.20);
    let products: Vec<[f64; 5]> = (0..shelf.rows)
        .flat_map(|r| (0..shelf.cols).map(move |c| (r, c)))
        .map(|(r, c)| {
            let x = (c as f64 - (shelf.cols as f64 - 1.0) / 2.0) * 0.20;
            let y = 1.0 + r as f64 * 0.30;
            [x, y, 1.0, w, h]
        })
        .collect();
    let spurious = shelf.spurious_frame.map(|_| [0.55, 0.85, 0.9]);
    let jitter = Normal::new(0.0, shelf.jitter).expect("finite");
    let frames = (0..shelf.frames)
        .map(|f| {
            let mut detections: Vec<Detection> = products
                .iter()
                .filter_map(|p| {
                    let c = Vector3::new(p[0], p[1], p[2]).map(|v| v + jitter.sample(&mut rng));
                    let sim = rng.random_range(0.8..0.95);
                    detection_at(c, p[3], p[4], sim, &pose, &mut rng)
                })
                .collect();
            if Some(f) == shelf.spurious_frame {
                let s = spurious.expect("set with frame");
                detections.extend(detection_at(
                    Vector3::from(s),
                    0.1,
                    0.1,
                    0.7,
                    &pose,
                    &mut rng,
                ));
            }
            // a non-matching product on every frame
            detections.extend(detection_at(
                Vector3::new(-0.6, 1.0, 1.0),
                w,
                h,
                0.3,
                &pose,
                &mut rng,
            ));
            DetectionFrame {
                t: f as f64 * shelf.frame_dt,
                camera_pose: pose,
                intrinsics: SHELF_INTRINSICS,
                detections,
            }
        })
        .collect();
    SyntheticStream {
        frames,
        products,
        spurious,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_json_round_trip() {
        let s = synthetic_shelf_stream(&SyntheticShelf::default(), 1);
        let mut buf = Vec::new();
        write_frames(&s.frames[..3], &mut buf).unwrap();
        let back = read_frames(buf.as_slice()).unwrap();
        assert_eq!(back, s.frames[..3]);
    }

    #[test]
    fn feature_or_similarity_on_the_wire() {
        let line = r#"{"bbox":{"u_min":1,"v_min":2,"u_max":3,"v_max":4},"feature":[0.1,0.2],"depth_samples":[1.0]}"#;
        let d: Detection = serde_json::from_str(line).unwrap();
        assert_eq!(d.score, DetectionScore::Feature(vec![0.1, 0.2]));
        let line = r#"{"bbox":{"u_min":1,"v_min":2,"u_max":3,"v_max":4},"similarity":0.7,"depth_samples":[1.0]}"#;
        let d: Detection = serde_json::from_str(line).unwrap();
        assert_eq!(d.score, DetectionScore::Similarity(0.7));
    }

    #[test]
    fn parse_error_names_the_line() {
        let err = read_frames("\n{not json}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, MapError::Parse { line: 2, .. }));
    }
}
