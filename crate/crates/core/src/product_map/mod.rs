//! Persistent map of target-product instances built from detection streams.
//!
//! Each instance is a Gaussian over `(x, y, z, w, h)` whose mean is the rolling
//! mean of its last `window` associated observations. Stale or sparsely seen
//! instances are removed lazily.

mod camera;
mod gmm;
mod stream;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use camera::{back_project, project, BBox, BoxPose, CameraPose, Intrinsics, Quat};
pub use gmm::{fit_two_component, foreground_depth, median, Component, Mixture, MIN_DEPTH_SAMPLES};
pub use stream::{
    read_frames, synthetic_shelf_stream, write_frames, Detection, DetectionFrame, DetectionScore,
    SyntheticShelf, SyntheticStream, TargetDescriptor,
};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.6;

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("zero-norm feature vector")]
    ZeroVector,
    #[error("feature length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 8 depth samples, got {0}")]
    InsufficientSamples(usize),
    #[error("non-finite depth sample")]
    NonFiniteDepth,
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("malformed bounding box {0:?}")]
    BadBoundingBox(BBox),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("detection carries a feature but the target has none")]
    NoTargetFeature,
    #[error("stream line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, MapError> {
    if a.len() != b.len() {
        return Err(MapError::LengthMismatch(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if a.is_empty() || na == 0.0 || nb == 0.0 {
        return Err(MapError::ZeroVector);
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub similarity_threshold: f64,
    /// Meters, for x, y, z.
    pub sigma_position: f64,
    /// Meters, for w, h.
    pub sigma_size: f64,
    /// Squared normalized distance below which an observation joins an instance.
    pub gate: f64,
    pub window: usize,
    pub min_sightings: usize,
    /// Seconds an instance may stay under `min_sightings`.
    pub probation: f64,
    /// Seconds since last sighting before an instance is dropped.
    pub ttl: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            sigma_position: 0.03,
            sigma_size: 0.02,
            gate: 11.07,
            window: 10,
            min_sightings: 3,
            probation: 2.0,
            ttl: 5.0,
        }
    }
}

impl MapConfig {
    fn sigmas(&self) -> [f64; 5] {
        let (p, s) = (self.sigma_position, self.sigma_size);
        [p, p, p, s, s]
    }

    pub fn distance2(&self, a: &[f64; 5], b: &[f64; 5]) -> f64 {
        let s = self.sigmas();
        (0..5).map(|k| ((a[k] - b[k]) / s[k]).powi(2)).sum()
    }
}

/// A thresholded detection lifted to the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// `(x, y, z, w, h)`.
    pub pose: [f64; 5],
    pub similarity: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sighting {
    pub t: f64,
    pub observation: Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductInstance {
    pub id: u64,
    pub x_g: f64,
    pub y_g: f64,
    pub z_g: f64,
    pub w: f64,
    pub h: f64,
    pub rolling_similarity: f64,
    /// Last `window` sightings; the rolling values are their means.
    pub sightings: VecDeque<Sighting>,
    /// Sightings since creation, including those that left the window.
    pub total_sightings: usize,
    pub created_at: f64,
    pub last_seen: f64,
}

impl ProductInstance {
    pub fn new(id: u64, obs: Observation, t: f64) -> Self {
        let mut inst = Self {
            id,
            x_g: 0.0,
            y_g: 0.0,
            z_g: 0.0,
            w: 0.0,
            h: 0.0,
            rolling_similarity: 0.0,
            sightings: VecDeque::new(),
            total_sightings: 0,
            created_at: t,
            last_seen: t,
        };
        inst.push(obs, t, usize::MAX);
        inst
    }

    pub fn pose(&self) -> [f64; 5] {
        [self.x_g, self.y_g, self.z_g, self.w, self.h]
    }

    pub fn position(&self) -> nalgebra::Vector3<f64> {
        nalgebra::Vector3::new(self.x_g, self.y_g, self.z_g)
    }

    /// Upper edge of the product, meters.
    pub fn top(&self) -> f64 {
        self.y_g + self.h / 2.0
    }

    fn push(&mut self, obs: Observation, t: f64, window: usize) {
        self.sightings.push_back(Sighting {
            t,
            observation: obs,
        });
        while self.sightings.len() > window.max(1) {
            self.sightings.pop_front();
        }
        self.total_sightings += 1;
        self.last_seen = self.last_seen.max(t);
        self.recompute();
    }

    /// Means over the sighting buffer, from scratch.
    fn recompute(&mut self) {
        let n = self.sightings.len() as f64;
        let mut m = [0.0; 5];
        let mut s = 0.0;
        for sg in &self.sightings {
            for (acc, v) in m.iter_mut().zip(sg.observation.pose) {
                *acc += v;
            }
            s += sg.observation.similarity;
        }
        [self.x_g, self.y_g, self.z_g, self.w, self.h] = m.map(|v| v / n);
        self.rolling_similarity = s / n;
    }
}

/// Outcome of associating one observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Association {
    pub instance: u64,
    pub created: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProductMap {
    pub config: MapConfig,
    instances: Vec<ProductInstance>,
    next_id: u64,
}

impl ProductMap {
    pub fn new(config: MapConfig) -> Self {
        Self {
            config,
            instances: Vec::new(),
            next_id: 0,
        }
    }

    pub fn instances(&self) -> &[ProductInstance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&ProductInstance> {
        self.instances.iter().find(|i| i.id == id)
    }

    fn create(&mut self, obs: Observation, t: f64) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.instances.push(ProductInstance::new(id, obs, t));
        id
    }

    /// Join the nearest gated instance or start a new one.
    pub fn associate(&mut self, obs: Observation, t: f64) -> Association {
        let best = self
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (i, self.config.distance2(&inst.pose(), &obs.pose)))
            .filter(|&(_, d2)| d2 < self.config.gate)
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((i, _)) => {
                let window = self.config.window;
                self.instances[i].push(obs, t, window);
                Association {
                    instance: self.instances[i].id,
                    created: false,
                }
            }
            None => Association {
                instance: self.create(obs, t),
                created: true,
            },
        }
    }

    /// Associate a whole frame against the map as it stood before the frame.
    /// Gated pairs are taken in increasing distance, each instance and each
    /// observation at most once; the rest start new instances in a canonical order.
    pub fn associate_frame(&mut self, obs: &[Observation], t: f64) -> Vec<Association> {
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for (j, o) in obs.iter().enumerate() {
            for (i, inst) in self.instances.iter().enumerate() {
                let d2 = self.config.distance2(&inst.pose(), &o.pose);
                if d2 < self.config.gate {
                    pairs.push((d2, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut taken_inst = vec![false; self.instances.len()];
        let mut result: Vec<Option<Association>> = vec![None; obs.len()];
        for (_, i, j) in pairs {
            if taken_inst[i] || result[j].is_some() {
                continue;
            }
            taken_inst[i] = true;
            result[j] = Some(Association {
                instance: self.instances[i].id,
                created: false,
            });
        }
        for (j, r) in result.iter().enumerate() {
            if let Some(a) = r {
                let window = self.config.window;
                let inst = self
                    .instances
                    .iter_mut()
                    .find(|x| x.id == a.instance)
                    .expect("matched");
                inst.push(obs[j], t, window);
            }
        }
        let mut fresh: Vec<usize> = (0..obs.len()).filter(|&j| result[j].is_none()).collect();
        fresh.sort_by(|&a, &b| {
            let (pa, pb) = (&obs[a], &obs[b]);
            pa.pose
                .iter()
                .zip(&pb.pose)
                .map(|(x, y)| x.total_cmp(y))
                .chain(std::iter::once(pa.similarity.total_cmp(&pb.similarity)))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for j in fresh {
            result[j] = Some(Association {
                instance: self.create(obs[j], t),
                created: true,
            });
        }
        result
            .into_iter()
            .map(|r| r.expect("every observation assigned"))
            .collect()
    }

    /// Remove sparse instances past probation and stale ones past the TTL.
    pub fn prune(&mut self, now: f64) -> Vec<u64> {
        let c = self.config;
        let mut removed = Vec::new();
        self.instances.retain(|i| {
            let sparse = i.total_sightings < c.min_sightings && now - i.created_at > c.probation;
            let stale = now - i.last_seen > c.ttl;
            if sparse || stale {
                removed.push(i.id);
            }
            !(sparse || stale)
        });
        removed
    }

    pub fn ingest(
        &mut self,
        frame: &DetectionFrame,
        target: &TargetDescriptor,
    ) -> Result<IngestReport, MapError> {
        frame.camera_pose.validate()?;
        if !frame.t.is_finite() {
            return Err(MapError::InvalidFrame("non-finite time".into()));
        }
        let mut report = IngestReport {
            t: frame.t,
            ..IngestReport::default()
        };
        let mut observations = Vec::new();
        let mut sources = Vec::new();
        for (idx, det) in frame.detections.iter().enumerate() {
            match self.lift(det, frame, target) {
                Ok(Some(o)) => {
                    observations.push(o);
                    sources.push(idx);
                }
                Ok(None) => report.below_threshold.push(idx),
                Err(e) => report.skipped.push(SkippedDetection {
                    index: idx,
                    reason: e.to_string(),
                }),
            }
        }
        let assoc = self.associate_frame(&observations, frame.t);
        report.associations = sources.into_iter().zip(assoc).collect();
        report.pruned = self.prune(frame.t);
        Ok(report)
    }

    fn lift(
        &self,
        det: &Detection,
        frame: &DetectionFrame,
        target: &TargetDescriptor,
    ) -> Result<Option<Observation>, MapError> {
        let similarity = match &det.score {
            DetectionScore::Similarity(s) => *s,
            DetectionScore::Feature(f) => {
                let t = target.feature.as_deref().ok_or(MapError::NoTargetFeature)?;
                cosine_similarity(f, t)?
            }
        };
        if !(similarity >= self.config.similarity_threshold) {
            return Ok(None);
        }
        det.bbox.validate()?;
        let depth = foreground_depth(&det.depth_samples)?;
        let pose = back_project(&det.bbox, depth, &frame.intrinsics, &frame.camera_pose)?;
        Ok(Some(Observation {
            pose: pose.as_vector(),
            similarity,
        }))
    }

    pub fn snapshot(&self, t: f64) -> MapSnapshot {
        MapSnapshot {
            t,
            config: self.config,
            instances: self.instances.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedDetection {
    pub index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub t: f64,
    /// (detection index, association).
    pub associations: Vec<(usize, Association)>,
    pub below_threshold: Vec<usize>,
    pub skipped: Vec<SkippedDetection>,
    pub pruned: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshot {
    pub t: f64,
    pub config: MapConfig,
    pub instances: Vec<ProductInstance>,
}
