//! Pinhole back-projection of detection boxes into the world frame.
//!
//! Camera frame: x right, y up, z along the optical axis. Image rows grow
//! downward, so `v` is flipped when lifting a pixel into the camera frame.

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::MapError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

/// Camera-to-world transform.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub orientation: Quat,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            position: [0.0; 3],
            orientation: Quat::IDENTITY,
        }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        let n = self.orientation.norm();
        if !((n - 1.0).abs() <= 1e-6) {
            return Err(MapError::InvalidFrame(format!("quaternion norm {n}")));
        }
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(MapError::InvalidFrame("non-finite camera position".into()));
        }
        Ok(())
    }

    pub fn isometry(&self) -> Isometry3<f64> {
        let q = self.orientation;
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.position)),
            UnitQuaternion::new_normalize(Quaternion::new(q.w, q.x, q.y, q.z)),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BBox {
    pub fn validate(&self) -> Result<(), MapError> {
        let ok = [self.u_min, self.v_min, self.u_max, self.v_max]
            .iter()
            .all(|v| v.is_finite())
            && self.u_min < self.u_max
            && self.v_min < self.v_max;
        if ok {
            Ok(())
        } else {
            Err(MapError::BadBoundingBox(*self))
        }
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.u_min + self.u_max) / 2.0,
            (self.v_min + self.v_max) / 2.0,
        )
    }
}

/// World-frame center and metric size of a detection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxPose {
    pub position: [f64; 3],
    pub w: f64,
    pub h: f64,
}

impl BoxPose {
    /// `(x, y, z, w, h)`.
    pub fn as_vector(&self) -> [f64; 5] {
        let [x, y, z] = self.position;
        [x, y, z, self.w, self.h]
    }
}

pub fn back_project(
    bbox: &BBox,
    depth: f64,
    k: &Intrinsics,
    pose: &CameraPose,
) -> Result<BoxPose, MapError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(MapError::NonPositiveDepth(depth));
    }
    let (u, v) = bbox.center();
    let cam = Point3::new((u - k.cx) / k.fx * depth, -(v - k.cy) / k.fy * depth, depth);
    let world = pose.isometry() * cam;
    Ok(BoxPose {
        position: [world.x, world.y, world.z],
        w: depth * (bbox.u_max - bbox.u_min) / k.fx,
        h: depth * (bbox.v_max - bbox.v_min) / k.fy,
    })
}

/// Inverse of [`back_project`] for the box center; used to synthesize streams.
pub fn project(world: &Vector3<f64>, k: &Intrinsics, pose: &CameraPose) -> Option<(f64, f64, f64)> {
    let cam = pose.isometry().inverse() * Point3::from(*world);
    if cam.z <= 0.0 {
        return None;
    }
    Some((
        k.fx * cam.x / cam.z + k.cx,
        k.cy - k.fy * cam.y / cam.z,
        cam.z,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const K: Intrinsics = Intrinsics {
        fx: 600.0,
        fy: 600.0,
        cx: 320.0,
        cy: 240.0,
    };

    fn centered(width: f64) -> BBox {
        BBox {
            u_min: 320.0 - width / 2.0,
            v_min: 200.0,
            u_max: 320.0 + width / 2.0,
            v_max: 280.0,
        }
    }

    #[test]
    fn identity_pose_center() {
        let p = back_project(&centered(60.0), 1.0, &K, &CameraPose::identity()).unwrap();
        assert_eq!(p.position, [0.0, 0.0, 1.0]);
        assert!((p.w - 0.10).abs() < 1e-12);
    }

    #[test]
    fn translated_pose() {
        let pose = CameraPose {
            position: [1.0, 0.0, 0.0],
            orientation: Quat::IDENTITY,
        };
        let p = back_project(&centered(60.0), 1.0, &K, &pose).unwrap();
        assert_eq!(p.position, [1.0, 0.0, 1.0]);
    }

    #[test]
    fn rotated_pose_matches_hand_rotation() {
        // 90 degrees about +y: camera z maps to world +x
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let pose = CameraPose {
            position: [0.0; 3],
            orientation: Quat {
                w: h,
                x: 0.0,
                y: h,
                z: 0.0,
            },
        };
        let p = back_project(&centered(60.0), 2.0, &K, &pose).unwrap();
        assert!((p.position[0] - 2.0).abs() < 1e-12);
        assert!(p.position[1].abs() < 1e-12 && p.position[2].abs() < 1e-12);
    }

    #[test]
    fn upper_image_rows_are_higher_in_the_world() {
        let b = BBox {
            u_min: 310.0,
            v_min: 100.0,
            u_max: 330.0,
            v_max: 120.0,
        };
        let p = back_project(&b, 1.0, &K, &CameraPose::identity()).unwrap();
        assert!((p.position[1] - 130.0 / 600.0).abs() < 1e-12);
    }

    #[test]
    fn project_inverts_back_project() {
        let pose = CameraPose {
            position: [0.3, 1.2, -0.5],
            orientation: Quat {
                w: 0.9887710779360422,
                x: 0.0,
                y: 0.14943813247359922,
                z: 0.0,
            },
        };
        let w = Vector3::new(0.5, 1.4, 1.1);
        let (u, v, d) = project(&w, &K, &pose).unwrap();
        let b = BBox {
            u_min: u - 10.0,
            v_min: v - 10.0,
            u_max: u + 10.0,
            v_max: v + 10.0,
        };
        let p = back_project(&b, d, &K, &pose).unwrap();
        for k in 0..3 {
            assert!((p.position[k] - w[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(back_project(&centered(60.0), 0.0, &K, &CameraPose::identity()).is_err());
        let mut pose = CameraPose::identity();
        pose.orientation.w = 1.1;
        assert!(pose.validate().is_err());
        assert!(BBox {
            u_min: 5.0,
            v_min: 0.0,
            u_max: 4.0,
            v_max: 1.0
        }
        .validate()
        .is_err());
    }
}
