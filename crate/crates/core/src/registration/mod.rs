//! Point-to-plane ICP.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{exp, Pose, Twist};

/// Normal matrices worse conditioned than this are treated as degenerate.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ICPParams {
    pub max_iterations: usize,
    /// Correspondences farther apart than this (mm) are discarded.
    pub max_correspondence_distance: f64,
    /// Stop once the update twist norm falls below this.
    pub convergence_threshold: f64,
    pub min_correspondences: usize,
}

impl Default for ICPParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            max_correspondence_distance: 2.0,
            convergence_threshold: 1e-5,
            min_correspondences: 20,
        }
    }
}

impl ICPParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || self.min_correspondences == 0
            || !(self.max_correspondence_distance > 0.0)
            || !(self.convergence_threshold > 0.0)
        {
            return Err(Error::Config(format!("ICP parameters must be strictly positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ICPResult {
    /// Maps source points into the target frame.
    pub transform: Pose,
    pub converged: bool,
    pub iterations: usize,
    /// Point-to-point RMSE over the correspondences at `init`.
    pub initial_rmse: f64,
    /// Point-to-point RMSE over the final correspondences.
    pub rmse: f64,
    pub correspondences: usize,
    /// Of the final 6x6 normal matrix.
    pub condition_number: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub source: usize,
    pub target: usize,
    pub distance: f64,
}

/// Nearest target point of every source point, kept when within `max_dist`.
pub fn nearest_neighbors(source: &PointCloud, target: &PointCloud, max_dist: f64) -> Vec<Correspondence> {
    let tree = KdTree::new(&target.points);
    match_with(&tree, source, max_dist)
}

fn match_with(tree: &KdTree, source: &PointCloud, max_dist: f64) -> Vec<Correspondence> {
    source
        .points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            let (j, d2) = tree.nearest(p)?;
            let distance = d2.sqrt();
            (distance <= max_dist).then_some(Correspondence {
                source: i,
                target: j,
                distance,
            })
        })
        .collect()
}

/// Gauss-Newton normal equations of the point-to-plane objective, for a
/// perturbation `x -> c + exp(xi) (x - c)` about the source centroid `c`.
fn normal_equations(source: &PointCloud, target: &PointCloud, corrs: &[Correspondence]) -> (Matrix6<f64>, Vector6<f64>, Vector3<f64>) {
    let c = corrs
        .iter()
        .fold(Vector3::zeros(), |acc, m| acc + source.points[m.source].coords)
        / corrs.len().max(1) as f64;
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    for m in corrs {
        let p = source.points[m.source].coords;
        let q = target.points[m.target].coords;
        let n = target.normals[m.target];
        let a = (p - c).cross(&n);
        let row = Vector6::new(a.x, a.y, a.z, n.x, n.y, n.z);
        let r = n.dot(&(p - q));
        h += row * row.transpose();
        g += row * r;
    }
    (h, g, c)
}

fn condition(eig: &SymmetricEigen<f64, nalgebra::U6>) -> f64 {
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Condition number of the point-to-plane normal matrix.
pub fn condition_number(source: &PointCloud, target: &PointCloud, corrs: &[Correspondence]) -> f64 {
    let (h, _, _) = normal_equations(source, target, corrs);
    condition(&h.symmetric_eigen())
}

/// One linearised point-to-plane solve. The returned twist, applied on the
/// left of the current source pose, reduces `sum (n_j . (p_i - q_j))^2`.
pub fn point_to_plane_step(source: &PointCloud, target: &PointCloud, corrs: &[Correspondence]) -> Result<Twist> {
    if corrs.len() < 6 {
        return Err(Error::InsufficientOverlap {
            found: corrs.len(),
            required: 6,
        });
    }
    let (h, g, c) = normal_equations(source, target, corrs);
    let eig = h.symmetric_eigen();
    let cond = condition(&eig);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::Degenerate { condition: cond });
    }
    let proj = eig.eigenvectors.transpose() * g;
    let scaled = Vector6::from_fn(|i, _| -proj[i] / eig.eigenvalues[i]);
    let xi = eig.eigenvectors * scaled;
    // express the centroid-centred update as a plain left twist
    let local = exp(&Twist::from_vector(&xi));
    let about = Pose::new(nalgebra::Matrix3::identity(), c);
    let update = about.compose(&local).compose(&about.inverse());
    crate::geometry::log(&update)
}

fn rmse(corrs: &[Correspondence]) -> f64 {
    if corrs.is_empty() {
        return 0.0;
    }
    (corrs.iter().map(|m| m.distance * m.distance).sum::<f64>() / corrs.len() as f64).sqrt()
}

pub fn icp_register(source: &PointCloud, target: &PointCloud, init: &Pose, params: &ICPParams) -> Result<ICPResult> {
    params.validate()?;
    let tree = KdTree::new(&target.points);
    let required = params.min_correspondences.max(6);
    let gather = |pose: &Pose| -> Result<(PointCloud, Vec<Correspondence>)> {
        let moved = source.transformed(pose, target.frame);
        let corrs = match_with(&tree, &moved, params.max_correspondence_distance);
        if corrs.len() < required {
            return Err(Error::InsufficientOverlap {
                found: corrs.len(),
                required,
            });
        }
        Ok((moved, corrs))
    };

    let mut transform = *init;
    let mut converged = false;
    let mut iterations = 0;
    let mut initial_rmse = None;
    while iterations < params.max_iterations {
        iterations += 1;
        let (moved, corrs) = gather(&transform)?;
        initial_rmse.get_or_insert_with(|| rmse(&corrs));
        let xi = point_to_plane_step(&moved, target, &corrs)?;
        transform = exp(&xi).compose(&transform).orthonormalized();
        if xi.norm() < params.convergence_threshold {
            converged = true;
            break;
        }
    }
    let (moved, corrs) = gather(&transform)?;
    Ok(ICPResult {
        transform,
        converged,
        iterations,
        initial_rmse: initial_rmse.unwrap_or(0.0),
        rmse: rmse(&corrs),
        correspondences: corrs.len(),
        condition_number: condition_number(&moved, target, &corrs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Frame;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};

    fn plane(n: usize, spacing: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Point3::new(i as f64 * spacing, j as f64 * spacing, 0.0));
            }
        }
        let normals = vec![Vector3::z(); pts.len()];
        PointCloud::new(pts, normals, Frame::Sensor).unwrap()
    }

    fn shifted(cloud: &PointCloud, d: Vector3<f64>) -> PointCloud {
        cloud.transformed(&Pose::new(nalgebra::Matrix3::identity(), d), cloud.frame)
    }

    /// Paraboloid-like bump with analytic normals: fully constrained.
    fn bump(n: usize) -> PointCloud {
        let mut pts = Vec::new();
        let mut normals = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (i as f64 * 0.3 - 3.0, j as f64 * 0.3 - 3.0);
                let z = 0.05 * x * x + 0.02 * y * y + 0.03 * x * y * y;
                pts.push(Point3::new(x, y, z));
                normals.push(Vector3::new(-(0.1 * x + 0.03 * y * y), -(0.04 * y + 0.06 * x * y), 1.0));
            }
        }
        PointCloud::new(pts, normals, Frame::Sensor).unwrap()
    }

    #[test]
    fn self_matches_have_zero_distance() {
        let c = bump(10);
        let m = nearest_neighbors(&c, &c, 0.1);
        assert_eq!(m.len(), c.len());
        assert!(m.iter().all(|m| m.source == m.target && m.distance == 0.0));
    }

    #[test]
    fn distance_cap_filters_matches() {
        let a = PointCloud::new(vec![Point3::origin()], vec![Vector3::z()], Frame::Sensor).unwrap();
        let b = PointCloud::new(vec![Point3::new(5.0, 0.0, 0.0)], vec![Vector3::z()], Frame::Sensor).unwrap();
        assert!(nearest_neighbors(&a, &b, 1.0).is_empty());
        assert_eq!(nearest_neighbors(&a, &b, 5.0).len(), 1);
    }

    #[test]
    fn zero_residual_gives_zero_step() {
        let c = bump(10);
        let m = nearest_neighbors(&c, &c, 0.1);
        let xi = point_to_plane_step(&c, &c, &m).unwrap();
        assert!(xi.norm() < 1e-12);
    }

    #[test]
    fn planar_patches_are_degenerate() {
        let p = plane(12, 0.3);
        for d in [Vector3::new(0.1, 0.05, 0.0), Vector3::new(0.0, 0.0, 0.1)] {
            let q = shifted(&p, d);
            let m = nearest_neighbors(&q, &p, 2.0);
            match point_to_plane_step(&q, &p, &m) {
                Err(Error::Degenerate { condition }) => assert!(condition > MAX_CONDITION),
                other => panic!("expected degeneracy, got {other:?}"),
            }
        }
    }

    #[test]
    fn step_recovers_small_translation() {
        let target = bump(20);
        let d = Vector3::new(0.01, -0.02, 0.015);
        let source = shifted(&target, d);
        let m: Vec<_> = (0..target.len())
            .map(|i| Correspondence {
                source: i,
                target: i,
                distance: d.norm(),
            })
            .collect();
        let xi = point_to_plane_step(&source, &target, &m).unwrap();
        assert!(xi.rotation.norm() < 1e-3);
        assert!((xi.translation + d).norm() < 2e-3);
    }

    #[test]
    fn identity_registration_takes_one_iteration() {
        let c = bump(15);
        let r = icp_register(&c, &c, &Pose::identity(), &ICPParams::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
        assert_eq!(r.rmse, 0.0);
        assert_eq!(r.transform, Pose::identity());
        assert!(r.condition_number >= 1.0);
    }

    #[test]
    fn recovers_known_transform_and_warm_start() {
        let target = bump(25);
        let truth = Pose::from_axis_angle(Vector3::x(), 3f64.to_radians())
            .compose(&Pose::from_translation(0.3, -0.2, 0.25));
        let source = target.transformed(&truth.inverse(), Frame::Sensor);
        let r = icp_register(&source, &target, &Pose::identity(), &ICPParams::default()).unwrap();
        assert!(r.converged);
        let err = r.transform.inverse().compose(&truth);
        assert!(err.rotation_angle() < 1e-6 && err.translation.norm() < 1e-5, "{err}");
        assert!(r.rmse <= r.initial_rmse);
        let warm = icp_register(&source, &target, &truth, &ICPParams::default()).unwrap();
        assert!(warm.converged && warm.iterations <= 2);
    }

    #[test]
    fn registration_is_equivariant() {
        let target = bump(20);
        let truth = Pose::from_axis_angle(Vector3::new(1.0, 1.0, 0.0), 0.04).compose(&Pose::from_translation(0.2, 0.1, 0.0));
        let source = target.transformed(&truth.inverse(), Frame::Sensor);
        let g = Pose::from_axis_angle(Vector3::new(0.2, -1.0, 0.5), 0.9).compose(&Pose::from_translation(5.0, -3.0, 2.0));
        let a = icp_register(&source, &target, &Pose::identity(), &ICPParams::default()).unwrap();
        let b = icp_register(
            &source.transformed(&g, Frame::Sensor),
            &target.transformed(&g, Frame::Sensor),
            &Pose::identity(),
            &ICPParams::default(),
        )
        .unwrap();
        let conj = g.compose(&a.transform).compose(&g.inverse());
        assert!((conj.rotation - b.transform.rotation).amax() < 1e-6);
        assert!((conj.translation - b.transform.translation).amax() < 1e-6);
    }

    #[test]
    fn too_little_overlap_is_reported() {
        let a = bump(10);
        let far = shifted(&a, Vector3::new(50.0, 0.0, 0.0));
        assert!(matches!(
            icp_register(&far, &a, &Pose::identity(), &ICPParams::default()),
            Err(Error::InsufficientOverlap { found: 0, .. })
        ));
        let bad = ICPParams {
            max_iterations: 0,
            ..ICPParams::default()
        };
        assert!(icp_register(&a, &a, &Pose::identity(), &bad).is_err());
    }

    #[test]
    fn random_clouds_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut cloud = || {
            let pts: Vec<_> = (0..500)
                .map(|_| Point3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)))
                .collect();
            let n = vec![Vector3::z(); 500];
            PointCloud::new(pts, n, Frame::Sensor).unwrap()
        };
        let (a, b) = (cloud(), cloud());
        let fast = nearest_neighbors(&a, &b, 1.5);
        let mut slow = Vec::new();
        for (i, p) in a.points.iter().enumerate() {
            let (j, d) = b
                .points
                .iter()
                .enumerate()
                .map(|(j, q)| (j, (q - p).norm_squared()))
                .fold((usize::MAX, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
            if d.sqrt() <= 1.5 {
                slow.push((i, j));
            }
        }
        assert_eq!(fast.iter().map(|m| (m.source, m.target)).collect::<Vec<_>>(), slow);
    }
}
