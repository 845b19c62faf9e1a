//! Property tests for geometry, rank statistics, metrics and alignment.

use depthlift_core::camera::{back_project, project, CameraIntrinsics};
use depthlift_core::eval::{mpjpe, procrustes_align};
use depthlift_core::net::NormStats;
use depthlift_core::skeleton::{FrameKind, JointId, Pose3D, N_JOINTS};
use depthlift_core::stats::{average_ranks, kendall_counts, kendall_tau, spearman};
use nalgebra::{Rotation3, Vector3};
use ndarray::Array2;
use proptest::prelude::*;

fn pose() -> impl Strategy<Value = Pose3D> {
    prop::collection::vec(prop::array::uniform3(-1000.0..1000.0f64), N_JOINTS).prop_map(|v| {
        Pose3D::new(
            std::array::from_fn(|j| Vector3::from(v[j])),
            FrameKind::Camera,
        )
    })
}

fn rigid() -> impl Strategy<Value = (Rotation3<f64>, Vector3<f64>)> {
    (
        prop::array::uniform3(-3.0..3.0f64),
        prop::array::uniform3(-2000.0..2000.0f64),
    )
        .prop_map(|(r, t)| (Rotation3::new(Vector3::from(r)), Vector3::from(t)))
}

/// Paired samples with deliberate ties (small integer range).
fn paired(max_n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(0..8i32, n),
            prop::collection::vec(0..8i32, n),
        )
            .prop_map(|(a, b)| {
                let mut x: Vec<f64> = a.into_iter().map(f64::from).collect();
                let mut y: Vec<f64> = b.into_iter().map(f64::from).collect();
                x[0] = -1.0;
                y[1] = -1.0;
                (x, y)
            })
    })
}

fn monotone(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.powi(3) + 2.0 * x + 7.0).collect()
}

proptest! {
    #[test]
    fn projection_round_trip(
        x in -0.8..0.8f64,
        y in -0.8..0.8f64,
        z in 1.0..1e5f64,
        fx in 100.0..3000.0f64,
        fy in 100.0..3000.0f64,
        cx in 0.0..2000.0f64,
        cy in 0.0..2000.0f64,
    ) {
        let k = CameraIntrinsics::new(fx, fy, cx, cy).unwrap();
        let p = Vector3::new(x * z, y * z, z);
        let back = back_project(&project(&p, &k).unwrap(), z, &k).unwrap();
        prop_assert!((back - p).amax() < 1e-9 * p.amax().max(1.0));
    }

    #[test]
    fn rank_statistics_ignore_monotone_transforms((x, y) in paired(60)) {
        let s = spearman(&x, &y).unwrap();
        let k = kendall_tau(&x, &y).unwrap();
        let s2 = spearman(&monotone(&x), &y).unwrap();
        let k2 = kendall_tau(&x, &monotone(&y)).unwrap();
        prop_assert!((s.statistic - s2.statistic).abs() < 1e-12);
        prop_assert_eq!(k.statistic, k2.statistic);
    }

    #[test]
    fn rank_statistics_are_symmetric((x, y) in paired(60)) {
        prop_assert!((spearman(&x, &y).unwrap().statistic - spearman(&y, &x).unwrap().statistic).abs() < 1e-12);
        prop_assert_eq!(kendall_tau(&x, &y).unwrap(), kendall_tau(&y, &x).unwrap());
    }

    #[test]
    fn kendall_counts_match_pair_counting((x, y) in paired(80)) {
        let c = kendall_counts(&x, &y);
        let (mut s, mut tx, mut ty) = (0i64, 0i64, 0i64);
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let dx = (x[i] - x[j]).partial_cmp(&0.0).unwrap() as i64;
                let dy = (y[i] - y[j]).partial_cmp(&0.0).unwrap() as i64;
                s += dx * dy;
                tx += i64::from(dx == 0);
                ty += i64::from(dy == 0);
            }
        }
        prop_assert_eq!((c.s, c.x_ties, c.y_ties), (s, tx, ty));
    }

    #[test]
    fn average_ranks_sum(v in prop::collection::vec(0..20i32, 1..100)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let n = v.len() as f64;
        let total: f64 = average_ranks(&v).iter().sum();
        prop_assert!((total - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn mpjpe_is_a_metric(a in pose(), b in pose(), c in pose()) {
        let j = JointId::ALL;
        let ab = mpjpe(&a, &b, &j).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(mpjpe(&a, &a, &j).unwrap(), 0.0);
        prop_assert!((ab - mpjpe(&b, &a, &j).unwrap()).abs() < 1e-9);
        let bc = mpjpe(&b, &c, &j).unwrap();
        prop_assert!(mpjpe(&a, &c, &j).unwrap() <= ab + bc + 1e-9);
    }

    #[test]
    fn alignment_undoes_rigid_motion(gt in pose(), (r, t) in rigid(), (r2, t2) in rigid()) {
        let moved = gt.map(FrameKind::Camera, |p| r * p + t);
        let a = procrustes_align(&moved, &gt).unwrap();
        prop_assert!(mpjpe(&a.aligned, &gt, &JointId::ALL).unwrap() < 1e-7);
        prop_assert!((a.rotation.determinant() - 1.0).abs() < 1e-9);
        // aligning any rigid copy of a prediction gives the same result
        let noisy = gt.map(FrameKind::Camera, |p| p + Vector3::new(p.y, p.z, p.x) * 0.05);
        let direct = procrustes_align(&noisy, &gt).unwrap().aligned;
        let via = procrustes_align(&noisy.map(FrameKind::Camera, |p| r2 * p + t2), &gt).unwrap().aligned;
        prop_assert!(mpjpe(&direct, &via, &JointId::ALL).unwrap() < 1e-6);
    }

    #[test]
    fn standardization_inverts(rows in prop::collection::vec(prop::array::uniform4(-500.0..500.0f64), 2..40)) {
        let x = Array2::from_shape_fn((rows.len(), 4), |(i, j)| rows[i][j]);
        let y = x.mapv(|v| 2.0 * v - 1.0);
        let stats = NormStats::compute(&x, &y).unwrap();
        let back = stats.destandardize_inputs(&stats.standardize_inputs(&x).unwrap()).unwrap();
        let back_y = stats.destandardize_outputs(&stats.standardize_outputs(&y).unwrap()).unwrap();
        prop_assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-9));
        prop_assert!(back_y.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-9));
    }
}
