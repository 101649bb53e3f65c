mod common;

use gazesep::losses::{self, PairSimilarity};
use gazesep::{angular_error_deg, cosine_similarity, GazeDirection};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

fn gaze() -> impl Strategy<Value = GazeDirection> {
    vector(3).prop_map(|v| GazeDirection::new([v[0], v[1], v[2]]).unwrap())
}

proptest! {
    #[test]
    fn cosine_is_symmetric((a, b) in (1usize..32).prop_flat_map(|d| (vector(d), vector(d)))) {
        let ab = cosine_similarity(&a, &b).unwrap();
        let ba = cosine_similarity(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn cosine_ignores_positive_scale((a, b) in (1usize..32).prop_flat_map(|d| (vector(d), vector(d))), s in 1e-3f64..1e3) {
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        let c0 = cosine_similarity(&a, &b).unwrap();
        let c1 = cosine_similarity(&scaled, &b).unwrap();
        prop_assert!((c0 - c1).abs() < 1e-9);
    }

    #[test]
    fn angular_error_obeys_the_triangle_inequality(a in gaze(), b in gaze(), c in gaze()) {
        let ab = angular_error_deg(&a, &b);
        let bc = angular_error_deg(&b, &c);
        let ac = angular_error_deg(&a, &c);
        prop_assert!(ac <= ab + bc + 1e-6);
    }

    #[test]
    fn gaze_loss_ignores_prediction_scale(p in vector(3), g in gaze(), s in 1e-3f64..1e3) {
        let scaled: Vec<f64> = p.iter().map(|x| x * s).collect();
        let l0 = losses::gaze_loss(&p, &g).unwrap();
        let l1 = losses::gaze_loss(&scaled, &g).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-6);
    }

    #[test]
    fn rank_pair_sign_is_antisymmetric(s1g in -1.0f64..1.0, s2g in -1.0f64..1.0, s1f in -1.0f64..1.0, s2f in -1.0f64..1.0) {
        prop_assert_eq!(losses::rank_sign(s1g, s2g), -losses::rank_sign(s2g, s1g));
        let p1 = PairSimilarity { i: 0, j: 1, s_g: s1g, s_f: s1f };
        let p2 = PairSimilarity { i: 0, j: 2, s_g: s2g, s_f: s2f };
        let a = losses::rank_loss_pair(&p1, &p2);
        // Swapping the pairs flips the sign and the feature difference.
        prop_assert_eq!(a, losses::rank_loss_pair(&p2, &p1));
        // Flipping the label order alone leaves at most one hinge active.
        let q1 = PairSimilarity { s_g: s2g, ..p1 };
        let q2 = PairSimilarity { s_g: s1g, ..p2 };
        let b = losses::rank_loss_pair(&q1, &q2);
        prop_assert!(a >= 0.0 && b >= 0.0);
        prop_assert_eq!(a * b, 0.0);
    }

    #[test]
    fn softmax_is_shift_invariant(xs in prop::collection::vec(-20.0f64..20.0, 1..40), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let a = losses::softmax(&xs);
        let b = losses::softmax(&shifted);
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn yaw_pitch_round_trips(yaw in -3.0f64..3.0, pitch in -1.5f64..1.5) {
        let g = GazeDirection::from_yaw_pitch(yaw, pitch).unwrap();
        let (y, p) = g.to_yaw_pitch();
        prop_assert!((y - yaw).abs() < 1e-9 && (p - pitch).abs() < 1e-9);
    }
}
