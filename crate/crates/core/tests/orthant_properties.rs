use proptest::prelude::*;
use vgx_core::orthant::{pareto_maxima, union_integral, PointSet};

fn points(max_d: usize, max_m: usize) -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (1usize..=max_d)
        .prop_flat_map(move |d| (Just(d), prop::collection::vec(prop::collection::vec(-3.0f64..1.5, d), 1..=max_m)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn adding_a_point_never_decreases((d, pts) in points(4, 12), extra in prop::collection::vec(-3.0f64..1.5, 4)) {
        let ps = PointSet::from_points(&pts).unwrap();
        let mut more = ps.clone();
        more.push(&extra[..d]).unwrap();
        let (a, b) = (union_integral(&ps), union_integral(&more));
        prop_assume!(a.exact && b.exact);
        prop_assert!(b.value >= a.value * (1.0 - 1e-12));
    }

    #[test]
    fn nonnegative_corner_gives_at_least_one((_d, mut pts) in points(4, 10), lift in prop::collection::vec(0.0f64..1.0, 4)) {
        let d = pts[0].len();
        pts.push(lift[..d].to_vec());
        let r = union_integral(&PointSet::from_points(&pts).unwrap());
        prop_assert!(r.value >= 1.0 - 1e-12);
    }

    #[test]
    fn pruning_leaves_the_integral_unchanged((_d, pts) in points(4, 15)) {
        let ps = PointSet::from_points(&pts).unwrap();
        let pruned = pareto_maxima(&ps);
        prop_assert!(pruned.len() <= ps.len());
        let (a, b) = (union_integral(&ps), union_integral(&pruned));
        prop_assert_eq!(a.value, b.value);
    }
}
