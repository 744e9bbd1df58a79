use cgm_meal::labels::trapezoid_weight;
use cgm_meal::trapezoid_labels;
use proptest::prelude::*;

#[test]
fn weights_at_offsets_zero_to_four() {
    let w: Vec<f64> = (0..5).map(|d| trapezoid_weight(d, 2, 2)).collect();
    assert_eq!(w, vec![1.0, 1.0, 1.0, 0.5, 0.0]);
}

#[test]
fn single_meal_profile_is_symmetric() {
    let y = trapezoid_labels(&[10], 21, 2, 2).values;
    let expect = [0.0, 0.5, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.0];
    assert_eq!(&y[6..15], &expect);
    assert!(y[..6].iter().chain(&y[15..]).all(|&v| v == 0.0));
}

#[test]
fn overlapping_meals_are_summed_then_clipped() {
    // Meals at 10 and 13: step 15 sums 0.5 + 1 and clips; step 12 sits on both plateaus.
    let y = trapezoid_labels(&[10, 13], 30, 2, 2).values;
    assert_eq!(y[12], 1.0);
    assert_eq!(y[15], 1.0);
    assert_eq!(y[16], 0.5);
    assert_eq!(y[7], 0.5);
    assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    // Ramps that overlap below the cap add up.
    let z = trapezoid_labels(&[10, 16], 30, 2, 2).values;
    assert_eq!(z[13], 1.0, "ramp 0.5 from each side sums to 1");
}

#[test]
fn no_meals_gives_zeros() {
    assert!(trapezoid_labels(&[], 50, 2, 2).values.iter().all(|&v| v == 0.0));
}

#[test]
fn meals_at_the_edges_are_truncated() {
    let y = trapezoid_labels(&[0, 9], 10, 2, 2).values;
    assert_eq!(y[0], 1.0);
    assert_eq!(y[9], 1.0);
    assert_eq!(y[3], 0.5);
    assert_eq!(y[6], 0.5);
}

proptest! {
    #[test]
    fn translation_equivariant(meals in prop::collection::vec(10usize..80, 0..5), k in 0usize..10, p in 0usize..4, r in 1usize..4) {
        let a = trapezoid_labels(&meals, 100, p, r).values;
        let shifted: Vec<usize> = meals.iter().map(|m| m + k).collect();
        let b = trapezoid_labels(&shifted, 100, p, r).values;
        for t in 0..90 {
            prop_assert_eq!(a[t], b[t + k]);
        }
    }

    #[test]
    fn labels_in_unit_interval(meals in prop::collection::vec(0usize..60, 0..8), p in 0usize..4, r in 0usize..4) {
        let y = trapezoid_labels(&meals, 60, p, r).values;
        for &m in &meals {
            prop_assert_eq!(y[m], 1.0);
        }
        prop_assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
