mod common;

#[test]
fn imputing_zero_sentinels_does_not_hurt() {
    let (base, after) = common::diabetes_scores();
    let (base, after) = (base.expect("baseline runs"), after.expect("imputed program runs"));
    let (source, _) = common::diabetes_source();
    println!("{} baseline={base:.6} after={after:.6}", source.display());
    assert!(after >= base - 0.01, "baseline {base} after {after}");
    if source.ends_with("pima_mass.csv") {
        let (gb, ga) = common::DIABETES_GOLDEN_STAND_IN;
        assert!((base - gb).abs() < 5e-7 && (after - ga).abs() < 5e-7, "golden values moved: {base} {after}");
    }
}
