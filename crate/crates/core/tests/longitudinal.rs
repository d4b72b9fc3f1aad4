mod common;

#[test]
fn growth_series_and_t_test_contracts() {
    println!("{}", common::longitudinal_suite(11).unwrap());
}

#[test]
fn integration_oracle_agrees_with_known_quantiles() {
    // 97.5% quantile of t with 10 degrees of freedom
    assert!((common::oracle_t_pvalue(2.228138852, 10.0) - 0.05).abs() < 1e-8);
    assert_eq!(common::oracle_t_pvalue(0.0, 4.0), 1.0);
}
