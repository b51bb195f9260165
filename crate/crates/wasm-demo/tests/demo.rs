use dipo_wasm_demo::{entropy_curve, psd_explorer, reallocate_group};
use serde_json::Value;

fn parse(s: String) -> Value {
    serde_json::from_str(&s).expect("valid JSON")
}

#[test]
fn separated_clusters_select_a_threshold_between_them() {
    let v = parse(psd_explorer(200, 200, 2.0, 0.4, 20, 1));
    assert_eq!(v["reason"], "Selected");
    let tau = v["tau_star"].as_f64().unwrap();
    let max_correct = v["correct"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).fold(f64::MIN, f64::max);
    let min_error = v["error"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).fold(f64::MAX, f64::min);
    assert!(max_correct < tau && tau < min_error);
    assert!(!v["candidates"].as_array().unwrap().is_empty());
}

#[test]
fn small_queue_is_insufficient() {
    let v = parse(psd_explorer(5, 5, 1.0, 0.5, 20, 0));
    assert_eq!(v["reason"], "InsufficientData");
    assert!(v["tau_star"].is_null());
}

#[test]
fn psd_is_deterministic_and_validates() {
    assert_eq!(psd_explorer(50, 50, 0.5, 1.0, 5, 7), psd_explorer(50, 50, 0.5, 1.0, 5, 7));
    assert!(parse(psd_explorer(10, 10, 1.0, -1.0, 5, 0))["error"].is_string());
    assert!(parse(psd_explorer(20_000, 1, 1.0, 1.0, 5, 0))["error"].is_string());
}

#[test]
fn hard_group_below_threshold_is_explored() {
    let v = parse(reallocate_group("0,0,0,0", "1.2 1.9 1.4 1.1", 2.0));
    assert_eq!(v["class"], "Hard");
    assert_eq!(v["direction"], "EncourageExploration");
    assert_eq!(v["changed_index"], 1);
    assert_eq!(v["rewards_r"], serde_json::json!([0, 1, 0, 0]));
    let adv: Vec<f64> = v["advantages_r"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!((adv.iter().sum::<f64>()).abs() < 1e-12);
    assert!(adv[1] > 0.0);
}

#[test]
fn easy_group_above_threshold_is_exploited() {
    let v = parse(reallocate_group("1,1,1", "2.5,2.1,2.2", 2.0));
    assert_eq!(v["direction"], "EncourageExploitation");
    assert_eq!(v["rewards_r"], serde_json::json!([0, 1, 1]));
}

#[test]
fn missing_threshold_and_normal_groups() {
    let v = parse(reallocate_group("1,1,1", "2.5,2.1,2.2", f64::NAN));
    assert_eq!(v["direction"], "Unchanged");
    let v = parse(reallocate_group("1,0,1", "2.5,2.1,2.2", 2.0));
    assert_eq!(v["direction"], "ZeroedNormal");
    assert_eq!(v["advantages_r"], serde_json::json!([0.0, 0.0, 0.0]));
}

#[test]
fn malformed_groups_are_errors() {
    assert!(parse(reallocate_group("1,2", "1,1", 1.0))["error"].is_string());
    assert!(parse(reallocate_group("1,0", "1", 1.0))["error"].is_string());
    assert!(parse(reallocate_group("1,x", "1,1", 1.0))["error"].is_string());
}

#[test]
fn entropy_moves_in_the_requested_direction() {
    let up = parse(entropy_curve("reward", 150, 100.0, 0));
    let down = parse(entropy_curve("penalty", 150, 100.0, 0));
    assert_eq!(up["h_avg"].as_array().unwrap().len(), 150);
    assert!(up["spearman"].as_f64().unwrap() >= 0.9, "{}", up["spearman"]);
    assert!(down["spearman"].as_f64().unwrap() <= -0.9, "{}", down["spearman"]);
    assert!(parse(entropy_curve("sideways", 10, 1.0, 0))["error"].is_string());
}
