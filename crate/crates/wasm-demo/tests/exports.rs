use ntd_wasm_demo::{mixing_json, spectrum_ratio_json, td_curve_json};
use serde_json::Value;

fn parse(s: Result<String, String>) -> Value {
    serde_json::from_str(&s.unwrap()).unwrap()
}

#[test]
fn spectrum_has_one_entry_per_width() {
    let v = parse(spectrum_ratio_json(&[16, 64], 2, 4, 2, 1));
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for (row, m) in rows.iter().zip([16, 64]) {
        assert_eq!(row["m"], m);
        assert!(row["mean_ratio"].as_f64().unwrap() >= 1.0);
        assert_eq!(row["trials"].as_array().unwrap().len(), 2);
    }
    assert!(spectrum_ratio_json(&[64, 16], 2, 4, 1, 1).is_err());
    assert!(spectrum_ratio_json(&[1 << 20], 2, 4, 1, 1).is_err());
}

#[test]
fn td_curve_is_logged_and_error_drops() {
    let v = parse(td_curve_json(64, 2000, 500, 10.0, 0));
    assert!(v["lambda0"].as_f64().unwrap() > 0.0);
    let pts = v["points"].as_array().unwrap();
    let ts: Vec<u64> = pts.iter().map(|p| p["t"].as_u64().unwrap()).collect();
    assert_eq!(ts, [0, 500, 1000, 1500, 2000]);
    let first = pts[0]["eval_error"].as_f64().unwrap();
    let last = pts[4]["eval_error"].as_f64().unwrap();
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn mixing_matches_the_closed_form_rate() {
    let v = parse(mixing_json(0.85, 30));
    assert_eq!(v["profile"].as_array().unwrap().len(), 31);
    assert!((v["fit"]["rho"].as_f64().unwrap() - 0.7).abs() < 1e-8);
    assert!(mixing_json(1.5, 10).is_err());
}
