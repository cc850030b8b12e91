//! Pins the JSON shape `www/index.html` dereferences, so page and exports
//! can't drift apart silently.

use flowtrack_demo::{default_config, run_benchmark};

#[test]
fn benchmark_json_matches_page_expectations() {
    let out = run_benchmark(&default_config()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();

    assert!(v["width"].as_u64().unwrap() > 0);
    assert!(v["height"].as_u64().unwrap() > 0);
    assert!(v["tau"].as_f64().unwrap() > 0.0);

    let gt = v["gt"].as_array().unwrap();
    assert!(!gt.is_empty());
    assert_eq!(gt[0][0].as_array().unwrap().len(), 3, "gt entries are [x, y, occ01]");

    let boxes = v["occluder_boxes"].as_array().unwrap();
    assert_eq!(boxes.len(), gt.len());

    let trackers = v["trackers"].as_array().unwrap();
    assert_eq!(trackers.len(), 3);
    for t in trackers {
        assert!(t["name"].as_str().is_some());
        assert_eq!(t["frames"].as_array().unwrap().len(), gt.len());
        assert_eq!(t["frames"][0][0].as_array().unwrap().len(), 3);
        assert_eq!(t["mee"].as_array().unwrap().len(), gt.len());
        assert!(t["final_mee"].as_f64().is_some());
    }
}
