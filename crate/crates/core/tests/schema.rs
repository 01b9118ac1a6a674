//! The published configuration schema agrees with the configuration types.

use serde_json::Value;

use notematch::classify::{BoostParams, ForestParams, LinearParams, TreeParams};
use notematch::cohort::CohortConfig;
use notematch::corpus::SyntheticSpec;
use notematch::runner::{PipelineConfig, SplitConfig};
use notematch::textproc::WindowSpec;

fn schema() -> Value {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Every serialized field is declared and every declared default matches.
fn agrees(props: &Value, value: impl serde::Serialize, what: &str) {
    agrees_except(props, value, what, &[]);
}

fn agrees_except(props: &Value, value: impl serde::Serialize, what: &str, skip_defaults: &[&str]) {
    let value = serde_json::to_value(value).unwrap();
    let fields = value.as_object().unwrap();
    let declared = props.as_object().unwrap();
    for (k, v) in fields {
        let p = declared.get(k).unwrap_or_else(|| panic!("{what}.{k} missing from schema"));
        if let Some(d) = p.get("default").filter(|_| !skip_defaults.contains(&k.as_str())) {
            let same = match (d.as_f64(), v.as_f64()) {
                (Some(a), Some(b)) => a == b,
                _ => d == v,
            };
            assert!(same, "{what}.{k}: schema default {d}, code default {v}");
        }
    }
    for k in declared.keys() {
        assert!(k == "kind" || fields.contains_key(k), "{what}.{k} declared but unknown");
    }
}

#[test]
fn defaults_and_fields_match() {
    let s = schema();
    let defs = &s["$defs"];
    agrees(&defs["synthetic"]["properties"], SyntheticSpec::default(), "synthetic");
    agrees(&defs["cohort"]["properties"], CohortConfig::default(), "cohort");
    agrees(&defs["split"]["properties"], SplitConfig::default(), "split");
    agrees(&defs["setting"]["properties"]["window"]["properties"], WindowSpec::default(), "window");
    let clf = defs["classifier"]["oneOf"].as_array().unwrap();
    agrees(&clf[0]["properties"], LinearParams::default(), "lr");
    agrees(&clf[1]["properties"], TreeParams::default(), "tree");
    agrees(&clf[2]["properties"], ForestParams::default(), "forest");
    agrees(&clf[3]["properties"], BoostParams::default(), "boost");

    let cfg = PipelineConfig::from_json(
        r#"{"corpus": {"path": "c.jsonl"}, "settings": [{"name": "h", "embedder": {"kind": "hash", "dim": 8, "granularity": "token"}}]}"#,
    )
    .unwrap();
    agrees_except(&s["properties"], &cfg, "config", &["classifiers"]);
    let embedder = serde_json::to_value(&cfg.settings[0].embedder).unwrap();
    agrees(&defs["embedder"]["properties"], embedder, "embedder");
}
