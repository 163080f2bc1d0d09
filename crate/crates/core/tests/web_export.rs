use std::path::{Path, PathBuf};

use serde_json::Value;

use nsub_core::io::export::WEB_SCHEMA;
use nsub_core::io::{export_web, web_fixture};
use nsub_core::mlp::init_mlp;
use nsub_core::subspace::Fingerprint;
use nsub_core::systems::{build_system, SystemSpec};
use nsub_core::{SubspaceModel, SystemDef};

const SYSTEM: &str = r#"
name = "fixture_bar"
conditions = [{ name = "stiffness", min = 0.5, max = 2.0 }]
[[parts]]
kind = "fem2d"
name = "bar"
mesh = { grid = { nx = 5, ny = 2, width = 1.0, height = 0.2 } }
material = { youngs_modulus = 10.0, poisson_ratio = 0.3, density = 1.0 }
[[terms]]
type = "neohookean"
part = "bar"
stiffness_condition = "stiffness"
[[terms]]
type = "pin"
part = "bar"
select = { min = 0 }
weight = 100.0
"#;

fn fixture_inputs() -> (SubspaceModel, SystemDef) {
    let spec: SystemSpec = toml::from_str(SYSTEM).unwrap();
    let sys = build_system(&spec).unwrap();
    let mlp = init_mlp(&[3, 16, 16, sys.n()], 11).unwrap();
    let model = SubspaceModel::new(mlp, 2, 1, 0.1, Fingerprint::new(sys.n(), "fixture_bar", SYSTEM)).unwrap();
    (model, sys)
}

fn fixture_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/web_fixture.json")
}

fn shipped() -> Value {
    serde_json::from_str(&std::fs::read_to_string(fixture_path()).unwrap()).unwrap()
}

fn assert_close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()), "{path}: {x} vs {y}");
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}: length");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_close(u, v, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>(), "{path}: keys");
            for (k, u) in x {
                assert_close(u, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

#[test]
fn regenerated_fixture_matches_shipped() {
    let (model, sys) = fixture_inputs();
    let fresh = web_fixture(&model, &sys, 5).unwrap();
    if std::env::var_os("NSUB_REGEN_FIXTURES").is_some() {
        std::fs::write(fixture_path(), serde_json::to_string_pretty(&fresh).unwrap() + "\n").unwrap();
    }
    assert_close(&fresh, &shipped(), "fixture");
}

#[test]
fn export_validates_against_schema() {
    let schema: Value = serde_json::from_str(WEB_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let (model, sys) = fixture_inputs();
    let doc = export_web(&model, &sys).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert!(validator.is_valid(&shipped()["model"]));

    let mut broken = doc.clone();
    broken["activation"] = "relu".into();
    assert!(!validator.is_valid(&broken));
    broken = doc;
    broken.as_object_mut().unwrap().remove("layers");
    assert!(!validator.is_valid(&broken));
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Forward pass straight from the exported JSON, the way a browser client reads it.
fn json_forward(doc: &Value, input: &[f64]) -> Vec<f64> {
    let layers = doc["layers"].as_array().unwrap();
    let mut x = input.to_vec();
    for (l, layer) in layers.iter().enumerate() {
        let bias = layer["bias"].as_array().unwrap();
        let rows = layer["weights"].as_array().unwrap();
        x = rows
            .iter()
            .zip(bias)
            .map(|(row, b)| {
                let s: f64 = row.as_array().unwrap().iter().zip(&x).map(|(w, v)| w.as_f64().unwrap() * v).sum();
                let pre = s + b.as_f64().unwrap();
                if l + 1 < layers.len() {
                    elu(pre)
                } else {
                    pre
                }
            })
            .collect();
    }
    x
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn json_forward_reproduces_native_outputs() {
    let fx = shipped();
    let cases = fx["forward_cases"].as_array().unwrap();
    assert_eq!(cases.len(), 10);
    for case in cases {
        let out = json_forward(&fx["model"], &floats(&case["input"]));
        for (a, b) in out.iter().zip(floats(&case["output"])) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

/// Hermite form with tangents `(p[i+1] - p[i-1]) / 2`.
fn hermite_path(keys: &[Vec<f64>], per: usize, cyclic: bool) -> Vec<Vec<f64>> {
    let k = keys.len() as isize;
    let key = |i: isize| -> &Vec<f64> {
        if cyclic {
            &keys[i.rem_euclid(k) as usize]
        } else {
            &keys[i.clamp(0, k - 1) as usize]
        }
    };
    let segs = if cyclic { k } else { k - 1 };
    let mut out = Vec::new();
    for s in 0..segs {
        for j in 0..per {
            let t = j as f64 / per as f64;
            let h00 = 2.0 * t.powi(3) - 3.0 * t * t + 1.0;
            let h10 = t.powi(3) - 2.0 * t * t + t;
            let h01 = -2.0 * t.powi(3) + 3.0 * t * t;
            let h11 = t.powi(3) - t * t;
            out.push(
                (0..keys[0].len())
                    .map(|d| {
                        let m0 = 0.5 * (key(s + 1)[d] - key(s - 1)[d]);
                        let m1 = 0.5 * (key(s + 2)[d] - key(s)[d]);
                        h00 * key(s)[d] + h10 * m0 + h01 * key(s + 1)[d] + h11 * m1
                    })
                    .collect(),
            );
        }
    }
    if !cyclic {
        out.push(keys[keys.len() - 1].clone());
    }
    out
}

#[test]
fn fixture_splines_match_hermite_oracle() {
    let fx = shipped();
    for spline in fx["splines"].as_array().unwrap() {
        let keys: Vec<Vec<f64>> = spline["keyframes"].as_array().unwrap().iter().map(floats).collect();
        let per = spline["samples_per_segment"].as_u64().unwrap() as usize;
        let cyclic = spline["cyclic"].as_bool().unwrap();
        let samples: Vec<Vec<f64>> = spline["samples"].as_array().unwrap().iter().map(floats).collect();
        let expect = hermite_path(&keys, per, cyclic);
        let count = if cyclic { keys.len() * per } else { (keys.len() - 1) * per + 1 };
        assert_eq!(samples.len(), count);
        assert_eq!(expect.len(), count);
        for (a, b) in samples.iter().flatten().zip(expect.iter().flatten()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
