//! JSON export for the browser explorer, and the parity fixture shared with it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::spline::catmull_rom_path;
use crate::subspace::SubspaceModel;
use crate::systems::{RenderKind, SystemDef};

pub const WEB_FORMAT: &str = "nsub-web";
pub const WEB_FORMAT_VERSION: u32 = 1;
pub const LATENT_RANGE: [f64; 2] = [-2.5, 2.5];

/// The shipped JSON Schema for [`export_web`] documents.
pub const WEB_SCHEMA: &str = include_str!("../../schema/web_export.schema.json");

fn render_json(sys: &SystemDef) -> Vec<Value> {
    let parts = sys.render();
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let end = parts.get(i + 1).map_or(sys.n(), |q| q.offset);
            match &p.kind {
                RenderKind::Vector => json!({
                    "kind": "vector",
                    "name": p.name,
                    "offset": p.offset,
                    "length": end - p.offset,
                }),
                RenderKind::Mesh { dim, faces } => json!({
                    "kind": "mesh",
                    "name": p.name,
                    "offset": p.offset,
                    "dim": dim,
                    "vertex_count": (end - p.offset) / dim,
                    "faces": faces,
                }),
                RenderKind::Rigid { bodies } => json!({
                    "kind": "rigid",
                    "name": p.name,
                    "offset": p.offset,
                    "bodies": bodies
                        .iter()
                        .map(|(v, f)| json!({ "vertices": v, "faces": f }))
                        .collect::<Vec<_>>(),
                }),
            }
        })
        .collect()
}

/// Single JSON document holding the network weights, render geometry and
/// condition ranges. Fails if the model does not fit the system.
pub fn export_web(model: &SubspaceModel, sys: &SystemDef) -> Result<Value> {
    model.check_system(sys)?;
    let mlp = &model.mlp;
    let layers: Vec<Value> = (0..mlp.num_layers())
        .map(|l| {
            let cols = mlp.layer_sizes()[l];
            let rows: Vec<&[f64]> = mlp.weights(l).chunks_exact(cols).collect();
            json!({ "weights": rows, "bias": mlp.bias(l) })
        })
        .collect();
    let conditions: Vec<Value> = if model.condition_dim > 0 {
        sys.conditions()
            .iter()
            .map(|c| json!({ "name": c.name, "min": c.min, "max": c.max }))
            .collect()
    } else {
        Vec::new()
    };
    Ok(json!({
        "format": WEB_FORMAT,
        "version": WEB_FORMAT_VERSION,
        "system": model.fingerprint.system,
        "dims": { "n": model.n(), "latent": model.latent_dim, "condition": model.condition_dim },
        "sigma": model.sigma,
        "activation": "elu",
        "layer_sizes": mlp.layer_sizes(),
        "layers": layers,
        "render": render_json(sys),
        "conditions": conditions,
        "latent_range": LATENT_RANGE,
    }))
}

/// Shared test vectors: the exported model, 10 inputs with native forward
/// outputs, and cyclic and open Catmull-Rom samplings.
pub fn web_fixture(model: &SubspaceModel, sys: &SystemDef, seed: u64) -> Result<Value> {
    let export = export_web(model, sys)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = model.latent_dim + model.condition_dim;
    let mut cases = Vec::with_capacity(10);
    for i in 0..10 {
        let input: Vec<f64> = if i == 0 {
            vec![0.0; width]
        } else {
            (0..width).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let output = model.mlp.forward(&input)?;
        cases.push(json!({ "input": input, "output": output }));
    }
    let keys: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..model.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let spline = |cyclic: bool| -> Result<Value> {
        let samples = catmull_rom_path(&keys, 8, cyclic)?;
        Ok(json!({ "keyframes": keys, "samples_per_segment": 8, "cyclic": cyclic, "samples": samples }))
    };
    Ok(json!({
        "model": export,
        "forward_cases": cases,
        "splines": [spline(true)?, spline(false)?],
    }))
}

/// Parses an exported document back into `(layer_sizes, flat parameters)`.
pub fn parse_web_layers(doc: &Value) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = || Error::Format("malformed web export".into());
    let sizes: Vec<usize> = doc["layer_sizes"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|v| v.as_u64().map(|x| x as usize).ok_or_else(bad))
        .collect::<Result<_>>()?;
    let mut data = Vec::new();
    for layer in doc["layers"].as_array().ok_or_else(bad)? {
        for row in layer["weights"].as_array().ok_or_else(bad)? {
            for v in row.as_array().ok_or_else(bad)? {
                data.push(v.as_f64().ok_or_else(bad)?);
            }
        }
        for v in layer["bias"].as_array().ok_or_else(bad)? {
            data.push(v.as_f64().ok_or_else(bad)?);
        }
    }
    Ok((sizes, data))
}
