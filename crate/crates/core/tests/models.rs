//! The shipped model files are the canonical text of the zoo topologies.
//!
//! `ONINFER_BLESS=1 cargo test --test models` rewrites them.

use std::path::PathBuf;

use oninfer_core::graph::count_parameters;
use oninfer_core::modelfmt::{parse_model_text, serialize_model_text, zoo_model_file, ZooModelId};

fn path(id: ZooModelId) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models").join(format!("{id}.model"))
}

#[test]
fn shipped_models_match_zoo() {
    let bless = std::env::var_os("ONINFER_BLESS").is_some();
    for id in ZooModelId::ALL {
        let want = serialize_model_text(&zoo_model_file(id));
        if bless {
            std::fs::write(path(id), &want).unwrap();
        }
        let got = std::fs::read(path(id)).unwrap();
        assert!(got == want, "{} is stale", path(id).display());
        let m = parse_model_text(&got).unwrap();
        assert_eq!(Some(count_parameters(&m.graph)), m.metadata.reference_params, "{id}");
    }
}
