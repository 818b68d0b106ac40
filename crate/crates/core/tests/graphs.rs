//! Random-graph properties: validity, format round trips, op-count agreement.

mod common;

use common::{random_graph, random_inputs, rng};
use oninfer_core::graph::{count_operations, infer_shapes, validate_graph, OpCountConvention};
use oninfer_core::interpret::{run_graph, run_graph_with};
use oninfer_core::modelfmt::{
    build_zoo_model, load_weight_blob, parse_model_text, save_weight_blob, serialize_model_text,
    ModelFile, ModelMetadata, WeightInit, ZooModelId,
};

const GRAPHS: u64 = 100;

#[test]
fn random_graphs_are_valid_and_run() {
    for seed in 0..GRAPHS {
        let g = random_graph(seed);
        assert!(validate_graph(&g).is_ok(), "seed {seed}: {:?}", validate_graph(&g));
        let shapes = infer_shapes(&g).unwrap();
        let out = run_graph(&g, &random_inputs(&g, &mut rng(seed)), false).unwrap();
        assert_eq!(out.outputs[0].shape(), &shapes[&g.outputs[0]]);
    }
}

#[test]
fn random_graphs_round_trip() {
    for seed in 0..GRAPHS {
        let g = random_graph(seed);
        let m = ModelFile::new(format!("g{seed}"), g.clone(), ModelMetadata::default());
        let text = serialize_model_text(&m);
        let back = parse_model_text(&text).unwrap();
        assert_eq!(serialize_model_text(&back), text, "seed {seed}");
        let loaded = load_weight_blob(&save_weight_blob(&g), &back.graph).unwrap();
        assert_eq!(loaded, g, "seed {seed}");
    }
}

#[test]
fn random_graph_op_counts_match_tally() {
    let conventions = [
        OpCountConvention::default(),
        OpCountConvention {
            mac_ops: 1,
            bias_ops_per_output: 0,
            pool_ops_per_comparison: 1,
            activation_ops_per_element: 2,
            compare_ops_per_element: 3,
            concat_flatten_ops_per_element: 1,
        },
    ];
    for seed in 0..GRAPHS {
        let g = random_graph(seed);
        let x = random_inputs(&g, &mut rng(seed));
        for conv in conventions {
            let trace = run_graph_with(&g, &x, true, conv).unwrap().trace.unwrap();
            assert_eq!(trace.total_ops(), count_operations(&g, &conv).unwrap(), "seed {seed}");
        }
    }
}

#[test]
fn zoo_op_counts_match_tally() {
    for id in ZooModelId::ALL {
        let g = build_zoo_model(id, &WeightInit::SeededUniform(1)).unwrap();
        let x = random_inputs(&g, &mut rng(9));
        let trace = run_graph(&g, &x, true).unwrap().trace.unwrap();
        let conv = OpCountConvention::default();
        assert_eq!(trace.total_ops(), count_operations(&g, &conv).unwrap(), "{id}");
    }
}
