// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::collections::BTreeSet;

use common::{close, model, queries, to_arr, RefNet};
use gcc_core::{load_model, mask_channel, AblationSet, EdgeMode, GccError, NeuronRef, Tensor};
use proptest::prelude::*;

#[test]
fn logits_match_nested_loop_reference() {
    let net = RefNet::load();
    let m = model();
    for pos in 0..20 {
        let x = queries().sample(pos);
        let trace = m.forward(&x).unwrap();
        let (probes, logits) = net.forward(x.data(), x.shape());
        let scale = logits.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in trace.logits.data().iter().zip(&logits) {
            assert!(
                (f64::from(*a) - b).abs() <= 1e-5 * scale,
                "q{pos}: {a} vs {b}"
            );
        }
        for (p, oracle) in trace.probes.iter().zip(&probes) {
            assert_eq!(p.shape(), oracle.shape.as_slice());
            for (a, b) in p.data().iter().zip(&oracle.data) {
                assert!(close(f64::from(*a), *b, 1e-5));
            }
        }
    }
}

#[test]
fn logits_match_exported_reference() {
    let text = std::fs::read_to_string(common::fixture("reference_logits.json")).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    let ids = doc["queries"].as_array().unwrap();
    let rows = doc["logits"].as_array().unwrap();
    assert!(!ids.is_empty());
    for (id, row) in ids.iter().zip(rows) {
        let pos = id.as_u64().unwrap() as usize;
        let logits = model().forward(&queries().sample(pos)).unwrap().logits;
        let want: Vec<f64> = row
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap())
            .collect();
        let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in logits.data().iter().zip(&want) {
            assert!(
                (f64::from(*a) - b).abs() <= 1e-5 * scale,
                "q{pos}: {a} vs {b}"
            );
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let x = queries().sample(3);
    let a = model().forward(&x).unwrap();
    let b = model().forward(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn forward_from_composes_exactly() {
    let m = model();
    let t = m.forward(&queries().sample(7)).unwrap();
    for p in 0..m.probe_count() - 1 {
        assert_eq!(&m.forward_from(p, t.probe(p)).unwrap(), t.probe(p + 1));
    }
    assert!(matches!(
        m.forward_from(m.probe_count() - 1, t.probe(m.probe_count() - 1)),
        Err(GccError::NoSuccessorProbe(_))
    ));
}

#[test]
fn forward_from_masked_matches_reference_span() {
    let net = RefNet::load();
    let m = model();
    let t = m.forward(&queries().sample(11)).unwrap();
    for c in [0, 5, 15] {
        let masked = mask_channel(t.probe(0), c).unwrap();
        let got = m.forward_from(0, &masked).unwrap();
        let want = net.run_span(0, &to_arr(&masked));
        // f32 engine against an f64 oracle: tolerance relative to the map's range
        let scale = want.data.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (a, b) in got.data().iter().zip(&want.data) {
            assert!((f64::from(*a) - b).abs() <= 1e-6 * scale, "{a} vs {b}");
        }
    }
}

#[test]
fn mask_channel_examples() {
    let t = Tensor::new(vec![2, 1, 2], vec![1.0, 1.0, 2.0, 2.0]).unwrap();
    let m = mask_channel(&t, 0).unwrap();
    assert_eq!(m.data(), &[0.0, 0.0, 2.0, 2.0]);
    assert_eq!(t.data(), &[1.0, 1.0, 2.0, 2.0]);
    assert_eq!(mask_channel(&m, 0).unwrap(), m);
    assert!(matches!(
        mask_channel(&t, 2),
        Err(GccError::BadChannel { .. })
    ));
}

#[test]
fn trivial_ablations_are_no_ops() {
    let m = model();
    let x = queries().sample(2);
    let plain = m.forward(&x).unwrap().logits;
    assert_eq!(m.ablate_forward(&x, &AblationSet::new()).unwrap(), plain);
    let ones = AblationSet::scaling([NeuronRef::new(1, 3), NeuronRef::new(2, 9)], 1.0);
    assert_eq!(m.ablate_forward(&x, &ones).unwrap(), plain);
}

#[test]
fn scale_zero_equals_zero_mode() {
    let m = model();
    let x = queries().sample(5);
    let ns = [
        NeuronRef::new(0, 1),
        NeuronRef::new(1, 30),
        NeuronRef::new(2, 4),
    ];
    assert_eq!(
        m.ablate_forward(&x, &AblationSet::zeroing(ns)).unwrap(),
        m.ablate_forward(&x, &AblationSet::scaling(ns, 0.0))
            .unwrap()
    );
}

#[test]
fn ablation_leaves_earlier_probes_alone() {
    let m = model();
    let x = queries().sample(9);
    let plain = m.forward(&x).unwrap();
    let t = m
        .ablate_trace(&x, &AblationSet::zeroing([NeuronRef::new(1, 2)]))
        .unwrap();
    assert_eq!(t.probe(0), plain.probe(0));
    assert!(t.probe(1).channel(2).iter().all(|&v| v == 0.0));
    assert_eq!(t.probe(1).channel(3), plain.probe(1).channel(3));
}

#[test]
fn zeroing_first_probe_matches_layerwise_reference() {
    let net = RefNet::load();
    let m = model();
    let x = queries().sample(0);
    let all = (0..m.probes()[0].channels()).map(|c| NeuronRef::new(0, c));
    let got = m.ablate_forward(&x, &AblationSet::zeroing(all)).unwrap();
    let probe_at = net.layers.iter().position(|(_, p)| *p).unwrap();
    let shape = m.probes()[0].shape.clone();
    let mut a = common::Arr {
        data: vec![0.0; shape.iter().product()],
        shape,
    };
    for (l, _) in &net.layers[probe_at + 1..] {
        a = RefNet::apply(l, &a);
    }
    for (g, w) in got.data().iter().zip(&a.data) {
        assert!(close(f64::from(*g), *w, 1e-5));
    }
}

#[test]
fn ablate_from_probe_matches_full_forward() {
    let m = model();
    let x = queries().sample(4);
    let t = m.forward(&x).unwrap();
    let set = AblationSet::zeroing([NeuronRef::new(1, 7), NeuronRef::new(2, 0)])
        .scale(NeuronRef::new(2, 3), 2.0);
    assert_eq!(
        m.ablate_from_probe(0, t.probe(0), &set).unwrap(),
        m.ablate_forward(&x, &set).unwrap()
    );
    assert_eq!(
        m.ablate_from_probe(1, t.probe(1), &set).unwrap(),
        m.ablate_forward(&x, &set).unwrap()
    );
}

const DENSE: &str = r#"
input_shape = [2]
class_count = 2

[[layers]]
kind = "dense"
shape = [2, 2]
weight_offset = 0
weight_len = 4
is_probe = true

[[layers]]
kind = "dense"
shape = [2, 2]
weight_offset = 4
weight_len = 4
is_probe = true
"#;

fn blob(ws: &[f32]) -> Vec<u8> {
    ws.iter().flat_map(|w| w.to_le_bytes()).collect()
}

#[test]
fn edge_delete_zeroes_row_tgt_col_src() {
    // second layer [[a, b], [c, d]] as tgt x src
    let m = load_model(DENSE, &blob(&[1.0, 0.0, 0.0, 1.0, 2.0, 3.0, 5.0, 7.0])).unwrap();
    let cut = m
        .edge_ablate(0, &BTreeSet::from([(0, 1)]), EdgeMode::Delete)
        .unwrap();
    assert_eq!(cut.layers()[1].weights(), &[2.0, 3.0, 0.0, 7.0]);
    assert_eq!(m.layers()[1].weights(), &[2.0, 3.0, 5.0, 7.0]);
    let none = m
        .edge_ablate(0, &BTreeSet::new(), EdgeMode::Delete)
        .unwrap();
    assert_eq!(none.layers()[1].weights(), m.layers()[1].weights());
    let full: BTreeSet<_> = [(0, 0), (0, 1), (1, 0), (1, 1)].into();
    let keep = m.edge_ablate(0, &full, EdgeMode::KeepOnly).unwrap();
    assert_eq!(keep.layers()[1].weights(), m.layers()[1].weights());
    let one = m
        .edge_ablate(0, &BTreeSet::from([(1, 0)]), EdgeMode::KeepOnly)
        .unwrap();
    assert_eq!(one.layers()[1].weights(), &[0.0, 3.0, 0.0, 0.0]);
}

#[test]
fn identity_dense_passes_input_through() {
    let text = r#"
input_shape = [3]
class_count = 3

[[layers]]
kind = "dense"
shape = [3, 3]
weight_len = 9
is_probe = true
"#;
    let m = load_model(text, &blob(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])).unwrap();
    let t = m.forward(&Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
    assert_eq!(t.probe(0).data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn truncated_blob_is_rejected() {
    let mut b = blob(&[1.0; 8]);
    b.pop();
    assert!(matches!(
        load_model(DENSE, &b),
        Err(GccError::ManifestBlob(_))
    ));
    let bad = DENSE.replacen("dense", "lstm", 1);
    assert!(matches!(
        load_model(&bad, &blob(&[1.0; 8])),
        Err(GccError::UnsupportedLayer(_))
    ));
}

#[test]
fn fixture_has_three_probe_layers() {
    assert_eq!(model().probe_count(), 3);
    assert_eq!(
        model()
            .probes()
            .iter()
            .map(|p| p.channels())
            .collect::<Vec<_>>(),
        [16, 32, 32]
    );
    assert!(matches!(
        model().forward(&Tensor::zeros(vec![1, 8, 8])),
        Err(GccError::BadInputShape { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn zero_input_through_bias_free_relu_net(vals in prop::collection::vec(-2.0f32..2.0, 4)) {
        let text = DENSE.replace("kind = \"dense\"\nshape = [2, 2]\nweight_offset = 4", "kind = \"relu\"\n[[layers]]\nkind = \"dense\"\nshape = [2, 2]\nweight_offset = 4");
        let mut ws = vals.clone();
        ws.extend_from_slice(&vals);
        let m = load_model(&text, &blob(&ws)).unwrap();
        let t = m.forward(&Tensor::zeros(vec![2])).unwrap();
        prop_assert!(t.probes.iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn intervention_locality(pos in 0usize..200, layer in 1usize..3, ch in 0usize..32) {
        let m = model();
        let x = queries().sample(pos);
        let plain = m.forward(&x).unwrap();
        let t = m.ablate_trace(&x, &AblationSet::zeroing([NeuronRef::new(layer, ch)])).unwrap();
        for l in 0..layer {
            prop_assert_eq!(t.probe(l), plain.probe(l));
        }
    }
}
