use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::Task;
use crate::model::{ModelConfig, Trainable};
use crate::optim::OptimizerKind;

fn vocab() -> Vocab {
    Vocab::from_tokens(["a", "b", "c", "x", "y", "True", "False"].map(String::from))
}

fn tiny_model(task: Task, seed: u64) -> TaskModel {
    let cfg = ModelConfig { d_model: 4, n_heads: 1, d_ff: 6, n_encoder_layers: 1, n_decoder_layers: 1, ..ModelConfig::default() };
    TaskModel::new(task, vocab(), cfg, seed).unwrap()
}

fn tiny_editor(model: &TaskModel, seed: u64) -> EditorNetwork {
    let cfg = EditorConfig { embed_dim: 5, hidden_dim: 6, head_hidden: 4, ..EditorConfig::default() };
    EditorNetwork::new(model, cfg, seed).unwrap()
}

fn randomized(editor: &EditorNetwork, std: f64, rng: &mut ChaCha8Rng) -> EditorNetwork {
    let mut p = Params::new();
    for (name, m) in editor.params().iter() {
        p.insert(name.clone(), Mat::randn(m.rows(), m.cols(), std, rng));
    }
    editor.with_params(p).unwrap()
}

fn binary_request(input: &str, current: bool) -> EditRequest {
    EditRequest::new(input.into(), TokenSeq::binary(current), TokenSeq::binary(!current)).unwrap()
}

fn singular_values(m: &Mat) -> Vec<f64> {
    let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
    let mut s: Vec<f64> = d.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

#[test]
fn requests_must_change_the_output() {
    assert!(EditRequest::new("a".into(), "x".into(), "x".into()).is_err());
}

#[test]
fn zero_factors_leave_the_model_unchanged() {
    let model = tiny_model(Task::Binary, 0);
    let editor = tiny_editor(&model, 1);
    let mut p = editor.params().clone();
    let names: Vec<String> = p.names().cloned().collect();
    for name in names {
        if ["u.", "v.", "gamma.", "delta."].iter().any(|part| name.contains(part)) {
            p.get_mut(&name).unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let editor = editor.with_params(p).unwrap();
    let req = binary_request("a b", true);
    let (_, grads) = model.loss_and_gradients(&req.input, &req.desired).unwrap();
    let delta = editor.propose_delta(&req, &grads).unwrap();
    for d in delta.matrices.values() {
        assert!(d.a.data().iter().all(|&v| v == 0.0));
        assert!(d.b.data().iter().all(|&v| v == 0.0));
    }
    let out = apply_update(&model, &editor, &req, 3).unwrap();
    assert!(out.params().bitwise_eq(model.params()));
}

#[test]
fn factors_are_rank_one_with_gate_in_unit_interval() {
    let model = tiny_model(Task::Binary, 0);
    let base = tiny_editor(&model, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let editor = randomized(&base, 0.7, &mut rng);
        let req = binary_request(["a", "b c", "x y a"][rng.random_range(0..3)], rng.random());
        let delta = editor.delta_for(&req).unwrap();
        for (name, d) in &delta.matrices {
            for m in [&d.a, &d.b] {
                let s = singular_values(m);
                assert!(s[1] <= 1e-6 * s[0], "{name}: {s:?}");
            }
            assert!(d.eta > 0.0 && d.eta < 1.0);
        }
    }
}

#[test]
fn gate_stays_inside_unit_interval_over_many_requests() {
    let model = tiny_model(Task::Binary, 0);
    let editor = randomized(&tiny_editor(&model, 0), 2.0, &mut ChaCha8Rng::seed_from_u64(8));
    let words = ["a", "b", "c", "x", "y"];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let n = rng.random_range(1..4);
        let input = TokenSeq::new((0..n).map(|_| words[rng.random_range(0..5)].to_string()).collect());
        let req = EditRequest::new(input, TokenSeq::binary(true), TokenSeq::binary(false)).unwrap();
        for d in editor.delta_for(&req).unwrap().matrices.values() {
            assert!(d.eta > 0.0 && d.eta < 1.0, "{}", d.eta);
        }
    }
}

#[test]
fn saturated_gate_stays_strictly_inside_unit_interval() {
    let model = tiny_model(Task::Binary, 0);
    for bias in [1e6, -1e6] {
        let mut p = tiny_editor(&model, 0).params().clone();
        let names: Vec<String> = p.names().filter(|n| n.ends_with("gate.bias")).cloned().collect();
        for n in names {
            p.get_mut(&n).unwrap().data_mut().iter_mut().for_each(|v| *v = bias);
        }
        let editor = tiny_editor(&model, 0).with_params(p).unwrap();
        for d in editor.delta_for(&binary_request("a b", true)).unwrap().matrices.values() {
            assert!(d.eta > 0.0 && d.eta < 1.0, "{}", d.eta);
        }
    }
}

#[test]
fn softmax_column_sums_to_one() {
    let model = tiny_model(Task::Seq2seq, 0);
    let editor = randomized(&tiny_editor(&model, 0), 0.5, &mut ChaCha8Rng::seed_from_u64(2));
    let req = EditRequest::new("a b".into(), "x".into(), "y".into()).unwrap();
    let cond = editor.conditioning_ids(&req).unwrap();
    let mut tape = Tape::no_grad();
    let b = editor.bind(&mut tape, false);
    let h = editor.encode(&mut tape, &b, &cond);
    let z = editor.head(&mut tape, &b, 0, "hidden", h);
    let z = tape.gelu(z);
    let u = editor.head(&mut tape, &b, 0, "u", z);
    let su = tape.value(u).softmax_rows();
    assert!((su.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn k_zero_is_identity_and_non_editable_weights_never_move() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for task in [Task::Binary, Task::Seq2seq] {
        let model = tiny_model(task, 1);
        let editor = randomized(&tiny_editor(&model, 0), 0.3, &mut rng);
        let req = match task {
            Task::Binary => binary_request("a c", false),
            Task::Seq2seq => EditRequest::new("a c".into(), "x".into(), "y b".into()).unwrap(),
        };
        assert!(apply_update(&model, &editor, &req, 0).unwrap().params().bitwise_eq(model.params()));
        let out = apply_update(&model, &editor, &req, 2).unwrap();
        let mut moved = 0;
        for (name, m) in model.params().iter() {
            let same = m.data().iter().zip(out.params().get(name).unwrap().data()).all(|(a, b)| a.to_bits() == b.to_bits());
            if model.view().contains(name) {
                moved += usize::from(!same);
            } else {
                assert!(same, "{name} changed");
            }
        }
        assert!(moved > 0);
    }
}

#[test]
fn one_step_equals_a_single_delta_application() {
    let model = tiny_model(Task::Binary, 2);
    let editor = randomized(&tiny_editor(&model, 0), 0.3, &mut ChaCha8Rng::seed_from_u64(5));
    let req = binary_request("b", true);
    let (_, grads) = model.loss_and_gradients(&req.input, &req.desired).unwrap();
    let delta = editor.propose_delta(&req, &grads).unwrap();
    let mut expected = model.clone();
    delta.apply(&mut expected, &grads).unwrap();
    let got = apply_update(&model, &editor, &req, 1).unwrap();
    assert!(got.params().bitwise_eq(expected.params()));
}

#[test]
fn three_steps_match_a_hand_rolled_loop() {
    let model = tiny_model(Task::Binary, 3);
    let editor = randomized(&tiny_editor(&model, 0), 0.3, &mut ChaCha8Rng::seed_from_u64(6));
    let req = binary_request("a b c", false);
    let delta = editor.delta_for(&req).unwrap();
    let mut params = model.params().clone();
    for _ in 0..3 {
        let current = model.with_params(params.clone()).unwrap();
        let (_, grads) = current.loss_and_gradients(&req.input, &req.desired).unwrap();
        for (name, d) in &delta.matrices {
            let g = &grads[name];
            let w = params.get_mut(name).unwrap();
            for r in 0..w.rows() {
                for c in 0..w.cols() {
                    let step = d.eta * (d.a.get(r, c) * g.get(r, c) + d.b.get(r, c));
                    w.set(r, c, w.get(r, c) + step);
                }
            }
        }
    }
    let got = apply_update(&model, &editor, &req, 3).unwrap();
    assert!(got.params().bitwise_eq(&params));
}

#[test]
fn untrained_editor_acts_like_gradient_descent() {
    let model = tiny_model(Task::Binary, 0);
    let cfg = EditorConfig { head_init_std: 0.0, ..EditorConfig::default() };
    let editor = EditorNetwork::new(&model, cfg.clone(), 0).unwrap();
    let req = binary_request("a", true);
    let (_, grads) = model.loss_and_gradients(&req.input, &req.desired).unwrap();
    let delta = editor.propose_delta(&req, &grads).unwrap();
    for (name, d) in &delta.matrices {
        let step = d.step(&grads[name]);
        for (s, g) in step.data().iter().zip(grads[name].data()) {
            assert!((s + cfg.init_step * g).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }
}

#[test]
fn mismatched_view_or_gradients_are_rejected() {
    let model = tiny_model(Task::Binary, 0);
    let other = tiny_model(Task::Seq2seq, 0);
    let editor = tiny_editor(&other, 0);
    let req = binary_request("a", true);
    assert!(matches!(apply_update(&model, &editor, &req, 1), Err(Error::Manifest(_))));
    let editor = tiny_editor(&model, 0);
    let (_, mut grads) = model.loss_and_gradients(&req.input, &req.desired).unwrap();
    let first = grads.keys().next().unwrap().clone();
    grads.insert(first.clone(), Mat::zeros(1, 1));
    assert!(matches!(editor.propose_delta(&req, &grads), Err(Error::Shape { name, .. }) if name == first));
}

#[test]
fn checkpoint_round_trip() {
    let model = tiny_model(Task::Binary, 0);
    let editor = randomized(&tiny_editor(&model, 0), 0.1, &mut ChaCha8Rng::seed_from_u64(1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.ckpt");
    editor.save(&path).unwrap();
    let back = EditorNetwork::load(&path).unwrap();
    assert_eq!(back, editor);
}

#[test]
fn grid_has_the_expected_cells() {
    let grid = baseline_grid();
    assert_eq!(grid.len(), 27);
    let has = |k: OptimizerKind, lr: f64, steps: usize| {
        grid.iter().any(|s| s.optimizer.kind == k && s.optimizer.lr == lr && s.max_steps == steps)
    };
    assert!(has(OptimizerKind::Sgd, 1e-1, 10));
    assert!(has(OptimizerKind::AdamW, 1e-6, 100));
    assert!(!has(OptimizerKind::Sgd, 1e-4, 5));
}

#[test]
fn baseline_stops_when_already_correct() {
    let model = tiny_model(Task::Binary, 0);
    let pred = model.predict_label(&"a".into()).unwrap();
    let other = TokenSeq::binary(!pred.as_bool().unwrap());
    let req = EditRequest::new("a".into(), other, pred).unwrap();
    let out = baseline_update(&model, &req, &BaselineSpec::new(OptimizerKind::Sgd, 0.1, 100)).unwrap();
    assert_eq!(out.steps, 0);
    assert!(out.flipped);
    assert!(out.model.params().bitwise_eq(model.params()));
}

#[test]
fn baseline_with_no_steps_reports_no_flip() {
    let model = tiny_model(Task::Binary, 0);
    let pred = model.predict_label(&"a".into()).unwrap();
    let req = EditRequest::new("a".into(), pred.clone(), TokenSeq::binary(!pred.as_bool().unwrap())).unwrap();
    let out = baseline_update(&model, &req, &BaselineSpec::new(OptimizerKind::Sgd, 0.1, 0)).unwrap();
    assert!(!out.flipped);
    assert_eq!(out.steps, 0);
    assert!(out.model.params().bitwise_eq(model.params()));
    let out = baseline_update(&model, &req, &BaselineSpec::new(OptimizerKind::Sgd, 0.5, 100)).unwrap();
    assert!(out.flipped && out.steps > 0);
    let (_, all) = model.example_loss_and_gradients(&model.example(&req.input, &req.desired).unwrap(), Trainable::All).unwrap();
    assert_eq!(all.len(), model.params().len());
}
