//! Block replay and FTML outer updates against closed-form expressions on
//! scalar quadratic models.

mod common;

use common::{mean, scalar_record, ScalarModel};
use osml::baselines::{ftml_meta_step, BaselineConfig};
use osml::graph::Pathway;
use osml::metaupdate::{block_meta_update, meta_update_pathway, TaskBuffer, UpdateConfig};
use osml::rng::stream;

fn cfg(meta_lr: f64, inner_lr: f64, k: usize) -> UpdateConfig {
    UpdateConfig {
        block_meta_lr: meta_lr,
        block_inner_lr: inner_lr,
        replay_tasks: k,
        ..UpdateConfig::default()
    }
}

/// `own - meta_lr * draws * 2 (w' - mean q)` where `w` is the sum of the
/// pathway's `blocks` scalars and every block takes the inner step, so
/// `w' = w - blocks * inner_lr * 2 (w - mean s)`.
#[allow(clippy::too_many_arguments)]
fn closed_form(own: f64, total: f64, blocks: f64, s: f64, q: f64, meta_lr: f64, inner_lr: f64, draws: f64) -> f64 {
    let adapted = total - blocks * inner_lr * 2.0 * (total - s);
    own - meta_lr * draws * 2.0 * (adapted - q)
}

#[test]
fn single_task_matches_two_stage_sgd() {
    let rec = scalar_record(0, &[1.0, 2.0, 4.0], &[3.0, 5.0], vec![0]);
    let (s, q) = (mean(&rec.episode.support), mean(&rec.episode.query));
    let mut buffer = TaskBuffer::new();
    buffer.add(rec).unwrap();
    let mut model = ScalarModel { blocks: vec![(0, 0, 0.5)] };
    let entry = block_meta_update(&mut model, 0, 0, &buffer, &cfg(0.1, 0.3, 4), &mut stream(0, "t", 0)).unwrap();
    let expected = closed_form(0.5, 0.5, 1.0, s, q, 0.1, 0.3, 1.0);
    assert_eq!(model.value(0), expected);
    assert!((entry.update_norm - (expected - 0.5).abs()).abs() < 1e-15);
}

#[test]
fn sharing_tasks_only_and_draws_summed() {
    // tasks 0 and 2 share block 0 and have equal means, so any draw order
    // gives the same sum; task 1 routes through block 1
    let mut buffer = TaskBuffer::new();
    buffer.add(scalar_record(0, &[1.0, 3.0], &[2.0], vec![0])).unwrap();
    buffer.add(scalar_record(1, &[100.0], &[-100.0], vec![1])).unwrap();
    buffer.add(scalar_record(2, &[2.0], &[0.0, 4.0], vec![0])).unwrap();
    let mut model = ScalarModel {
        blocks: vec![(0, 0, -1.0), (1, 0, 7.0)],
    };
    block_meta_update(&mut model, 0, 0, &buffer, &cfg(0.01, 0.2, 4), &mut stream(1, "t", 0)).unwrap();
    // min(K = 4, 2 sharing tasks) = 2 draws
    let expected = closed_form(-1.0, -1.0, 1.0, 2.0, 2.0, 0.01, 0.2, 2.0);
    assert_eq!(model.value(0), expected);
    assert_eq!(model.value(1), 7.0);
}

#[test]
fn deeper_pathway_updates_only_the_named_block() {
    let rec = scalar_record(0, &[1.0], &[2.0], vec![0, 5]);
    let mut buffer = TaskBuffer::new();
    buffer.add(rec).unwrap();
    let mut model = ScalarModel {
        blocks: vec![(0, 0, 0.25), (5, 1, -0.75)],
    };
    block_meta_update(&mut model, 0, 0, &buffer, &cfg(0.05, 0.1, 1), &mut stream(2, "t", 0)).unwrap();
    assert_eq!(model.value(5), -0.75);
    assert_eq!(model.value(0), closed_form(0.25, -0.5, 2.0, 1.0, 2.0, 0.05, 0.1, 1.0));
    assert!(block_meta_update(&mut model, 1, 0, &buffer, &cfg(0.05, 0.1, 1), &mut stream(2, "t", 0)).is_err());
}

#[test]
fn zero_meta_rate_keeps_block() {
    let mut buffer = TaskBuffer::new();
    buffer.add(scalar_record(0, &[1.0], &[2.0], vec![0])).unwrap();
    let mut model = ScalarModel { blocks: vec![(0, 0, 0.3)] };
    block_meta_update(&mut model, 0, 0, &buffer, &cfg(0.0, 0.1, 2), &mut stream(0, "t", 0)).unwrap();
    assert_eq!(model.value(0), 0.3);
}

#[test]
fn rounds_visit_layers_low_to_high() {
    let mut buffer = TaskBuffer::new();
    buffer.add(scalar_record(0, &[1.0], &[2.0], vec![3, 4, 9])).unwrap();
    let mut model = ScalarModel {
        blocks: vec![(3, 0, 0.0), (4, 1, 0.0), (9, 2, 0.0)],
    };
    let c = UpdateConfig {
        meta_rounds: 2,
        ..cfg(0.01, 0.01, 1)
    };
    let journal = meta_update_pathway(&mut model, &Pathway(vec![3, 4, 9]), &buffer, &c, &mut stream(0, "t", 0)).unwrap();
    let order: Vec<_> = journal.iter().map(|e| (e.layer, e.block)).collect();
    assert_eq!(order, vec![(0, 3), (1, 4), (2, 9), (0, 3), (1, 4), (2, 9)]);
    let none = UpdateConfig {
        meta_rounds: 0,
        ..c
    };
    let before = model.blocks.clone();
    assert!(meta_update_pathway(&mut model, &Pathway(vec![3, 4, 9]), &buffer, &none, &mut stream(0, "t", 0))
        .unwrap()
        .is_empty());
    assert_eq!(model.blocks, before);
}

#[test]
fn ftml_outer_step_is_first_order_maml() {
    let rec = scalar_record(0, &[0.5, 1.5], &[4.0], vec![0]);
    let mut buffer = TaskBuffer::new();
    buffer.add(rec).unwrap();
    let mut model = ScalarModel { blocks: vec![(0, 0, 2.0)] };
    let c = BaselineConfig {
        ftml_inner_lr: 0.25,
        ftml_meta_lr: 0.1,
        ftml_replay_tasks: 4,
        ..BaselineConfig::default()
    };
    ftml_meta_step(&mut model, &Pathway(vec![0]), &buffer, &c, &mut stream(0, "t", 0)).unwrap();
    // w' = 2 - 0.25 * 2 (2 - 1) = 1.5; w = 2 - 0.1 * 2 (1.5 - 4) = 2.5
    assert!((model.value(0) - 2.5).abs() < 1e-15);
}
