mod common;

use genifer::task_stream::{build_task_sequence, task_loader, toy, Split, TaskSequence};
use genifer::Error;

#[test]
fn hundred_class_protocol_task_counts() {
    assert_eq!(common::checks::hundred_class_task_counts(), vec![(25, 3), (10, 6), (5, 11), (2, 26)]);
}

#[test]
fn partition_invariants_hold_under_fuzzing() {
    common::checks::task_split_fuzz(1000, 99).unwrap();
}

#[test]
fn invalid_splits_are_config_errors() {
    for (c, f, s) in [(10, 0, 5), (10, 11, 1), (10, 4, 4), (10, 5, 0)] {
        assert!(matches!(build_task_sequence(c, f, s, 0), Err(Error::Config(_))), "{c} {f} {s}");
    }
    assert_eq!(build_task_sequence(10, 10, 0, 0).unwrap().num_tasks(), 1);
}

#[test]
fn different_seeds_permute_classes() {
    let a = build_task_sequence(100, 50, 10, 1).unwrap();
    let b = build_task_sequence(100, 50, 10, 2).unwrap();
    assert_ne!(a.tasks(), b.tasks());
}

#[test]
fn explicit_sequences_are_validated() {
    assert!(TaskSequence::from_tasks(vec![vec![0, 1], vec![2]]).is_ok());
    assert!(TaskSequence::from_tasks(vec![vec![0, 1], vec![1, 2]]).is_err());
    assert!(TaskSequence::from_tasks(vec![]).is_err());
}

#[test]
fn task_indices_are_one_based() {
    let seq = build_task_sequence(10, 5, 5, 0).unwrap();
    assert!(seq.classes(0).is_err());
    assert_eq!(seq.classes(1).unwrap().len(), 5);
    assert!(matches!(seq.classes(3), Err(Error::Range(_))));
    assert_eq!(seq.classes_through(2).unwrap().len(), 10);
}

#[test]
fn loader_only_yields_current_task_samples() {
    let data = toy::generate(6, Split::Train, 1).unwrap();
    let seq = build_task_sequence(10, 4, 3, 5).unwrap();
    for t in 1..=seq.num_tasks() {
        let classes = seq.classes(t).unwrap().to_vec();
        let mut loader = task_loader(&data, &seq, t, 5, 3).unwrap();
        assert_eq!(loader.num_samples(), 6 * classes.len());
        let mut count = 0;
        for batch in loader.epoch() {
            assert!(batch.labels.iter().all(|y| classes.contains(y)));
            assert!(batch.len() <= 5);
            count += batch.len();
        }
        assert_eq!(count, loader.num_samples());
    }
}
