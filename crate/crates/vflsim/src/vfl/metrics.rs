//! Clean-task and attack metrics computed over a test set.

use crate::adversary::{apply_trigger, TriggerSpec};
use crate::data::FeatureShard;
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, Matrix};

use super::round::{concat_embeddings, Participant, Role, Server};

/// Accuracy plus macro-averaged precision and recall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MainTaskEval {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
}

fn check_alignment(participants: &[Participant], test_shards: &[FeatureShard]) -> Result<()> {
    if participants.len() != test_shards.len() {
        return Err(Error::invalid("test shard count differs from participants"));
    }
    for (p, s) in participants.iter().zip(test_shards) {
        if p.id != s.participant_id || p.shard.col_start != s.col_start
            || p.shard.col_end != s.col_end
        {
            return Err(Error::invalid(format!(
                "test shard for participant {} is not column-aligned",
                p.id
            )));
        }
    }
    Ok(())
}

/// Full inference over aligned test shards. Defenses are not applied: the
/// server wants honest inference quality at evaluation time.
pub fn predict(
    server: &Server,
    participants: &[Participant],
    test_shards: &[FeatureShard],
) -> Result<Vec<usize>> {
    check_alignment(participants, test_shards)?;
    let keyed: Vec<(usize, Matrix)> = participants
        .iter()
        .zip(test_shards)
        .map(|(p, s)| Ok((p.id, p.bottom.forward(&s.rows)?.into_output())))
        .collect::<Result<_>>()?;
    let concatenated = concat_embeddings(&keyed)?;
    let logits = server.top.forward(&concatenated)?;
    Ok(argmax_rows(logits.output()))
}

/// Main-task accuracy with macro precision/recall over the test labels.
pub fn evaluate_main_task(
    server: &Server,
    participants: &[Participant],
    test_shards: &[FeatureShard],
    test_labels: &[usize],
) -> Result<MainTaskEval> {
    if test_labels.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let predictions = predict(server, participants, test_shards)?;
    if predictions.len() != test_labels.len() {
        return Err(Error::invalid("test shard rows differ from label count"));
    }
    let classes = server.top.output_dim();
    Ok(classification_metrics(&predictions, test_labels, classes))
}

/// Confusion-matrix derived metrics; classes with no predicted (resp. true)
/// members contribute zero precision (resp. recall) to the macro average.
pub fn classification_metrics(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> MainTaskEval {
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        confusion[l][p] += 1;
        if p == l {
            correct += 1;
        }
    }
    let mut precision = 0.0;
    let mut recall = 0.0;
    for c in 0..classes {
        let true_pos = confusion[c][c] as f64;
        let predicted: usize = (0..classes).map(|l| confusion[l][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        if predicted > 0 {
            precision += true_pos / predicted as f64;
        }
        if actual > 0 {
            recall += true_pos / actual as f64;
        }
    }
    MainTaskEval {
        accuracy: correct as f64 / labels.len() as f64,
        precision: precision / classes as f64,
        recall: recall / classes as f64,
    }
}

/// Attack success rate: the fraction of true source-class test samples that
/// the model classifies as the target class once the trigger (or every
/// sub-trigger) is embedded in the adversary-controlled shard slices.
pub fn evaluate_asr(
    server: &Server,
    participants: &[Participant],
    triggers: &[(usize, TriggerSpec)],
    source_class: usize,
    target_class: usize,
    test_shards: &[FeatureShard],
    test_labels: &[usize],
) -> Result<f64> {
    check_alignment(participants, test_shards)?;
    for &(pid, _) in triggers {
        let participant = participants
            .iter()
            .find(|p| p.id == pid)
            .ok_or_else(|| Error::invalid(format!("trigger names unknown participant {pid}")))?;
        if participant.role != Role::Adversary {
            return Err(Error::invalid(format!(
                "trigger applies to honest participant {pid}"
            )));
        }
    }
    let source_rows: Vec<usize> = (0..test_labels.len())
        .filter(|&i| test_labels[i] == source_class)
        .collect();
    if source_rows.is_empty() {
        return Err(Error::invalid("no source-class samples in the test set"));
    }

    let keyed: Vec<(usize, Matrix)> = participants
        .iter()
        .zip(test_shards)
        .map(|(p, s)| {
            let mut rows = s.rows.select_rows(&source_rows)?;
            for &(pid, ref trigger) in triggers {
                if pid == p.id {
                    for r in 0..rows.rows() {
                        let triggered = apply_trigger(rows.row(r), trigger)?;
                        rows.row_mut(r).copy_from_slice(&triggered);
                    }
                }
            }
            Ok((p.id, p.bottom.forward(&rows)?.into_output()))
        })
        .collect::<Result<_>>()?;
    let concatenated = concat_embeddings(&keyed)?;
    let logits = server.top.forward(&concatenated)?;
    let predictions = argmax_rows(logits.output());
    let hits = predictions.iter().filter(|&&p| p == target_class).count();
    Ok(hits as f64 / source_rows.len() as f64)
}
