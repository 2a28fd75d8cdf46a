//! One training round of the split protocol.

use crate::adversary::PoisonHook;
use crate::data::FeatureShard;
use crate::defense::{anomalous_batch_rows, apply_dp_noise, DefenseConfig, DefenseState};
use crate::error::{Error, Result};
use crate::nn::{masked_cross_entropy_with_grad, DenseNet, Matrix};

/// Whether a participant plays honestly or is adversary-controlled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Honest,
    Adversary,
}

/// A feature-hosting participant: one shard, one bottom model, no labels.
#[derive(Debug, Clone)]
pub struct Participant {
    pub id: usize,
    pub shard: FeatureShard,
    pub bottom: DenseNet,
    pub role: Role,
}

impl Participant {
    pub fn new(shard: FeatureShard, bottom: DenseNet, role: Role) -> Result<Self> {
        if bottom.input_dim() != shard.width() {
            return Err(Error::ShapeMismatch {
                context: "Participant::new",
                expected: format!("bottom input of {}", shard.width()),
                actual: format!("bottom input of {}", bottom.input_dim()),
            });
        }
        Ok(Participant {
            id: shard.participant_id,
            shard,
            bottom,
            role,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.bottom.output_dim()
    }
}

/// The label-hosting server: top model, labels, learning rate, defenses.
pub struct Server {
    pub top: DenseNet,
    labels: Vec<usize>,
    pub learning_rate: f64,
    pub defense: DefenseConfig,
    pub defense_state: DefenseState,
}

impl Server {
    pub fn new(
        top: DenseNet,
        labels: Vec<usize>,
        learning_rate: f64,
        defense: DefenseConfig,
    ) -> Result<Self> {
        // Zero is allowed and turns rounds into pure evaluation passes.
        if !(learning_rate >= 0.0) {
            return Err(Error::invalid("server learning rate must be nonnegative"));
        }
        let defense_state = DefenseState::new(&defense);
        Ok(Server {
            top,
            labels,
            learning_rate,
            defense,
            defense_state,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.labels.len()
    }

    /// Label access stays inside the server; this is deliberately the only
    /// getter and exists for the harness (metrics) side.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Everything observable about one protocol round.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: usize,
    /// Embedding batch each participant submitted, in participant order.
    pub embeddings: Vec<Matrix>,
    /// Gradient batch routed back to each participant; same shapes.
    pub gradients: Vec<Matrix>,
    pub loss: f64,
    /// Batch row positions the anomaly filter excluded this round.
    pub excluded_rows: Vec<usize>,
}

/// Concatenates per-participant embedding batches, columns ordered by
/// ascending participant id.
pub fn concat_embeddings(batches: &[(usize, Matrix)]) -> Result<Matrix> {
    if batches.is_empty() {
        return Err(Error::invalid("no embedding batches to concatenate"));
    }
    let mut order: Vec<usize> = (0..batches.len()).collect();
    order.sort_by_key(|&i| batches[i].0);
    for pair in order.windows(2) {
        if batches[pair[0]].0 == batches[pair[1]].0 {
            return Err(Error::invalid(format!(
                "duplicate participant id {}",
                batches[pair[0]].0
            )));
        }
    }
    let parts: Vec<&Matrix> = order.iter().map(|&i| &batches[i].1).collect();
    Matrix::hstack(&parts)
}

/// Runs one batch of Algorithm-style split training:
/// bottom forwards, concatenation, top forward + loss, top update, gradient
/// split, bottom updates. Defense transforms apply to received embeddings
/// before the top model sees them.
pub fn run_training_round(
    server: &mut Server,
    participants: &mut [Participant],
    batch_ids: &[usize],
    round: usize,
    poison_hook: Option<&dyn PoisonHook>,
) -> Result<RoundTrace> {
    if batch_ids.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    for &id in batch_ids {
        if id >= server.num_samples() {
            return Err(Error::invalid(format!("batch id {id} out of range")));
        }
    }

    // Participants forward their (possibly poisoned) raw rows.
    let mut bottom_traces = Vec::with_capacity(participants.len());
    let mut submitted = Vec::with_capacity(participants.len());
    for participant in participants.iter() {
        let mut rows = participant.shard.rows.select_rows(batch_ids)?;
        if participant.role == Role::Adversary {
            if let Some(hook) = poison_hook {
                hook.poison(participant.id, batch_ids, &mut rows);
            }
        }
        let trace = participant.bottom.forward(&rows)?;
        submitted.push(trace.output().clone());
        bottom_traces.push(trace);
    }

    // Server-side defenses transform what the top model consumes.
    let batch_labels: Vec<usize> = batch_ids.iter().map(|&i| server.labels[i]).collect();
    let mut received: Vec<Matrix> = submitted.clone();
    if server.defense.dp_variance > 0.0 {
        for emb in &mut received {
            *emb = apply_dp_noise(emb, server.defense.dp_variance, &mut server.defense_state.rng);
        }
    }
    let excluded_rows = if server.defense.anomaly_budget_pct > 0.0 {
        anomalous_batch_rows(
            &received,
            &batch_labels,
            &server.defense,
            &mut server.defense_state,
            round,
        )?
    } else {
        Vec::new()
    };
    let mut include = vec![true; batch_ids.len()];
    for &row in &excluded_rows {
        include[row] = false;
    }

    let keyed: Vec<(usize, Matrix)> = participants
        .iter()
        .map(|p| p.id)
        .zip(received.into_iter())
        .collect();
    let concatenated = concat_embeddings(&keyed)?;

    // Top model: forward, masked loss, backward; update after the gradients
    // are captured.
    let top_trace = server.top.forward(&concatenated)?;
    let (loss, grad_at_logits) =
        masked_cross_entropy_with_grad(top_trace.output(), &batch_labels, &include)?;
    let (top_grads, grad_at_concat) = server.top.backward(&top_trace, &grad_at_logits)?;
    if server.learning_rate > 0.0 {
        server.top.sgd_step(&top_grads, server.learning_rate)?;
    }

    // Split the embedding gradient back per participant (ascending id order
    // matches the concatenation order).
    let mut order: Vec<usize> = (0..participants.len()).collect();
    order.sort_by_key(|&i| participants[i].id);
    let mut gradients: Vec<Matrix> = vec![Matrix::zeros(0, 0); participants.len()];
    let mut offset = 0;
    for &idx in &order {
        let width = participants[idx].embedding_dim();
        gradients[idx] = grad_at_concat.slice_cols(offset, offset + width)?;
        offset += width;
    }

    // Participants update their bottoms with the routed gradients.
    if server.learning_rate > 0.0 {
        for (participant, (trace, grad)) in participants
            .iter_mut()
            .zip(bottom_traces.iter().zip(&gradients))
        {
            let (grads, _) = participant.bottom.backward(trace, grad)?;
            participant.bottom.sgd_step(&grads, server.learning_rate)?;
        }
    }

    Ok(RoundTrace {
        round,
        embeddings: submitted,
        gradients,
        loss,
        excluded_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{vertical_split, SplitPlan};
    use crate::nn::{cross_entropy_with_grad, supervised_step};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_features(rows: usize, cols: usize, seed: u64) -> Matrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Matrix::zeros(rows, cols);
        for v in m.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        m
    }

    fn build_system(
        features: &Matrix,
        labels: Vec<usize>,
        k: usize,
        seed: u64,
        lr: f64,
    ) -> (Server, Vec<Participant>) {
        let plan = SplitPlan::equal(k, features.cols()).unwrap();
        let shards = vertical_split(features, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let participants: Vec<Participant> = shards
            .into_iter()
            .map(|s| {
                let bottom = DenseNet::new(&[s.width(), 6, 4], &mut rng).unwrap();
                Participant::new(s, bottom, Role::Honest).unwrap()
            })
            .collect();
        let top = DenseNet::new(&[4 * k, 5, 3], &mut rng).unwrap();
        let server = Server::new(top, labels, lr, DefenseConfig::off()).unwrap();
        (server, participants)
    }

    #[test]
    fn concat_orders_by_participant_id() {
        let a = Matrix::from_row(&[1.0, 2.0]).unwrap();
        let b = Matrix::from_row(&[3.0]).unwrap();
        let joined = concat_embeddings(&[(0, a.clone()), (1, b.clone())]).unwrap();
        assert_eq!(joined.row(0), &[1.0, 2.0, 3.0]);

        let swapped = concat_embeddings(&[(1, b), (0, a)]).unwrap();
        assert_eq!(swapped.row(0), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn concat_single_participant_is_identity() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(concat_embeddings(&[(0, a.clone())]).unwrap(), a);
    }

    #[test]
    fn concat_rejects_row_mismatch_and_duplicate_ids() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(3, 2);
        assert!(concat_embeddings(&[(0, a.clone()), (1, b)]).is_err());
        assert!(concat_embeddings(&[(0, a.clone()), (0, a)]).is_err());
    }

    #[test]
    fn single_party_training_matches_centralized_composition_bitwise() {
        let features = toy_features(20, 6, 7);
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let (mut server, mut participants) = build_system(&features, labels.clone(), 1, 42, 0.3);

        // Centralized twin: same layers, same init, one composed net.
        let mut composed =
            DenseNet::stack(&[&participants[0].bottom, &server.top]).unwrap();

        let batch: Vec<usize> = (0..20).collect();
        for round in 0..15 {
            run_training_round(&mut server, &mut participants, &batch, round, None).unwrap();
            supervised_step(&mut composed, &features, &labels, 0.3).unwrap();
        }

        let mut split_params = participants[0].bottom.flat_parameters();
        split_params.extend(server.top.flat_parameters());
        assert_eq!(split_params, composed.flat_parameters());
    }

    #[test]
    fn routed_gradient_equals_concat_input_gradient_slice() {
        let features = toy_features(12, 8, 3);
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let (mut server, mut participants) = build_system(&features, labels.clone(), 2, 5, 0.2);
        let top_before = server.top.clone();

        let batch: Vec<usize> = (0..12).collect();
        let trace =
            run_training_round(&mut server, &mut participants, &batch, 0, None).unwrap();

        // Oracle: recompute the full concatenation backward with the
        // pre-update top model.
        let keyed: Vec<(usize, Matrix)> = trace
            .embeddings
            .iter()
            .cloned()
            .enumerate()
            .collect();
        let concatenated = concat_embeddings(&keyed).unwrap();
        let top_trace = top_before.forward(&concatenated).unwrap();
        let (_, grad_logits) = cross_entropy_with_grad(top_trace.output(), &labels).unwrap();
        let (_, grad_concat) = top_before.backward(&top_trace, &grad_logits).unwrap();

        let mut offset = 0;
        for (i, routed) in trace.gradients.iter().enumerate() {
            let width = routed.cols();
            let slice = grad_concat.slice_cols(offset, offset + width).unwrap();
            assert_eq!(routed, &slice, "participant {i}");
            offset += width;
        }
    }

    #[test]
    fn zero_learning_rate_round_is_pure_evaluation() {
        let features = toy_features(9, 6, 4);
        let labels: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let (mut server, mut participants) = build_system(&features, labels, 2, 8, 0.0);
        let before_top = server.top.flat_parameters();
        let before_bottoms: Vec<Vec<f64>> = participants
            .iter()
            .map(|p| p.bottom.flat_parameters())
            .collect();
        let batch: Vec<usize> = (0..9).collect();
        let first =
            run_training_round(&mut server, &mut participants, &batch, 0, None).unwrap();
        let second =
            run_training_round(&mut server, &mut participants, &batch, 1, None).unwrap();
        assert_eq!(server.top.flat_parameters(), before_top);
        for (p, before) in participants.iter().zip(before_bottoms) {
            assert_eq!(p.bottom.flat_parameters(), before);
        }
        // Loss is stationary: both rounds evaluated the same model.
        assert_eq!(first.loss, second.loss);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let features = toy_features(4, 4, 1);
        let (mut server, mut participants) = build_system(&features, vec![0, 1, 2, 0], 2, 2, 0.1);
        assert!(run_training_round(&mut server, &mut participants, &[], 0, None).is_err());
    }
}
