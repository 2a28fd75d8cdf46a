//! Surrogate training, label inference, and multi-attacker voting.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{argmax_rows, softmax_rows, supervised_step, DenseNet, Matrix};

/// Sentinel for "the surrogate does not recognize this sample's class";
/// deliberately outside any valid label range.
pub const UNRECOGNIZED: usize = usize::MAX;

/// Per-training-sample estimated labels (may contain [`UNRECOGNIZED`]).
pub type LabelEstimates = Vec<usize>;

/// The adversary's labelled auxiliary data, already sliced to its own shard
/// columns.
#[derive(Debug, Clone)]
pub struct AuxiliarySet {
    pub samples: Matrix,
    pub labels: Vec<usize>,
    /// Sorted class ids the auxiliary labels cover.
    pub known_classes: Vec<usize>,
    /// Size of the full label space the protocol uses.
    pub total_classes: usize,
}

impl AuxiliarySet {
    pub fn new(
        samples: Matrix,
        labels: Vec<usize>,
        known_classes: Vec<usize>,
        total_classes: usize,
    ) -> Result<Self> {
        if samples.rows() != labels.len() || labels.is_empty() {
            return Err(Error::invalid("auxiliary samples and labels must align"));
        }
        if known_classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("known classes must be sorted and unique"));
        }
        if known_classes.iter().any(|&c| c >= total_classes) {
            return Err(Error::invalid("known class outside the label space"));
        }
        if labels.iter().any(|l| !known_classes.contains(l)) {
            return Err(Error::invalid("auxiliary label outside the known set"));
        }
        Ok(AuxiliarySet {
            samples,
            labels,
            known_classes,
            total_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// The adversary's local stand-in for the server's top model, trained over
/// its own embedding space.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    pub net: DenseNet,
    /// Output index -> class id, ascending.
    pub classes: Vec<usize>,
    pub total_classes: usize,
    /// Max-softmax threshold below which a sample is deemed unrecognized
    /// when the known set does not cover the label space.
    pub unrecognized_threshold: f64,
    /// Training accuracy on the auxiliary set after fitting.
    pub aux_accuracy: f64,
}

/// Trains a surrogate on `(bottom(aux sample), aux label)` pairs with plain
/// supervised steps; the bottom model is frozen throughout.
pub fn train_surrogate<R: Rng + ?Sized>(
    bottom: &DenseNet,
    aux: &AuxiliarySet,
    hidden_width: usize,
    epochs: usize,
    lr: f64,
    unrecognized_threshold: f64,
    rng: &mut R,
) -> Result<SurrogateModel> {
    if aux.known_classes.len() < 2 {
        return Err(Error::invalid(
            "auxiliary set covers a single class; no pair can be selected later",
        ));
    }
    let embeddings = bottom.forward(&aux.samples)?.into_output();
    let index_labels: Vec<usize> = aux
        .labels
        .iter()
        .map(|l| {
            aux.known_classes
                .binary_search(l)
                .expect("validated at construction")
        })
        .collect();

    let dims = [embeddings.cols(), hidden_width, aux.known_classes.len()];
    let mut net = DenseNet::new(&dims, rng)?;
    for _ in 0..epochs {
        supervised_step(&mut net, &embeddings, &index_labels, lr)?;
    }

    let predictions = argmax_rows(net.forward(&embeddings)?.output());
    let correct = predictions
        .iter()
        .zip(&index_labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(SurrogateModel {
        net,
        classes: aux.known_classes.clone(),
        total_classes: aux.total_classes,
        unrecognized_threshold,
        aux_accuracy: correct as f64 / index_labels.len() as f64,
    })
}

/// Runs the surrogate over the adversary's training shard to estimate every
/// sample's label.
///
/// When the known set covers only part of the label space, samples whose
/// max softmax confidence falls below the surrogate's threshold are marked
/// [`UNRECOGNIZED`].
pub fn infer_labels(
    surrogate: &SurrogateModel,
    bottom: &DenseNet,
    shard_rows: &Matrix,
) -> Result<LabelEstimates> {
    let embeddings = bottom.forward(shard_rows)?.into_output();
    let logits = surrogate.net.forward(&embeddings)?.into_output();
    let probs = softmax_rows(&logits);
    let partial = surrogate.classes.len() < surrogate.total_classes;
    let mut estimates = Vec::with_capacity(shard_rows.rows());
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        if partial && row[best] < surrogate.unrecognized_threshold {
            estimates.push(UNRECOGNIZED);
        } else {
            estimates.push(surrogate.classes[best]);
        }
    }
    Ok(estimates)
}

/// Majority vote over the label estimates of several colluding attackers;
/// ties break to the lowest class id, and [`UNRECOGNIZED`] votes count.
pub fn vote_labels(estimates: &[LabelEstimates]) -> Result<LabelEstimates> {
    if estimates.len() < 2 {
        return Err(Error::invalid("voting needs at least two attackers"));
    }
    let len = estimates[0].len();
    if estimates.iter().any(|e| e.len() != len) {
        return Err(Error::invalid("label estimate lengths differ"));
    }
    let mut consensus = Vec::with_capacity(len);
    for i in 0..len {
        let mut tally: Vec<(usize, usize)> = Vec::new(); // (label, votes)
        for est in estimates {
            match tally.iter_mut().find(|(label, _)| *label == est[i]) {
                Some((_, votes)) => *votes += 1,
                None => tally.push((est[i], 1)),
            }
        }
        // Most votes first, then lowest label id; UNRECOGNIZED is usize::MAX
        // and therefore loses every tie against a real class.
        tally.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        consensus.push(tally[0].0);
    }
    Ok(consensus)
}
