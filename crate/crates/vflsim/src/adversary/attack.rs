//! Attack scheduling and multi-attacker coordination.
//!
//! The coalition runs the whole pipeline at its start round: every member
//! trains a surrogate on its auxiliary embeddings and infers labels, the
//! members vote when there are several of them, a class pair is selected,
//! each member places its (sub-)trigger by saliency on its own slice, and
//! bounded poison noise is learned for a shared subset of target-class
//! rows. From then on the members substitute those rows each round and
//! periodically re-optimize the noise as their bottom models drift.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{input_saliency, DenseNet, Matrix, SaliencyMap};

use super::poison::optimize_poison;
use super::selection::{select_classes, ClassPair, SelectionStrategy};
use super::surrogate::{
    infer_labels, train_surrogate, vote_labels, AuxiliarySet, LabelEstimates, SurrogateModel,
};
use super::trigger::{
    apply_trigger, plan_trigger_window, split_trigger, FillPattern, GridWindow, TriggerSpec,
};

/// Adversary-side hook the protocol runs on an adversary-controlled
/// participant's raw batch rows just before its bottom forward pass. The
/// signature is the entire interface: sample ids and the member's own rows,
/// nothing else.
pub trait PoisonHook {
    fn poison(&self, participant_id: usize, batch_ids: &[usize], rows: &mut Matrix);
}

/// How the L2 bound on poison noise is fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonRule {
    Absolute(f64),
    /// `factor` times the mean per-sample L2 norm of the estimated
    /// target-class rows on the member's slice.
    RelativeToTargetNorm(f64),
    /// `factor` times the mean input-space distance between the poison
    /// subset rows and their paired triggered sources. Self-calibrating:
    /// factor 1 lets the noise reach the triggered sources exactly.
    RelativeToPairDistance(f64),
}

impl EpsilonRule {
    fn factor(&self) -> f64 {
        match *self {
            EpsilonRule::Absolute(v)
            | EpsilonRule::RelativeToTargetNorm(v)
            | EpsilonRule::RelativeToPairDistance(v) => v,
        }
    }
}

/// Whether the trigger window lands on the saliency argmax or uniformly at
/// random.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerPlacement {
    Saliency,
    Random,
}

/// Unplaced trigger description from the experiment config; members place
/// it (or their share of it) on their own slices at the start round.
#[derive(Debug, Clone, PartialEq)]
pub enum TriggerTemplate {
    Grid {
        window_height: usize,
        window_width: usize,
        fill: FillPattern,
        placement: TriggerPlacement,
    },
    Tabular {
        feature_count: usize,
        /// `None` selects max + 3 standard deviations over the member's
        /// shard values, a value outside the usual range.
        fill_value: Option<f64>,
    },
}

/// When the attack runs and how hard it pushes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSchedule {
    pub total_rounds: usize,
    /// Round at which label inference stops and poisoning begins.
    pub start_round: usize,
    /// Percentage of estimated target-class rows to poison.
    pub budget_pct: f64,
    pub epsilon: EpsilonRule,
    pub selection: SelectionStrategy,
    pub poison_steps: usize,
    pub poison_lr: f64,
    /// Re-optimize the poison noise every this many rounds after start.
    pub refresh_every: usize,
    pub surrogate_hidden: usize,
    pub surrogate_epochs: usize,
    pub surrogate_lr: f64,
    pub unrecognized_threshold: f64,
}

impl AttackSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.start_round == 0 || self.start_round >= self.total_rounds {
            return Err(Error::invalid(format!(
                "start round {} must lie strictly inside (0, {})",
                self.start_round, self.total_rounds
            )));
        }
        if !(0.0..=100.0).contains(&self.budget_pct) {
            return Err(Error::invalid("poisoning budget must be in [0, 100]"));
        }
        if self.epsilon.factor() < 0.0 {
            return Err(Error::invalid("epsilon must be nonnegative"));
        }
        if self.refresh_every == 0 {
            return Err(Error::invalid("refresh cadence must be positive"));
        }
        Ok(())
    }
}

/// Read-only view of one adversary-controlled participant, handed to the
/// coalition by the driver. Contains exactly what the threat model grants.
pub struct AdversaryView<'a> {
    pub participant_id: usize,
    pub bottom: &'a DenseNet,
    /// The member's training shard rows (its own vertical slice).
    pub shard_rows: &'a Matrix,
    /// Grid shape of the slice when the data is grid-like: (height, width).
    pub grid: Option<(usize, usize)>,
}

struct MemberState {
    participant_id: usize,
    aux: AuxiliarySet,
    template: TriggerTemplate,
    plan: Option<MemberPlan>,
}

struct MemberPlan {
    trigger: TriggerSpec,
    /// Original rows of the shared poison subset on this member's slice.
    target_rows: Matrix,
    /// Current perturbed versions substituted during training.
    poisoned_rows: Matrix,
    /// Triggered source clones driving the poison objective.
    triggered_sources: Matrix,
    epsilon: f64,
}

struct SharedPlan {
    estimates: LabelEstimates,
    pair: ClassPair,
    /// Training-sample ids whose rows the members substitute.
    poison_ids: Vec<usize>,
    poison_index: HashMap<usize, usize>,
}

/// One or more colluding attackers plus their schedule and trigger plan.
pub struct Coalition {
    schedule: AttackSchedule,
    members: Vec<MemberState>,
    shared: Option<SharedPlan>,
    rng: ChaCha8Rng,
}

impl Coalition {
    /// `members` pairs each adversary-controlled participant id with its
    /// auxiliary set; the sub-trigger assignment follows ascending id.
    pub fn new(
        schedule: AttackSchedule,
        template: TriggerTemplate,
        members: Vec<(usize, AuxiliarySet)>,
        seed: u64,
    ) -> Result<Self> {
        schedule.validate()?;
        if members.is_empty() {
            return Err(Error::invalid("a coalition needs at least one member"));
        }
        let mut ids: Vec<usize> = members.iter().map(|(id, _)| *id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != members.len() {
            return Err(Error::invalid("duplicate participant ids in coalition"));
        }

        let templates = split_template(&template, members.len())?;
        let mut sorted = members;
        sorted.sort_by_key(|(id, _)| *id);
        let members = sorted
            .into_iter()
            .zip(templates)
            .map(|((participant_id, aux), template)| MemberState {
                participant_id,
                aux,
                template,
                plan: None,
            })
            .collect();
        Ok(Coalition {
            schedule,
            members,
            shared: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn schedule(&self) -> &AttackSchedule {
        &self.schedule
    }

    pub fn member_ids(&self) -> Vec<usize> {
        self.members.iter().map(|m| m.participant_id).collect()
    }

    /// Consensus label estimates, available from the start round on. The
    /// driver compares them against true labels to score label inference;
    /// the coalition itself never sees that comparison.
    pub fn estimates(&self) -> Option<&LabelEstimates> {
        self.shared.as_ref().map(|s| &s.estimates)
    }

    pub fn class_pair(&self) -> Option<ClassPair> {
        self.shared.as_ref().map(|s| s.pair)
    }

    pub fn poison_ids(&self) -> Option<&[usize]> {
        self.shared.as_ref().map(|s| s.poison_ids.as_slice())
    }

    /// Placed (sub-)triggers per member, for attack-success evaluation.
    pub fn triggers(&self) -> Vec<(usize, TriggerSpec)> {
        self.members
            .iter()
            .filter_map(|m| {
                m.plan
                    .as_ref()
                    .map(|p| (m.participant_id, p.trigger.clone()))
            })
            .collect()
    }

    /// Mean embedding distance between each member's triggered sources and
    /// its current poisoned rows; a progress measure for the poison phase.
    pub fn poison_gap(&self, views: &[AdversaryView<'_>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for member in &self.members {
            let plan = member
                .plan
                .as_ref()
                .ok_or_else(|| Error::invalid("poison gap queried before activation"))?;
            let view = find_view(views, member.participant_id)?;
            let src = view
                .bottom
                .forward(&plan.triggered_sources)?
                .into_output();
            let poisoned = view.bottom.forward(&plan.poisoned_rows)?.into_output();
            for r in 0..poisoned.rows() {
                let s = src.row(r % src.rows());
                total += crate::nn::euclidean_distance(poisoned.row(r), s);
                count += 1;
            }
        }
        Ok(total / count.max(1) as f64)
    }

    /// Drives the attack pipeline. Call once per round before the protocol
    /// round runs; `views` must cover exactly the coalition's members.
    pub fn on_round_start(&mut self, round: usize, views: &[AdversaryView<'_>]) -> Result<()> {
        if round == self.schedule.start_round {
            self.activate(views)
        } else if round > self.schedule.start_round
            && self.shared.is_some()
            && (round - self.schedule.start_round) % self.schedule.refresh_every == 0
        {
            self.refresh_poison(views)
        } else {
            Ok(())
        }
    }

    /// The poisoning hook for a round at or after the start round.
    pub fn active_hook(&self, round: usize) -> Result<&Self> {
        if round < self.schedule.start_round {
            return Err(Error::invalid(format!(
                "attack phase queried at round {round}, before start round {}",
                self.schedule.start_round
            )));
        }
        if self.shared.is_none() {
            return Err(Error::invalid("attack phase queried before activation"));
        }
        Ok(self)
    }

    fn activate(&mut self, views: &[AdversaryView<'_>]) -> Result<()> {
        // Step 1: every member infers labels with its own surrogate.
        let mut per_member_estimates = Vec::with_capacity(self.members.len());
        let mut surrogates: Vec<SurrogateModel> = Vec::with_capacity(self.members.len());
        for member in &self.members {
            let view = find_view(views, member.participant_id)?;
            let surrogate = train_surrogate(
                view.bottom,
                &member.aux,
                self.schedule.surrogate_hidden,
                self.schedule.surrogate_epochs,
                self.schedule.surrogate_lr,
                self.schedule.unrecognized_threshold,
                &mut self.rng,
            )?;
            per_member_estimates.push(infer_labels(&surrogate, view.bottom, view.shard_rows)?);
            surrogates.push(surrogate);
        }
        let estimates = if per_member_estimates.len() >= 2 {
            vote_labels(&per_member_estimates)?
        } else {
            per_member_estimates[0].clone()
        };

        // Step 2.1: class pair, chosen in the first member's embedding space.
        let coordinator = find_view(views, self.members[0].participant_id)?;
        let pair = select_classes(
            self.schedule.selection,
            coordinator.bottom,
            coordinator.shard_rows,
            &estimates,
            &mut self.rng,
        )?;

        let source_rows: Vec<usize> = estimates
            .iter()
            .enumerate()
            .filter(|&(_, &e)| e == pair.source)
            .map(|(i, _)| i)
            .collect();
        let target_rows: Vec<usize> = estimates
            .iter()
            .enumerate()
            .filter(|&(_, &e)| e == pair.target)
            .map(|(i, _)| i)
            .collect();
        if source_rows.is_empty() || target_rows.is_empty() {
            return Err(Error::invalid("selected classes have no estimated members"));
        }

        // Step 3 sample draw: a shared p% subset of the estimated target
        // class, floor-rounded.
        let poison_count =
            ((self.schedule.budget_pct / 100.0) * target_rows.len() as f64).floor() as usize;
        let poison_ids = sample_without_replacement(&target_rows, poison_count, &mut self.rng);
        let poison_index: HashMap<usize, usize> = poison_ids
            .iter()
            .enumerate()
            .map(|(pos, &id)| (id, pos))
            .collect();

        // Steps 2.2 + 3 per member: place the (sub-)trigger, clone and
        // trigger the sources, learn bounded noise for the shared subset.
        for (member, surrogate) in self.members.iter_mut().zip(&surrogates) {
            let view = find_view(views, member.participant_id)?;
            let trigger = place_trigger(
                &member.template,
                view,
                surrogate,
                &source_rows,
                &mut self.rng,
            )?;

            let mut triggered_sources = view.shard_rows.select_rows(&source_rows)?;
            for r in 0..triggered_sources.rows() {
                let t = apply_trigger(triggered_sources.row(r), &trigger)?;
                triggered_sources.row_mut(r).copy_from_slice(&t);
            }

            let target_subset = view.shard_rows.select_rows(&poison_ids)?;
            let epsilon = match self.schedule.epsilon {
                EpsilonRule::Absolute(e) => e,
                EpsilonRule::RelativeToTargetNorm(factor) => {
                    let all_targets = view.shard_rows.select_rows(&target_rows)?;
                    factor * mean_row_norm(&all_targets)
                }
                EpsilonRule::RelativeToPairDistance(factor) => {
                    factor * mean_pair_distance(&target_subset, &triggered_sources)
                }
            };
            let poisoned_rows = if poison_ids.is_empty() {
                target_subset.clone()
            } else {
                optimize_poison(
                    view.bottom,
                    &triggered_sources,
                    &target_subset,
                    epsilon,
                    self.schedule.poison_steps,
                    self.schedule.poison_lr,
                )?
            };
            member.plan = Some(MemberPlan {
                trigger,
                target_rows: target_subset,
                poisoned_rows,
                triggered_sources,
                epsilon,
            });
        }

        self.shared = Some(SharedPlan {
            estimates,
            pair,
            poison_ids,
            poison_index,
        });
        Ok(())
    }

    fn refresh_poison(&mut self, views: &[AdversaryView<'_>]) -> Result<()> {
        for member in &mut self.members {
            let Some(plan) = member.plan.as_mut() else {
                continue;
            };
            if plan.target_rows.rows() == 0 {
                continue;
            }
            let view = find_view(views, member.participant_id)?;
            plan.poisoned_rows = super::poison::optimize_poison_warm(
                view.bottom,
                &plan.triggered_sources,
                &plan.target_rows,
                Some(&plan.poisoned_rows),
                plan.epsilon,
                self.schedule.poison_steps,
                self.schedule.poison_lr,
            )?;
        }
        Ok(())
    }
}

impl PoisonHook for Coalition {
    fn poison(&self, participant_id: usize, batch_ids: &[usize], rows: &mut Matrix) {
        let Some(shared) = &self.shared else {
            return;
        };
        let Some(member) = self
            .members
            .iter()
            .find(|m| m.participant_id == participant_id)
        else {
            return;
        };
        let Some(plan) = &member.plan else {
            return;
        };
        for (pos, id) in batch_ids.iter().enumerate() {
            if let Some(&poison_pos) = shared.poison_index.get(id) {
                rows.row_mut(pos)
                    .copy_from_slice(plan.poisoned_rows.row(poison_pos));
            }
        }
    }
}

fn find_view<'a, 'b>(
    views: &'a [AdversaryView<'b>],
    participant_id: usize,
) -> Result<&'a AdversaryView<'b>> {
    views
        .iter()
        .find(|v| v.participant_id == participant_id)
        .ok_or_else(|| {
            Error::invalid(format!(
                "no adversary view for coalition member {participant_id}"
            ))
        })
}

fn mean_row_norm(rows: &Matrix) -> f64 {
    if rows.rows() == 0 {
        return 0.0;
    }
    let total: f64 = (0..rows.rows())
        .map(|r| rows.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    total / rows.rows() as f64
}

fn mean_pair_distance(targets: &Matrix, sources: &Matrix) -> f64 {
    if targets.rows() == 0 || sources.rows() == 0 {
        return 0.0;
    }
    let total: f64 = (0..targets.rows())
        .map(|j| {
            crate::nn::euclidean_distance(targets.row(j), sources.row(j % sources.rows()))
        })
        .sum();
    total / targets.rows() as f64
}

fn sample_without_replacement<R: Rng + ?Sized>(
    pool: &[usize],
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut shuffled = pool.to_vec();
    shuffled.shuffle(rng);
    shuffled.truncate(count);
    shuffled.sort_unstable();
    shuffled
}

/// Divides the configured trigger among the coalition members: column bands
/// for grid windows, index-count shares for tabular triggers.
fn split_template(template: &TriggerTemplate, members: usize) -> Result<Vec<TriggerTemplate>> {
    if members == 1 {
        return Ok(vec![template.clone()]);
    }
    match template {
        TriggerTemplate::Grid {
            window_height,
            window_width,
            fill,
            placement,
        } => {
            // Reuse the geometric splitter to get the band widths.
            let probe = TriggerSpec::Grid {
                grid_height: *window_height,
                window: GridWindow {
                    row: 0,
                    col: 0,
                    height: *window_height,
                    width: *window_width,
                },
                fill: *fill,
            };
            split_trigger(&probe, members)?
                .into_iter()
                .map(|sub| match sub {
                    TriggerSpec::Grid { window, .. } => Ok(TriggerTemplate::Grid {
                        window_height: *window_height,
                        window_width: window.width,
                        fill: *fill,
                        placement: *placement,
                    }),
                    TriggerSpec::Tabular { .. } => unreachable!("grid splits stay grids"),
                })
                .collect()
        }
        TriggerTemplate::Tabular {
            feature_count,
            fill_value,
        } => {
            if members > *feature_count {
                return Err(Error::invalid(format!(
                    "cannot divide {feature_count} trigger features among {members} attackers"
                )));
            }
            let base = feature_count / members;
            let extra = feature_count % members;
            Ok((0..members)
                .map(|i| TriggerTemplate::Tabular {
                    feature_count: base + usize::from(i < extra),
                    fill_value: *fill_value,
                })
                .collect())
        }
    }
}

/// Places one member's trigger on its own slice.
fn place_trigger<R: Rng + ?Sized>(
    template: &TriggerTemplate,
    view: &AdversaryView<'_>,
    surrogate: &SurrogateModel,
    source_rows: &[usize],
    rng: &mut R,
) -> Result<TriggerSpec> {
    match template {
        TriggerTemplate::Grid {
            window_height,
            window_width,
            fill,
            placement,
        } => {
            let (grid_height, grid_width) = view.grid.ok_or_else(|| {
                Error::invalid("grid trigger configured on non-grid data")
            })?;
            if *window_height > grid_height || *window_width > grid_width {
                return Err(Error::invalid(format!(
                    "window {window_height}x{window_width} does not fit the \
                     {grid_height}x{grid_width} adversary strip"
                )));
            }
            let (row, col) = match placement {
                TriggerPlacement::Saliency => {
                    let map = mean_source_saliency(view, surrogate, source_rows)?;
                    plan_trigger_window(&map, grid_height, *window_height, *window_width)?
                }
                TriggerPlacement::Random => (
                    rng.gen_range(0..=(grid_height - *window_height)),
                    rng.gen_range(0..=(grid_width - *window_width)),
                ),
            };
            Ok(TriggerSpec::Grid {
                grid_height,
                window: GridWindow {
                    row,
                    col,
                    height: *window_height,
                    width: *window_width,
                },
                fill: *fill,
            })
        }
        TriggerTemplate::Tabular {
            feature_count,
            fill_value,
        } => {
            let width = view.shard_rows.cols();
            if *feature_count > width {
                return Err(Error::invalid(format!(
                    "tabular trigger wants {feature_count} features, slice has {width}"
                )));
            }
            let map = mean_source_saliency(view, surrogate, source_rows)?;
            let mut order: Vec<usize> = (0..width).collect();
            order.sort_by(|&a, &b| {
                map.values()[b]
                    .partial_cmp(&map.values()[a])
                    .expect("saliency is finite")
                    .then(a.cmp(&b))
            });
            let mut indices: Vec<usize> = order[..*feature_count].to_vec();
            indices.sort_unstable();
            let fill = match fill_value {
                Some(v) => *v,
                None => out_of_range_fill(view.shard_rows),
            };
            Ok(TriggerSpec::Tabular {
                indices,
                fill_value: fill,
            })
        }
    }
}

/// Mean saliency over the estimated source rows, each taken at the
/// surrogate's own predicted label through the composed bottom+surrogate
/// classifier.
fn mean_source_saliency(
    view: &AdversaryView<'_>,
    surrogate: &SurrogateModel,
    source_rows: &[usize],
) -> Result<SaliencyMap> {
    let composed = DenseNet::stack(&[view.bottom, &surrogate.net])?;
    let rows = view.shard_rows.select_rows(source_rows)?;
    let logits = composed.forward(&rows)?.into_output();
    let predicted = crate::nn::argmax_rows(&logits);
    let maps: Vec<SaliencyMap> = (0..rows.rows())
        .map(|r| input_saliency(&composed, rows.row(r), predicted[r]))
        .collect::<Result<_>>()?;
    SaliencyMap::mean(&maps)
}

/// A fill value beyond the usual range of the slice: max + 3 standard
/// deviations over all entries.
fn out_of_range_fill(rows: &Matrix) -> f64 {
    let values = rows.as_slice();
    if values.is_empty() {
        return 1.0;
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    max + 3.0 * var.sqrt()
}
