//! Wires data, protocol, attack, and defense into one seeded experiment.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversary::{AdversaryView, AuxiliarySet, Coalition, UNRECOGNIZED};
use crate::data::{
    generate_blobs, generate_grid_images, load_csv, sample_auxiliary, vertical_split, Dataset,
    FeatureShard, SplitPlan,
};
use crate::error::{Error, Result};
use crate::nn::DenseNet;
use crate::vfl::{evaluate_asr, evaluate_main_task, run_training_round, Participant, Role, Server};

use super::config::{DatasetConfig, ExperimentConfig};
use super::report::{AsrCheckpoint, ExperimentReport};

/// Component seeds derived from the experiment seed in a fixed order, so
/// one component's RNG appetite never disturbs another's.
struct SeedPlan {
    data: u64,
    init: u64,
    protocol: u64,
    attack: u64,
    defense: u64,
}

impl SeedPlan {
    fn derive(seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        SeedPlan {
            data: master.next_u64(),
            init: master.next_u64(),
            protocol: master.next_u64(),
            attack: master.next_u64(),
            defense: master.next_u64(),
        }
    }
}

fn build_dataset(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match &config.dataset {
        DatasetConfig::Blobs {
            classes,
            features,
            per_class_train,
            per_class_test,
            spread,
            center_distance,
        } => {
            let all = generate_blobs(
                *classes,
                *features,
                per_class_train + per_class_test,
                *spread,
                *center_distance,
                &mut rng,
            )?;
            all.split_train_test(*per_class_train)
        }
        DatasetConfig::Grid {
            classes,
            height,
            width,
            per_class_train,
            per_class_test,
            noise,
        } => {
            let all = generate_grid_images(
                *classes,
                *height,
                *width,
                per_class_train + per_class_test,
                *noise,
                &mut rng,
            )?;
            all.split_train_test(*per_class_train)
        }
        DatasetConfig::Csv {
            train_path,
            test_path,
        } => {
            let train = load_csv(Path::new(train_path))?;
            let mut test = load_csv(Path::new(test_path))?;
            if test.num_classes < train.num_classes {
                test.num_classes = train.num_classes;
            }
            Ok((train, test))
        }
    }
}

struct ExperimentState {
    server: Server,
    participants: Vec<Participant>,
    test_shards: Vec<FeatureShard>,
    test_labels: Vec<usize>,
    train_labels: Vec<usize>,
    coalition: Option<Coalition>,
    shard_grids: Vec<Option<(usize, usize)>>,
    known_classes: Option<Vec<usize>>,
}

fn setup(config: &ExperimentConfig, seed: u64) -> Result<ExperimentState> {
    config.validate()?;
    let seeds = SeedPlan::derive(seed);
    let (full_train, test) = build_dataset(config, seeds.data)?;
    let num_classes = full_train.num_classes;

    // The adversary's auxiliary rows leave the protocol's training set.
    let attack_on = config.attack_schedule().is_some();
    let mut attack_rng = ChaCha8Rng::seed_from_u64(seeds.attack);
    let (train, aux_rows) = if attack_on {
        let aux_cfg = &config.attack.as_ref().expect("attack checked").auxiliary;
        let draw = sample_auxiliary(
            &full_train,
            aux_cfg.per_class,
            aux_cfg.known_fraction,
            &mut attack_rng,
        )?;
        let ids: BTreeSet<usize> = draw.ids.iter().copied().collect();
        let (aux_data, train) = full_train.partition(&ids)?;
        (train, Some((aux_data, draw.known_classes)))
    } else {
        (full_train, None)
    };

    let mut plan = match train.grid {
        Some(dims) => SplitPlan::equal_grid(config.split.participants, dims)?,
        None => SplitPlan::equal(config.split.participants, train.num_features())?,
    };
    plan.adversary_ids = config.split.adversaries.clone();
    plan.validate(train.num_features(), train.grid.as_ref())?;

    let shards = vertical_split(&train.features, &plan)?;
    let test_shards = vertical_split(&test.features, &plan)?;
    let shard_grids: Vec<Option<(usize, usize)>> = shards
        .iter()
        .map(|s| match &train.grid {
            Some(dims) => s.grid_dims(dims).ok().map(|g| (g.height, g.width)),
            None => None,
        })
        .collect();

    // Bottoms in participant order, then the top model, off one init stream.
    let mut init_rng = ChaCha8Rng::seed_from_u64(seeds.init);
    let mut participants = Vec::with_capacity(shards.len());
    for shard in shards {
        let mut dims = vec![shard.width()];
        dims.extend_from_slice(&config.model.bottom_hidden);
        dims.push(config.model.embedding);
        let bottom = DenseNet::new(&dims, &mut init_rng)?;
        let role = if plan.adversary_ids.contains(&shard.participant_id) {
            Role::Adversary
        } else {
            Role::Honest
        };
        participants.push(Participant::new(shard, bottom, role)?);
    }
    let mut top_dims = vec![config.model.embedding * config.split.participants];
    top_dims.extend_from_slice(&config.model.top_hidden);
    top_dims.push(num_classes);
    let top = DenseNet::new(&top_dims, &mut init_rng)?;
    let server = Server::new(
        top,
        train.labels.clone(),
        config.training.learning_rate,
        config.defense_config(seeds.defense),
    )?;

    let mut known = None;
    let coalition = if let Some(schedule) = config.attack_schedule() {
        let (aux_data, known_classes) = aux_rows.expect("attack implies aux draw");
        let template = config.trigger_template().expect("attack implies trigger");
        let members = plan
            .adversary_ids
            .iter()
            .map(|&id| {
                let (start, end) = plan.ranges[id];
                let samples = aux_data.features.slice_cols(start, end)?;
                let aux = AuxiliarySet::new(
                    samples,
                    aux_data.labels.clone(),
                    known_classes.clone(),
                    num_classes,
                )?;
                Ok((id, aux))
            })
            .collect::<Result<Vec<_>>>()?;
        known = Some(known_classes);
        Some(Coalition::new(
            schedule,
            template,
            members,
            attack_rng.next_u64(),
        )?)
    } else {
        None
    };

    Ok(ExperimentState {
        server,
        participants,
        test_shards,
        test_labels: test.labels,
        train_labels: train.labels,
        coalition,
        shard_grids,
        known_classes: known,
    })
}

fn adversary_views<'a>(state: &'a ExperimentState) -> Vec<AdversaryView<'a>> {
    state
        .participants
        .iter()
        .enumerate()
        .filter(|(_, p)| p.role == Role::Adversary)
        .map(|(idx, p)| AdversaryView {
            participant_id: p.id,
            bottom: &p.bottom,
            shard_rows: &p.shard.rows,
            grid: state.shard_grids[idx],
        })
        .collect()
}

/// Runs one seeded experiment end to end.
pub fn run_experiment(config: &ExperimentConfig, seed: u64) -> Result<ExperimentReport> {
    let started = Instant::now();
    let mut state = setup(config, seed)?;
    let total_rounds = config.training.rounds;
    let checkpoint_every = config.report.checkpoint_every.max(1);
    let n_train = state.train_labels.len();
    let all_ids: Vec<usize> = (0..n_train).collect();
    let mut protocol_rng = ChaCha8Rng::seed_from_u64(SeedPlan::derive(seed).protocol);

    let mut mta_per_round = Vec::with_capacity(total_rounds);
    let mut asr_checkpoints = Vec::new();
    let mut poison_gap_start = None;

    let start_round = state.coalition.as_ref().map(|c| c.schedule().start_round);

    for round in 0..total_rounds {
        if let Some(coalition) = state.coalition.as_mut() {
            // Views borrow participants immutably; scoped so the protocol
            // round below can borrow mutably.
            let views: Vec<AdversaryView<'_>> = state
                .participants
                .iter()
                .enumerate()
                .filter(|(_, p)| p.role == Role::Adversary)
                .map(|(idx, p)| AdversaryView {
                    participant_id: p.id,
                    bottom: &p.bottom,
                    shard_rows: &p.shard.rows,
                    grid: state.shard_grids[idx],
                })
                .collect();
            coalition.on_round_start(round, &views)?;
            if Some(round) == start_round {
                poison_gap_start = Some(coalition.poison_gap(&views)?);
            }
        }

        let batches: Vec<Vec<usize>> = match config.training.batch_size {
            None => vec![all_ids.clone()],
            Some(size) => {
                let mut order = all_ids.clone();
                order.shuffle(&mut protocol_rng);
                order.chunks(size).map(|c| c.to_vec()).collect()
            }
        };

        let attacking = matches!(start_round, Some(s) if round >= s);
        for batch in &batches {
            let hook = if attacking {
                Some(
                    state
                        .coalition
                        .as_ref()
                        .expect("attacking implies coalition")
                        .active_hook(round)? as &dyn crate::adversary::PoisonHook,
                )
            } else {
                None
            };
            run_training_round(&mut state.server, &mut state.participants, batch, round, hook)?;
        }

        let eval = evaluate_main_task(
            &state.server,
            &state.participants,
            &state.test_shards,
            &state.test_labels,
        )?;
        mta_per_round.push(eval.accuracy);

        if attacking {
            let coalition = state.coalition.as_ref().expect("attacking implies coalition");
            let s = start_round.expect("attacking implies start round");
            let at_checkpoint = (round - s) % checkpoint_every == 0 || round + 1 == total_rounds;
            if at_checkpoint {
                let pair = coalition
                    .class_pair()
                    .ok_or_else(|| Error::invalid("attack active without a class pair"))?;
                let asr = evaluate_asr(
                    &state.server,
                    &state.participants,
                    &coalition.triggers(),
                    pair.source,
                    pair.target,
                    &state.test_shards,
                    &state.test_labels,
                )?;
                asr_checkpoints.push(AsrCheckpoint { round, asr });
            }
        }
    }

    let final_eval = evaluate_main_task(
        &state.server,
        &state.participants,
        &state.test_shards,
        &state.test_labels,
    )?;

    // Harness-side label-inference scoring; the coalition never sees it.
    let lia = state.coalition.as_ref().and_then(|c| c.estimates()).map(|estimates| {
        let correct = estimates
            .iter()
            .zip(&state.train_labels)
            .filter(|(&e, &t)| e != UNRECOGNIZED && e == t)
            .count();
        correct as f64 / state.train_labels.len() as f64
    });

    let poison_gap_final = match state.coalition.as_ref() {
        Some(c) if c.class_pair().is_some() => Some(c.poison_gap(&adversary_views(&state))?),
        _ => None,
    };

    let final_asr = asr_checkpoints.last().map(|c| c.asr);
    let final_mta = final_eval.accuracy;
    let suggested_start_round = mta_per_round
        .iter()
        .position(|&m| m >= 0.7 * final_mta)
        .map(|r| r.max(1));

    Ok(ExperimentReport {
        seed,
        mta_per_round,
        asr_checkpoints,
        lia,
        final_mta,
        final_precision: final_eval.precision,
        final_recall: final_eval.recall,
        final_asr,
        class_pair: state
            .coalition
            .as_ref()
            .and_then(|c| c.class_pair())
            .map(|p| (p.source, p.target)),
        known_classes: state.known_classes.clone(),
        poisoned_rows: state.coalition.as_ref().and_then(|c| c.poison_ids()).map(|p| p.len()),
        poison_gap_start,
        poison_gap_final,
        suggested_start_round,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}
