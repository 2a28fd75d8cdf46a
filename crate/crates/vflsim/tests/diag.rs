//! Scratch diagnostics for attack dynamics; run with
//! `cargo test -p vflsim --test diag -- --ignored --nocapture`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vflsim::adversary::{AdversaryView, AuxiliarySet, Coalition, PoisonHook};
use vflsim::data::{sample_auxiliary, vertical_split, GridDims, SplitPlan};
use vflsim::harness::ExperimentConfig;
use vflsim::nn::{DenseNet, Matrix};
use vflsim::vfl::{
    concat_embeddings, evaluate_asr, evaluate_main_task, run_training_round, Participant, Role,
    Server,
};

const CONFIG: &str = r#"
seeds = [0]

[dataset]
kind = "grid"
classes = 4
height = 12
width = 12
per_class_train = 300
per_class_test = 100
noise = 0.25

[split]
participants = 2
adversaries = [1]

[model]
bottom_hidden = [32, 32]
embedding = 16
top_hidden = [32]

[training]
rounds = 140
learning_rate = 0.1
batch_size = 128

[attack]
start_round = 84
budget_pct = 10.0
selection = "optimal"
poison_lr = 0.2
refresh_every = 1

[attack.auxiliary]
per_class = 40

[attack.trigger]
mode = "grid"
window = [5, 5]
fill = 1.5
placement = "saliency"
"#;

fn centroid(m: &Matrix) -> Vec<f64> {
    let mut c = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (ci, v) in c.iter_mut().zip(m.row(r)) {
            *ci += v;
        }
    }
    for ci in &mut c {
        *ci /= m.rows().max(1) as f64;
    }
    c
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[test]
#[ignore]
fn attack_geometry() {
    for seed in [0u64, 4] {
        println!("==================== seed {seed} ====================");
        run_one(seed);
    }
}

fn run_one(seed: u64) {
    let config = ExperimentConfig::from_toml(CONFIG).unwrap();
    // Mirror the runner's seed derivation.
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let data_seed = master.next_u64();
    let init_seed = master.next_u64();
    let _protocol = master.next_u64();
    let attack_seed = master.next_u64();
    let _defense = master.next_u64();

    let mut data_rng = ChaCha8Rng::seed_from_u64(data_seed);
    let all = vflsim::data::generate_grid_images(4, 12, 12, 400, 0.25, &mut data_rng).unwrap();
    let (full_train, test) = all.split_train_test(300).unwrap();

    let mut attack_rng = ChaCha8Rng::seed_from_u64(attack_seed);
    let draw = sample_auxiliary(&full_train, 40, 1.0, &mut attack_rng).unwrap();
    let ids: std::collections::BTreeSet<usize> = draw.ids.iter().copied().collect();
    let (aux_data, train) = full_train.partition(&ids).unwrap();

    let dims = GridDims {
        height: 12,
        width: 12,
    };
    let mut plan = SplitPlan::equal_grid(2, dims).unwrap();
    plan.adversary_ids = vec![1];
    let shards = vertical_split(&train.features, &plan).unwrap();
    let test_shards = vertical_split(&test.features, &plan).unwrap();

    let mut init_rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut participants: Vec<Participant> = shards
        .into_iter()
        .map(|s| {
            let bottom = DenseNet::new(&[s.width(), 32, 32, 16], &mut init_rng).unwrap();
            let role = if s.participant_id == 1 {
                Role::Adversary
            } else {
                Role::Honest
            };
            Participant::new(s, bottom, role).unwrap()
        })
        .collect();
    let top = DenseNet::new(&[32, 32, 4], &mut init_rng).unwrap();
    let mut server = Server::new(
        top,
        train.labels.clone(),
        0.2,
        vflsim::defense::DefenseConfig::off(),
    )
    .unwrap();

    let (a_start, a_end) = plan.ranges[1];
    let aux = AuxiliarySet::new(
        aux_data.features.slice_cols(a_start, a_end).unwrap(),
        aux_data.labels.clone(),
        draw.known_classes.clone(),
        4,
    )
    .unwrap();
    let mut coalition = Coalition::new(
        config.attack_schedule().unwrap(),
        config.trigger_template().unwrap(),
        vec![(1, aux)],
        attack_rng.next_u64(),
    )
    .unwrap();

    let n = train.labels.len();
    let all_ids: Vec<usize> = (0..n).collect();
    let mut protocol_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b9);

    for round in 0..140usize {
        {
            let views: Vec<AdversaryView<'_>> = participants
                .iter()
                .filter(|p| p.role == Role::Adversary)
                .map(|p| AdversaryView {
                    participant_id: p.id,
                    bottom: &p.bottom,
                    shard_rows: &p.shard.rows,
                    grid: Some((12, 6)),
                })
                .collect();
            coalition.on_round_start(round, &views).unwrap();
        }
        use rand::seq::SliceRandom;
        let mut order = all_ids.clone();
        order.shuffle(&mut protocol_rng);
        for batch in order.chunks(128) {
            let hook = if round >= 84 {
                Some(coalition.active_hook(round).unwrap() as &dyn PoisonHook)
            } else {
                None
            };
            run_training_round(&mut server, &mut participants, batch, round, hook).unwrap();
        }

        if round >= 84 && (round % 5 == 4 || round == 84 || round == 139) {
            diagnose(&server, &participants, &test_shards, &test.labels, &coalition, round);
        }
    }
}

fn diagnose(
    server: &Server,
    participants: &[Participant],
    test_shards: &[vflsim::data::FeatureShard],
    test_labels: &[usize],
    coalition: &Coalition,
    round: usize,
) {
    let eval = evaluate_main_task(server, participants, test_shards, test_labels).unwrap();
    let Some(pair) = coalition.class_pair() else {
        println!("round {round}: MTA {:.3} (attack not active)", eval.accuracy);
        return;
    };
    let triggers = coalition.triggers();
    let asr = evaluate_asr(
        server,
        participants,
        &triggers,
        pair.source,
        pair.target,
        test_shards,
        test_labels,
    )
    .unwrap();

    // Per-class accuracy on clean test data.
    let preds = vflsim::vfl::predict(server, participants, test_shards).unwrap();
    let mut per_class = vec![(0usize, 0usize); 4];
    for (p, &l) in preds.iter().zip(test_labels) {
        per_class[l].1 += 1;
        if *p == l {
            per_class[l].0 += 1;
        }
    }
    let accs: Vec<String> = per_class
        .iter()
        .map(|(c, t)| format!("{:.2}", *c as f64 / *t as f64))
        .collect();

    // Embedding geometry on the adversary side.
    let adv = &participants[1];
    let shard = &test_shards[1];
    let source_rows: Vec<usize> = (0..test_labels.len())
        .filter(|&i| test_labels[i] == pair.source)
        .collect();
    let target_rows: Vec<usize> = (0..test_labels.len())
        .filter(|&i| test_labels[i] == pair.target)
        .collect();
    let mut triggered = shard.rows.select_rows(&source_rows).unwrap();
    for r in 0..triggered.rows() {
        let t = vflsim::adversary::apply_trigger(triggered.row(r), &triggers[0].1).unwrap();
        triggered.row_mut(r).copy_from_slice(&t);
    }
    let e_trig = adv.bottom.forward(&triggered).unwrap().into_output();
    let e_src = adv
        .bottom
        .forward(&shard.rows.select_rows(&source_rows).unwrap())
        .unwrap()
        .into_output();
    let e_tgt = adv
        .bottom
        .forward(&shard.rows.select_rows(&target_rows).unwrap())
        .unwrap()
        .into_output();
    let c_trig = centroid(&e_trig);
    let c_src = centroid(&e_src);
    let c_tgt = centroid(&e_tgt);

    // Mean logit advantage for target vs source on triggered samples.
    let honest = &participants[0];
    let e_hon_src = honest
        .bottom
        .forward(&test_shards[0].rows.select_rows(&source_rows).unwrap())
        .unwrap()
        .into_output();
    let joint = concat_embeddings(&[(0, e_hon_src.clone()), (1, e_trig.clone())]).unwrap();
    let logits = server.top.forward(&joint).unwrap().into_output();
    let mut margin = 0.0;
    for r in 0..logits.rows() {
        margin += logits.get(r, pair.target) - logits.get(r, pair.source);
    }
    margin /= logits.rows() as f64;

    println!(
        "round {round}: MTA {:.3} ASR {asr:.2} pair {:?} per-class {accs:?}\n  \
         |trig-src| {:.2} |trig-tgt| {:.2} |src-tgt| {:.2}  t-vs-s margin on triggered {margin:+.2}",
        eval.accuracy,
        (pair.source, pair.target),
        dist(&c_trig, &c_src),
        dist(&c_trig, &c_tgt),
        dist(&c_src, &c_tgt),
    );
}

#[test]
#[ignore]
fn blob_pair_geometry() {
    for seed in [0u64, 1, 2, 3, 4] {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let data_seed = master.next_u64();
        let init_seed = master.next_u64();
        let mut data_rng = ChaCha8Rng::seed_from_u64(data_seed);
        let all =
            vflsim::data::generate_blobs(4, 16, 375, 0.5, 4.0, &mut data_rng).unwrap();
        let (train, _test) = all.split_train_test(250).unwrap();

        let mut plan = SplitPlan::equal(2, 16).unwrap();
        plan.adversary_ids = vec![1];
        let shards = vertical_split(&train.features, &plan).unwrap();

        let mut init_rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut participants: Vec<Participant> = shards
            .into_iter()
            .map(|s| {
                let bottom = DenseNet::new(&[s.width(), 32, 32, 16], &mut init_rng).unwrap();
                Participant::new(s, bottom, Role::Honest).unwrap()
            })
            .collect();
        let top = DenseNet::new(&[32, 32, 4], &mut init_rng).unwrap();
        let mut server = Server::new(
            top,
            train.labels.clone(),
            0.5,
            vflsim::defense::DefenseConfig::off(),
        )
        .unwrap();

        let n = train.labels.len();
        let ids: Vec<usize> = (0..n).collect();
        let table = |participants: &[Participant], label: &str| {
            let emb = participants[1]
                .bottom
                .forward(&participants[1].shard.rows)
                .unwrap()
                .into_output();
            let mut out = String::new();
            for a in 0..4usize {
                for b in (a + 1)..4 {
                    let ra: Vec<usize> = (0..n).filter(|&i| train.labels[i] == a).collect();
                    let rb: Vec<usize> = (0..n).filter(|&i| train.labels[i] == b).collect();
                    let mut total = 0.0;
                    for &i in &ra {
                        for &j in &rb {
                            total += dist(emb.row(i), emb.row(j));
                        }
                    }
                    out += &format!("{a}{b}:{:.2} ", total / (ra.len() * rb.len()) as f64);
                }
            }
            println!("seed {seed} {label}: {out}");
        };
        table(&participants, "round 0  ");
        for round in 0..120usize {
            run_training_round(&mut server, &mut participants, &ids, round, None).unwrap();
        }
        table(&participants, "round 120");
    }
}
