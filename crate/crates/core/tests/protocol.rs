mod common;

use common::{blobs, small_config};
use fedsim::cost::CostModel;
use fedsim::data::{make_synthetic, split_holdout, Dataset, Partition, Provenance};
use fedsim::model::{evaluate_rows, train_epochs, Params};
use fedsim::protocol::{run_fedavg, run_fedx, FederatedData, Federation, Refiner, ScoreReport};
use fedsim::rng::{seeded, stream, Stream};
use rand::seq::SliceRandom;

#[test]
fn fedavg_with_one_client_is_local_training() {
    let data = blobs(200, 5, 3, 1, 11);
    let cfg = small_config(1, 5, 3, 11);
    let report = run_fedavg(&cfg, &data).unwrap();

    let mut global =
        Params::<f32>::xavier(&cfg.layers, &mut stream(cfg.seed, Stream::Init, 0)).unwrap();
    let mut rng = stream(cfg.seed, Stream::Client, 0);
    let (train, _) = split_holdout(&data.partition.assignments[0]);
    for row in &report.rows {
        global = train_epochs(&global, &data.train, &train, &cfg.sgd, &mut rng)
            .unwrap()
            .params;
        assert_eq!(row.global_digest, global.digest(), "round {}", row.round);
    }
}

#[test]
fn fedx_global_is_always_an_uploaded_client_model() {
    let data = blobs(300, 6, 3, 5, 2);
    let report = run_fedx(&small_config(5, 6, 3, 2), &data, "fedbwo").unwrap();
    assert_eq!(report.rows.len(), 3);
    for (row, trace) in report.rows.iter().zip(&report.trace) {
        let best = row.best_client_id.unwrap();
        assert!(trace.uploads.contains(&(best, row.global_digest.clone())));

        let mut argmin = trace.scores[0];
        for &s in &trace.scores[1..] {
            if s.1 < argmin.1 || (s.1 == argmin.1 && s.0 < argmin.0) {
                argmin = s;
            }
        }
        assert_eq!(best, argmin.0);
        assert_eq!(row.best_score, Some(argmin.1));
    }
}

#[test]
fn fetched_model_reproduces_the_reported_score() {
    let data = blobs(300, 6, 3, 4, 5);
    let cfg = small_config(4, 6, 3, 5);
    let mut fed = Federation::new(cfg, &data, CostModel::ScoreOnly).unwrap();
    for round in 1..=2 {
        fed.ledger.open_round(round);
        let r = fed.fedx_round().unwrap();
        let holdout = &fed.clients[r.best_id].holdout;
        let loss = evaluate_rows(&fed.server.global_params, &data.train, holdout)
            .unwrap()
            .loss as f32;
        assert!(
            (loss - r.best_score).abs() <= 1e-6,
            "{loss} vs {}",
            r.best_score
        );
    }
}

#[test]
fn best_model_fetch_costs_request_and_weights() {
    let data = blobs(100, 4, 2, 2, 1);
    let cfg = small_config(2, 4, 2, 1);
    let mut fed = Federation::new(cfg, &data, CostModel::ScoreOnly).unwrap();
    fed.ledger.open_round(1);
    assert!(matches!(
        fed.get_best_model(Some(1)),
        Err(fedsim::Error::Protocol(_))
    ));
    assert!(matches!(
        fed.get_best_model(None),
        Err(fedsim::Error::Protocol(_))
    ));

    let model = fed.server.global_params.clone();
    fed.clients[1].current_params = Some(model.clone());
    let before = *fed.ledger.entries.last().unwrap();
    let fetched = fed.get_best_model(Some(1)).unwrap();
    let after = *fed.ledger.entries.last().unwrap();
    assert_eq!(fetched, model);
    assert_eq!(after.up_bytes - before.up_bytes, model.model_bytes());
    assert_eq!(after.down_bytes - before.down_bytes, 8);
}

#[test]
fn separable_client_wins_over_label_noise() {
    let clean = make_synthetic::<f32>(500, 6, 3, 8.0, 21).unwrap();
    let (train, test) = clean.split_tail(100).unwrap();
    let mut labels = train.labels().to_vec();
    labels[..200].shuffle(&mut seeded(99));
    let noisy = Dataset::new(
        train.features().to_vec(),
        labels,
        6,
        3,
        Provenance::Synthetic,
    )
    .unwrap();
    let data = FederatedData {
        train: noisy,
        test,
        partition: Partition {
            assignments: vec![(0..200).collect(), (200..400).collect()],
        },
    };
    let mut cfg = small_config(2, 6, 3, 4);
    cfg.stop.max_rounds = 10;
    let report = run_fedx(&cfg, &data, "fedbwo").unwrap();
    let wins = report
        .rows
        .iter()
        .filter(|r| r.best_client_id == Some(1))
        .count();
    assert!(
        wins * 10 >= report.rows.len() * 8,
        "clean client won {wins} of {}",
        report.rows.len()
    );
}

#[test]
fn zero_learning_rate_keeps_the_global_model() {
    let data = blobs(200, 5, 3, 4, 8);
    let mut cfg = small_config(4, 5, 3, 8);
    cfg.sgd.learning_rate = 0.0;
    cfg.refiner = Refiner::Sgd;
    let initial = Params::<f32>::xavier(&cfg.layers, &mut stream(cfg.seed, Stream::Init, 0))
        .unwrap()
        .digest();
    for report in [
        run_fedavg(&cfg, &data).unwrap(),
        run_fedx(&cfg, &data, "hillclimb").unwrap(),
    ] {
        assert!(
            report.rows.iter().all(|r| r.global_digest == initial),
            "{}",
            report.strategy
        );
    }
}

#[test]
fn parallel_and_sequential_runs_agree() {
    let data = blobs(300, 6, 3, 5, 3);
    let mut cfg = small_config(5, 6, 3, 3);
    let seq = (
        run_fedavg(&cfg, &data).unwrap(),
        run_fedx(&cfg, &data, "fedbwo").unwrap(),
    );
    cfg.parallel = true;
    let par = (
        run_fedavg(&cfg, &data).unwrap(),
        run_fedx(&cfg, &data, "fedbwo").unwrap(),
    );
    assert_eq!(seq.0.to_jsonl(), par.0.to_jsonl());
    assert_eq!(seq.1.to_jsonl(), par.1.to_jsonl());
}

#[test]
fn ledgers_match_the_closed_forms() {
    for (i, fraction) in [1.0, 0.5, 0.2].into_iter().enumerate() {
        let data = blobs(200, 4, 2, 5, i as u64);
        let mut cfg = small_config(5, 4, 2, i as u64);
        cfg.fraction = fraction;
        for report in [
            run_fedavg(&cfg, &data).unwrap(),
            run_fedx(&cfg, &data, "fedbwo").unwrap(),
        ] {
            let check = fedsim::cost::ledger_assert(&report).unwrap();
            assert_eq!(check.expected_up, check.actual_up);
            assert_eq!(check.expected_down, check.actual_down);
        }
    }
}

#[test]
fn score_reports_are_eight_bytes() {
    let r = ScoreReport {
        client_id: 7,
        score: 0.25,
    };
    let wire = r.encode();
    assert_eq!(wire.len(), 8);
    assert_eq!(ScoreReport::decode(&wire).unwrap(), r);
    assert!(ScoreReport::decode(&wire[..7]).is_err());
}

#[test]
fn partition_and_config_must_agree() {
    let data = blobs(100, 4, 2, 3, 0);
    let cfg = small_config(4, 4, 2, 0);
    assert!(Federation::new(cfg, &data, CostModel::FedAvg).is_err());
}
