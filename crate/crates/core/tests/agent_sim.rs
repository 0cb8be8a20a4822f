use hfnn::agent_sim::{privacy_audit, replay, run_branch, run_stage1, AgentShard, MessageKind, Payload, Transcript};
use hfnn::clustering::{
    distributed_kmeans, width_floor, AdmmParams, ConvergenceCriteria, MUpdate, PoolDenominator,
};
use hfnn::Error;
use ndarray::{concatenate, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn blobs(seed: u64, n: usize, d: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |(i, _)| (i % 3) as f64 * 4.0 + rng.random_range(-1.0..1.0))
}

fn split_rows(x: &Array2<f64>, agents: usize) -> Vec<Array2<f64>> {
    let n = x.nrows();
    (0..agents)
        .map(|l| {
            let rows: Vec<usize> = (0..n).filter(|i| i % agents == l).collect();
            x.select(Axis(0), &rows)
        })
        .collect()
}

fn shards(parts: &[Array2<f64>]) -> Vec<AgentShard<'_, f64>> {
    parts
        .iter()
        .enumerate()
        .map(|(agent_id, x)| AgentShard { agent_id, x: x.view() })
        .collect()
}

fn params(x: ArrayView2<'_, f64>, rules: usize, rho: f64, seed: u64, m_update: MUpdate) -> AdmmParams<f64> {
    AdmmParams {
        rules,
        rho,
        criteria: ConvergenceCriteria::new(1e-4, 1e-4, 60).unwrap(),
        m_update,
        pool_denominator: PoolDenominator::Cluster,
        width_floor: width_floor(x),
        seed,
    }
}

#[test]
fn message_run_equals_single_loop_bitwise() {
    for seed in 0..6u64 {
        for agents in [1, 2, 5] {
            for (rules, rho) in [(1, 1.0), (3, 0.5), (4, 20.0)] {
                let mode = if seed % 2 == 0 { MUpdate::Exact } else { MUpdate::Mean };
                let x = blobs(seed, 90, 3);
                let parts = split_rows(&x, agents);
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                let p = params(x.view(), rules, rho, seed, mode);
                let direct = distributed_kmeans(&views, &p).unwrap();
                let (live, _) = run_branch(0, &shards(&parts), &p).unwrap();
                assert_eq!(live, direct, "seed {seed}, L = {agents}, K = {rules}");
            }
        }
    }
}

#[test]
fn replay_reproduces_centers_and_widths_bitwise() {
    let x1 = blobs(3, 120, 3);
    let x2 = blobs(4, 120, 2);
    let (p1, p2) = (split_rows(&x1, 4), split_rows(&x2, 4));
    let out = run_stage1(
        &[shards(&p1), shards(&p2)],
        &[
            params(x1.view(), 3, 1.0, 7, MUpdate::Exact),
            params(x2.view(), 2, 1.0, 8, MUpdate::Exact),
        ],
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.transcript.jsonl");
    out.transcript.save(&path).unwrap();
    let loaded: Transcript<f64> = Transcript::load(&path).unwrap();
    assert_eq!(loaded, out.transcript);

    let replayed = replay(&loaded).unwrap();
    assert_eq!(replayed.len(), 2);
    for (r, live) in replayed.iter().zip(&out.branches) {
        assert_eq!(r.centers, live.centers);
        assert_eq!(r.widths, live.widths);
        assert_eq!(r.rounds, live.rounds);
        assert_eq!(r.converged, live.converged);
    }
}

fn sample_transcript() -> Transcript<f64> {
    let x = blobs(11, 60, 2);
    let parts = split_rows(&x, 3);
    let mut p = params(x.view(), 2, 1.0, 0, MUpdate::Exact);
    p.criteria.eps_primal = 0.0;
    p.criteria.eps_dual = 0.0;
    p.criteria.max_iters = 6;
    let (_, log) = run_branch(0, &shards(&parts), &p).unwrap();
    Transcript::new(log)
}

#[test]
fn missing_round_is_malformed() {
    let mut t = sample_transcript();
    assert!(replay(&t).is_ok());
    t.messages.retain(|m| m.t != 3);
    assert!(matches!(replay(&t), Err(Error::MalformedTranscript(_))));
}

#[test]
fn duplicated_or_tampered_messages_are_malformed() {
    let t = sample_transcript();
    let at = t
        .messages
        .iter()
        .position(|m| m.kind() == MessageKind::LocalCenters && m.t == 2)
        .unwrap();

    let mut dup = t.clone();
    dup.messages.insert(at, t.messages[at].clone());
    assert!(matches!(replay(&dup), Err(Error::MalformedTranscript(_))));

    let mut tampered = t.clone();
    if let Payload::LocalCenters { contributions, .. } = &mut tampered.messages[at].payload {
        contributions[0][0] += 1e-9;
    }
    assert!(matches!(replay(&tampered), Err(Error::MalformedTranscript(_))));

    assert!(matches!(replay(&Transcript::<f64>::new(vec![])), Err(Error::MalformedTranscript(_))));
}

#[test]
fn replicated_data_gives_the_same_consensus_for_any_agent_count() {
    let x = blobs(5, 150, 3);
    let base = params(x.view(), 3, 1.0, 21, MUpdate::Exact);
    let run = |agents: usize| {
        let parts = vec![x.clone(); agents];
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        distributed_kmeans(&views, &base).unwrap()
    };
    let one = run(1);
    for agents in [2, 5] {
        let many = run(agents);
        let gap = (&many.centers - &one.centers).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(gap <= 1e-9, "L = {agents}: centers differ by {gap}");
        let wgap = (&many.widths - &one.widths).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(wgap <= 1e-9, "L = {agents}: widths differ by {wgap}");
    }
}

#[test]
fn live_transcripts_pass_the_audit() {
    let x = blobs(2, 200, 3);
    let parts = split_rows(&x, 5);
    let (_, log) = run_branch(0, &shards(&parts), &params(x.view(), 4, 1.0, 1, MUpdate::Exact)).unwrap();
    let report = privacy_audit(&Transcript::new(log.clone())).unwrap();
    assert!(report.is_clean(), "{report:?}");
    assert!(report.sizes_match());
    assert!(report.rounds.iter().all(|r| r.reals == 5 * 4 * 4));

    // No transmitted vector coincides with a training row.
    let all = concatenate(Axis(0), &parts.iter().map(|p| p.view()).collect::<Vec<_>>()).unwrap();
    for m in &log {
        let vectors: &[Vec<f64>] = match &m.payload {
            Payload::LocalCenters { contributions, .. } => contributions,
            Payload::GlobalBroadcast { centers } => centers,
            _ => continue,
        };
        for v in vectors {
            assert!(all.rows().into_iter().all(|r| r.to_vec() != *v));
        }
    }
}
