use probecard::bench::{
    evaluate, gaussian_mixture, generate_workload, run_prober, run_sampling, score, MixtureSpec, WorkloadConfig,
};
use probecard::io::{read_queries, write_queries};
use probecard::{BuildConfig, DistanceMode, DistanceSource, IndexBundle, LshParams, PqParams, ProberConfig};

fn lsh(k: usize) -> BuildConfig {
    BuildConfig {
        lsh: LshParams {
            k_funcs: k,
            target_values: 4,
            seed: 7,
        },
        ..BuildConfig::default()
    }
}

#[test]
fn split_build_tracks_full_build_accuracy() {
    let data = gaussian_mixture(&MixtureSpec::new(8000, 16)).unwrap();
    let workload = generate_workload(
        &data,
        &WorkloadConfig {
            n_queries: Some(6),
            n_cards: 10,
            seed: 2,
            ..WorkloadConfig::default()
        },
    )
    .unwrap();

    let full = IndexBundle::build(data.clone(), lsh(10)).unwrap();
    let (head, tail) = data.split_at(800);
    let mut split = IndexBundle::build(head, lsh(10)).unwrap();
    split.update(&tail).unwrap();

    let cfg = ProberConfig::default();
    let mean = |b: &IndexBundle| {
        let res = run_prober(b, cfg, DistanceSource::Exact, &workload, 11).unwrap();
        evaluate("x", &score(&workload, &res).unwrap()).unwrap().mean
    };
    let (full_q, split_q) = (mean(&full), mean(&split));
    assert!(split_q <= 1.5 * full_q, "split {split_q} vs full {full_q}");
}

#[test]
fn l2_thresholds_end_to_end() {
    let data = gaussian_mixture(&MixtureSpec::new(3000, 8)).unwrap();
    let wl = WorkloadConfig {
        n_queries: Some(3),
        n_cards: 5,
        seed: 4,
        distance_mode: DistanceMode::L2,
    };
    let workload = generate_workload(&data, &wl).unwrap();
    let bundle = IndexBundle::build(data, BuildConfig { d_max: Some(12), ..lsh(12) }).unwrap();
    let exhaustive = ProberConfig {
        s_init: 1.0,
        s_max: 1.0,
        max_visit_fraction: 1.0,
        distance_mode: DistanceMode::L2,
        ..ProberConfig::default()
    };
    let res = run_prober(&bundle, exhaustive, DistanceSource::Exact, &workload, 0).unwrap();
    for (rec, r) in workload.iter().zip(&res) {
        assert_eq!(r.estimate.cardinality, rec.true_cardinality.unwrap() as f64);
    }
    // Full-rate sampling is exact as well.
    let sampled = run_sampling(bundle.dataset(), 1.0, DistanceMode::L2, &workload, 0).unwrap();
    let report = evaluate("sample", &score(&workload, &sampled).unwrap()).unwrap();
    assert_eq!(report.max, 1.0);
}

#[test]
fn saved_bundle_and_workload_reproduce_results() {
    let dir = tempfile::tempdir().unwrap();
    let data = gaussian_mixture(&MixtureSpec::new(2500, 16)).unwrap();
    let workload = generate_workload(
        &data,
        &WorkloadConfig {
            n_queries: Some(2),
            n_cards: 8,
            ..WorkloadConfig::default()
        },
    )
    .unwrap();
    let config = BuildConfig {
        pq: Some(PqParams {
            k_clusters: 32,
            kmeans_iters: 5,
            ..PqParams::for_dim(16)
        }),
        ..lsh(12)
    };
    let bundle = IndexBundle::build(data, config).unwrap();
    bundle.save(dir.path().join("b")).unwrap();
    write_queries(&workload, dir.path().join("w.jsonl")).unwrap();

    let loaded = IndexBundle::load(dir.path().join("b")).unwrap();
    let reread = read_queries(dir.path().join("w.jsonl")).unwrap();
    assert_eq!(reread, workload);
    for source in [DistanceSource::Exact, DistanceSource::Adc] {
        let a = run_prober(&bundle, ProberConfig::default(), source, &workload, 3).unwrap();
        let b = run_prober(&loaded, ProberConfig::default(), source, &reread, 3).unwrap();
        let strip = |v: Vec<probecard::bench::TimedEstimate>| v.into_iter().map(|t| t.estimate).collect::<Vec<_>>();
        assert_eq!(strip(a), strip(b));
    }
}
