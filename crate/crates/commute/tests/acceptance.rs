//! Acceptance gate. Each test prints one PASS/FAIL line for its criterion;
//! run with `cargo test --test acceptance -- --nocapture` to see them all.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use commute::assign::{
    assign_hard, assign_soft, assign_temporal_hard, AssignmentMode, AssignmentPolicy,
    WindowPreset,
};
use commute::cluster::{
    emd_1d, exhaustive_two_medoid_cost, k_medoids, k_medoids_from_distances,
    HourlyDistribution,
};
use commute::flow::{
    flows_from_hard, flows_from_soft, CommuterMarginals, CommutingMode, FlowMatrix, Provenance,
};
use commute::geo::{great_circle_km, GeoPoint};
use commute::ingest::{build_profiles, filter_users, parse_events, UserProfile};
use commute::metrics::{correlation_with_permutation, cpc, daytime_evening_ratio, inout_ratio_stats};
use commute::radiation::{
    alpha_estimate, intervening_population, intervening_population_brute, radiation_one_param,
    radiation_standard, Alpha, RadiationInputs,
};
use commute::synth::{default_config, generate_events, generate_world, SynthConfig, SynthWorld};

fn report(criterion: u32, desc: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("criterion {criterion:2} [{verdict}] {desc}: {detail}");
    assert!(pass, "criterion {criterion} failed ({desc}): {detail}");
}

/// Full in-memory pipeline: world -> events -> profiles (default filters).
fn run_pipeline(config: &SynthConfig) -> (SynthWorld, BTreeMap<String, UserProfile>) {
    let world = generate_world(config).expect("world");
    let mut buf = Vec::new();
    generate_events(&world, config, &mut buf).expect("events");
    let (events, _) = parse_events(buf.as_slice()).expect("parse");
    let (profiles, _) = build_profiles(events, &world.regions);
    let profiles = filter_users(profiles, 12, 30);
    (world, profiles)
}

/// Score an estimate against a truth matrix the way the evaluate command
/// does: apply the commuting mode, rescale the estimate's rows to the
/// truth's outward totals, then CPC.
fn eval_cpc(estimate: &FlowMatrix<f64>, truth: &FlowMatrix<f64>, external: bool) -> f64 {
    let (e, t) = if external {
        (estimate.zero_diagonal(), truth.zero_diagonal())
    } else {
        (estimate.clone(), truth.clone())
    };
    let marginals = CommuterMarginals {
        c: (0..t.k()).map(|i| t.row_sum(i)).collect(),
        n: vec![1.0; t.k()],
    };
    let (e, _) = commute::flow::normalize_rows(&e, &marginals, CommutingMode::All).expect("norm");
    cpc(&e, &t).expect("cpc").cpc
}

fn random_matrix(rng: &mut impl Rng, k: usize) -> FlowMatrix<f64> {
    let ids = (0..k).map(|i| format!("r{i}")).collect();
    let mut m = FlowMatrix::zeros(ids, Provenance::Census);
    for i in 0..k {
        for j in 0..k {
            m.set(i, j, rng.gen_range(0.0..10.0));
        }
    }
    m
}

#[test]
fn criterion_01_cpc_dual_form_identity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut max_gap = 0.0f64;
    for _ in 0..1000 {
        let a = random_matrix(&mut rng, 20);
        let b = random_matrix(&mut rng, 20);
        let r = cpc(&a, &b).expect("cpc");
        max_gap = max_gap.max((r.cpc - r.cpc_alt).abs());
    }
    let elapsed = started.elapsed();
    let pass = max_gap <= 1e-12 && elapsed.as_secs_f64() < 5.0;
    report(
        1,
        "CPC dual-form identity on 1000 random 20x20 pairs",
        pass,
        format!("max |eq4 - eq5| = {max_gap:.2e}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_02_oracle_recovery_hard() {
    let started = Instant::now();
    let config = default_config(2024);
    let (world, profiles) = run_pipeline(&config);
    assert_eq!(profiles.len(), config.commuters.num_users, "all users kept");
    let assignments: Vec<_> = profiles
        .values()
        .map(|p| assign_hard(p, 0.9).expect("hard"))
        .collect();
    let m = flows_from_hard(&assignments, &world.regions).expect("flows");
    let score = eval_cpc(&m, &world.truth, false);
    let elapsed = started.elapsed();
    let pass = score == 1.0 && elapsed.as_secs_f64() < 30.0;
    report(
        2,
        "hard-assignment oracle recovery (7x7, 5000 users, noise 0)",
        pass,
        format!("cpc = {score}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_03_oracle_recovery_temporal() {
    let started = Instant::now();
    let config = default_config(2025);
    let (world, profiles) = run_pipeline(&config);

    let policy = AssignmentPolicy::temporal(
        AssignmentMode::TemporalHard,
        WindowPreset::Restricted,
        true,
    );
    let hard: Vec<_> = profiles
        .values()
        .filter_map(|p| assign_temporal_hard(p, &policy))
        .collect();
    let m_hard = flows_from_hard(&hard, &world.regions).expect("flows");
    let cpc_hard = eval_cpc(&m_hard, &world.truth, false);

    let policy = AssignmentPolicy::temporal(
        AssignmentMode::TemporalSoft,
        WindowPreset::Restricted,
        true,
    );
    let soft: Vec<_> = profiles
        .values()
        .filter_map(|p| assign_soft(p, &policy))
        .collect();
    let m_soft = flows_from_soft(&soft, &world.regions).expect("flows");
    let cpc_soft = eval_cpc(&m_soft, &world.truth, false);

    let elapsed = started.elapsed();
    let pass = cpc_hard == 1.0 && cpc_soft >= 0.99 && elapsed.as_secs_f64() < 60.0;
    report(
        3,
        "temporal oracle recovery (restricted windows, Mon-Fri work)",
        pass,
        format!("temporal_hard cpc = {cpc_hard}, temporal_soft cpc = {cpc_soft}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_04_noise_degradation_and_baseline_ordering() {
    let noise_levels = [0.0, 0.1, 0.3];
    let mut detail = String::new();
    let mut pass = true;
    for seed in 0..5u64 {
        let mut config = default_config(4000 + seed);
        config.commuters.num_users = 2000;
        let mut twitter_cpcs = Vec::new();
        let mut baseline_ok = true;
        for &noise in &noise_levels {
            config.noise.tweet_share = noise;
            config.noise.wanderer_share = noise;
            let (world, profiles) = run_pipeline(&config);
            let assignments: Vec<_> = profiles
                .values()
                .map(|p| assign_hard(p, 0.9).expect("hard"))
                .collect();
            let m = flows_from_hard(&assignments, &world.regions).expect("flows");
            let twitter = eval_cpc(&m, &world.truth, true);
            twitter_cpcs.push(twitter);

            let marginals = CommuterMarginals::from_matrix(
                &world.truth,
                CommutingMode::External,
                world.regions.populations(),
            );
            let inputs = RadiationInputs::from_region_set(&world.regions, marginals);
            let (std_m, _) = radiation_standard(&inputs).expect("radiation");
            let alphas: Vec<f64> = world
                .regions
                .regions()
                .iter()
                .map(|r| alpha_estimate(r.area_km2()).expect("alpha").0)
                .collect();
            let (op_m, _) =
                radiation_one_param(&inputs, &Alpha::PerOrigin(alphas)).expect("radiation");
            let cpc_std = eval_cpc(&std_m, &world.truth, true);
            let cpc_op = eval_cpc(&op_m, &world.truth, true);
            if !(twitter > cpc_std && twitter > cpc_op) {
                baseline_ok = false;
            }
            if noise == 0.3 {
                detail.push_str(&format!(
                    "seed {seed}: twitter {:.3}/{:.3}/{:.3}, radiation std {cpc_std:.3} 1p {cpc_op:.3}; ",
                    twitter_cpcs[0], twitter_cpcs[1], twitter_cpcs[2]
                ));
            }
        }
        let decreasing = twitter_cpcs.windows(2).all(|w| w[0] > w[1]);
        if !(decreasing && baseline_ok) {
            pass = false;
        }
    }
    report(
        4,
        "CPC strictly decreasing in noise; estimator beats both radiation baselines (5 seeds)",
        pass,
        detail,
    );
}

/// Five regions on a line with mixed populations.
fn five_region_inputs(pop_scale: f64, commuters_from_pop: bool) -> RadiationInputs<f64> {
    let ids: Vec<String> = (0..5).map(|i| format!("r{i}")).collect();
    let populations: Vec<f64> = [12_000.0, 45_000.0, 8_000.0, 30_000.0, 20_000.0]
        .iter()
        .map(|p| p * pop_scale)
        .collect();
    let points: Vec<GeoPoint> = [0.0, 0.12, 0.25, 0.41, 0.6]
        .iter()
        .map(|&lon| GeoPoint::new(lon, 0.0))
        .collect();
    let mut distances = vec![vec![0.0; 5]; 5];
    for i in 0..5 {
        for j in 0..5 {
            distances[i][j] = great_circle_km(points[i], points[j]);
        }
    }
    let c: Vec<f64> = if commuters_from_pop {
        populations.iter().map(|p| p * 0.4).collect()
    } else {
        vec![100.0; 5]
    };
    let marginals = CommuterMarginals {
        c,
        n: populations.clone(),
    };
    RadiationInputs::from_parts(ids, populations, distances, marginals)
}

#[test]
fn criterion_05_radiation_invariants() {
    let inputs = five_region_inputs(1.0, true);
    let (m, zero_rows) = radiation_standard(&inputs).expect("radiation");
    let mut row_gap = 0.0f64;
    for i in 0..5 {
        if !zero_rows.contains(&i) {
            row_gap = row_gap.max((m.row_sum(i) - inputs.marginals.c[i]).abs());
        }
    }

    // Uniform population scaling x1000 with the same commuter marginals.
    let mut scaled = five_region_inputs(1000.0, false);
    scaled.marginals.c = vec![100.0; 5];
    let base = {
        let mut b = five_region_inputs(1.0, false);
        b.marginals.c = vec![100.0; 5];
        radiation_standard(&b).expect("radiation").0
    };
    let (scaled_m, _) = radiation_standard(&scaled).expect("radiation");
    let mut scale_gap = 0.0f64;
    for i in 0..5 {
        for j in 0..5 {
            scale_gap = scale_gap.max((base.get(i, j) - scaled_m.get(i, j)).abs());
        }
    }

    // alpha = 1 converges to the standard model as populations grow.
    let big = five_region_inputs(1e6, true);
    let (std_m, _) = radiation_standard(&big).expect("radiation");
    let (op_m, _) = radiation_one_param(&big, &Alpha::Global(1.0)).expect("radiation");
    let mut rel_gap = 0.0f64;
    for i in 0..5 {
        for j in 0..5 {
            let s = std_m.get(i, j);
            if s != 0.0 {
                rel_gap = rel_gap.max(((op_m.get(i, j) - s) / s).abs());
            }
        }
    }

    let pass = row_gap <= 1e-9 && scale_gap <= 1e-9 && rel_gap < 0.01;
    report(
        5,
        "radiation row sums, scaling invariance, 1-param alpha=1 limit",
        pass,
        format!("row gap {row_gap:.2e}, scaling gap {scale_gap:.2e}, max rel gap {rel_gap:.4}"),
    );
}

#[test]
fn criterion_06_alpha_endpoints() {
    let (a36, _) = alpha_estimate(36.0f64 * 36.0).expect("alpha");
    let (a1, _) = alpha_estimate(1.0f64).expect("alpha");
    let (a65, _) = alpha_estimate(65.0f64 * 65.0).expect("alpha");
    let pass = a36 == 1.0 && (a1 - 0.00852).abs() <= 1e-4 && (a65 - 2.195).abs() <= 1e-3;
    report(
        6,
        "area-based alpha endpoints (l = 36, 1, 65 km)",
        pass,
        format!("alpha(36) = {a36}, alpha(1) = {a1:.6}, alpha(65) = {a65:.4}"),
    );
}

#[test]
fn criterion_07_intervening_population_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut pass = true;
    for _ in 0..50 {
        let k = rng.gen_range(2..=20);
        let points: Vec<GeoPoint> = (0..k)
            .map(|_| GeoPoint::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
            .collect();
        // Whole-number populations keep both summation orders exact.
        let populations: Vec<f64> = (0..k).map(|_| rng.gen_range(100..10_000) as f64).collect();
        let mut distances = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                distances[i][j] = great_circle_km(points[i], points[j]);
            }
        }
        let fast = intervening_population(&populations, &distances);
        let brute = intervening_population_brute(&populations, &distances);
        if fast != brute {
            pass = false;
        }
    }
    report(
        7,
        "intervening population equals O(K^3) enumeration on 50 layouts",
        pass,
        "exact equality".into(),
    );
}

fn random_distribution(rng: &mut impl Rng, bins: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..bins).map(|_| rng.gen_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

#[test]
fn criterion_08_emd_metric_axioms() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut pass = true;
    let tol = 1e-9;
    for _ in 0..500 {
        let a = random_distribution(&mut rng, 24);
        let b = random_distribution(&mut rng, 24);
        let c = random_distribution(&mut rng, 24);
        let dab = emd_1d(&a, &b).expect("emd");
        let dba = emd_1d(&b, &a).expect("emd");
        let dbc = emd_1d(&b, &c).expect("emd");
        let dac = emd_1d(&a, &c).expect("emd");
        let daa = emd_1d(&a, &a).expect("emd");
        if daa.abs() > tol || (dab - dba).abs() > tol || dac > dab + dbc + tol {
            pass = false;
        }
    }
    let mut p0 = vec![0.0; 24];
    p0[0] = 1.0;
    let mut p3 = vec![0.0; 24];
    p3[3] = 1.0;
    let point_mass = emd_1d(&p0, &p3).expect("emd");
    pass = pass && point_mass == 3.0;
    report(
        8,
        "EMD identity/symmetry/triangle on 500 triples; EMD(h=0, h=3) = 3",
        pass,
        format!("point-mass emd = {point_mass}"),
    );
}

#[test]
fn criterion_09_k_medoids_matches_exhaustive() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut pass = true;
    let mut max_gap = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(6..=8);
        let dists: Vec<Vec<f64>> = (0..n).map(|_| random_distribution(&mut rng, 24)).collect();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = emd_1d(&dists[i], &dists[j]).expect("emd");
                d[i][j] = v;
                d[j][i] = v;
            }
        }
        let clustering = k_medoids_from_distances(&d, 2, 100).expect("pam");
        let best = exhaustive_two_medoid_cost(&d);
        let gap = (clustering.cost - best).abs();
        max_gap = max_gap.max(gap);
        if gap > 1e-12 {
            pass = false;
        }
    }
    report(
        9,
        "PAM cost equals exhaustive optimum on 20 small instances (K=2)",
        pass,
        format!("max cost gap = {max_gap:.2e}"),
    );
}

#[test]
fn criterion_10_permutation_test_calibration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let replicates = 999;
    let trials = 2000;
    let mut pvals = Vec::with_capacity(trials);
    for t in 0..trials {
        let x: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = correlation_with_permutation(&x, &y, replicates, 5000 + t as u64).expect("perm");
        pvals.push(r.p_value);
    }
    pvals.sort_by(f64::total_cmp);
    let n = pvals.len() as f64;
    let mut ks = 0.0f64;
    for (i, &p) in pvals.iter().enumerate() {
        ks = ks.max(((i + 1) as f64 / n - p).abs());
        ks = ks.max((p - i as f64 / n).abs());
    }

    let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
    let y: Vec<f64> = (0..30).map(|i| (2 * i) as f64 + 1.0).collect();
    let mono = correlation_with_permutation(&x, &y, replicates, 0).expect("perm");
    let expected = 1.0 / (replicates as f64 + 1.0);

    let pass = ks < 0.05 && mono.p_value == expected;
    report(
        10,
        "permutation p-values uniform under the null; monotone data at the floor",
        pass,
        format!("KS = {ks:.4}, monotone p = {}", mono.p_value),
    );
}

#[test]
fn criterion_11_cluster_ratio_signal() {
    // Twelve regions with attractiveness increasing in the index: flows
    // T_ij = a_j give in/out ratios that rise with a_i. The bottom six are
    // residential (evening-heavy tweeting), the top six attractors
    // (daytime-heavy), so the clusters are recoverable from the curves and
    // both ratio families increase together.
    let n = 12usize;
    let attraction: Vec<f64> = (0..n)
        .map(|i| if i < 6 { 1.0 + 0.1 * i as f64 } else { 8.0 + i as f64 })
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("r{i:02}")).collect();
    let mut flows = FlowMatrix::zeros(ids, Provenance::SyntheticTruth);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                flows.set(i, j, attraction[j]);
            }
        }
    }

    let mut dists = Vec::new();
    for i in 0..n {
        let mut weekday = [10u64; 24];
        let (day, evening) = if i < 6 {
            (60 + 10 * i as u64, 300)
        } else {
            (600 + 40 * (i as u64 - 6), 200)
        };
        for h in 10..15 {
            weekday[h] = day;
        }
        for h in 20..23 {
            weekday[h] = evening;
        }
        dists.push(HourlyDistribution::from_counts(
            format!("r{i:02}"),
            weekday,
            [10u64; 24],
        ));
    }
    let clustering = k_medoids(&dists, 2, 100).expect("pam");
    let stats = inout_ratio_stats(&flows, &clustering.labels).expect("ratios");
    // The attractor cluster is the one holding the last region.
    let attractor = clustering.labels[n - 1];
    let residential = 1 - attractor;
    let clusters_clean = (0..n).all(|i| {
        clustering.labels[i] == if i < 6 { residential } else { attractor }
    });

    let de: Vec<f64> = dists
        .iter()
        .map(|d| daytime_evening_ratio(d).expect("ratio"))
        .collect();
    let io: Vec<f64> = stats.ratios.iter().map(|r| r.expect("defined")).collect();
    let corr = correlation_with_permutation(&de, &io, 999, 11).expect("perm");

    let gm_a = stats.cluster_geomean[attractor];
    let gm_b = stats.cluster_geomean[residential];
    let pass = clusters_clean
        && gm_a > 1.5
        && gm_b < 1.0
        && corr.spearman > 0.0
        && corr.p_value < 0.01;
    report(
        11,
        "cluster geomeans straddle 1 and ratios correlate (perm p < 0.01)",
        pass,
        format!(
            "geomeans A = {gm_a:.3}, B = {gm_b:.3}; spearman = {:.3}, p = {}",
            corr.spearman, corr.p_value
        ),
    );
}

// --- criterion 12: CLI determinism ----------------------------------------

fn run_cli(args: &[&str]) {
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_commute"))
        .args(args)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .status()
        .expect("spawning the binary");
    assert!(status.success(), "command failed: {args:?}");
}

/// Byte-compare every file except the manifest (whose wall-clock duration
/// legitimately varies).
fn dirs_identical(a: &Path, b: &Path) -> bool {
    let mut names: Vec<String> = std::fs::read_dir(a)
        .expect("read_dir")
        .map(|e| e.expect("entry").file_name().into_string().expect("name"))
        .collect();
    names.sort();
    for name in names {
        if name == "manifest.json" {
            continue;
        }
        let left = std::fs::read(a.join(&name)).expect("left file");
        let right = std::fs::read(b.join(&name)).expect("right file");
        if left != right {
            eprintln!("mismatch in {name}");
            return false;
        }
    }
    true
}

#[test]
fn criterion_12_cli_determinism() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let root = tmp.path();
    let mut config = default_config(12);
    config.grid.rows = 3;
    config.grid.cols = 3;
    config.commuters.num_users = 300;
    let config_path = root.join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let cfg = config_path.to_str().unwrap();

    let mut all_identical = true;
    for pass_dir in ["run1", "run2"] {
        let base = root.join(pass_dir);
        let p = |s: &str| base.join(s).to_str().unwrap().to_string();
        run_cli(&["synth", "--config", cfg, "--out", &p("synth")]);
        let regions = p("synth/regions.geojson");
        let truth = p("synth/truth.csv");
        run_cli(&[
            "ingest",
            "--events",
            &p("synth/events.jsonl"),
            "--regions",
            &regions,
            "--out",
            &p("ingest"),
        ]);
        let profiles = p("ingest/profiles.jsonl");
        run_cli(&[
            "infer",
            "--profiles",
            &profiles,
            "--regions",
            &regions,
            "--mode",
            "hard",
            "--lambda",
            "0.9",
            "--out",
            &p("infer"),
        ]);
        run_cli(&[
            "radiation",
            "--regions",
            &regions,
            "--truth",
            &truth,
            "--model",
            "one-param",
            "--alpha-from-area",
            "per-region",
            "--out",
            &p("radiation"),
        ]);
        run_cli(&[
            "evaluate",
            "--estimate",
            &p("infer/od_twitter.csv"),
            "--truth",
            &truth,
            "--regions",
            &regions,
            "--profiles",
            &profiles,
            "--out",
            &p("evaluate"),
        ]);
        run_cli(&[
            "cluster",
            "--profiles",
            &profiles,
            "--regions",
            &regions,
            "--truth",
            &truth,
            "--seed",
            "7",
            "--out",
            &p("cluster"),
        ]);
    }
    for stage in ["synth", "ingest", "infer", "radiation", "evaluate", "cluster"] {
        if !dirs_identical(&root.join("run1").join(stage), &root.join("run2").join(stage)) {
            all_identical = false;
        }
    }
    report(
        12,
        "reruns with identical flags and seed are byte-identical",
        all_identical,
        "all non-manifest outputs compared".into(),
    );
}
