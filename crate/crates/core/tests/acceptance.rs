//! Exit criteria for the retrieval protocol. Runs as a plain binary so every
//! criterion prints one PASS/FAIL line regardless of output capture.

use std::time::{Duration, Instant};

use num_rational::Ratio;
use pcsi_core::audit::{
    answer_uniformity_census, audit_lemma1, binomial, enumerate_posterior,
    enumerate_posterior_with, measure_rate, Prob, Verdict,
};
use pcsi_core::field::next_prime;
use pcsi_core::grs::{build_generator, is_mds, min_weight_support_census};
use pcsi_core::net::{Client, Server, ANSWER_HEADER_LEN, HEADER_LEN, QUERY_HEADER_LEN};
use pcsi_core::protocol::{
    build_generator_for, build_query_with, retrieve_local, run_local, sample_instance,
    SideInformation,
};
use pcsi_core::{
    Database, FieldElement, FieldParams, GeneratorMatrix, Model, ProtocolParams, QueryRandomness,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn rate_sweep(model: Model) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut configs = 0;
    for k in 2..=8usize {
        let q = next_prime(k.max(3) as u32);
        let ms: Vec<usize> = match model {
            Model::I => (0..k).collect(),
            Model::II => (2..=k).collect(),
        };
        for &m_side in &ms {
            for msg_len in [1usize, 3] {
                let params = ProtocolParams::canonical(q, k, m_side, msg_len, model)
                    .map_err(|e| e.to_string())?;
                let rows = match model {
                    Model::I => k - m_side,
                    Model::II => k - m_side + 1,
                };
                let db = Database::random(params.field(), k, msg_len, &mut rng)
                    .map_err(|e| e.to_string())?;
                let run = run_local(&params, &db, &mut rng).map_err(|e| e.to_string())?;
                check(run.downloaded_symbols == rows * msg_len, || {
                    format!(
                        "K={k} M={m_side} m={msg_len}: downloaded {}",
                        run.downloaded_symbols
                    )
                })?;
                check(run.recovered == db.messages()[run.side_info.demand], || {
                    format!("K={k} M={m_side} m={msg_len}: wrong message")
                })?;
                let rate = measure_rate(&params, 2, &mut rng).map_err(|e| e.to_string())?;
                check(rate == Ratio::new(1, rows as u64), || {
                    format!("K={k} M={m_side} m={msg_len}: rate {rate}")
                })?;
                configs += 1;
            }
        }
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("{configs} configurations exact"))
}

fn recoverability() -> Outcome {
    let start = Instant::now();
    let f = FieldParams::new(5).unwrap();
    let nonzero: Vec<FieldElement> = f.nonzero_elements().collect();
    let mut cases = 0u64;
    for k in 2..=4usize {
        for model in [Model::I, Model::II] {
            let ms: Vec<usize> = match model {
                Model::I => (0..k).collect(),
                Model::II => (2..=k).collect(),
            };
            for m_side in ms {
                let params = ProtocolParams::canonical(5, k, m_side, 1, model).unwrap();
                for seed in 0..8u64 {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let db = Database::random(f, k, 1, &mut rng).unwrap();
                    for (w, s) in pcsi_core::audit::admissible_pairs(k, m_side, model) {
                        for idx in 0..nonzero.len().pow(m_side as u32) {
                            let mut x = idx;
                            let coeffs: Vec<_> = (0..m_side)
                                .map(|_| {
                                    let c = nonzero[x % 4];
                                    x /= 4;
                                    c
                                })
                                .collect();
                            let si =
                                SideInformation::from_database(&db, s.clone(), coeffs, w).unwrap();
                            let run = retrieve_local(&params, &db, si, &mut rng)
                                .map_err(|e| e.to_string())?;
                            check(run.recovered == db.messages()[w], || {
                                format!("K={k} M={m_side} model {model} W={w} S={s:?} seed {seed}")
                            })?;
                            cases += 1;
                        }
                    }
                }
            }
        }
    }
    within(start, Duration::from_secs(120))?;
    Ok(format!("{cases} retrievals exact"))
}

/// Negative control. INSECURE: no permutation, side-information multipliers
/// used without annihilator scaling, and the unconstrained multipliers pinned
/// to 1, so the positions of non-unit multipliers reveal `S`.
fn insecure_query(params: &ProtocolParams, si: &SideInformation) -> Vec<u16> {
    let field = params.field();
    let mut v = vec![field.one(); params.k()];
    for (&i, &c) in si.support.iter().zip(&si.coeffs) {
        v[i] = c;
    }
    let g = build_generator(params.code(), &v, params.num_rows()).unwrap();
    g.rows().iter().flatten().map(|e| e.value()).collect()
}

fn privacy() -> Outcome {
    let mut lines = Vec::new();
    for (model, m_side) in [(Model::I, 1), (Model::I, 2), (Model::II, 2), (Model::II, 3)] {
        let start = Instant::now();
        let params = ProtocolParams::canonical(5, 3, m_side, 1, model).unwrap();
        let report = enumerate_posterior(&params).map_err(|e| e.to_string())?;
        check(
            report.verdict == Verdict::Pass && report.worst_deviation == Prob::from_integer(0),
            || {
                format!(
                    "model {model} M={m_side}: deviation {}",
                    report.worst_deviation
                )
            },
        )?;
        within(start, Duration::from_secs(60))?;
        lines.push(format!("{model}/M{m_side}: {} atoms", report.total_atoms()));
    }
    let params = ProtocolParams::canonical(5, 3, 1, 1, Model::I).unwrap();
    let control = enumerate_posterior_with(&params, |si, _| Ok(insecure_query(&params, si)))
        .map_err(|e| e.to_string())?;
    check(control.verdict == Verdict::Fail, || {
        "negative control passed".into()
    })?;
    lines.push(format!(
        "control FAIL at deviation {}",
        control.worst_deviation
    ));
    Ok(lines.join("; "))
}

fn sweep_matrices(k: usize, model: Model, seeds: u64) -> Vec<(ProtocolParams, GeneratorMatrix)> {
    let q = next_prime(k.max(3) as u32);
    let ms: Vec<usize> = match model {
        Model::I => (0..k).collect(),
        Model::II => (2..=k).collect(),
    };
    (0..seeds)
        .map(|seed| {
            let m_side = ms[seed as usize % ms.len()];
            let params = ProtocolParams::canonical(q, k, m_side, 1, model).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let db = Database::random(params.field(), k, 1, &mut rng).unwrap();
            let si = sample_instance(&params, &db, &mut rng).unwrap();
            let rnd = QueryRandomness::sample(&params, &si, &mut rng).unwrap();
            let (g, _) = build_generator_for(&si, &params, &rnd).unwrap();
            (params, g)
        })
        .collect()
}

fn mds() -> Outcome {
    let start = Instant::now();
    let mut n = 0;
    for k in 3..=6 {
        for model in [Model::I, Model::II] {
            for (params, g) in sweep_matrices(k, model, 100) {
                check(is_mds(&g), || {
                    format!("K={k} M={} model {model} not MDS", params.side_info_size())
                })?;
                n += 1;
            }
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("{n}/{n} builds MDS"))
}

fn census() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for k in [3usize, 4] {
        let params = ProtocolParams::canonical(5, k, 1, 1, Model::I).unwrap();
        let (_, g) = protocol_matrix(&params, 7);
        let census = min_weight_support_census(&g).map_err(|e| e.to_string())?;
        check(census.min_weight == 2, || {
            format!("K={k}: min weight {}", census.min_weight)
        })?;
        check(census.counts.len() == binomial(k, 2) as usize, || {
            format!("K={k}: {} supports", census.counts.len())
        })?;
        check(census.uniform_count() == Some(4), || {
            format!("K={k}: counts {:?}", census.counts)
        })?;
        lines.push(format!(
            "K={k}: weight 2, 4 per each of {} supports",
            census.counts.len()
        ));
    }
    within(start, Duration::from_secs(30))?;
    Ok(lines.join("; "))
}

fn protocol_matrix(params: &ProtocolParams, seed: u64) -> (SideInformation, GeneratorMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let db = Database::random(params.field(), params.k(), 1, &mut rng).unwrap();
    let si = sample_instance(params, &db, &mut rng).unwrap();
    let rnd = QueryRandomness::sample(params, &si, &mut rng).unwrap();
    let (g, _) = build_generator_for(&si, params, &rnd).unwrap();
    (si, g)
}

fn recovery_witnesses() -> Outcome {
    let start = Instant::now();
    let mut n = 0;
    for k in 3..=4 {
        for model in [Model::I, Model::II] {
            for (params, g) in sweep_matrices(k, model, 100) {
                let out = audit_lemma1(&g, model, &params).map_err(|e| e.to_string())?;
                check(out.verdict == Verdict::Pass, || {
                    format!(
                        "K={k} M={} model {model}: no witness for {:?}",
                        params.side_info_size(),
                        out.missing().collect::<Vec<_>>()
                    )
                })?;
                n += 1;
            }
        }
    }
    let f = FieldParams::new(5).unwrap();
    let e = |xs: &[u64]| xs.iter().map(|&x| f.elem(x)).collect::<Vec<_>>();
    // ω = (1, 1, 2): two equal columns
    let bad = GeneratorMatrix::from_rows(f, vec![e(&[1, 1, 1]), e(&[1, 1, 2])]).unwrap();
    let params = ProtocolParams::canonical(5, 3, 1, 1, Model::I).unwrap();
    let out = audit_lemma1(&bad, Model::I, &params).map_err(|e| e.to_string())?;
    check(out.verdict == Verdict::Fail, || {
        "non-MDS matrix passed".into()
    })?;
    within(start, Duration::from_secs(60))?;
    Ok(format!("{n}/{n} builds witnessed; non-MDS control fails"))
}

fn uniformity() -> Outcome {
    let start = Instant::now();
    let params = ProtocolParams::canonical(5, 3, 1, 1, Model::I).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let db = Database::random(params.field(), 3, 1, &mut rng).unwrap();
    let si = sample_instance(&params, &db, &mut rng).unwrap();
    let rnd = QueryRandomness::sample(&params, &si, &mut rng).unwrap();
    let (query, _) = build_query_with(&si, &params, &rnd).unwrap();
    check(query.num_rows() == 2, || "R != 2".into())?;
    let census = answer_uniformity_census(&query, &params).map_err(|e| e.to_string())?;
    check(census.histogram.len() == 25, || {
        format!("{} tuples", census.histogram.len())
    })?;
    check(census.histogram.values().all(|&c| c == 5), || {
        "counts differ from 5".into()
    })?;
    within(start, Duration::from_secs(5))?;
    Ok("25 tuples x 5".into())
}

fn wire() -> Outcome {
    let start = Instant::now();
    let (k, m_side, msg_len) = (4, 2, 3);
    for model in [Model::I, Model::II] {
        let params = ProtocolParams::canonical(5, k, m_side, msg_len, model).unwrap();
        let db = Database::random(
            params.field(),
            k,
            msg_len,
            &mut ChaCha8Rng::seed_from_u64(99),
        )
        .unwrap();
        let server =
            Server::bind("127.0.0.1:0", db.clone(), params.clone()).map_err(|e| e.to_string())?;
        let handle = server.spawn().map_err(|e| e.to_string())?;
        let mut client = Client::connect(handle.addr()).map_err(|e| e.to_string())?;
        let r = params.num_rows();
        for seed in 0..100u64 {
            let local = run_local(&params, &db, &mut ChaCha8Rng::seed_from_u64(seed))
                .map_err(|e| e.to_string())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let si = sample_instance(&params, &db, &mut rng).map_err(|e| e.to_string())?;
            check(si == local.side_info, || {
                format!("seed {seed}: side information diverged")
            })?;
            let remote = client
                .retrieve(&si, &params, &mut rng)
                .map_err(|e| e.to_string())?;
            check(remote.recovered == local.recovered, || {
                format!("model {model} seed {seed}: mismatch")
            })?;
            check(remote.answer_element_bytes == 2 * r * msg_len, || {
                format!(
                    "answer carries {} element bytes",
                    remote.answer_element_bytes
                )
            })?;
            check(
                remote.answer_frame_bytes == HEADER_LEN + ANSWER_HEADER_LEN + 2 * r * msg_len,
                || format!("answer frame {} bytes", remote.answer_frame_bytes),
            )?;
            check(
                remote.query_frame_bytes == HEADER_LEN + QUERY_HEADER_LEN + 2 * r * k,
                || format!("query frame {} bytes", remote.query_frame_bytes),
            )?;
        }
        check(handle.queries_answered() == 100, || {
            "server query count".into()
        })?;
        drop(client);
        handle.shutdown();
    }
    within(start, Duration::from_secs(30))?;
    Ok("200 loopback retrievals equal run_local; answer = 10 + 4 + 2·R·m bytes".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 download cost, model I", || rate_sweep(Model::I)),
        ("2 download cost, model II", || rate_sweep(Model::II)),
        ("3 recoverability", recoverability),
        ("4 (W,S)-privacy", privacy),
        ("5 MDS", mds),
        ("6 minimum-weight census", census),
        ("7 recovery witnesses", recovery_witnesses),
        ("8 answer uniformity", uniformity),
        ("9 wire equivalence", wire),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        match f() {
            Ok(detail) => println!(
                "[PASS] criterion {name}: {detail} ({:.2?})",
                start.elapsed()
            ),
            Err(why) => {
                failed += 1;
                println!("[FAIL] criterion {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
