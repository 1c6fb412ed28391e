//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p nerlab-cli --test acceptance -- --nocapture`.
//! Lines tagged SKIP (missing optional data) and REPORT (informational) never
//! fail the run.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{config_path, embeddings_for, fixture, nerlab, p, workspace_root};
use nerlab::classic::{objective_and_grad, train_classic, ClassicConfig, ClassicData};
use nerlab::crf::{log_partition, nll_grad, path_score, viterbi, CrfParams};
use nerlab::data::{
    bio_decode, bio_encode, derive_cg_tags, parse_conll, ConllOptions, Dataset, EntitySpan, LabelSchema,
    LabelSpace, Sentence,
};
use nerlab::embeddings::{EmbeddingHeader, EmbeddingReader, EmbeddingSequence, EmbeddingStore, EmbeddingWriter};
use nerlab::eval::{per_tag_csv, score, MacroOver};
use nerlab::heads::{head_backward, head_forward_dense, AuxKind, Blend, HeadConfig, HeadKind, HeadParams};
use nerlab::params::{assign, flatten};
use nerlab::synth::{synth_corpus, synth_embeddings, EmbeddingMode, SynthCorpusConfig, SynthEmbeddingConfig};
use nerlab::training::{
    aux_weight, combined_loss, predict, sentence_loss, train, LossWeightSchedule, ModelParams, Targets, TrainConfig,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
    Report(String),
}

use Outcome::{Fail, Pass, Report, Skip};

type Criterion = (&'static str, fn() -> Outcome);

fn gate(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Fourth-order central difference of `f` along coordinate `i`.
fn central_diff(x: &mut [f64], i: usize, f: &mut impl FnMut(&[f64]) -> f64) -> f64 {
    let h = 1e-3;
    let x0 = x[i];
    let mut at = |d: f64| {
        x[i] = x0 + d;
        f(x)
    };
    let d = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
    x[i] = x0;
    d
}

/// Largest relative error between `analytic` and finite differences of `f`
/// around `theta`, over the coordinates `coords`.
fn worst_fd(
    theta: &[f64],
    analytic: &[f64],
    coords: impl IntoIterator<Item = usize>,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    assert_eq!(theta.len(), analytic.len());
    let mut x = theta.to_vec();
    coords
        .into_iter()
        .map(|i| rel_err(analytic[i], central_diff(&mut x, i, &mut f)))
        .fold(0.0, f64::max)
}

fn random_crf(rng: &mut ChaCha8Rng, l: usize, integer: bool) -> CrfParams<f64> {
    let mut draw = || {
        if integer {
            rng.gen_range(-2i32..=2) as f64
        } else {
            rng.gen_range(-2.0..2.0)
        }
    };
    CrfParams {
        transitions: Array2::from_shape_simple_fn((l, l), &mut draw),
        start: Array1::from_shape_simple_fn(l, &mut draw),
        end: Array1::from_shape_simple_fn(l, &mut draw),
    }
}

fn all_paths(n: usize, l: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..l).map(move |j| {
                    let mut q = p.clone();
                    q.push(j);
                    q
                })
            })
            .collect();
    }
    out
}

fn crf_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 400;
    let mut worst_logz: f64 = 0.0;
    let mut viterbi_mismatch = 0;
    let mut ties = 0;
    for case in 0..instances {
        let n = rng.gen_range(1..=5);
        let l = rng.gen_range(1..=4);
        // Odd cases use small integers so that ties are common and the
        // tie-break is exercised; sums of small integers are exact.
        let integer = case % 2 == 1;
        let params = random_crf(&mut rng, l, integer);
        let emissions = Array2::from_shape_simple_fn((n, l), || {
            if integer {
                rng.gen_range(-2i32..=2) as f64
            } else {
                rng.gen_range(-3.0..3.0)
            }
        });
        let paths = all_paths(n, l);
        let scores: Vec<f64> = paths
            .iter()
            .map(|path| path_score(emissions.view(), path, &params).unwrap())
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let brute_logz = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
        let logz = log_partition(emissions.view(), &params).unwrap();
        worst_logz = worst_logz.max((logz - brute_logz).abs());

        // Expected tie-break: lowest final label, then lowest predecessor at
        // each step backwards, i.e. the smallest optimal path read in reverse.
        let optimal: Vec<&Vec<usize>> = paths.iter().zip(&scores).filter(|(_, &s)| s == max).map(|(p, _)| p).collect();
        if optimal.len() > 1 {
            ties += 1;
        }
        let expected = optimal
            .iter()
            .min_by(|a, b| a.iter().rev().cmp(b.iter().rev()))
            .unwrap();
        let (path, best) = viterbi(emissions.view(), &params, None).unwrap();
        let score_ok = if integer { best == max } else { (best - max).abs() < 1e-12 };
        let path_ok = if integer || optimal.len() == 1 { &path == *expected } else { optimal.contains(&&path) };
        if !(score_ok && path_ok) {
            viterbi_mismatch += 1;
        }
    }
    let elapsed = start.elapsed();
    gate(
        worst_logz <= 1e-8 && viterbi_mismatch == 0 && within(elapsed, 10.0),
        format!(
            "{instances} instances (T<=5, L<=4, {ties} with tied optima): max |logZ - brute| = {worst_logz:.2e} (tol 1e-8), \
             viterbi mismatches {viterbi_mismatch}, {:.2}s (limit 10s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn crf_grad_worst(rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let n = rng.gen_range(1..=6);
        let l = rng.gen_range(1..=5);
        let params = random_crf(rng, l, false);
        let emissions = Array2::from_shape_simple_fn((n, l), || rng.gen_range(-3.0..3.0));
        let tags: Vec<usize> = (0..n).map(|_| rng.gen_range(0..l)).collect();
        let (_, g) = nll_grad(emissions.view(), &tags, &params).unwrap();
        let mut theta: Vec<f64> = emissions.iter().copied().collect();
        theta.extend(flatten(&params));
        let mut analytic: Vec<f64> = g.emissions.iter().copied().collect();
        analytic.extend(flatten(&g.params));
        let ne = emissions.len();
        worst = worst.max(worst_fd(&theta, &analytic, 0..theta.len(), |x| {
            let e = Array2::from_shape_vec((n, l), x[..ne].to_vec()).unwrap();
            let mut q = params.clone();
            assign(&mut q, &x[ne..]);
            nerlab::crf::nll(e.view(), &tags, &q).unwrap()
        }));
    }
    worst
}

fn head_config(kind: HeadKind, blend: Blend, aux: AuxKind) -> HeadConfig {
    HeadConfig {
        head_kind: kind,
        blend,
        dropout_p: 0.3,
        bilstm_hidden: 3,
        aux_kind: aux,
        input_layers_k: 2,
    }
}

/// Worst error over (a) `head_backward` against a random linear probe of the
/// scores and (b) the full per-sentence training loss.
fn head_grad_worst(config: &HeadConfig, rng: &mut ChaCha8Rng) -> f64 {
    let (n, dim, fg, cg) = (4, 2, 5, 3);
    let x = Array2::from_shape_simple_fn((n, config.input_layers_k * dim), || rng.gen_range(-1.0..1.0));
    let dropout_seed = rng.gen::<u64>();

    let head = HeadParams::<f64>::init(config, dim, fg, cg, 3).unwrap();
    let g_fg = Array2::from_shape_simple_fn((n, fg), || rng.gen_range(-1.0..1.0));
    let g_cg = Array2::from_shape_simple_fn((n, cg), || rng.gen_range(-1.0..1.0));
    let probe = |q: &HeadParams<f64>| {
        let out = head_forward_dense(x.clone(), config, q, true, &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap();
        (&out.fg_scores * &g_fg).sum() + out.cg_scores.map_or(0.0, |c| (c * &g_cg).sum())
    };
    let out = head_forward_dense(x.clone(), config, &head, true, &mut ChaCha8Rng::seed_from_u64(dropout_seed)).unwrap();
    let d_cg = out.cg_scores.as_ref().map(|_| g_cg.view());
    let grads = head_backward(&out.trace, &head, g_fg.view(), d_cg).unwrap();
    let theta = flatten(&head);
    let probe_worst = worst_fd(&theta, &flatten(&grads.params), 0..theta.len(), |theta| {
        let mut q = head.clone();
        assign(&mut q, theta);
        probe(&q)
    });

    let model = ModelParams::<f64>::init(config, dim, fg, cg, 5).unwrap();
    let targets = Targets {
        fg: (0..n).map(|_| rng.gen_range(0..fg)).collect(),
        cg: (0..n).map(|_| rng.gen_range(0..cg)).collect(),
    };
    let (w, scale) = (0.37, 1.7);
    let loss = |q: &ModelParams<f64>, want: bool| {
        sentence_loss(config, q, x.clone(), &targets, w, scale, true, &mut ChaCha8Rng::seed_from_u64(dropout_seed), want)
            .unwrap()
    };
    let (_, g) = loss(&model, true);
    let theta = flatten(&model);
    let model_worst = worst_fd(&theta, &flatten(&g.unwrap()), 0..theta.len(), |theta| {
        let mut q = model.clone();
        assign(&mut q, theta);
        loss(&q, false).0.combined
    });
    probe_worst.max(model_worst)
}

fn classic_grad_worst() -> f64 {
    let fine = ["Artist", "Politician", "Facility"];
    let schema = LabelSchema::new(
        fine.iter().map(|t| t.to_string()).collect(),
        vec!["Person".into(), "Location".into()],
        [("Artist", "Person"), ("Politician", "Person"), ("Facility", "Location")]
            .into_iter()
            .map(|(f, c)| (f.to_string(), c.to_string()))
            .collect(),
    )
    .unwrap();
    let ds = synth_corpus(
        &schema,
        &SynthCorpusConfig {
            num_sentences: 4,
            seed: 8,
            ..Default::default()
        },
    )
    .unwrap();
    let zero = ClassicConfig {
        epochs: 0,
        ..Default::default()
    };
    let model = train_classic::<f64>(&ds, &schema, &zero).unwrap().model;
    let data = ClassicData {
        features: ds.iter().map(|s| model.index_sentence(s)).collect(),
        gold: ds
            .iter()
            .map(|s| schema.encode(LabelSpace::Fine, s.fg_tags.as_ref().unwrap()).unwrap())
            .collect(),
    };
    let mut params = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let theta: Vec<f64> = flatten(&params).iter().map(|_| rng.gen_range(-0.5..0.5)).collect();
    assign(&mut params, &theta);
    let (_, grad) = objective_and_grad(&params, &data, 0.1).unwrap();
    let mut q = params.clone();
    worst_fd(&theta, &flatten(&grad), 0..theta.len(), |x| {
        assign(&mut q, x);
        objective_and_grad(&q, &data, 0.1).unwrap().0
    })
}

fn gradient_gate() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let crf = crf_grad_worst(&mut rng);
    let mut heads: f64 = 0.0;
    let mut worst_combo = String::new();
    let mut combos = 0;
    for kind in [HeadKind::LinearCe, HeadKind::LinearCrf, HeadKind::BilstmCrf] {
        for blend in [Blend::None, Blend::Concat, Blend::Avg] {
            for aux in [AuxKind::None, AuxKind::LinearCe, AuxKind::Crf] {
                let e = head_grad_worst(&head_config(kind, blend, aux), &mut rng);
                combos += 1;
                if e >= heads {
                    heads = e;
                    worst_combo = format!("{}/{:?}/{}", kind.name(), blend, aux.name());
                }
            }
        }
    }
    let classic = classic_grad_worst();
    let elapsed = start.elapsed();
    gate(
        crf < 1e-4 && heads < 1e-3 && classic < 1e-4 && within(elapsed, 60.0),
        format!(
            "crf {crf:.2e} (tol 1e-4); heads {heads:.2e} over {combos} combos, worst {worst_combo} (tol 1e-3); \
             classic {classic:.2e} (tol 1e-4); {:.1}s (limit 60s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn loss_schedule() -> Outcome {
    let mut bad = Vec::new();
    for e in 2..=500 {
        let s = LossWeightSchedule::linear(e, 0.1);
        if aux_weight(0, &s) != 1.0 || aux_weight(e - 1, &s) != 0.1 {
            bad.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut endpoint_failures = 0;
    for _ in 0..10_000 {
        let cg: f64 = rng.gen_range(0.0..50.0);
        let fg: f64 = rng.gen_range(0.0..50.0);
        let scale: f64 = rng.gen_range(0.01..100.0);
        let ok64 = combined_loss(cg, fg, 1.0, scale).to_bits() == cg.to_bits()
            && combined_loss(cg, fg, 0.0, 1.0).to_bits() == fg.to_bits();
        let (cg32, fg32) = (cg as f32, fg as f32);
        let ok32 = combined_loss(cg32, fg32, 1.0, scale as f32).to_bits() == cg32.to_bits()
            && combined_loss(cg32, fg32, 0.0, 1.0).to_bits() == fg32.to_bits();
        if !(ok64 && ok32) {
            endpoint_failures += 1;
        }
    }
    gate(
        bad.is_empty() && endpoint_failures == 0,
        format!(
            "W(0)=1.0 and W(E-1)=0.1 exactly for E in 2..=500 (failures {:?}); combined-loss endpoints bit-exact \
             over 10000 draws in f32 and f64 (failures {endpoint_failures})",
            bad
        ),
    )
}

fn random_tags(rng: &mut ChaCha8Rng, types: &[String], n: usize) -> Vec<String> {
    (0..n)
        .map(|_| match rng.gen_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{}", types[rng.gen_range(0..types.len())]),
            _ => format!("I-{}", types[rng.gen_range(0..types.len())]),
        })
        .collect()
}

fn random_spans(rng: &mut ChaCha8Rng, types: &[String], n: usize) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.4) {
            let len = rng.gen_range(1..=(n - i).min(4));
            spans.push(EntitySpan::new(i, i + len - 1, types[rng.gen_range(0..types.len())].clone()));
            i += len;
        } else {
            i += 1;
        }
    }
    spans
}

fn bio_algebra() -> Outcome {
    let schema = LabelSchema::multiconer2();
    let types = schema.fine_types().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let cases = 10_000;
    let (mut round_trip, mut idempotence, mut cg) = (0, 0, 0);
    for _ in 0..cases {
        let n = rng.gen_range(0..16);
        let spans = random_spans(&mut rng, &types, n);
        let tags = bio_encode(&spans, n).unwrap();
        if bio_decode(&tags).unwrap() != spans {
            round_trip += 1;
        }

        let noisy = random_tags(&mut rng, &types, n);
        let once = bio_decode(&noisy).unwrap();
        let repaired = bio_encode(&once, n).unwrap();
        if bio_decode(&repaired).unwrap() != once || bio_encode(&bio_decode(&repaired).unwrap(), n).unwrap() != repaired {
            idempotence += 1;
        }

        let coarse = derive_cg_tags(&noisy, &schema).unwrap();
        let preserved = noisy
            .iter()
            .zip(&coarse)
            .all(|(f, c)| (f == "O") == (c == "O") && f.starts_with("B-") == c.starts_with("B-"));
        if !preserved {
            cg += 1;
        }
    }
    gate(
        round_trip + idempotence + cg == 0,
        format!(
            "{cases} cases: encode/decode round-trip failures {round_trip}, repair idempotence failures \
             {idempotence}, coarse O/B position failures {cg}"
        ),
    )
}

fn random_payload(rng: &mut ChaCha8Rng) -> (EmbeddingHeader, Vec<EmbeddingSequence>) {
    let dim = rng.gen_range(1..=8);
    let layers = rng.gen_range(1..=4);
    let header = EmbeddingHeader::new(dim, layers);
    let specials = [0.0f32, -0.0, f32::MIN_POSITIVE, -f32::MIN_POSITIVE / 4.0, f32::MAX, f32::MIN, 1e-40];
    let seqs = (0..rng.gen_range(1..=6))
        .map(|i| {
            let n = rng.gen_range(1..=5);
            let values = (0..n * layers * dim)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        specials[rng.gen_range(0..specials.len())]
                    } else {
                        f32::from_bits(rng.gen::<u32>() & 0xbf7f_ffff)
                    }
                })
                .collect();
            let id = format!("sent-{i}-\u{e9}{}", rng.gen_range(0..1000));
            EmbeddingSequence::new(id, n, layers, dim, values).unwrap()
        })
        .collect();
    (header, seqs)
}

/// Encoded bytes plus the offset at which each record ends.
fn encode(header: EmbeddingHeader, seqs: &[EmbeddingSequence]) -> (Vec<u8>, Vec<usize>) {
    let mut w = EmbeddingWriter::new(Vec::new(), header).unwrap();
    for s in seqs {
        w.write(s).unwrap();
    }
    let bytes = w.finish().unwrap();
    let preamble = EmbeddingWriter::new(Vec::new(), header).unwrap().finish().unwrap().len();
    let mut boundaries = vec![preamble];
    for s in seqs {
        let last = *boundaries.last().unwrap();
        boundaries.push(last + 8 + s.sentence_id.len() + 4 * s.values().len());
    }
    (bytes, boundaries)
}

fn read_all(bytes: &[u8]) -> nerlab::Result<(EmbeddingHeader, Vec<EmbeddingSequence>)> {
    let reader = EmbeddingReader::new(bytes)?;
    let header = reader.header();
    Ok((header, reader.collect::<nerlab::Result<Vec<_>>>()?))
}

fn bits(seqs: &[EmbeddingSequence]) -> Vec<(String, usize, Vec<u32>)> {
    seqs.iter()
        .map(|s| (s.sentence_id.clone(), s.num_tokens(), s.values().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

fn interchange_format() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let payloads = 300;
    let (mut round_trip, mut undetected_cut, mut undetected_nan, mut undetected_boundary) = (0, 0, 0, 0);
    let mut cuts = 0;
    for _ in 0..payloads {
        let (header, seqs) = random_payload(&mut rng);
        let (bytes, boundaries) = encode(header, &seqs);
        assert_eq!(*boundaries.last().unwrap(), bytes.len());
        match read_all(&bytes) {
            Ok((h, back)) if h == header && bits(&back) == bits(&seqs) => {}
            _ => round_trip += 1,
        }

        let corpus = Dataset::new(
            seqs.iter()
                .map(|s| {
                    let words: Vec<String> = (0..s.num_tokens()).map(|i| format!("w{i}")).collect();
                    Sentence::from_words(s.sentence_id.clone(), &words, None).unwrap()
                })
                .collect(),
        );
        for cut in 0..bytes.len() {
            cuts += 1;
            let result = read_all(&bytes[..cut]);
            if boundaries[1..].contains(&cut) || cut == boundaries[0] {
                // A cut between records leaves a well-formed shorter file; the
                // lost sentences surface as alignment gaps against the corpus.
                let detected = match result {
                    Ok((h, back)) => !EmbeddingStore::from_sequences(h, back).unwrap().alignment(&corpus).is_aligned(),
                    Err(_) => true,
                };
                if !detected {
                    undetected_boundary += 1;
                }
            } else if result.is_ok() {
                undetected_cut += 1;
            }
        }

        let mut corrupt = bytes.clone();
        let s = rng.gen_range(0..seqs.len());
        let v = rng.gen_range(0..seqs[s].values().len());
        let at = boundaries[s] + 8 + seqs[s].sentence_id.len() + 4 * v;
        corrupt[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        if read_all(&corrupt).is_ok() {
            undetected_nan += 1;
        }
    }
    gate(
        round_trip + undetected_cut + undetected_nan + undetected_boundary == 0,
        format!(
            "{payloads} random payloads: bit-exact round-trip failures {round_trip}; {cuts} truncations, \
             undetected mid-record {undetected_cut}, undetected at record boundary {undetected_boundary}; \
             undetected NaN injections {undetected_nan}"
        ),
    )
}

fn fixture_embeddings(corpus: &std::path::Path) -> (Dataset, EmbeddingStore) {
    let ds = parse_conll(corpus, &ConllOptions::default()).unwrap();
    let (h, seqs) = synth_embeddings(&ds, &SynthEmbeddingConfig::default()).unwrap();
    (ds, EmbeddingStore::from_sequences(h, seqs).unwrap())
}

fn overfit_capacity() -> Outcome {
    let start = Instant::now();
    let (ds, store) = fixture_embeddings(&fixture("train50.conll"));
    let mut config = TrainConfig::from_json(&fs::read_to_string(config_path("config11.json")).unwrap()).unwrap();
    config.epochs = 200;
    config.log_train_f1 = true;
    let schema = LabelSchema::multiconer2();
    let outcome = train::<f64>(&ds, &store, &schema, &config).unwrap();
    let elapsed = start.elapsed();
    let f1s: Vec<f64> = outcome.log.epochs.iter().map(|r| r.train_micro_f1.unwrap()).collect();
    let first = f1s.iter().position(|&f| f >= 0.99);
    let best = f1s.iter().cloned().fold(0.0, f64::max);
    let final_f1 = *f1s.last().unwrap();
    gate(
        first.is_some() && within(elapsed, 300.0),
        format!(
            "{} sentences, {} head, blend {:?}, aux {}, dropout {}, batch {}: first epoch with train micro-F1 >= 0.99 \
             is {}, best {best:.4}, final {final_f1:.4}; {:.1}s (limit 300s)",
            ds.len(),
            config.head.head_kind.name(),
            config.head.blend,
            config.head.aux_kind.name(),
            config.head.dropout_p,
            config.batch_size,
            first.map_or("none".to_string(), |e| e.to_string()),
            elapsed.as_secs_f64()
        ),
    )
}

fn metric_oracle() -> Outcome {
    let sent = |tags: &[&str]| {
        let words: Vec<String> = (0..tags.len()).map(|i| format!("w{i}")).collect();
        let tags: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
        Sentence::new(
            "s",
            words.into_iter().map(nerlab::data::Token::new).collect(),
            Some(tags),
        )
        .unwrap()
    };
    let one = |tags: &[&str]| Dataset::new(vec![sent(tags)]);
    let mut failures = Vec::new();

    let r = score(
        &one(&["B-A", "I-A", "O", "B-B"]),
        &one(&["B-A", "I-A", "O", "B-C"]),
        &MacroOver::Observed,
    )
    .unwrap();
    let c = r.micro_counts;
    if (c.tp, c.fp, c.fn_) != (1, 1, 1) || r.micro.precision != 0.5 || r.micro.recall != 0.5 || r.micro.f1 != 0.5 {
        failures.push(format!("tp/fp/fn case: {:?} {:?}", (c.tp, c.fp, c.fn_), r.micro));
    }

    let r = score(&one(&["B-A", "I-A", "O", "B-B"]), &one(&["B-C", "I-C", "O", "B-A"]), &MacroOver::Observed).unwrap();
    if r.micro.f1 != 0.0 || r.md.f1 != 1.0 {
        failures.push(format!("type-wrong case: micro {} md {}", r.micro.f1, r.md.f1));
    }

    let r = score(&one(&["B-A", "I-A", "I-A"]), &one(&["B-A", "I-A", "O"]), &MacroOver::Observed).unwrap();
    if r.micro.f1 != 0.0 || r.md.f1 != 0.0 {
        failures.push(format!("boundary case: micro {} md {}", r.micro.f1, r.md.f1));
    }

    let core_fixtures = workspace_root().join("crates/core/tests/fixtures");
    let gold = parse_conll(core_fixtures.join("per_tag_gold.conll"), &ConllOptions::default()).unwrap();
    let pred = parse_conll(core_fixtures.join("per_tag_pred.conll"), &ConllOptions::default()).unwrap();
    let r = score(&gold, &pred, &MacroOver::Observed).unwrap();
    let expected = fs::read_to_string(core_fixtures.join("per_tag_expected.csv")).unwrap();
    if per_tag_csv(&r) != expected {
        failures.push("per-type table differs from hand-counted fixture".into());
    }
    gate(
        failures.is_empty(),
        if failures.is_empty() {
            "tp=fp=fn=1 gives P=R=F1=0.5; span-right type-wrong gives micro 0 and MD 1.0; boundary error gives 0; \
             per-type fixture reproduced byte-exact"
                .into()
        } else {
            failures.join("; ")
        },
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("train50.conll");
    let emb = embeddings_for(&corpus, dir.path());
    let run = |name: &str| -> Result<(String, Vec<u8>, Vec<u8>), String> {
        let out = dir.path().join(name);
        let r = nerlab(&[
            "train",
            "--corpus",
            &p(&corpus),
            "--embeddings",
            &p(&emb),
            "--config",
            &p(&config_path("config11.json")),
            "--out",
            &p(&out),
        ]);
        if r.code != 0 {
            return Err(r.stderr);
        }
        let pred = out.join("pred");
        let r = nerlab(&[
            "predict",
            "--checkpoint",
            &p(&out.join("model.ckpt")),
            "--corpus",
            &p(&corpus),
            "--embeddings",
            &p(&emb),
            "--out",
            &p(&pred),
        ]);
        if r.code != 0 {
            return Err(r.stderr);
        }
        Ok((
            fs::read_to_string(out.join("train_log.csv")).unwrap(),
            fs::read(pred.join("predictions.conll")).unwrap(),
            fs::read(out.join("model.ckpt")).unwrap(),
        ))
    };
    match (run("a"), run("b")) {
        (Ok(a), Ok(b)) => gate(
            a.0 == b.0 && a.1 == b.1,
            format!(
                "two train+predict runs of config11.json: loss logs identical {}, predictions identical {}, \
                 checkpoints identical {} ({} log rows)",
                a.0 == b.0,
                a.1 == b.1,
                a.2 == b.2,
                a.0.lines().count() - 1
            ),
        ),
        (a, b) => Fail(format!("a run failed: {:?} / {:?}", a.err(), b.err())),
    }
}

fn official_corpus() -> Outcome {
    let train = std::env::var_os("NERLAB_OFFICIAL_TRAIN").map(PathBuf::from);
    let dev = std::env::var_os("NERLAB_OFFICIAL_DEV").map(PathBuf::from);
    let (Some(train), Some(dev)) = (train, dev) else {
        return Skip("set NERLAB_OFFICIAL_TRAIN and NERLAB_OFFICIAL_DEV to the official English train/dev files".into());
    };
    let out = tempfile::tempdir().unwrap();
    let r = nerlab(&["eda", "--corpus", &p(&train), "--corpus", &p(&dev), "--out", &p(out.path())]);
    if r.code != 0 {
        return Fail(format!("eda exited {}: {}", r.code, r.stderr.trim()));
    }
    let count_for = |path: &PathBuf| {
        let prefix = format!("  {}: ", path.display());
        r.stdout
            .lines()
            .find_map(|l| l.strip_prefix(&prefix))
            .and_then(|n| n.parse::<usize>().ok())
    };
    let labels = r
        .stdout
        .lines()
        .find_map(|l| l.strip_prefix("distinct BIO labels: "))
        .and_then(|n| n.parse::<usize>().ok());
    let (t, d) = (count_for(&train), count_for(&dev));
    gate(
        t == Some(16_778) && d == Some(871) && labels == Some(67),
        format!("train {t:?} (want 16778), dev {d:?} (want 871), distinct BIO labels {labels:?} (want 67)"),
    )
}

fn crf_trend() -> Outcome {
    let start = Instant::now();
    let schema = LabelSchema::multiconer2();
    let mut means = [0.0f64; 2];
    let mut per_seed = Vec::new();
    for seed in [1u64, 2, 3] {
        let all = synth_corpus(
            &schema,
            &SynthCorpusConfig {
                num_sentences: 700,
                num_types: Some(6),
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let (h, seqs) = synth_embeddings(
            &all,
            &SynthEmbeddingConfig {
                seed,
                mode: EmbeddingMode::TypePrototype { noise: 1.0 },
                ..Default::default()
            },
        )
        .unwrap();
        let (train_seqs, held_seqs) = seqs.split_at(200);
        let train_store = EmbeddingStore::from_sequences(h, train_seqs.to_vec()).unwrap();
        let held_store = EmbeddingStore::from_sequences(h, held_seqs.to_vec()).unwrap();
        let train_set = Dataset::new(all.sentences[..200].to_vec());
        let held_out = Dataset::new(all.sentences[200..].to_vec());
        let mut row = Vec::new();
        for (i, kind) in [HeadKind::LinearCe, HeadKind::LinearCrf].into_iter().enumerate() {
            let mut config = TrainConfig::new(HeadConfig::new(kind), 10, 16);
            config.seed = seed;
            config.base_lr = 0.01;
            config.log_train_f1 = false;
            let model = train::<f64>(&train_set, &train_store, &schema, &config).unwrap().checkpoint;
            let pred = predict(&model, &held_out.untagged(), &held_store, &schema).unwrap();
            let f1 = score(&held_out, &pred, &MacroOver::Observed).unwrap().micro.f1;
            means[i] += f1 / 3.0;
            row.push(format!("{f1:.4}"));
        }
        per_seed.push(format!("seed {seed}: ce {} crf {}", row[0], row[1]));
    }
    Report(format!(
        "500 held-out sentences, 3 seeds: mean micro-F1 linear_crf {:.4} vs linear_ce {:.4} -> crf >= ce {} ({}); {:.1}s",
        means[1],
        means[0],
        means[1] >= means[0],
        per_seed.join(", "),
        start.elapsed().as_secs_f64()
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 10] = [
        ("crf-oracle", crf_oracle),
        ("gradient-gate", gradient_gate),
        ("loss-schedule", loss_schedule),
        ("bio-algebra", bio_algebra),
        ("interchange-format", interchange_format),
        ("overfit-capacity", overfit_capacity),
        ("metric-oracle", metric_oracle),
        ("determinism", determinism),
        ("official-corpus-counts", official_corpus),
        ("crf-trend", crf_trend),
    ];
    let mut failed = Vec::new();
    println!();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed.push(name);
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
            Report(d) => ("REPORT", d),
        };
        println!("{tag:<6} {name}: {detail}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
