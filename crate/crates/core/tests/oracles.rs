//! Implementation outputs checked against independently coded oracles.

use std::collections::{BTreeMap, BTreeSet};

use featurescope::dative::{compute_deltas, generate_pairs, Projections, StudyLexicon, Variant};
use featurescope::hpo::{
    derive_search_space, median_prune_decision, tpe_suggest, trial_rng, HyperParams, MedianPruner, ParzenEstimator,
    TpeConfig, TrialRecord, TrialStatus,
};
use featurescope::mlp::{forward_params, hidden_activations, loss_and_grad, mse_loss, Mode, Params};
use featurescope::norms::{parse_norms, SpaceConfig};
use featurescope::store::{aggregate_records, build_training_pairs, EmbeddingRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_params(rng: &mut ChaCha8Rng, din: usize, hid: usize, dout: usize) -> Params {
    let mut p = Params::zeros(din, hid, dout);
    for b in p.blocks_mut() {
        for w in b.iter_mut() {
            *w = rng.random_range(-1.0..1.0);
        }
    }
    p
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

/// Dense-algebra forward pass written against nested matrices.
fn oracle_forward(p: &Params, x: &[f64]) -> Vec<f64> {
    let w1: Vec<Vec<f64>> = p.w1.chunks(p.input_dim).map(<[f64]>::to_vec).collect();
    let w2: Vec<Vec<f64>> = p.w2.chunks(p.hidden).map(<[f64]>::to_vec).collect();
    let mut h = vec![0.0; p.hidden];
    for j in 0..p.hidden {
        let mut acc = p.b1[j];
        for i in 0..p.input_dim {
            acc += w1[j][i] * x[i];
        }
        h[j] = if acc > 0.0 { acc } else { 0.0 };
    }
    let mut y = vec![0.0; p.output_dim];
    for k in 0..p.output_dim {
        let mut acc = p.b2[k];
        for j in 0..p.hidden {
            acc += w2[k][j] * h[j];
        }
        y[k] = acc;
    }
    y
}

fn oracle_loss(p: &Params, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    for (x, y) in xs.iter().zip(ys) {
        let pred = oracle_forward(p, x);
        for k in 0..pred.len() {
            total += (pred[k] - y[k]).powi(2);
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn forward_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let (din, hid, dout) = (rng.random_range(1..12), rng.random_range(1..16), rng.random_range(1..8));
        let p = random_params(&mut rng, din, hid, dout);
        let x: Vec<f64> = (0..din).map(|_| rng.random_range(-3.0..3.0)).collect();
        let got = forward_params(&p, &x, Mode::Eval).unwrap();
        for (a, b) in got.iter().zip(oracle_forward(&p, &x)) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn mse_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (b, d) = (rng.random_range(1..20), rng.random_range(1..10));
        let pred = random_matrix(&mut rng, b, d);
        let target = random_matrix(&mut rng, b, d);
        let mut sum = 0.0;
        for i in 0..b {
            for j in 0..d {
                sum += (pred[i][j] - target[i][j]) * (pred[i][j] - target[i][j]);
            }
        }
        let expected = sum / (b * d) as f64;
        assert!((mse_loss(&pred, &target).unwrap() - expected).abs() < 1e-10);
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for instance in 0..25 {
        let (din, hid, dout, batch) = (
            rng.random_range(2..7),
            rng.random_range(2..9),
            rng.random_range(1..5),
            rng.random_range(1..6),
        );
        let p = random_params(&mut rng, din, hid, dout);
        let xs = random_matrix(&mut rng, batch, din);
        let ys = random_matrix(&mut rng, batch, dout);
        let xr: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
        let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let (loss, grad) = loss_and_grad(&p, &xr, &yr, Mode::Eval).unwrap();
        assert!((loss - oracle_loss(&p, &xs, &ys)).abs() < 1e-10);

        let mut diff2 = 0.0;
        let mut norm_a = 0.0;
        let mut norm_n = 0.0;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.set(i, p.get(i) + h);
            let mut minus = p.clone();
            minus.set(i, p.get(i) - h);
            let numeric = (oracle_loss(&plus, &xs, &ys) - oracle_loss(&minus, &xs, &ys)) / (2.0 * h);
            let analytic = grad.get(i);
            diff2 += (numeric - analytic).powi(2);
            norm_a += analytic * analytic;
            norm_n += numeric * numeric;
        }
        let rel = diff2.sqrt() / (norm_a.sqrt() + norm_n.sqrt()).max(1e-12);
        assert!(rel < 1e-4, "instance {instance}: relative error {rel}");
    }
}

#[test]
fn inverted_dropout_preserves_expected_activation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_params(&mut rng, 6, 10, 3);
    let x = [0.5, -0.3, 0.8, 0.1, 1.2, -0.7];
    let eval = hidden_activations(&p, &x, Mode::Eval).unwrap();
    let n = 20_000;
    let mut mean = [0.0; 10];
    let mut drng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..n {
        let h = hidden_activations(&p, &x, Mode::Train { dropout: 0.5, rng: &mut drng }).unwrap();
        for (m, v) in mean.iter_mut().zip(h) {
            *m += v / n as f64;
        }
    }
    for (m, e) in mean.iter().zip(&eval) {
        if *e == 0.0 {
            assert_eq!(*m, 0.0);
        } else {
            assert!((m - e).abs() / e.abs() < 0.02, "mean {m} vs eval {e}");
        }
    }
}

#[test]
fn aggregate_matches_group_by_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words: Vec<String> = (0..50).map(|i| format!("w{i:02}")).collect();
    let records: Vec<EmbeddingRecord> = (0..1000)
        .map(|i| EmbeddingRecord {
            word: words[rng.random_range(0..50)].clone(),
            context_id: i.to_string(),
            layer: 4,
            vector: (0..8).map(|_| rng.random_range(-5.0f32..5.0)).collect(),
        })
        .collect();

    let mut groups: BTreeMap<&str, Vec<&EmbeddingRecord>> = BTreeMap::new();
    for r in &records {
        groups.entry(&r.word).or_default().push(r);
    }
    let agg = aggregate_records(4, &records);
    assert_eq!(agg.len(), groups.len());
    for a in &agg {
        let members = &groups[a.word.as_str()];
        assert_eq!(a.context_count, members.len());
        for d in 0..8 {
            let mean = members.iter().map(|r| r.vector[d] as f64).sum::<f64>() / members.len() as f64;
            assert!((a.mean_vector[d] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn training_pairs_match_set_intersection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let norm_words: BTreeSet<String> = (0..535).map(|i| format!("n{}", i * 3)).collect();
    let mut text = String::from("word,a,b\n");
    for w in &norm_words {
        text.push_str(&format!("{w},1,2\n"));
    }
    let space = parse_norms(&text, &SpaceConfig::named("t")).unwrap();
    assert_eq!(space.len(), 535);
    assert_eq!(space.dim(), 2);

    let records: Vec<EmbeddingRecord> = (0..900)
        .map(|i| EmbeddingRecord {
            word: format!("n{}", rng.random_range(0..2000)),
            context_id: i.to_string(),
            layer: 0,
            vector: vec![1.0],
        })
        .collect();
    let agg = aggregate_records(0, &records);
    let agg_words: BTreeSet<String> = agg.iter().map(|a| a.word.clone()).collect();
    let expected: Vec<String> = agg_words.intersection(&norm_words).cloned().collect();
    let ds = build_training_pairs(&agg, &space).unwrap();
    assert_eq!(ds.words(), &expected[..]);
}

#[test]
fn deltas_match_triple_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let items = generate_pairs(&StudyLexicon::default()).unwrap()[..10].to_vec();
    let layers = [0u32, 5];
    let mut proj = Projections::new();
    for i in 0..items.len() {
        for v in [Variant::Do, Variant::Po] {
            for &l in &layers {
                proj.insert((i, v, l), (0..9).map(|_| rng.random_range(0.0..6.0)).collect());
            }
        }
    }
    let person = [0, 2, 4, 6, 8];
    let place = [1, 7];
    let report = compute_deltas("m", &items, &proj, &layers, &person, &place).unwrap();
    for (ld, &layer) in report.layers.iter().zip(&layers) {
        let mut p = 0.0;
        let mut q = 0.0;
        for i in 0..items.len() {
            for &f in &person {
                p += proj[&(i, Variant::Do, layer)][f] - proj[&(i, Variant::Po, layer)][f];
            }
            for &f in &place {
                q += proj[&(i, Variant::Po, layer)][f] - proj[&(i, Variant::Do, layer)][f];
            }
        }
        assert!((ld.person_delta - p / 50.0).abs() < 1e-10);
        assert!((ld.place_delta - q / 20.0).abs() < 1e-10);
        assert_eq!(ld.n_items, 10);
    }
}

fn trial(id: usize, values: Vec<(usize, f64)>, status: TrialStatus) -> TrialRecord {
    let final_value = (status == TrialStatus::Complete).then(|| values.last().map_or(1.0, |v| v.1));
    TrialRecord {
        trial_id: id,
        params: HyperParams {
            hidden_size: 8,
            batch_size: 16,
            learning_rate: 1e-3,
        },
        intermediate_values: values,
        status,
        final_value,
    }
}

#[test]
fn prune_decision_worked_example() {
    let history: Vec<_> = [0.5, 0.7, 0.9, 1.1, 1.3]
        .iter()
        .enumerate()
        .map(|(i, v)| trial(i, vec![(3, *v)], TrialStatus::Complete))
        .collect();
    let p = MedianPruner::default();
    let cur = |v| trial(10, vec![(3, v)], TrialStatus::Running);
    assert!(median_prune_decision(&cur(1.0), 3, &history, &p));
    assert!(!median_prune_decision(&cur(0.9), 3, &history, &p));
    assert!(!median_prune_decision(&cur(5.0), 3, &history[..4], &p));
}

/// Recomputes the good/bad split and scores every candidate by brute-force
/// density evaluation, checking that the returned lr is the argmax.
#[test]
fn tpe_prefers_good_cluster() {
    let space = derive_search_space(32, 16);
    let mut history = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..40 {
        let good = i % 10 == 0;
        let center: f64 = if good { -3.0 } else { -1.0 };
        let lr = 10f64.powf(center + rng.random_range(-0.2..0.2));
        let value = if good { 0.1 + rng.random_range(0.0..0.01) } else { 1.0 + rng.random_range(0.0..0.5) };
        let mut t = trial(i, vec![(1, value)], TrialStatus::Complete);
        t.params.learning_rate = lr;
        t.final_value = Some(value);
        history.push(t);
    }
    let cfg = TpeConfig::default();
    let mut within = 0;
    for seed in 0..100 {
        let lr = tpe_suggest(&history, &space, &cfg, &mut trial_rng(seed, 40)).unwrap().learning_rate;
        if (lr.log10() + 3.0).abs() <= 1.0 {
            within += 1;
        }
    }
    assert!(within > 90, "{within}/100 suggestions within a decade of 1e-3");

    // brute-force scoring of the candidate set for one suggestion
    let mut sorted = history.clone();
    sorted.sort_by(|a, b| a.final_value.unwrap().total_cmp(&b.final_value.unwrap()));
    let n_good = cfg.n_good(sorted.len());
    let good: Vec<f64> = sorted[..n_good].iter().map(|t| t.params.learning_rate.ln()).collect();
    let bad: Vec<f64> = sorted[n_good..].iter().map(|t| t.params.learning_rate.ln()).collect();
    let (lo, hi) = (space.learning_rate.lo.ln(), space.learning_rate.hi.ln());
    let l = ParzenEstimator::new(&good, lo, hi);
    let g = ParzenEstimator::new(&bad, lo, hi);

    // replay the generator: hidden and batch draws come first
    let mut replay = trial_rng(77, 40);
    let hid = space.hidden_size;
    let bat = space.batch_size;
    let hl = ParzenEstimator::new(
        &sorted[..n_good].iter().map(|t| t.params.hidden_size as f64).collect::<Vec<_>>(),
        hid.lo as f64 - 0.5,
        hid.hi as f64 + 0.5,
    );
    for _ in 0..cfg.n_candidates {
        hl.sample(&mut replay);
    }
    let bl = ParzenEstimator::new(
        &sorted[..n_good].iter().map(|t| t.params.batch_size as f64).collect::<Vec<_>>(),
        bat.lo as f64 - 0.5,
        bat.hi as f64 + 0.5,
    );
    for _ in 0..cfg.n_candidates {
        bl.sample(&mut replay);
    }
    let candidates: Vec<f64> = (0..cfg.n_candidates).map(|_| l.sample(&mut replay)).collect();
    let mut best = candidates[0];
    let mut best_score = f64::NEG_INFINITY;
    for &c in &candidates {
        let pl: f64 = l.log_pdf(c).exp();
        let pg: f64 = g.log_pdf(c).exp();
        let score = pl / pg;
        if score > best_score {
            best_score = score;
            best = c;
        }
    }
    let got = tpe_suggest(&history, &space, &cfg, &mut trial_rng(77, 40)).unwrap();
    assert!((got.learning_rate - best.exp()).abs() <= 1e-12 * best.exp().max(1e-12));
}
