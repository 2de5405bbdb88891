use featurescope::dative::{compute_deltas, generate_pairs, Projections, StudyLexicon, Variant, Verb};
use featurescope::hpo::{median_prune_decision, HyperParams, MedianPruner, TrialRecord, TrialStatus};
use featurescope::mlp::{train, EarlyStopping, MlpConfig, Progress};
use featurescope::norms::{
    normalize_features, parse_norms, select_features, FeatureDef, NormSpace, Normalization, SpaceConfig,
};
use featurescope::store::{aggregate_records, EmbeddingRecord};
use featurescope::Dataset;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn space_strategy() -> impl Strategy<Value = NormSpace> {
    (1usize..6, 1usize..12).prop_flat_map(|(dim, n)| {
        prop::collection::vec(prop::collection::vec(-1e3f64..1e3, dim), n).prop_map(move |rows| {
            let features = (0..dim)
                .map(|j| FeatureDef {
                    name: format!("F{j}"),
                    definition: String::new(),
                })
                .collect();
            let rows = rows.into_iter().enumerate().map(|(i, v)| (format!("w{i}"), v));
            NormSpace::new("p", features, rows, None).unwrap()
        })
    })
}

fn trial(id: usize, values: &[f64], status: TrialStatus) -> TrialRecord {
    TrialRecord {
        trial_id: id,
        params: HyperParams {
            hidden_size: 4,
            batch_size: 4,
            learning_rate: 1e-3,
        },
        intermediate_values: values.iter().enumerate().map(|(s, v)| (s + 1, *v)).collect(),
        status,
        final_value: (status == TrialStatus::Complete).then(|| *values.last().unwrap()),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norms_csv_round_trip(space in space_strategy()) {
        let mut buf = Vec::new();
        space.write_csv(&mut buf).unwrap();
        let back = parse_norms(std::str::from_utf8(&buf).unwrap(), &SpaceConfig::named("p")).unwrap();
        prop_assert_eq!(back, space);
    }

    #[test]
    fn minmax_is_idempotent(space in space_strategy()) {
        if let Ok(once) = normalize_features(space, Normalization::MinmaxPerFeature) {
            for (_, v) in once.iter() {
                prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
            }
            let twice = normalize_features(once.clone(), Normalization::MinmaxPerFeature).unwrap();
            for ((_, a), (_, b)) in once.iter().zip(twice.iter()) {
                for (x, y) in a.iter().zip(b) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn selecting_all_features_is_identity(space in space_strategy()) {
        let idx = select_features(&space, &space.feature_names()).unwrap();
        prop_assert_eq!(idx, (0..space.dim()).collect::<Vec<_>>());
    }

    #[test]
    fn aggregation_invariants(
        picks in prop::collection::vec((0usize..8, prop::collection::vec(-10f32..10.0, 3)), 1..60),
        seed in any::<u64>(),
    ) {
        let records: Vec<EmbeddingRecord> = picks
            .iter()
            .enumerate()
            .map(|(i, (w, v))| EmbeddingRecord { word: format!("w{w}"), context_id: i.to_string(), layer: 2, vector: v.clone() })
            .collect();
        let agg = aggregate_records(2, &records);
        prop_assert_eq!(agg.iter().map(|a| a.context_count).sum::<usize>(), records.len());

        let mut shuffled = records.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let agg2 = aggregate_records(2, &shuffled);
        prop_assert_eq!(agg.len(), agg2.len());
        for (a, b) in agg.iter().zip(&agg2) {
            prop_assert_eq!(&a.word, &b.word);
            for (x, y) in a.mean_vector.iter().zip(&b.mean_vector) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }

        // a single record per word aggregates to itself
        let singles: Vec<EmbeddingRecord> = agg.iter().map(|a| EmbeddingRecord {
            word: a.word.clone(), context_id: "0".into(), layer: 2,
            vector: a.mean_vector.iter().map(|v| *v as f32).collect(),
        }).collect();
        for (a, b) in aggregate_records(2, &singles).iter().zip(&singles) {
            prop_assert_eq!(a.context_count, 1);
            let expect: Vec<f64> = b.vector.iter().map(|v| f64::from(*v)).collect();
            prop_assert_eq!(&a.mean_vector, &expect);
        }
    }

    #[test]
    fn raising_a_value_never_unprunes(
        history in prop::collection::vec(0.0f64..10.0, 0..12),
        v in 0.0f64..10.0,
        bump in 0.0f64..5.0,
    ) {
        let hist: Vec<_> = history.iter().enumerate().map(|(i, x)| trial(i, &[*x], TrialStatus::Complete)).collect();
        let p = MedianPruner::default();
        let low = median_prune_decision(&trial(99, &[v], TrialStatus::Running), 1, &hist, &p);
        let high = median_prune_decision(&trial(99, &[v + bump], TrialStatus::Running), 1, &hist, &p);
        prop_assert!(!low || high);
    }

    #[test]
    fn deltas_negate_on_swap_and_ignore_shifts(
        vals in prop::collection::vec(prop::collection::vec(0.0f64..6.0, 4), 12),
        shift in -3.0f64..3.0,
    ) {
        let items = generate_pairs(&StudyLexicon::default()).unwrap()[..3].to_vec();
        let mut proj = Projections::new();
        let mut swapped = Projections::new();
        let mut shifted = Projections::new();
        for i in 0..3 {
            let d = vals[4 * i].clone();
            let p = vals[4 * i + 1].clone();
            proj.insert((i, Variant::Do, 0), d.clone());
            proj.insert((i, Variant::Po, 0), p.clone());
            swapped.insert((i, Variant::Do, 0), p.clone());
            swapped.insert((i, Variant::Po, 0), d.clone());
            shifted.insert((i, Variant::Do, 0), d.iter().map(|x| x + shift).collect());
            shifted.insert((i, Variant::Po, 0), p.iter().map(|x| x + shift).collect());
        }
        let a = &compute_deltas("m", &items, &proj, &[0], &[0, 1], &[2, 3]).unwrap().layers[0];
        let b = &compute_deltas("m", &items, &swapped, &[0], &[0, 1], &[2, 3]).unwrap().layers[0];
        let c = &compute_deltas("m", &items, &shifted, &[0], &[0, 1], &[2, 3]).unwrap().layers[0];
        prop_assert!((a.person_delta + b.person_delta).abs() < 1e-12);
        prop_assert!((a.place_delta + b.place_delta).abs() < 1e-12);
        prop_assert!((a.person_delta - c.person_delta).abs() < 1e-9);
        prop_assert!((a.place_delta - c.place_delta).abs() < 1e-9);
    }

    #[test]
    fn pair_generation_invariants(nr in 1usize..5, nv in 1usize..4, na in 1usize..4) {
        let lex = StudyLexicon {
            recipients: (0..nr).map(|i| format!("Rec{i}")).collect(),
            verbs: (0..nv).map(|i| Verb { lemma: format!("v{i}"), past: format!("v{i}ed") }).collect(),
            themes: (0..nv).map(|i| (format!("v{i}"), format!("the thing{i}"))).collect::<BTreeMap<_, _>>(),
            agents: (0..na).map(|i| format!("Agent{i}")).collect(),
        };
        let items = generate_pairs(&lex).unwrap();
        prop_assert_eq!(items.len(), nr * nv * na);
        for it in &items {
            let do_tail = format!("{} {}.", it.recipient, it.theme);
            let po_tail = format!("to {}.", it.recipient);
            prop_assert!(it.do_sentence.ends_with(&do_tail));
            prop_assert!(it.po_sentence.ends_with(&po_tail));
            prop_assert!(it.do_sentence.starts_with(&it.agent));
        }
    }

    #[test]
    fn early_stopping_bound(losses in prop::collection::vec(0.0f64..1.0, 1..100), patience in 1usize..10) {
        let mut es = EarlyStopping::new(patience);
        let mut stop_at = None;
        for (i, l) in losses.iter().enumerate() {
            if es.observe(i + 1, *l) == Progress::Exhausted {
                stop_at = Some(i + 1);
                break;
            }
        }
        if let Some(stop) = stop_at {
            prop_assert_eq!(stop - es.best_epoch(), patience);
            let best = losses[..stop].iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(es.best(), best);
        }
    }
}

fn synthetic(n: usize, din: usize, dout: usize, seed: u64) -> Dataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<Vec<f64>> = (0..dout).map(|_| (0..din).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..n {
        let x: Vec<f64> = (0..din).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = w.iter().map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + 3.0).collect();
        xs.push(x);
        ys.push(y);
    }
    Dataset::from_rows(xs, ys).unwrap()
}

#[test]
fn training_recovers_a_linear_map() {
    let ds = synthetic(400, 8, 3, 11);
    let mut cfg = MlpConfig::new(8, 3, 64);
    cfg.dropout = 0.0;
    cfg.batch_size = 16;
    cfg.learning_rate = 3e-3;
    let (_, report) = train(&ds, &cfg).unwrap();
    let var_baseline = 8.0 / 3.0 / 3.0; // variance of sum of 8 products of U(-1,1)
    assert!(report.best_val_loss < 0.1 * var_baseline, "{}", report.best_val_loss);
}

#[test]
fn training_is_deterministic_and_restores_best() {
    let ds = synthetic(60, 5, 2, 12);
    let mut cfg = MlpConfig::new(5, 2, 16);
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-2;
    cfg.seed = 42;
    let (m1, r1) = train(&ds, &cfg).unwrap();
    let (m2, r2) = train(&ds, &cfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(m1.params(), m2.params());
    let min = r1.val_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r1.best_val_loss, min);
    assert_eq!(r1.val_losses[r1.best_epoch - 1], min);
    assert!(r1.epochs_run <= cfg.max_epochs);
    if r1.stopped_early {
        assert_eq!(r1.epochs_run - r1.best_epoch, cfg.patience);
    }
}
