use disc_core::corpus::{GroundTruth, Snippet, SnippetCorpus};
use disc_core::evaluate::{align_senses, brier_score, ess, hpd_interval, Predictions};
use disc_core::likelihood::{log_marginal_likelihood, sense_posterior};
use disc_core::model::{
    derive_probability_arrays, softmax, Dims, Hyperparams, LatentState, ModelSpec, WordParams,
};
use disc_core::simulate::{registration_filter, Registration};
use ndarray::Array2;
use proptest::prelude::*;

fn corpus_strategy(dims: Dims, max_d: usize) -> impl Strategy<Value = SnippetCorpus> {
    prop::collection::vec(
        (
            0..dims.t,
            0..dims.g,
            prop::collection::vec(0..dims.v as u32, 0..8),
        ),
        1..max_d,
    )
    .prop_map(move |rows| {
        let snippets = rows
            .into_iter()
            .enumerate()
            .map(|(i, (time, genre, words))| Snippet {
                id: format!("s{i}"),
                time,
                genre,
                words,
            })
            .collect();
        SnippetCorpus::new(snippets, dims.v, dims.t, dims.g).unwrap()
    })
}

fn gasc_state(dims: Dims, values: &[f64]) -> (ModelSpec, LatentState) {
    let spec = ModelSpec::new(dims, Hyperparams::gasc_default()).unwrap();
    let mut state = LatentState::zeros(&spec);
    let mut it = values.iter().cycle();
    state.phi.mapv_inplace(|_| *it.next().unwrap());
    if let WordParams::Gasc { psi, .. } = &mut state.words {
        psi.mapv_inplace(|_| *it.next().unwrap());
    }
    (spec, state)
}

const DIMS: Dims = Dims {
    k: 3,
    v: 7,
    t: 2,
    g: 2,
};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_shift_invariant_probability_vector(x in prop::collection::vec(-30.0f64..30.0, 1..12), c in -50.0f64..50.0) {
        let p = softmax(&x).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        for (a, b) in p.iter().zip(softmax(&shifted).unwrap()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sense_posterior_sums_to_one_and_ignores_column_shifts(
        corpus in corpus_strategy(DIMS, 6),
        values in prop::collection::vec(-3.0f64..3.0, 20),
        c in -5.0f64..5.0,
        t in 0..DIMS.t,
        g in 0..DIMS.g,
        k in 0..DIMS.k,
    ) {
        let (spec, state) = gasc_state(DIMS, &values);
        let base = derive_probability_arrays(&state, &spec).unwrap();
        let mut shifted = state.clone();
        for ki in 0..DIMS.k {
            shifted.phi[[t, g, ki]] += c;
        }
        if let WordParams::Gasc { psi, .. } = &mut shifted.words {
            for v in 0..DIMS.v {
                psi[[t, k, v]] += c;
            }
        }
        let moved = derive_probability_arrays(&shifted, &spec).unwrap();
        for s in &corpus.snippets {
            let a = sense_posterior(s, &base);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(sense_posterior(s, &moved)) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn likelihood_ignores_snippet_and_word_order(
        corpus in corpus_strategy(DIMS, 10),
        values in prop::collection::vec(-3.0f64..3.0, 20),
        seed in any::<u64>(),
    ) {
        let (spec, state) = gasc_state(DIMS, &values);
        let probs = derive_probability_arrays(&state, &spec).unwrap();
        let mut snippets = corpus.snippets.clone();
        snippets.reverse();
        let n = snippets.len();
        snippets.rotate_left((seed as usize) % n);
        for s in &mut snippets {
            s.words.reverse();
        }
        let shuffled = SnippetCorpus::new(snippets, DIMS.v, DIMS.t, DIMS.g).unwrap();
        let a = log_marginal_likelihood(&corpus, &probs).unwrap();
        let b = log_marginal_likelihood(&shuffled, &probs).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn brier_is_minimised_by_empirical_frequencies(
        labels in prop::collection::vec(0usize..3, 1..40),
        weights in prop::collection::vec(0.01f64..1.0, 3),
    ) {
        let ids: Vec<String> = (0..labels.len()).map(|i| format!("d{i}")).collect();
        let truth = GroundTruth { labels: ids.iter().cloned().zip(labels.iter().cloned()).collect() };
        let constant = |p: &[f64]| {
            let probs = Array2::from_shape_fn((ids.len(), 3), |(_, k)| p[k]);
            brier_score(&Predictions::new(ids.clone(), probs).unwrap(), &truth).unwrap()
        };
        let n = labels.len() as f64;
        let freq: Vec<f64> = (0..3).map(|k| labels.iter().filter(|&&z| z == k).count() as f64 / n).collect();
        let total: f64 = weights.iter().sum();
        let other: Vec<f64> = weights.iter().map(|w| w / total).collect();
        prop_assert!(constant(&freq) <= constant(&other) + 1e-12);
    }

    #[test]
    fn hpd_holds_its_mass(
        trace in prop::collection::vec(-1e3f64..1e3, 100..400),
        mass in 0.05f64..1.0,
    ) {
        let h = hpd_interval(&trace, mass).unwrap();
        let n = trace.len() as f64;
        let inside = trace.iter().filter(|&&x| h.contains(x)).count() as f64;
        prop_assert!(inside / n >= mass - 1.0 / n);
    }

    #[test]
    fn alignment_total_ignores_model_sense_order(
        raw in prop::collection::vec(0.01f64..1.0, 4 * 6),
        truth_raw in prop::collection::vec(0.01f64..1.0, 3 * 6),
        rotate in 0usize..4,
    ) {
        let normalise = |x: Vec<f64>, rows: usize| {
            let mut a = Array2::from_shape_vec((rows, 6), x).unwrap();
            for mut r in a.rows_mut() {
                let s = r.sum();
                r /= s;
            }
            a
        };
        let model = normalise(raw, 4);
        let empirical = normalise(truth_raw, 3);
        let order: Vec<usize> = (0..4).map(|i| (i + rotate) % 4).collect();
        let permuted = model.select(ndarray::Axis(0), &order);
        let a = align_senses(&model, &empirical).unwrap();
        let b = align_senses(&permuted, &empirical).unwrap();
        prop_assert!((a.total() - b.total()).abs() < 1e-12);
        for (i, &j) in order.iter().enumerate() {
            prop_assert_eq!(b.assignment[i], a.assignment[j]);
        }
    }

    #[test]
    fn ess_is_affine_invariant(
        trace in prop::collection::vec(-10.0f64..10.0, 100..300),
        scale in prop::sample::select(vec![-3.0, -0.5, 0.25, 2.0, 1e3]),
        shift in -100.0f64..100.0,
    ) {
        let moved: Vec<f64> = trace.iter().map(|x| scale * x + shift).collect();
        let (a, b) = (ess(&trace).unwrap(), ess(&moved).unwrap());
        prop_assert_eq!(a.degenerate, b.degenerate);
        prop_assert!((a.value - b.value).abs() <= 1e-6 * a.value.abs().max(1.0));
    }

    #[test]
    fn registration_is_idempotent(corpus in corpus_strategy(Dims { k: 2, v: 12, t: 2, g: 1 }, 12)) {
        for mode in [Registration::HapaxRemoval, Registration::FrequencyTopShare(1.0)] {
            if let Ok(once) = registration_filter(&corpus, mode) {
                let twice = registration_filter(&once, mode).unwrap();
                prop_assert_eq!(&once, &twice);
            }
        }
    }
}
