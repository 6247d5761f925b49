use std::path::{Path, PathBuf};

use disc_core::config::KeyValues;
use disc_core::corpus::{GroundTruth, SnippetCorpus};
use disc_core::elicit::{elicit_kappa_chi_theta, elicit_kappa_phi};
use disc_core::evaluate::{
    align_senses, brier_score, compare_chains, confusion_stats, empirical_prevalence,
    empirical_word_distributions, ess, ess_benchmark, labelled_only, predictions, prevalence_table,
    time_averaged_psi, EssSelection, Predictions,
};
use disc_core::io::{
    load_corpus, read_predictions, read_store, read_truth, read_vocab, write_predictions,
    write_prevalence, write_sim_output, write_store, LoadOptions, Summary, TimeBinning,
    UnknownTokens, FORMAT_VERSION,
};
use disc_core::model::{Dims, ModelSpec};
use disc_core::samplers::{run_chains, ChainConfig, ChainOutput, Init, SamplerKind};
use disc_core::simulate::{
    interaction_level, make_explicit_interaction_dataset, registration_filter,
    simulate_observations, simulate_prior_with_start, ExplicitConfig, ExplicitDesign, Registration,
    SimConfig, IMPROPER_START_SD,
};
use disc_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{Common, DiagnoseArgs, ElicitArgs, EvaluateArgs, FitArgs, SimulateArgs};
use crate::{CliError, CliResult};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Config-file settings with command-line overrides applied.
struct Settings {
    kv: KeyValues,
}

impl Settings {
    fn load(common: &Common) -> CliResult<Self> {
        let mut kv = match &common.config {
            Some(p) => KeyValues::read(p)?,
            None => KeyValues::default(),
        };
        let overrides: [(&str, Option<String>); 6] = [
            ("seed", common.seed.map(|x| x.to_string())),
            ("chains", common.chains.map(|x| x.to_string())),
            ("sampler", common.sampler.clone()),
            ("iterations", common.iterations.map(|x| x.to_string())),
            ("burn_in", common.burn_in.map(|x| x.to_string())),
            ("thin", common.thin.map(|x| x.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                kv.set(key, v);
            }
        }
        Ok(Settings { kv })
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> CliResult<Option<T>> {
        self.kv.get_parsed(key).map_err(|e| usage(e.to_string()))
    }

    /// A path given on the command line, else one from the config file
    /// (resolved relative to it).
    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.clone().or_else(|| self.kv.get_path(key))
    }

    fn out_dir(&self, common: &Common) -> CliResult<PathBuf> {
        self.path(&common.out, "out")
            .ok_or_else(|| usage("an output directory is required (--out or 'out' in the config)"))
    }

    fn seed(&self) -> CliResult<u64> {
        Ok(self.parsed("seed")?.unwrap_or(0))
    }

    fn chain_config(&self, spec: &ModelSpec) -> CliResult<ChainConfig> {
        let sampler = SamplerKind::parse(self.kv.get("sampler").unwrap_or("mixed"))
            .map_err(|e| usage(e.to_string()))?;
        let mut config = ChainConfig::for_family(spec.family(), sampler);
        if let Some(n) = self.parsed("iterations")? {
            config.iterations = n;
            config.burn_in = n / 2;
        }
        if let Some(b) = self.parsed("burn_in")? {
            config.burn_in = b;
        }
        if let Some(t) = self.parsed("thin")? {
            config.thin = t;
        }
        if let Some(l) = self.parsed("leapfrog_steps")? {
            config.leapfrog_steps = l;
        }
        if let Some(p) = self.parsed("p_long")? {
            config.mixed.p_long = p;
        }
        config.seed = self.seed()?;
        config.validate().map_err(|e| usage(e.to_string()))?;
        Ok(config)
    }
}

fn create_dir(dir: &Path) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Failed(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn write_file(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| {
        CliError::Failed(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn load_options(
    vocab: Option<&Path>,
    time_bins: Option<&str>,
    cap: Option<(usize, u64)>,
    drop_unknown: bool,
) -> CliResult<LoadOptions> {
    Ok(LoadOptions {
        vocab: vocab.map(read_vocab).transpose()?,
        unknown: if drop_unknown {
            UnknownTokens::Drop
        } else {
            UnknownTokens::Fail
        },
        time: match time_bins {
            Some(s) => TimeBinning::parse(s).map_err(|e| usage(e.to_string()))?,
            None => TimeBinning::Auto,
        },
        genres: None,
        max_len: None,
        cap_per_block: cap,
    })
}

/// Maps each chain's senses onto the annotated senses (resolving label
/// switching within and between chains), averages the aligned predictions
/// and scores the labelled snippets. Returns the scored predictions.
fn score(
    summary: &mut Summary,
    chains: &[ChainOutput],
    corpus: &SnippetCorpus,
    truth: &GroundTruth,
) -> CliResult<Predictions> {
    let k_true = truth.labels.values().max().map_or(0, |&z| z + 1).max(2);
    let empirical = empirical_word_distributions(corpus, truth, k_true)?;
    let mut pooled: Option<Predictions> = None;
    for (c, chain) in chains.iter().enumerate() {
        let model = time_averaged_psi(&chain.posterior_means().psi);
        let alignment = align_senses(&model, &empirical)?;
        let mapped: Vec<String> = alignment
            .assignment
            .iter()
            .map(|a| a.map_or_else(|| "-".to_string(), |j| (j + 1).to_string()))
            .collect();
        summary.push(format!("chain{}.sense_alignment", c + 1), mapped.join(" "));
        let aligned = predictions(std::slice::from_ref(chain), corpus)?.realign(&alignment)?;
        pooled = Some(match pooled {
            None => aligned,
            Some(mut acc) => {
                acc.probs += &aligned.probs;
                acc
            }
        });
    }
    let mut pooled = pooled.expect("at least one chain");
    pooled.probs /= chains.len() as f64;
    let scored = labelled_only(&pooled, truth);
    summary.push("scored_snippets", scored.ids.len());
    if scored.ids.is_empty() {
        return Ok(scored);
    }
    summary.push(
        "brier_score",
        format!("{:.4}", brier_score(&scored, truth)?),
    );
    push_accuracy(summary, &scored, truth);
    Ok(scored)
}

fn push_accuracy(summary: &mut Summary, scored: &Predictions, truth: &GroundTruth) {
    let hard = scored.hard_labels();
    let hits = scored
        .ids
        .iter()
        .zip(&hard)
        .filter(|(id, z)| truth.get(id) == Some(**z))
        .count();
    summary.push(
        "accuracy",
        format!("{:.4}", hits as f64 / scored.ids.len() as f64),
    );
}

pub fn fit(common: &Common, a: &FitArgs) -> CliResult {
    let mut s = Settings::load(common)?;
    if let Some(f) = &a.family {
        s.kv.set("family", f);
    }
    if let Some(k) = a.senses {
        s.kv.set("K", k);
    }
    let data = s
        .path(&a.data, "data")
        .ok_or_else(|| usage("a snippet file is required (--data or 'data' in the config)"))?;
    let vocab = s.path(&a.vocab, "vocab");
    let truth_path = s.path(&a.truth, "truth");
    let out = s.out_dir(common)?;
    let seed = s.seed()?;
    let time_bins = a
        .time_bins
        .clone()
        .or_else(|| s.kv.get("time_bins").map(String::from));
    let cap = match a.cap_per_block.or(s.parsed("cap_per_block")?) {
        Some(c) => Some((c, seed)),
        None => None,
    };
    let report = load_corpus(
        &data,
        &load_options(vocab.as_deref(), time_bins.as_deref(), cap, a.drop_unknown)?,
    )?;
    let corpus = report.corpus;
    let fallback = Dims {
        k: 0,
        v: corpus.v,
        t: corpus.t,
        g: corpus.g,
    };
    let spec =
        ModelSpec::from_key_values(&s.kv, Some(fallback)).map_err(|e| usage(e.to_string()))?;
    if (spec.dims.v, spec.dims.t, spec.dims.g) != (corpus.v, corpus.t, corpus.g) {
        return Err(usage(format!(
            "config dimensions V={} T={} G={} do not match the corpus (V={} T={} G={})",
            spec.dims.v, spec.dims.t, spec.dims.g, corpus.v, corpus.t, corpus.g
        )));
    }
    let config = s.chain_config(&spec)?;
    let n_chains: usize = s.parsed("chains")?.unwrap_or(1);
    if n_chains == 0 {
        return Err(usage("--chains must be at least 1"));
    }
    let truth = truth_path.as_deref().map(read_truth).transpose()?;
    if let Some(t) = &truth {
        t.validate(&corpus, usize::MAX)?;
    }

    let chains = run_chains(&corpus, &spec, &config, &Init::Prior, n_chains)?;
    for (c, chain) in chains.iter().enumerate() {
        if !chain.draws.iter().all(|x| x.is_finite()) {
            return Err(CliError::Failed(Error::NonFinite(format!(
                "chain {} produced non-finite draws",
                c + 1
            ))));
        }
    }

    create_dir(&out)?;
    let mut manifest = KeyValues::default();
    manifest.set("format_version", FORMAT_VERSION);
    manifest.set("data", data.display());
    if let Some(v) = &vocab {
        manifest.set("vocab", v.display());
    }
    if let Some(t) = &truth_path {
        manifest.set("truth", t.display());
    }
    manifest.set("family", spec.family().name());
    for (key, value) in [
        ("K", spec.dims.k),
        ("V", spec.dims.v),
        ("T", spec.dims.t),
        ("G", spec.dims.g),
    ] {
        manifest.set(key, value);
    }
    manifest.set("sampler", config.sampler);
    manifest.set("iterations", config.iterations);
    manifest.set("burn_in", config.burn_in);
    manifest.set("thin", config.thin);
    manifest.set("chains", n_chains);
    manifest.set("seed", config.seed);
    write_file(&out.join("manifest.txt"), &manifest.to_text())?;

    let mut summary = Summary::default();
    summary.push("command", "fit");
    summary.push("family", spec.family().name());
    summary.push(
        "dims",
        format!(
            "K={} V={} T={} G={}",
            spec.dims.k, spec.dims.v, spec.dims.t, spec.dims.g
        ),
    );
    summary.push("hyperparameters", format!("{:?}", spec.hyper));
    summary.push("snippets", corpus.len());
    summary.push("tokens", corpus.token_count());
    summary.push("empty_snippets", report.empty.len());
    summary.push("dropped_tokens", report.dropped_tokens);
    summary.push("capped_snippets", report.capped);
    summary.push("sampler", config.sampler);
    summary.push("iterations", config.iterations);
    summary.push("burn_in", config.burn_in);
    summary.push("thin", config.thin);
    summary.push("seed", config.seed);
    summary.push("chains", n_chains);
    let mut timing = String::from("chain\tburn_in_seconds\tsampling_seconds\n");
    for (c, chain) in chains.iter().enumerate() {
        let tag = format!("chain{}", c + 1);
        write_store(&out.join(format!("{tag}.bin")), chain)?;
        summary.push(format!("{tag}.draws"), chain.n_draws());
        summary.push(format!("{tag}.non_finite_proposals"), chain.non_finite);
        summary.push(
            format!("{tag}.degenerate_updates"),
            chain.degenerate_updates,
        );
        for b in &chain.blocks {
            summary.push(
                format!("{tag}.block.{}.L{}", b.name, b.leapfrog_steps),
                format!(
                    "acceptance={:.4} sigma2={:.6e} divergences={}",
                    b.acceptance, b.sigma2, b.divergences
                ),
            );
        }
        timing.push_str(&format!(
            "{}\t{:.3}\t{:.3}\n",
            c + 1,
            chain.burn_in_seconds,
            chain.sampling_seconds
        ));
    }
    write_file(&out.join("timing.tsv"), &timing)?;

    let empirical = truth
        .as_ref()
        .map(|t| empirical_prevalence(t, &corpus, spec.dims.k))
        .transpose()?;
    let rows = prevalence_table(&chains, empirical.as_ref(), 0.95)?;
    write_prevalence(&out.join("prevalence.tsv"), &rows, &corpus)?;
    let preds = predictions(&chains, &corpus)?;
    write_predictions(&out.join("predictions.tsv"), &preds)?;
    if let Some(t) = &truth {
        score(&mut summary, &chains, &corpus, t)?;
    }
    if chains.len() > 1 {
        let worst = chains[1..]
            .iter()
            .map(|c| compare_chains(&chains[0], c))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .flatten()
            .max_by(|x, y| x.z.total_cmp(&y.z));
        if let Some(w) = worst {
            summary.push(
                "max_chain_gap_mcse",
                format!("{:.3} ({})", w.z, w.parameter),
            );
        }
    }
    summary.write(&out.join("summary.txt"))?;
    print!("{}", summary.to_text());
    Ok(())
}

pub fn simulate(common: &Common, a: &SimulateArgs) -> CliResult {
    let s = Settings::load(common)?;
    let out = s.out_dir(common)?;
    let seed = s.seed()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let design = a
        .design
        .clone()
        .or_else(|| s.kv.get("design").map(String::from));
    let (sim, spec) = match design {
        Some(d) => {
            let design = ExplicitDesign::parse(&d).map_err(|e| usage(e.to_string()))?;
            let mut cfg = ExplicitConfig::default();
            if let Some(n) = s.parsed("d_per_t")? {
                cfg.d_per_t = n;
            }
            if let Some(l) = s.parsed("L")? {
                cfg.l = l;
            }
            if let Some(r) = s.parsed("ratio")? {
                cfg.ratio = r;
            }
            let sim = make_explicit_interaction_dataset(design, &cfg, &mut rng)?;
            let spec = ModelSpec::new(
                Dims {
                    k: 3,
                    v: sim.corpus.v,
                    t: sim.corpus.t,
                    g: 1,
                },
                disc_core::model::Hyperparams::gasc_default(),
            )?;
            (sim, spec)
        }
        None => {
            let spec = ModelSpec::from_key_values(&s.kv, None).map_err(|e| usage(e.to_string()))?;
            let mut cfg = SimConfig::new(spec.clone(), s.parsed("d_per_t")?.unwrap_or(100), seed);
            if let Some(l) = s.parsed("L")? {
                cfg.l = l;
            }
            cfg.q_sw = s.parsed("q_sw")?.unwrap_or(0.0);
            cfg.q_u = s.parsed("q_u")?.unwrap_or(0.0);
            if let Some(mix) = s.kv.get("genre_mix") {
                cfg.genre_mix = mix
                    .split(',')
                    .map(|x| {
                        x.trim()
                            .parse::<f64>()
                            .map_err(|_| usage(format!("bad genre_mix entry '{x}'")))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
            }
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let start_sd = s.parsed("start_sd")?.unwrap_or(IMPROPER_START_SD);
            let state = simulate_prior_with_start(&spec, start_sd, &mut rng);
            (simulate_observations(&state, &cfg, &mut rng)?, spec)
        }
    };
    let mut sim = sim;
    let registration = match s.kv.get("registration").unwrap_or("none") {
        "none" => None,
        "hapax" => Some(Registration::HapaxRemoval),
        other => match other.strip_prefix("top-share:").map(str::parse::<f64>) {
            Some(Ok(share)) => Some(Registration::FrequencyTopShare(share)),
            _ => {
                return Err(usage(format!(
                    "unknown registration '{other}' (none, hapax or top-share:<fraction>)"
                )))
            }
        },
    };
    let simulated_v = sim.corpus.v;
    if let Some(r) = registration {
        sim.corpus = registration_filter(&sim.corpus, r)?;
    }
    write_sim_output(&out, &sim, &spec)?;
    let lambda = interaction_level(&sim.corpus, &sim.truth, spec.dims.k)?;
    let mut summary = Summary::default();
    summary.push("command", "simulate");
    summary.push("family", spec.family().name());
    summary.push("seed", seed);
    summary.push("snippets", sim.corpus.len());
    summary.push("tokens", sim.corpus.token_count());
    summary.push("simulated_vocabulary", simulated_v);
    summary.push("registered_vocabulary", sim.corpus.v);
    summary.push("interaction_level", format!("{:.4}", lambda.lambda));
    summary.push("interaction_untestable_words", lambda.insufficient);
    summary.write(&out.join("summary.txt"))?;
    print!("{}", summary.to_text());
    Ok(())
}

pub fn evaluate(common: &Common, a: &EvaluateArgs) -> CliResult {
    let truth = read_truth(&a.truth)?;
    let mut summary = Summary::default();
    summary.push("command", "evaluate");
    let scored = match (&a.predictions, a.store.is_empty()) {
        (Some(p), true) => {
            let preds = read_predictions(p)?;
            let scored = labelled_only(&preds, &truth);
            summary.push("scored_snippets", scored.ids.len());
            summary.push("unlabelled_skipped", preds.ids.len() - scored.ids.len());
            if scored.ids.is_empty() {
                return Err(CliError::Failed(Error::Validation(
                    "no prediction has a matching annotation".into(),
                )));
            }
            summary.push(
                "brier_score",
                format!("{:.4}", brier_score(&scored, &truth)?),
            );
            push_accuracy(&mut summary, &scored, &truth);
            scored
        }
        (None, false) => {
            let data = a.data.as_ref().expect("clap enforces --data");
            let corpus =
                load_corpus(data, &load_options(a.vocab.as_deref(), None, None, false)?)?.corpus;
            let chains = a
                .store
                .iter()
                .map(|p| read_store(p))
                .collect::<Result<Vec<_>, _>>()?;
            let scored = score(&mut summary, &chains, &corpus, &truth)?;
            if scored.ids.is_empty() {
                return Err(CliError::Failed(Error::Validation(
                    "no snippet in the data has an annotation".into(),
                )));
            }
            scored
        }
        _ => return Err(usage("give either --predictions or --store with --data")),
    };
    if let Some(pos) = a.positive {
        if pos == 0 || pos > scored.k() {
            return Err(usage(format!(
                "--positive must be between 1 and {}",
                scored.k()
            )));
        }
        let labels: Vec<usize> = scored
            .ids
            .iter()
            .map(|id| truth.get(id).expect("labelled"))
            .collect();
        let c = confusion_stats(&scored.hard_labels(), &labels, pos - 1)?;
        summary.push("sensitivity", format!("{:.4}", c.sensitivity));
        summary.push("specificity", format!("{:.4}", c.specificity));
    }
    finish_evaluate(common, summary)
}

fn finish_evaluate(common: &Common, summary: Summary) -> CliResult {
    if let Some(dir) = &common.out {
        create_dir(dir)?;
        summary.write(&dir.join("evaluation.txt"))?;
    }
    print!("{}", summary.to_text());
    Ok(())
}

pub fn diagnose(common: &Common, a: &DiagnoseArgs) -> CliResult {
    if !(a.threshold > 0.0) {
        return Err(usage("--threshold must be positive"));
    }
    let chains = a
        .stores
        .iter()
        .map(|p| read_store(p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut summary = Summary::default();
    summary.push("command", "diagnose");
    for (i, (chain, path)) in chains.iter().zip(&a.stores).enumerate() {
        let tag = format!("chain{}", i + 1);
        summary.push(format!("{tag}.store"), path.display());
        summary.push(format!("{tag}.sampler"), chain.config.sampler);
        summary.push(format!("{tag}.draws"), chain.n_draws());
        let traces = chain.phi_tilde_traces();
        let mut values = Vec::new();
        for col in traces.columns() {
            let e = ess(&col.to_vec())?;
            if !e.degenerate {
                values.push(e.value);
            }
        }
        values.sort_by(f64::total_cmp);
        if let Some(m) = values.get(values.len() / 2) {
            summary.push(format!("{tag}.phi_ess_median"), format!("{m:.1}"));
        }
        if chain.sampling_seconds > 0.0 {
            for (name, sel) in [
                ("phi", EssSelection::PhiAll),
                ("psi_top", EssSelection::PsiTopWords(a.top_words)),
            ] {
                let b = ess_benchmark(std::slice::from_ref(chain), sel)?;
                summary.push(
                    format!("{tag}.{name}_ess_per_hour"),
                    format!("median={:.1} iqr=[{:.1}, {:.1}]", b.median, b.q1, b.q3),
                );
            }
        }
    }
    if chains.len() > 1 {
        let mut worst: Option<disc_core::evaluate::ChainGap> = None;
        let mut flagged = 0;
        for other in &chains[1..] {
            for gap in compare_chains(&chains[0], other)? {
                if gap.z > a.threshold {
                    flagged += 1;
                }
                if worst.as_ref().is_none_or(|w| gap.z > w.z) {
                    worst = Some(gap);
                }
            }
        }
        let w = worst.expect("at least one parameter");
        summary.push("max_gap_mcse", format!("{:.3}", w.z));
        summary.push("max_gap_parameter", &w.parameter);
        summary.push(
            "max_gap_means",
            format!("{:.4} vs {:.4}", w.mean_a, w.mean_b),
        );
        summary.push("parameters_over_threshold", flagged);
        summary.push("chains_agree", if flagged == 0 { "yes" } else { "no" });
    }
    if let Some(dir) = &common.out {
        create_dir(dir)?;
        summary.write(&dir.join("diagnose.txt"))?;
    }
    print!("{}", summary.to_text());
    Ok(())
}

pub fn elicit(a: &ElicitArgs) -> CliResult {
    match a.target.as_str() {
        "phi" => {
            let e = elicit_kappa_phi(a.ratio, a.alpha).map_err(|e| usage(e.to_string()))?;
            println!("{}", e.rounded);
            if a.exact {
                println!("exact {}", e.exact);
            }
        }
        "words" => {
            let (chi, theta) =
                elicit_kappa_chi_theta(a.ratio, a.alpha).map_err(|e| usage(e.to_string()))?;
            println!("kappa_chi {}", chi.rounded);
            println!("kappa_theta {}", theta.rounded);
            if a.exact {
                println!("exact kappa_chi {} kappa_theta {}", chi.exact, theta.exact);
            }
        }
        other => return Err(usage(format!("unknown target '{other}' (phi or words)"))),
    }
    Ok(())
}
