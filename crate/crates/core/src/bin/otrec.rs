//! Command-line front end: corpus generation, training, model
//! comparison, serving recommendations, gradient validation, and
//! inspection of the learned travel intentions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use otrec::dataio::{build_session_graph, load_dataset};
use otrec::encoder::{self, EncoderConfig};
use otrec::evalgen::{
    generate_synthetic, run_experiment, run_tiny_gradcheck, ExperimentOptions, ModelSpec,
    SynthConfig,
};
use otrec::intention::{self, IntentionConfig};
use otrec::numkit::Graph;
use otrec::pipeline::{
    load_checkpoint, parse_kv, recommend, save_checkpoint, train, Checkpoint, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "otrec",
    version,
    about = "Out-of-town POI recommendation: train on home-town check-ins, serve travel suggestions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic check-in corpus (pois.tsv + checkins.tsv)
    GenData(GenDataArgs),
    /// Train the model and save a checkpoint
    Train(TrainArgs),
    /// Compare model variants and baselines on held-out users
    Evaluate(EvaluateArgs),
    /// Rank out-of-town POIs for users given their home check-ins
    Recommend(RecommendArgs),
    /// Check every training gradient against finite differences
    Gradcheck(GradcheckArgs),
    /// Show each learned intention's top POIs (and per-user mixtures)
    DumpIntentions(DumpIntentionsArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// key=value file overriding generator defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory receiving pois.tsv and checkins.tsv
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the config file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory holding pois.tsv and checkins.tsv
    #[arg(long)]
    data: PathBuf,
    /// key=value file overriding training defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path to write
    #[arg(long)]
    out: PathBuf,
    /// Embedding width
    #[arg(long)]
    d: Option<usize>,
    /// Number of latent travel intentions
    #[arg(long)]
    k_topics: Option<usize>,
    /// Topic encoder hidden width
    #[arg(long)]
    ntm_hidden: Option<usize>,
    /// Gated propagation rounds over the session graph
    #[arg(long)]
    ggnn_steps: Option<usize>,
    /// Weight of the topic loss
    #[arg(long)]
    lambda1: Option<f64>,
    /// Weight of the ranking loss
    #[arg(long)]
    lambda2: Option<f64>,
    /// Weight of the transfer loss
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    /// L2 penalty added to every gradient
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Negatives per positive in the ranking loss
    #[arg(long)]
    n_neg: Option<usize>,
    /// Split and initialization seed
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the intention pathway
    #[arg(long)]
    ablate_intention: bool,
    /// Drop the geographical convolution
    #[arg(long)]
    ablate_geoconv: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Directory holding pois.tsv and checkins.tsv
    #[arg(long)]
    data: PathBuf,
    /// Take the training configuration from this checkpoint
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// key=value file overriding the training configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated rows of the comparison table
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "full,ablate-intention,ablate-geoconv,ablate-both,top,bpr-mf"
    )]
    models: Vec<String>,
    /// Comma-separated recall cutoffs
    #[arg(long, value_delimiter = ',', default_values_t = [10, 20, 30])]
    k: Vec<usize>,
    /// Average over this many runs; run r shifts both the split seed
    /// and every model seed by r
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Rank horizon for MAP (default: whole catalog)
    #[arg(long)]
    map_cutoff: Option<usize>,
    /// Overrides the seed from checkpoint/config
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the epoch count from checkpoint/config
    #[arg(long)]
    epochs: Option<usize>,
    /// Also write the report to this file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// TSV of user, time, raw home-POI id (same shape as checkins.tsv)
    #[arg(long)]
    user_checkins: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum GradcheckScale {
    /// 3 users, d = 4, 3 intentions, 5 home / 6 out POIs
    Tiny,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = GradcheckScale::Tiny)]
    scale: GradcheckScale,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    /// Maximum allowed relative error
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct DumpIntentionsArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Also print each user's intention mixture for this corpus
    #[arg(long)]
    data: Option<PathBuf>,
    /// POIs listed per intention
    #[arg(long, default_value_t = 10)]
    top: usize,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Recommend(args) => run_recommend(args),
        Command::Gradcheck(args) => run_gradcheck(args),
        Command::DumpIntentions(args) => dump_intentions(args),
    }
}

/// Apply a key=value config file through a `set(key, value)` hook,
/// failing on unknown keys so typos cannot pass silently.
fn apply_config<E: std::error::Error + Send + Sync + 'static>(
    path: &Path,
    mut set: impl FnMut(&str, &str) -> Result<bool, E>,
) -> Result<()> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let kv = parse_kv(&text).with_context(|| format!("parsing config {}", path.display()))?;
    for (key, value) in &kv {
        let known = set(key, value).with_context(|| format!("config key {key}"))?;
        if !known {
            bail!("config {}: unknown key {key}", path.display());
        }
    }
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    if let Some(path) = &args.config {
        apply_config(path, |k, v| cfg.set(k, v))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let truth = generate_synthetic(&cfg, &args.out)?;
    eprintln!(
        "wrote pois.tsv and checkins.tsv to {}: {} users, {} home POIs, {} out POIs, {} planted intentions",
        args.out.display(),
        cfg.n_users,
        cfg.n_home_pois,
        cfg.n_out_pois,
        truth.poi_intention.iter().max().map_or(0, |m| m + 1),
    );
    Ok(())
}

/// Defaults, then config file, then explicit flags.
fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        apply_config(path, |k, v| cfg.set(k, v))?;
    }
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(v) = args.$field { cfg.$field = v; })*
        };
    }
    take!(
        d, k_topics, ntm_hidden, ggnn_steps, lambda1, lambda2, lambda3, lr, l2, epochs, batch_size,
        n_neg, seed
    );
    if args.ablate_intention {
        cfg.disable_intention = true;
    }
    if args.ablate_geoconv {
        cfg.disable_geoconv = true;
    }
    Ok(cfg)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let cfg = train_config(&args)?;
    let ds = load_dataset(&args.data, cfg.seed)
        .with_context(|| format!("loading corpus from {}", args.data.display()))?;
    eprintln!("{}", ds.report);
    println!("epoch\tL\tL_N\tL_P\tL_T\tvalRec@10\tsec");
    let out = train(&ds, &cfg, |stats| println!("{}", stats.log_line()))?;
    save_checkpoint(&out.checkpoint, &args.out)?;
    eprintln!(
        "saved {} after epoch {} (val Rec@10 {:.4})",
        args.out.display(),
        out.checkpoint.epoch,
        out.checkpoint.val_rec10
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let mut cfg = match &args.ckpt {
        Some(path) => load_checkpoint(path)?.cfg,
        None => TrainConfig::default(),
    };
    if let Some(path) = &args.config {
        apply_config(path, |k, v| cfg.set(k, v))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    let models: Vec<ModelSpec> = args
        .models
        .iter()
        .map(|name| {
            ModelSpec::parse(name)
                .with_context(|| format!("unknown model {name:?}; expected one of full, ablate-intention, ablate-geoconv, ablate-both, top, bpr-mf"))
        })
        .collect::<Result<_>>()?;
    let opts = ExperimentOptions {
        ks: args.k.clone(),
        repeats: args.repeats,
        map_cutoff: args.map_cutoff,
        ..ExperimentOptions::default()
    };
    let report = run_experiment(&args.data, &models, &cfg, &opts)?;
    let rendered = report.render();
    print!("{rendered}");
    if let Some(path) = &args.out {
        std::fs::write(path, &rendered)
            .with_context(|| format!("writing report to {}", path.display()))?;
        eprintln!("report written to {}", path.display());
    }
    Ok(())
}

/// Parse a user/time/raw-POI TSV into per-user raw sequences, time
/// order preserved.
fn read_user_checkins(path: &Path) -> Result<Vec<(u64, Vec<u64>)>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut per_user: BTreeMap<u64, Vec<(i64, u64)>> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = || {
            format!(
                "{}:{}: expected user<TAB>time<TAB>poi",
                path.display(),
                idx + 1
            )
        };
        let mut fields = line.split('\t');
        let user: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .with_context(err)?;
        let time: i64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .with_context(err)?;
        let poi: u64 = fields
            .next()
            .and_then(|f| f.parse().ok())
            .with_context(err)?;
        per_user.entry(user).or_default().push((time, poi));
    }
    if per_user.is_empty() {
        bail!("{} holds no check-ins", path.display());
    }
    Ok(per_user
        .into_iter()
        .map(|(user, mut visits)| {
            visits.sort_by_key(|&(time, _)| time); // stable: ties keep file order
            (user, visits.into_iter().map(|(_, poi)| poi).collect())
        })
        .collect())
}

fn run_recommend(args: RecommendArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    let users = read_user_checkins(&args.user_checkins)?;
    println!("user\trank\tpoi\tscore");
    let mut served = 0;
    for (user, raws) in &users {
        match recommend(&ckpt, *user, raws, args.k) {
            Ok(rec) => {
                for (rank, (poi, score)) in rec.items.iter().enumerate() {
                    println!("{user}\t{}\t{poi}\t{score:.6}", rank + 1);
                }
                served += 1;
            }
            Err(e) => eprintln!("user {user}: {e}"),
        }
    }
    if served == 0 {
        bail!("no user could be served");
    }
    Ok(())
}

fn run_gradcheck(args: GradcheckArgs) -> Result<()> {
    let GradcheckScale::Tiny = args.scale;
    let summary = run_tiny_gradcheck(args.eps)?;
    print!("{}", summary.render(args.tol));
    if !summary.within(args.tol) {
        bail!(
            "worst relative error {:.3e} exceeds {:.0e}",
            summary.max_rel_err(),
            args.tol
        );
    }
    Ok(())
}

fn intention_config(ckpt: &Checkpoint) -> IntentionConfig {
    IntentionConfig {
        d: ckpt.cfg.d,
        k: ckpt.cfg.k_topics,
        ntm_hidden: ckpt.cfg.ntm_hidden,
        share_e_vo: ckpt.cfg.share_e_vo,
    }
}

fn dump_intentions(args: DumpIntentionsArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    if ckpt.cfg.disable_intention {
        bail!("this checkpoint was trained with the intention module disabled");
    }
    let store = ckpt.to_store();
    let mut g = Graph::new();
    let phi = intention::intention_poi_distribution(&mut g, &store, &intention_config(&ckpt))?;
    let phi = g.value(phi).clone();
    let d2 = ckpt.dims.d2;
    for row in 0..ckpt.cfg.k_topics {
        let probs = &phi.data()[row * d2..(row + 1) * d2];
        let mut order: Vec<usize> = (0..d2).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
        let listed: Vec<String> = order
            .iter()
            .take(args.top)
            .map(|&i| format!("{}:{:.4}", ckpt.out_ids[i], probs[i]))
            .collect();
        println!("intention {row}\t{}", listed.join(" "));
    }

    if let Some(data) = &args.data {
        let ds = load_dataset(data, ckpt.cfg.seed)?;
        if ds.catalog.home_vocab() != ckpt.dims.d1 || ds.catalog.out_vocab() != d2 {
            bail!(
                "corpus vocabulary ({} home / {} out) does not match the checkpoint ({} home / {} out)",
                ds.catalog.home_vocab(),
                ds.catalog.out_vocab(),
                ckpt.dims.d1,
                d2
            );
        }
        let enc_cfg = EncoderConfig {
            d: ckpt.cfg.d,
            steps: ckpt.cfg.ggnn_steps,
            attn_softmax: ckpt.cfg.attn_softmax,
        };
        println!("user\tdominant\tmixture");
        for user in ds.all_users() {
            let session = build_session_graph(&user.home_seq)?;
            let mut g = Graph::new();
            let u_h = encoder::home_preference(&mut g, &store, &enc_cfg, &session)?;
            let (_, beta) = intention::user_intention_with_weights(&mut g, &store, u_h)?;
            let weights = g.value(beta).data().to_vec();
            let dominant = weights
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(i, _)| i);
            let listed: Vec<String> = weights.iter().map(|w| format!("{w:.4}")).collect();
            println!("{}\t{dominant}\t{}", user.user, listed.join(" "));
        }
    }
    Ok(())
}
