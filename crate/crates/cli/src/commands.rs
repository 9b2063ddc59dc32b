use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use idte_annotation::Store;
use idte_core::crawler::{crawl, CrawlState, GateModel, SimulatedPlatform};
use idte_core::graph::{build_cooccurrence_graph, detect_communities, export_graph, graph_stats};
use idte_core::labels::label_name;
use idte_core::metrics::MetricsReport;
use idte_core::model::{load_model, save_model, split_indices, train};
use idte_core::record::{read_jsonl, write_jsonl, RecordKind, SuspectIdte};
use idte_core::synthdata::{
    generate_corpus, synth_platform, CorpusConfig, PlatformConfig, PlatformGraph,
};
use serde_json::json;

use crate::{
    load_config, require_dir, require_file, require_writable, write_json, Cli, Command, CrawlArgs,
    CrawlFile, EvalArgs, GenCorpusArgs, GenPlatformArgs, GraphArgs, Outcome, ServeArgs, TrainArgs,
    TrainFile,
};

pub(crate) fn dispatch(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::GenCorpus(a) => gen_corpus(a, cli.seed),
        Command::GenPlatform(a) => gen_platform(a, cli.seed),
        Command::Train(a) => train_cmd(a, cli.seed),
        Command::Eval(a) => eval(a),
        Command::CrawlSim(a) => crawl_sim(a, cli.seed),
        Command::Graph(a) => graph(a, cli.seed),
        Command::Serve(a) => serve(a),
    }
}

fn read_records(path: &std::path::Path) -> Result<Vec<SuspectIdte>> {
    read_jsonl(path).with_context(|| format!("reading records from {}", path.display()))
}

fn gen_corpus(a: &GenCorpusArgs, seed: Option<u64>) -> Result<Outcome> {
    let mut cfg: CorpusConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.obfuscation_rate {
        cfg.obfuscation_rate = v;
    }
    if let Some(v) = a.distractor_rate {
        cfg.distractor_rate = v;
    }
    if let Some(v) = a.comment_rate {
        cfg.comment_rate = v;
    }
    if let Some(v) = a.d_img {
        cfg.d_img = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    require_writable(&a.out)?;
    if let Some(p) = &a.stats {
        require_writable(p)?;
    }

    let corpus = generate_corpus(&cfg)?;
    write_jsonl(&a.out, &corpus.records)?;
    if let Some(p) = &a.stats {
        write_json(p, &corpus.stats)?;
    }
    let comments = corpus
        .records
        .iter()
        .filter(|r| r.kind == RecordKind::Comment)
        .count();
    let mut table = format!(
        "{} records ({} comments) -> {}\n{:<12} {:>9} {:>12} {:>13}\n",
        corpus.records.len(),
        comments,
        a.out.display(),
        "label",
        "positives",
        "text ceiling",
        "image ceiling"
    );
    for l in &corpus.stats.labels {
        let _ = writeln!(
            table,
            "{:<12} {:>9} {:>12.3} {:>13.3}",
            l.name,
            l.positives,
            l.text_accuracy_ceiling(),
            l.image_accuracy_ceiling()
        );
    }
    Ok(Outcome {
        json: json!({
            "records": corpus.records.len(),
            "comments": comments,
            "mode": corpus.stats.mode,
            "out": a.out,
        }),
        table: table.trim_end().to_string(),
    })
}

fn gen_platform(a: &GenPlatformArgs, seed: Option<u64>) -> Result<Outcome> {
    let mut cfg: PlatformConfig = load_config(a.config.as_deref())?;
    if let Some(v) = a.users {
        cfg.users = v;
    }
    if let Some(v) = a.dealers {
        cfg.dealers = v;
    }
    if let Some(v) = a.posts {
        cfg.posts = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    require_writable(&a.out)?;
    let g = synth_platform(&cfg)?;
    write_json(&a.out, &g)?;
    let drug_posts = g.posts.iter().filter(|p| p.drug).count();
    let ad_comments = g.comments.iter().filter(|c| c.drug_ad).count();
    let dealers = g.dealer_ids().len();
    Ok(Outcome {
        json: json!({
            "users": g.users.len(),
            "dealers": dealers,
            "posts": g.posts.len(),
            "drug_posts": drug_posts,
            "comments": g.comments.len(),
            "drug_ad_comments": ad_comments,
            "out": a.out,
        }),
        table: format!(
            "users {}  dealers {}  posts {} ({} drug)  comments {} ({} ads) -> {}",
            g.users.len(),
            dealers,
            g.posts.len(),
            drug_posts,
            g.comments.len(),
            ad_comments,
            a.out.display()
        ),
    })
}

fn metrics_table(m: &MetricsReport) -> String {
    let mut t = format!(
        "{:<12} {:>9} {:>9} {:>9}\n",
        "label", "precision", "recall", "f1"
    );
    let width = m.labels.width();
    for (i, c) in m.labels.per_label.iter().enumerate() {
        let _ = writeln!(
            t,
            "{:<12} {:>9.4} {:>9.4} {:>9.4}",
            label_name(i, width),
            c.precision(),
            c.recall(),
            c.f1()
        );
    }
    let _ = write!(
        t,
        "n {}  subset accuracy {:.4}  hamming loss {:.4}\nmicro P/R/F1 {:.4} {:.4} {:.4}\nmacro P/R/F1 {:.4} {:.4} {:.4}",
        m.n_examples,
        m.subset_accuracy,
        m.hamming_loss,
        m.micro_precision,
        m.micro_recall,
        m.micro_f1,
        m.macro_precision,
        m.macro_recall,
        m.macro_f1
    );
    t
}

fn metrics_summary(m: &MetricsReport) -> serde_json::Value {
    json!({
        "n_examples": m.n_examples,
        "subset_accuracy": m.subset_accuracy,
        "hamming_loss": m.hamming_loss,
        "micro_f1": m.micro_f1,
        "macro_f1": m.macro_f1,
    })
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>) -> Result<Outcome> {
    let TrainFile {
        mut model,
        train: mut tc,
    } = load_config(a.config.as_deref())?;
    if let Some(v) = a.kind {
        tc.kind = v;
    }
    if let Some(v) = a.epochs {
        tc.epochs = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.adam.lr = v;
    }
    if let Some(v) = a.train_fraction {
        tc.train_fraction = v;
    }
    if a.no_normalize {
        tc.normalize = false;
    }
    for (flag, slot) in [
        (a.d_model, &mut model.d_model),
        (a.n_heads, &mut model.n_heads),
        (a.n_layers, &mut model.n_layers),
        (a.d_ff, &mut model.d_ff),
        (a.image_tokens, &mut model.image_tokens),
        (a.max_seq, &mut model.max_seq),
        (a.vocab_size, &mut model.vocab_size),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    if let Some(s) = seed {
        model.seed = s;
        tc.split_seed = s;
    }
    require_file(&a.data)?;
    require_writable(&a.out)?;
    if let Some(p) = &a.history {
        require_writable(p)?;
    }

    let records = read_records(&a.data)?;
    let Some(first) = records.first() else {
        bail!("{}: no records", a.data.display());
    };
    // the image width is a property of the data
    model.d_img = first.image_features.len();
    let (trained, history) = train(&records, &model, &tc)?;
    save_model(&a.out, &trained)?;
    if let Some(p) = &a.history {
        write_json(p, &history)?;
    }
    let final_metrics = history.final_metrics();
    let mut table = format!(
        "{} on {} train / {} test records, {} epochs\ntrain loss {:.5} -> {:.5}",
        history.kind,
        history.n_train,
        history.n_test,
        history.epochs.len(),
        history.initial_train_loss,
        history.final_train_loss()
    );
    if let Some(m) = final_metrics {
        table.push('\n');
        table.push_str(&metrics_table(m));
    }
    Ok(Outcome {
        json: json!({
            "kind": history.kind,
            "n_train": history.n_train,
            "n_test": history.n_test,
            "epochs": history.epochs.len(),
            "initial_train_loss": history.initial_train_loss,
            "final_train_loss": history.final_train_loss(),
            "test_metrics": final_metrics.map(metrics_summary),
            "out": a.out,
        }),
        table,
    })
}

fn eval(a: &EvalArgs) -> Result<Outcome> {
    require_file(&a.model)?;
    require_file(&a.data)?;
    if let Some(p) = &a.report {
        require_writable(p)?;
    }
    let model =
        load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let mut records = read_records(&a.data)?;
    if let Some(s) = a.holdout_seed {
        let (_, test) = split_indices(records.len(), a.train_fraction, s);
        let keep: BTreeSet<usize> = test.into_iter().collect();
        records = records
            .into_iter()
            .enumerate()
            .filter(|(i, _)| keep.contains(i))
            .map(|(_, r)| r)
            .collect();
    }
    if records.is_empty() {
        bail!("{}: nothing to evaluate", a.data.display());
    }
    let report = model.evaluate(&records)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    Ok(Outcome {
        json: metrics_summary(&report),
        table: metrics_table(&report),
    })
}

fn crawl_sim(a: &CrawlArgs, seed: Option<u64>) -> Result<Outcome> {
    let file: CrawlFile = load_config(a.config.as_deref())?;
    let mut cfg = file.crawl;
    for (flag, slot) in [
        (a.threshold, &mut cfg.dealer_threshold),
        (a.top_k, &mut cfg.top_k),
        (a.posts_per_hashtag, &mut cfg.posts_per_hashtag),
        (a.max_iterations, &mut cfg.max_iterations),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    let gate = GateModel::new(
        a.tpr.or(file.tpr).unwrap_or(0.95),
        a.fpr.or(file.fpr).unwrap_or(0.05),
        seed.or(file.gate_seed).unwrap_or(0),
    )?;
    require_file(&a.platform)?;
    require_writable(&a.out)?;
    if let Some(p) = &a.summary {
        require_writable(p)?;
    }

    let text = std::fs::read_to_string(&a.platform)
        .with_context(|| format!("reading {}", a.platform.display()))?;
    let graph: PlatformGraph =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.platform.display()))?;
    let seeds: Vec<String> = if !a.seeds.is_empty() {
        a.seeds.clone()
    } else if !file.seeds.is_empty() {
        file.seeds
    } else {
        let k = a.num_seeds.or(file.num_seeds).unwrap_or(3);
        graph.drug_hashtags.iter().take(k).cloned().collect()
    };
    let platform = SimulatedPlatform::new(&graph);
    let state: CrawlState = crawl(&platform, &seeds, &gate, &cfg)?;
    write_jsonl(&a.out, &state.records)?;
    let summary = state.summary();
    if let Some(p) = &a.summary {
        write_json(p, &summary)?;
    }
    let planted = graph.dealer_ids();
    let found = state
        .dealer_accounts
        .iter()
        .filter(|d| planted.contains(d))
        .count();
    let mut table = format!(
        "{} iterations, {} posts accepted of {} gated, {} accounts ({} of {} planted dealers), stop: {}\n{:<24} {:>6}\n",
        summary.iterations,
        summary.collected_posts,
        summary.gated_posts,
        summary.dealer_accounts,
        found,
        planted.len(),
        serde_json::to_value(summary.stop_reason)?.as_str().unwrap_or("none"),
        "hashtag",
        "count"
    );
    for h in &summary.top_hashtags {
        let _ = writeln!(table, "{:<24} {:>6}", h.hashtag, h.count);
    }
    let mut js = serde_json::to_value(&summary)?;
    js["seeds"] = json!(seeds);
    js["planted_dealers"] = json!(planted.len());
    js["planted_dealers_found"] = json!(found);
    Ok(Outcome {
        json: js,
        table: table.trim_end().to_string(),
    })
}

fn graph(a: &GraphArgs, seed: Option<u64>) -> Result<Outcome> {
    require_file(&a.data)?;
    require_writable(&a.out)?;
    let posts: Vec<SuspectIdte> = read_records(&a.data)?
        .into_iter()
        .filter(|r| r.kind == RecordKind::Post)
        .collect();
    let g = build_cooccurrence_graph(&posts);
    if g.is_empty() {
        bail!("{}: no post carries a hashtag", a.data.display());
    }
    let stats = graph_stats(&g);
    let part = detect_communities(&g, seed.unwrap_or(0))?;
    let export = export_graph(&g, &stats, &part)?;
    write_json(&a.out, &export)?;

    let mut ranked: Vec<_> = export.nodes.iter().collect();
    ranked.sort_by(|x, y| {
        y.betweenness
            .total_cmp(&x.betweenness)
            .then(x.tag.cmp(&y.tag))
    });
    ranked.truncate(10);
    let mut table = format!(
        "{} hashtags, {} edges, {} communities\n{:<24} {:>6} {:>10} {:>12} {:>9}\n",
        g.len(),
        export.edges.len(),
        part.count,
        "hashtag",
        "degree",
        "clustering",
        "betweenness",
        "community"
    );
    for n in &ranked {
        let _ = writeln!(
            table,
            "{:<24} {:>6} {:>10.4} {:>12.2} {:>9}",
            n.tag, n.degree, n.clustering, n.betweenness, n.community
        );
    }
    Ok(Outcome {
        json: json!({
            "nodes": g.len(),
            "edges": export.edges.len(),
            "communities": part.count,
            "converged": part.converged,
            "top_betweenness": ranked.iter().map(|n| json!({"tag": n.tag, "betweenness": n.betweenness})).collect::<Vec<_>>(),
            "out": a.out,
        }),
        table: table.trim_end().to_string(),
    })
}

fn serve(a: &ServeArgs) -> Result<Outcome> {
    require_dir(&a.store)?;
    if let Some(p) = &a.items {
        require_file(p)?;
    }
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(false)
        .try_init();
    let store =
        Store::open(&a.store).with_context(|| format!("opening store {}", a.store.display()))?;
    if let Some(p) = &a.items {
        let added = store.add_items(&read_records(p)?)?;
        eprintln!("added {added} posts from {}", p.display());
    }
    let store = Arc::new(store);
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(idte_annotation::serve(store, &a.addr))
        .with_context(|| format!("serving on {}", a.addr))?;
    Ok(Outcome {
        json: json!({"stopped": true}),
        table: "stopped".into(),
    })
}
