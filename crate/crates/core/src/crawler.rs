//! Iterative hashtag-guided crawl against a pluggable platform.
//!
//! Each iteration queries every frontier hashtag, passes unseen posts
//! through an image gate, stores accepted posts with their comments, counts
//! the hashtags of accepted posts and picks the `top_k` most frequent
//! hashtags not yet queried as the next frontier. The crawl stops once the
//! number of discovered accounts reaches a threshold or the frontier is
//! empty.
//!
//! A "dealer account" is taken to be the author of any accepted post or of
//! any comment on one.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::SuspectIdte;
use crate::synthdata::PlatformGraph;

/// A post as returned by a platform query. `is_drug` is ground truth that
/// only a simulated gate may consult.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchedPost {
    pub record: SuspectIdte,
    pub is_drug: bool,
    pub comments: Vec<SuspectIdte>,
}

pub trait Platform {
    /// Up to `limit` posts carrying `hashtag`.
    fn query(&self, hashtag: &str, limit: usize) -> Result<Vec<FetchedPost>>;
}

/// Serves a [`PlatformGraph`], newest posts first.
pub struct SimulatedPlatform<'a> {
    graph: &'a PlatformGraph,
    by_tag: HashMap<&'a str, Vec<usize>>,
    comments: HashMap<u64, Vec<usize>>,
    failing: HashSet<String>,
}

impl<'a> SimulatedPlatform<'a> {
    pub fn new(graph: &'a PlatformGraph) -> Self {
        let mut by_tag: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, p) in graph.posts.iter().enumerate() {
            let mut seen = HashSet::new();
            for t in &p.hashtags {
                if seen.insert(t.as_str()) {
                    by_tag.entry(t.as_str()).or_default().push(i);
                }
            }
        }
        for v in by_tag.values_mut() {
            v.sort_by_key(|&i| std::cmp::Reverse(graph.posts[i].id));
        }
        let mut comments: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, c) in graph.comments.iter().enumerate() {
            comments.entry(c.post_id).or_default().push(i);
        }
        SimulatedPlatform {
            graph,
            by_tag,
            comments,
            failing: HashSet::new(),
        }
    }

    /// Makes every query for `hashtag` fail, for exercising error paths.
    pub fn fail_on(mut self, hashtag: &str) -> Self {
        self.failing.insert(hashtag.to_string());
        self
    }
}

impl Platform for SimulatedPlatform<'_> {
    fn query(&self, hashtag: &str, limit: usize) -> Result<Vec<FetchedPost>> {
        if self.failing.contains(hashtag) {
            return Err(Error::Crawl {
                hashtag: hashtag.to_string(),
                reason: "simulated outage".into(),
            });
        }
        let Some(idx) = self.by_tag.get(hashtag) else {
            return Ok(Vec::new());
        };
        Ok(idx
            .iter()
            .take(limit)
            .map(|&i| {
                let post = &self.graph.posts[i];
                let comments = self
                    .comments
                    .get(&post.id)
                    .map(|cs| {
                        cs.iter()
                            .map(|&c| PlatformGraph::comment_record(&self.graph.comments[c]))
                            .collect()
                    })
                    .unwrap_or_default();
                FetchedPost {
                    record: PlatformGraph::post_record(post),
                    is_drug: post.drug,
                    comments,
                }
            })
            .collect())
    }
}

/// Simulated image gate with fixed true- and false-positive rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateModel {
    pub tpr: f64,
    pub fpr: f64,
    pub seed: u64,
}

impl GateModel {
    pub fn new(tpr: f64, fpr: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tpr) || !(0.0..=1.0).contains(&fpr) {
            return Err(Error::contract(format!(
                "gate rates ({tpr}, {fpr}) outside [0, 1]"
            )));
        }
        Ok(GateModel { tpr, fpr, seed })
    }

    pub fn oracle(seed: u64) -> Self {
        GateModel {
            tpr: 1.0,
            fpr: 0.0,
            seed,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Accepts a drug post with probability `tpr` and an innocent one with
/// probability `fpr`. The verdict depends only on the gate seed and the post
/// id.
pub fn gate_classify(post: &FetchedPost, gate: &GateModel) -> bool {
    let stream = splitmix64(gate.seed ^ splitmix64(post.record.id));
    let u: f64 = ChaCha8Rng::seed_from_u64(stream).random();
    u < if post.is_drug { gate.tpr } else { gate.fpr }
}

/// Cumulative hashtag counts over accepted posts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HashtagPool {
    counts: BTreeMap<String, u64>,
    seeds: BTreeSet<String>,
    visited: BTreeSet<String>,
}

impl HashtagPool {
    /// Seeds are present with count 0.
    pub fn with_seeds<S: AsRef<str>>(seeds: &[S]) -> Self {
        let mut pool = HashtagPool::default();
        for s in seeds {
            let s = s.as_ref().to_string();
            pool.counts.entry(s.clone()).or_insert(0);
            pool.seeds.insert(s);
        }
        pool
    }

    pub fn count(&self, tag: &str) -> u64 {
        self.counts.get(tag).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &BTreeMap<String, u64> {
        &self.counts
    }

    pub fn seeds(&self) -> &BTreeSet<String> {
        &self.seeds
    }

    pub fn is_visited(&self, tag: &str) -> bool {
        self.visited.contains(tag)
    }

    pub fn mark_visited(&mut self, tag: &str) {
        self.counts.entry(tag.to_string()).or_insert(0);
        self.visited.insert(tag.to_string());
    }

    /// Adds one to each distinct tag in `hashtags`.
    pub fn record<S: AsRef<str>>(&mut self, hashtags: &[S]) {
        let distinct: BTreeSet<&str> = hashtags.iter().map(AsRef::as_ref).collect();
        for t in distinct {
            *self.counts.entry(t.to_string()).or_insert(0) += 1;
        }
    }

    /// Adds `amount` to one tag, e.g. from annotator feedback.
    pub fn add_weight(&mut self, tag: &str, amount: u64) {
        *self.counts.entry(tag.to_string()).or_insert(0) += amount;
    }

    /// The `k` highest-count tags not yet queried; ties in tag order.
    pub fn top_unvisited(&self, k: usize) -> Vec<String> {
        let mut v: Vec<(&String, u64)> = self
            .counts
            .iter()
            .filter(|(t, &c)| c > 0 && !self.visited.contains(*t))
            .map(|(t, &c)| (t, c))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        v.into_iter().take(k).map(|(t, _)| t.clone()).collect()
    }

    /// The `k` highest-count tags overall.
    pub fn top(&self, k: usize) -> Vec<(String, u64)> {
        let mut v: Vec<(String, u64)> = self.counts.iter().map(|(t, &c)| (t.clone(), c)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }
}

/// Pure form of [`HashtagPool::record`].
pub fn update_hashtag_pool<S: AsRef<str>>(mut pool: HashtagPool, hashtags: &[S]) -> HashtagPool {
    pool.record(hashtags);
    pool
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrawlConfig {
    /// New hashtags per iteration.
    pub top_k: usize,
    pub posts_per_hashtag: usize,
    pub dealer_threshold: usize,
    pub max_iterations: usize,
    /// Extra attempts for a failing query before the crawl gives up.
    pub max_retries: usize,
}

impl Default for CrawlConfig {
    fn default() -> Self {
        CrawlConfig {
            top_k: 10,
            posts_per_hashtag: 50,
            dealer_threshold: 1000,
            max_iterations: 10_000,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Threshold,
    Exhausted,
    IterationLimit,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CrawlState {
    pub iteration: usize,
    /// Accepted post ids in acceptance order.
    pub collected: Vec<u64>,
    /// Accepted posts followed by their comments.
    pub records: Vec<SuspectIdte>,
    pub dealer_accounts: BTreeSet<u64>,
    pub pool: HashtagPool,
    pub gated: HashSet<u64>,
    pub stopped: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashtagCount {
    pub hashtag: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlSummary {
    pub iterations: usize,
    pub collected_posts: usize,
    pub collected_records: usize,
    pub gated_posts: usize,
    pub dealer_accounts: usize,
    pub stop_reason: Option<StopReason>,
    pub top_hashtags: Vec<HashtagCount>,
}

impl CrawlState {
    pub fn summary(&self) -> CrawlSummary {
        CrawlSummary {
            iterations: self.iteration,
            collected_posts: self.collected.len(),
            collected_records: self.records.len(),
            gated_posts: self.gated.len(),
            dealer_accounts: self.dealer_accounts.len(),
            stop_reason: self.stopped,
            top_hashtags: self
                .pool
                .top(20)
                .into_iter()
                .map(|(hashtag, count)| HashtagCount { hashtag, count })
                .collect(),
        }
    }
}

fn query_with_retry<P: Platform + ?Sized>(
    platform: &P,
    tag: &str,
    config: &CrawlConfig,
) -> Result<Vec<FetchedPost>> {
    let mut attempt = 0;
    loop {
        match platform.query(tag, config.posts_per_hashtag) {
            Err(Error::Crawl { .. }) if attempt < config.max_retries => attempt += 1,
            other => return other,
        }
    }
}

pub fn crawl<P: Platform + ?Sized, S: AsRef<str>>(
    platform: &P,
    seeds: &[S],
    gate: &GateModel,
    config: &CrawlConfig,
) -> Result<CrawlState> {
    if seeds.is_empty() {
        return Err(Error::contract("crawl needs at least one seed hashtag"));
    }
    let mut state = CrawlState {
        pool: HashtagPool::with_seeds(seeds),
        ..Default::default()
    };
    let mut frontier: Vec<String> = Vec::new();
    for s in seeds {
        let s = s.as_ref().to_string();
        if !frontier.contains(&s) {
            frontier.push(s);
        }
    }
    let mut collected: HashSet<u64> = HashSet::new();

    loop {
        if frontier.is_empty() {
            state.stopped = Some(StopReason::Exhausted);
            break;
        }
        if state.iteration >= config.max_iterations {
            state.stopped = Some(StopReason::IterationLimit);
            break;
        }
        state.iteration += 1;
        for tag in &frontier {
            state.pool.mark_visited(tag);
        }
        for tag in &frontier {
            for post in query_with_retry(platform, tag, config)? {
                if !state.gated.insert(post.record.id) {
                    continue;
                }
                if !gate_classify(&post, gate) || !collected.insert(post.record.id) {
                    continue;
                }
                state.collected.push(post.record.id);
                state.pool.record(&post.record.hashtags);
                state.dealer_accounts.insert(post.record.author_id);
                for c in &post.comments {
                    state.dealer_accounts.insert(c.author_id);
                }
                state.records.push(post.record);
                state.records.extend(post.comments);
            }
        }
        if state.dealer_accounts.len() >= config.dealer_threshold {
            state.stopped = Some(StopReason::Threshold);
            break;
        }
        frontier = state.pool.top_unvisited(config.top_k);
    }
    Ok(state)
}
