use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use super::corpus::random_prototypes;
use super::lexicon::{DRUG_TERMS, FILLER, SALES, TAG_SUFFIXES};
use crate::error::{Error, Result};
use crate::record::{RecordKind, SuspectIdte};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlatformConfig {
    pub users: usize,
    pub dealers: usize,
    pub posts: usize,
    /// Size of the everyday hashtag universe.
    pub innocent_hashtags: usize,
    /// Size of the drug hashtag subset.
    pub drug_hashtags: usize,
    /// Exponent of the Zipf law over everyday hashtag ranks.
    pub zipf_exponent: f64,
    /// Exponent of the Zipf law over drug hashtag ranks.
    pub drug_zipf_exponent: f64,
    /// Direct drug posts per dealer, drawn uniformly from this range.
    pub min_drug_posts: usize,
    pub max_drug_posts: usize,
    /// Disguised advertising comments per dealer, uniform in `0..=max`.
    pub max_ad_comments: usize,
    /// Share of ad comments placed under other dealers' posts rather than
    /// under innocent posts.
    pub ad_on_drug_post_rate: f64,
    /// Ordinary comments per innocent post, uniform in `0..=max`.
    pub max_comments_per_post: usize,
    /// Chance that an innocent post carries one drug hashtag anyway.
    pub innocent_drug_tag_rate: f64,
    pub d_img: usize,
    pub seed: u64,
}

const DRUG_ZIPF: f64 = 0.8;

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            users: 1000,
            dealers: 100,
            posts: 10_000,
            innocent_hashtags: 1500,
            drug_hashtags: 60,
            zipf_exponent: 1.1,
            drug_zipf_exponent: DRUG_ZIPF,
            min_drug_posts: 1,
            max_drug_posts: 3,
            max_ad_comments: 4,
            ad_on_drug_post_rate: 0.3,
            max_comments_per_post: 2,
            innocent_drug_tag_rate: 0.01,
            d_img: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub id: u64,
    pub dealer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformPost {
    pub id: u64,
    pub author_id: u64,
    /// Ground truth: a direct drug advertisement.
    pub drug: bool,
    pub text: String,
    pub hashtags: Vec<String>,
    pub image_features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformComment {
    pub id: u64,
    pub post_id: u64,
    pub author_id: u64,
    /// Ground truth: a disguised advertisement by a dealer.
    pub drug_ad: bool,
    pub text: String,
    pub hashtags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformGraph {
    pub users: Vec<User>,
    pub posts: Vec<PlatformPost>,
    pub comments: Vec<PlatformComment>,
    pub drug_hashtags: Vec<String>,
}

impl PlatformGraph {
    pub fn dealer_ids(&self) -> BTreeSet<u64> {
        self.users
            .iter()
            .filter(|u| u.dealer)
            .map(|u| u.id)
            .collect()
    }

    pub fn post_record(post: &PlatformPost) -> SuspectIdte {
        SuspectIdte {
            id: post.id,
            kind: RecordKind::Post,
            parent_id: None,
            author_id: post.author_id,
            text: post.text.clone(),
            hashtags: post.hashtags.clone(),
            image_features: post.image_features.clone(),
            labels: None,
        }
    }

    pub fn comment_record(comment: &PlatformComment) -> SuspectIdte {
        SuspectIdte {
            id: comment.id,
            kind: RecordKind::Comment,
            parent_id: Some(comment.post_id),
            author_id: comment.author_id,
            text: comment.text.clone(),
            hashtags: comment.hashtags.clone(),
            image_features: Vec::new(),
            labels: None,
        }
    }
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dealers > self.users {
            return Err(Error::contract(format!(
                "{} dealers exceed {} users",
                self.dealers, self.users
            )));
        }
        if self.dealers > 0
            && (self.min_drug_posts == 0 || self.min_drug_posts > self.max_drug_posts)
        {
            return Err(Error::contract(
                "need 1 <= min_drug_posts <= max_drug_posts",
            ));
        }
        if self.dealers * self.max_drug_posts > self.posts {
            return Err(Error::contract(format!(
                "up to {} drug posts do not fit in {} posts",
                self.dealers * self.max_drug_posts,
                self.posts
            )));
        }
        if self.posts > self.dealers * self.max_drug_posts && self.users == self.dealers {
            return Err(Error::contract(
                "innocent posts need at least one ordinary user",
            ));
        }
        if self.innocent_hashtags == 0 || self.drug_hashtags == 0 || self.d_img == 0 {
            return Err(Error::contract(
                "hashtag universes and d_img must be non-empty",
            ));
        }
        if !(self.zipf_exponent > 0.0 && self.drug_zipf_exponent > 0.0) {
            return Err(Error::contract("zipf exponents must be positive"));
        }
        for (name, v) in [
            ("ad_on_drug_post_rate", self.ad_on_drug_post_rate),
            ("innocent_drug_tag_rate", self.innocent_drug_tag_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::contract(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn drug_tag_universe(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut tags: Vec<String> = DRUG_TERMS
        .iter()
        .flat_map(|terms| terms.iter())
        .flat_map(|t| TAG_SUFFIXES.iter().map(move |s| format!("#{t}{s}")))
        .collect();
    tags.shuffle(rng);
    let mut extra = 0;
    while tags.len() < n {
        tags.push(format!("#plug{extra}"));
        extra += 1;
    }
    tags.truncate(n);
    tags
}

fn innocent_tag_universe(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let word = FILLER[i % FILLER.len()];
            match i / FILLER.len() {
                0 => format!("#{word}"),
                k => format!("#{word}{k}"),
            }
        })
        .collect()
}

struct TagSampler<'a> {
    tags: &'a [String],
    zipf: Zipf<f64>,
}

impl<'a> TagSampler<'a> {
    fn new(tags: &'a [String], s: f64) -> Result<Self> {
        let zipf = Zipf::new(tags.len() as f64, s)
            .map_err(|e| Error::contract(format!("zipf law: {e}")))?;
        Ok(TagSampler { tags, zipf })
    }

    fn one(&self, rng: &mut ChaCha8Rng) -> String {
        let k = self.zipf.sample(rng) as usize;
        self.tags[k.clamp(1, self.tags.len()) - 1].clone()
    }

    /// Up to `k` distinct tags, appended to `out` when not already present.
    fn distinct(&self, k: usize, out: &mut Vec<String>, rng: &mut ChaCha8Rng) {
        let target = out.len() + k.min(self.tags.len());
        for _ in 0..k * 20 {
            if out.len() >= target {
                break;
            }
            let t = self.one(rng);
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
}

enum PostPlan {
    Drug { dealer: u64 },
    Innocent,
}

/// A seeded Instagram-like world with planted dealer accounts.
///
/// Dealers post drug ads directly and also hide ads in comments under
/// innocent posts and under each other's posts. Ordinary users only post
/// and comment innocently and never comment on drug posts.
pub fn synth_platform(config: &PlatformConfig) -> Result<PlatformGraph> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let prototypes = random_prototypes(DRUG_TERMS.len(), config.d_img, 3.0, &mut rng);

    let mut ids: Vec<u64> = (0..config.users as u64).collect();
    ids.shuffle(&mut rng);
    let dealer_set: BTreeSet<u64> = ids[..config.dealers].iter().copied().collect();
    let users: Vec<User> = (0..config.users as u64)
        .map(|id| User {
            id,
            dealer: dealer_set.contains(&id),
        })
        .collect();
    let dealers: Vec<u64> = dealer_set.iter().copied().collect();
    let normals: Vec<u64> = users.iter().filter(|u| !u.dealer).map(|u| u.id).collect();

    let drug_tags = drug_tag_universe(config.drug_hashtags, &mut rng);
    let innocent_tags = innocent_tag_universe(config.innocent_hashtags);
    let drug_sampler = TagSampler::new(&drug_tags, config.drug_zipf_exponent)?;
    let innocent_sampler = TagSampler::new(&innocent_tags, config.zipf_exponent)?;

    let mut plan: Vec<PostPlan> = Vec::with_capacity(config.posts);
    for &d in &dealers {
        for _ in 0..rng.random_range(config.min_drug_posts..=config.max_drug_posts) {
            plan.push(PostPlan::Drug { dealer: d });
        }
    }
    while plan.len() < config.posts {
        plan.push(PostPlan::Innocent);
    }
    plan.shuffle(&mut rng);

    let mut posts = Vec::with_capacity(plan.len());
    for (id, p) in plan.iter().enumerate() {
        let mut image: Vec<f64> = (0..config.d_img).map(|_| noise.sample(&mut rng)).collect();
        let post = match p {
            PostPlan::Drug { dealer } => {
                let mut tags = Vec::new();
                drug_sampler.distinct(rng.random_range(2..=5), &mut tags, &mut rng);
                innocent_sampler.distinct(rng.random_range(0..=2), &mut tags, &mut rng);
                let proto = prototypes.choose(&mut rng).expect("prototypes");
                for (x, v) in image.iter_mut().zip(proto) {
                    *x += v;
                }
                let sales: Vec<&str> = SALES.choose_multiple(&mut rng, 3).copied().collect();
                PlatformPost {
                    id: id as u64,
                    author_id: *dealer,
                    drug: true,
                    text: format!("{} {}", sales.join(" "), tags.join(" ")),
                    hashtags: tags,
                    image_features: image,
                }
            }
            PostPlan::Innocent => {
                let mut tags = Vec::new();
                innocent_sampler.distinct(rng.random_range(1..=6), &mut tags, &mut rng);
                if !dealers.is_empty() && rng.random_bool(config.innocent_drug_tag_rate) {
                    drug_sampler.distinct(1, &mut tags, &mut rng);
                }
                let words: Vec<&str> = FILLER.choose_multiple(&mut rng, 4).copied().collect();
                PlatformPost {
                    id: id as u64,
                    author_id: *normals.choose(&mut rng).expect("ordinary users exist"),
                    drug: false,
                    text: format!("{} {}", words.join(" "), tags.join(" ")),
                    hashtags: tags,
                    image_features: image,
                }
            }
        };
        posts.push(post);
    }

    let innocent_posts: Vec<u64> = posts.iter().filter(|p| !p.drug).map(|p| p.id).collect();
    let drug_posts: Vec<(u64, u64)> = posts
        .iter()
        .filter(|p| p.drug)
        .map(|p| (p.id, p.author_id))
        .collect();

    let mut comments = Vec::new();
    let mut next_id = posts.len() as u64;
    for &post_id in &innocent_posts {
        for _ in 0..rng.random_range(0..=config.max_comments_per_post) {
            let words: Vec<&str> = FILLER.choose_multiple(&mut rng, 3).copied().collect();
            comments.push(PlatformComment {
                id: next_id,
                post_id,
                author_id: *normals.choose(&mut rng).expect("ordinary users exist"),
                drug_ad: false,
                text: words.join(" "),
                hashtags: Vec::new(),
            });
            next_id += 1;
        }
    }
    for &dealer in &dealers {
        for _ in 0..rng.random_range(0..=config.max_ad_comments) {
            let others: Vec<u64> = drug_posts
                .iter()
                .filter(|(_, a)| *a != dealer)
                .map(|(p, _)| *p)
                .collect();
            let on_drug = !others.is_empty() && rng.random_bool(config.ad_on_drug_post_rate);
            let target = if on_drug {
                *others.choose(&mut rng).expect("non-empty")
            } else if let Some(p) = innocent_posts.choose(&mut rng) {
                *p
            } else {
                continue;
            };
            let mut tags = Vec::new();
            drug_sampler.distinct(rng.random_range(1..=2), &mut tags, &mut rng);
            let sales: Vec<&str> = SALES.choose_multiple(&mut rng, 2).copied().collect();
            comments.push(PlatformComment {
                id: next_id,
                post_id: target,
                author_id: dealer,
                drug_ad: true,
                text: format!("{} {}", sales.join(" "), tags.join(" ")),
                hashtags: tags,
            });
            next_id += 1;
        }
    }
    comments.sort_by_key(|c| (c.post_id, c.id));

    Ok(PlatformGraph {
        users,
        posts,
        comments,
        drug_hashtags: drug_tags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PlatformConfig {
        PlatformConfig {
            users: 200,
            dealers: 20,
            posts: 1000,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = serde_json::to_string(&synth_platform(&small()).unwrap()).unwrap();
        let b = serde_json::to_string(&synth_platform(&small()).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = synth_platform(&PlatformConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a, serde_json::to_string(&c).unwrap());
    }

    #[test]
    fn planted_structure() {
        let g = synth_platform(&PlatformConfig::default()).unwrap();
        assert_eq!(g.users.len(), 1000);
        assert_eq!(g.posts.len(), 10_000);
        let dealers = g.dealer_ids();
        assert_eq!(dealers.len(), 100);
        for d in &dealers {
            assert!(g.posts.iter().any(|p| p.drug && p.author_id == *d));
        }
        let drug_post_ids: BTreeSet<u64> =
            g.posts.iter().filter(|p| p.drug).map(|p| p.id).collect();
        for c in &g.comments {
            if c.drug_ad {
                assert!(dealers.contains(&c.author_id));
            }
            if drug_post_ids.contains(&c.post_id) {
                assert!(c.drug_ad);
            }
        }
        let drug_tags: BTreeSet<&String> = g.drug_hashtags.iter().collect();
        for p in g.posts.iter().filter(|p| p.drug) {
            assert!(dealers.contains(&p.author_id));
            assert!(p.hashtags.iter().filter(|t| drug_tags.contains(t)).count() >= 2);
        }
        assert!(g
            .comments
            .iter()
            .any(|c| c.drug_ad && !drug_post_ids.contains(&c.post_id)));
    }

    #[test]
    fn hashtag_frequencies_are_long_tailed() {
        let g = synth_platform(&PlatformConfig::default()).unwrap();
        let mut counts = std::collections::HashMap::new();
        for p in &g.posts {
            for t in &p.hashtags {
                *counts.entry(t.clone()).or_insert(0usize) += 1;
            }
        }
        let mut v: Vec<usize> = counts.into_values().collect();
        v.sort_unstable_by(|a, b| b.cmp(a));
        assert!(v[0] > 20 * v[v.len() / 2]);
    }

    #[test]
    fn no_dealers_no_ads() {
        let g = synth_platform(&PlatformConfig {
            dealers: 0,
            ..small()
        })
        .unwrap();
        assert!(g.posts.iter().all(|p| !p.drug));
        assert!(g.comments.iter().all(|c| !c.drug_ad));
        let drug_tags: BTreeSet<&String> = g.drug_hashtags.iter().collect();
        assert!(g
            .posts
            .iter()
            .all(|p| p.hashtags.iter().all(|t| !drug_tags.contains(t))));
    }

    #[test]
    fn too_many_dealers_rejected() {
        let bad = PlatformConfig {
            users: 10,
            dealers: 11,
            ..small()
        };
        assert!(matches!(synth_platform(&bad), Err(Error::Contract(_))));
    }
}
