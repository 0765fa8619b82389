//! Clustering-based prompting: a support set of question-context pairs the
//! reader answered correctly, k-means over their embeddings, and
//! per-cluster demonstrations that steer context generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::contexts::{ContextBundle, ContextCache, ContextError, ContextFactory, GenerationConfig, ScrubRules};
use crate::corpus::{bounded, record_rng, BenchmarkRecord};
use crate::gateway::{Client, GatewayError};
use crate::prompt::{Renderer, ShotExample};
use crate::reader::{GroundingKind, ReadJob, Reader, ReaderError};

pub const DEFAULT_CLUSTERS: usize = 5;
pub const DEFAULT_PER_CLUSTER: usize = 3;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("k-means needs 1 <= K <= {points} points, got K = {k}")]
    BadK { k: usize, points: usize },
    #[error("vectors have mixed dimensions")]
    Ragged,
    #[error("support set is empty: no generated context led to a correct answer")]
    EmptySupport,
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Reader(#[from] ReaderError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportPair {
    pub question_id: String,
    pub question: String,
    pub context: String,
    pub embedding: Vec<f32>,
    pub correct: bool,
}

impl SupportPair {
    pub fn embedding_text(question: &str, context: &str) -> String {
        format!("{question}\n{context}")
    }

    pub fn as_shot(&self) -> ShotExample {
        ShotExample {
            question: self.question.clone(),
            options: None,
            context: Some(self.context.clone()),
            answer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportSet {
    pub pairs: Vec<SupportPair>,
    pub kept: usize,
    pub kept_ratio: f64,
}

impl SupportSet {
    pub fn kept_pairs(&self) -> Vec<&SupportPair> {
        self.pairs.iter().filter(|p| p.correct).collect()
    }
}

/// One option-free context per training question, checked by the reader.
/// `factory` should be configured with `l = 0, m = 1`.
pub async fn build_support_set(
    factory: &ContextFactory<'_>,
    reader: &Reader<'_>,
    embedder: &Client,
    records: &[BenchmarkRecord],
) -> Result<SupportSet, ClusterError> {
    let bundles: Vec<ContextBundle> = factory
        .generate_all(records)
        .await?
        .into_iter()
        .map(|o| o.bundle)
        .collect();
    let jobs: Vec<ReadJob> = records
        .iter()
        .zip(&bundles)
        .map(|(r, b)| ReadJob {
            record: r.clone(),
            grounding: b.grounding(),
            kind: GroundingKind::Generated(1),
            k: 1,
        })
        .collect();
    let preds = reader.answer_all(&jobs).await?;
    let contexts: Vec<String> = bundles
        .iter()
        .map(|b| b.contexts.first().map(|c| c.text.clone()).unwrap_or_default())
        .collect();
    let texts: Vec<String> = records
        .iter()
        .zip(&contexts)
        .map(|(r, c)| SupportPair::embedding_text(&r.question, c))
        .collect();
    let vectors = if texts.is_empty() { Vec::new() } else { embedder.embed(&texts).await? };
    let pairs: Vec<SupportPair> = records
        .iter()
        .zip(contexts)
        .zip(vectors)
        .zip(&preds)
        .map(|(((r, context), embedding), p)| SupportPair {
            question_id: r.id.clone(),
            question: r.question.clone(),
            context,
            embedding,
            correct: p.is_correct(),
        })
        .collect();
    let kept = pairs.iter().filter(|p| p.correct).count();
    Ok(SupportSet {
        kept_ratio: if pairs.is_empty() { 0.0 } else { kept as f64 / pairs.len() as f64 },
        pairs,
        kept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        self.inertia_history.last().copied().unwrap_or(0.0)
    }

    /// Member indices per cluster, ascending.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.centroids.len()];
        for (i, &c) in self.assignments.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![bounded(rng, n as u64) as usize];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // Every point coincides with a chosen centre.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[bounded(rng, free.len() as u64) as usize]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Lloyd's algorithm from k-means++ seeds.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64, max_iters: usize, tol: f64) -> Result<KMeans, ClusterError> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(ClusterError::BadK { k, points: n });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(ClusterError::Ragged);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(vectors, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters.max(1) {
        iterations += 1;
        let mut inertia = 0.0;
        let mut dists = vec![0.0; n];
        for (i, p) in vectors.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            // Keep the current cluster on exact ties so reassignment never costs.
            let cur = assignments[i];
            if cur != usize::MAX && sq_dist(p, &centroids[cur]) <= d {
                dists[i] = sq_dist(p, &centroids[cur]);
            } else {
                assignments[i] = j;
                dists[i] = d;
            }
            inertia += dists[i];
        }
        history.push(inertia);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in vectors.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let mut movement = 0.0f64;
        for c in 0..k {
            let next = if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("non-empty");
                dists[far] = 0.0;
                vectors[far].clone()
            } else {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            };
            movement = movement.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if movement < tol {
            break;
        }
    }
    Ok(KMeans {
        assignments,
        centroids,
        inertia_history: history,
        iterations,
    })
}

pub fn to_f64(vectors: &[Vec<f32>]) -> Vec<Vec<f64>> {
    vectors.iter().map(|v| v.iter().map(|&x| x as f64).collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstrations {
    pub cluster: usize,
    /// Indices into the clustered items.
    pub members: Vec<usize>,
    /// Fewer than `n` members were available.
    pub short: bool,
}

/// `n` members per cluster, uniformly without replacement.
pub fn sample_demonstrations(clusters: &[Vec<usize>], n: usize, seed: u64) -> Vec<Demonstrations> {
    clusters
        .iter()
        .enumerate()
        .map(|(c, members)| {
            if members.len() <= n {
                return Demonstrations {
                    cluster: c,
                    members: members.clone(),
                    short: members.len() < n,
                };
            }
            let mut rng = record_rng(seed, &format!("cluster-{c}"));
            let mut pool = members.clone();
            for i in 0..n {
                let j = i + bounded(&mut rng, (pool.len() - i) as u64) as usize;
                pool.swap(i, j);
            }
            pool.truncate(n);
            Demonstrations {
                cluster: c,
                members: pool,
                short: false,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub kmeans: KMeans,
    pub demonstrations: Vec<Demonstrations>,
    /// Shot blocks per cluster, in cluster order.
    pub shots: Vec<Vec<ShotExample>>,
}

/// Clusters the kept pairs and draws the demonstration blocks.
pub fn plan(support: &SupportSet, k: usize, n: usize, seed: u64) -> Result<ClusterPlan, ClusterError> {
    let kept = support.kept_pairs();
    if kept.is_empty() {
        return Err(ClusterError::EmptySupport);
    }
    let vectors = to_f64(&kept.iter().map(|p| p.embedding.clone()).collect::<Vec<_>>());
    let km = kmeans(&vectors, k, seed, DEFAULT_MAX_ITERS, DEFAULT_TOL)?;
    let demonstrations = sample_demonstrations(&km.clusters(), n, seed);
    let shots = demonstrations
        .iter()
        .map(|d| d.members.iter().map(|&i| kept[i].as_shot()).collect())
        .collect();
    Ok(ClusterPlan {
        kmeans: km,
        demonstrations,
        shots,
    })
}

/// One option-free context per cluster for each record.
pub async fn cluster_contexts(
    renderer: &Renderer,
    rules: &ScrubRules,
    cache: &ContextCache,
    client: &Client,
    base: &GenerationConfig,
    plan: &ClusterPlan,
    records: &[BenchmarkRecord],
) -> Result<Vec<ContextBundle>, ClusterError> {
    let mut per_cluster = Vec::with_capacity(plan.shots.len());
    for shots in &plan.shots {
        let config = GenerationConfig {
            l: 0,
            m: 1,
            free_shots: shots.clone(),
            ..base.clone()
        };
        let factory = ContextFactory {
            renderer,
            rules,
            cache,
            client,
            config: &config,
        };
        per_cluster.push(factory.generate_all(records).await?);
    }
    Ok(records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let contexts = per_cluster
                .iter()
                .enumerate()
                .map(|(c, outcomes)| {
                    let mut ctx = outcomes[i].bundle.contexts[0].clone();
                    ctx.ordinal = c;
                    ctx
                })
                .collect::<Vec<_>>();
            ContextBundle {
                record_id: r.id.clone(),
                l: 0,
                m: contexts.len(),
                contexts,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_one_is_the_mean() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let km = kmeans(&pts, 1, 7, 100, 1e-9).unwrap();
        assert_eq!(km.assignments, vec![0, 0, 0]);
        assert!((km.centroids[0][0] - 1.0).abs() < 1e-12);
        assert!((km.centroids[0][1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_inertia() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = kmeans(&pts, 6, 3, 100, 1e-9).unwrap();
        assert_eq!(km.inertia(), 0.0);
        let mut seen = km.assignments.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn bad_k() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(matches!(kmeans(&pts, 0, 1, 10, 1e-6), Err(ClusterError::BadK { .. })));
        assert!(matches!(kmeans(&pts, 3, 1, 10, 1e-6), Err(ClusterError::BadK { .. })));
        assert!(matches!(kmeans(&[vec![0.0], vec![1.0, 2.0]], 1, 1, 10, 1e-6), Err(ClusterError::Ragged)));
    }

    #[test]
    fn duplicate_points_still_get_k_centres() {
        let pts = vec![vec![1.0, 1.0]; 4];
        let km = kmeans(&pts, 3, 9, 100, 1e-9).unwrap();
        assert_eq!(km.centroids.len(), 3);
        assert_eq!(km.inertia(), 0.0);
    }

    #[test]
    fn sampling() {
        let clusters = vec![vec![0, 1, 2], vec![3, 4, 5, 6, 7, 8], vec![9]];
        let d = sample_demonstrations(&clusters, 3, 42);
        assert_eq!(d[0].members, vec![0, 1, 2]);
        assert!(!d[0].short);
        assert_eq!(d[1].members.len(), 3);
        assert!(d[1].members.iter().all(|m| clusters[1].contains(m)));
        assert!(d[2].short);
        assert_eq!(sample_demonstrations(&clusters, 3, 42), d);
    }
}
