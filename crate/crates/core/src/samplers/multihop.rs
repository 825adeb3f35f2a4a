use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index;
use rand::Rng;

use super::{AdjacencySource, NeighborSample, SampleEntry, SampleError, Strategy};
use crate::graph::NodeRef;
use crate::rng::keyed_rng;

/// Multi-hop uniform sampling.
///
/// Hop `h` draws `fanouts[h]` distinct nodes uniformly without replacement
/// from the union of out-neighbors of the nodes drawn at hop `h - 1` (the
/// seed for the first hop). All neighbors are returned when fewer exist.
/// The score of an entry is the summed weight of the edges that reach it.
pub fn sample_random_multihop<S: AdjacencySource + ?Sized>(
    source: &S,
    seeds: &[NodeRef],
    fanouts: &[usize],
    rng_seed: u64,
) -> Vec<Result<Vec<NeighborSample>, SampleError>> {
    run(source, seeds, fanouts, None, rng_seed)
}

/// Multi-hop weighted sampling: a candidate is selected with probability
/// proportional to `Σ edge_weight × multiplier(edge_type)` over the edges that
/// reach it. Edge types missing from `multipliers` use 1.0; a zero
/// multiplier removes the edge type.
pub fn sample_weighted_multihop<S: AdjacencySource + ?Sized>(
    source: &S,
    seeds: &[NodeRef],
    fanouts: &[usize],
    multipliers: &BTreeMap<u16, f64>,
    rng_seed: u64,
) -> Vec<Result<Vec<NeighborSample>, SampleError>> {
    if let Some((t, m)) = multipliers.iter().find(|(_, m)| !(m.is_finite() && **m >= 0.0)) {
        let err = SampleError::InvalidConfig(format!("multiplier for edge type {t} is {m}"));
        return seeds.iter().map(|_| Err(err.clone())).collect();
    }
    run(source, seeds, fanouts, Some(multipliers), rng_seed)
}

fn run<S: AdjacencySource + ?Sized>(
    source: &S,
    seeds: &[NodeRef],
    fanouts: &[usize],
    multipliers: Option<&BTreeMap<u16, f64>>,
    rng_seed: u64,
) -> Vec<Result<Vec<NeighborSample>, SampleError>> {
    let strategy = if multipliers.is_some() { Strategy::Weighted } else { Strategy::Random };
    if fanouts.is_empty() {
        let err = SampleError::InvalidConfig("fanouts must not be empty".into());
        return seeds.iter().map(|_| Err(err.clone())).collect();
    }

    let mut results: Vec<Result<Vec<NeighborSample>, SampleError>> = seeds.iter().map(|_| Ok(Vec::new())).collect();
    let mut frontiers: Vec<Vec<NodeRef>> = seeds.iter().map(|s| vec![*s]).collect();

    for (hop_index, &fanout) in fanouts.iter().enumerate() {
        let hop = hop_index as u32 + 1;

        // One consolidated adjacency round for every live frontier.
        let wanted: BTreeSet<NodeRef> = frontiers
            .iter()
            .zip(&results)
            .filter(|(_, r)| r.is_ok())
            .flat_map(|(f, _)| f.iter().copied())
            .collect();
        let wanted: Vec<NodeRef> = wanted.into_iter().collect();
        let fetched: HashMap<NodeRef, Result<Vec<crate::graph::EdgeView>, SampleError>> =
            wanted.iter().copied().zip(source.fetch_adjacency(&wanted)).collect();

        for (i, seed) in seeds.iter().enumerate() {
            let Ok(hops) = &mut results[i] else { continue };
            let mut candidates: BTreeMap<NodeRef, f64> = BTreeMap::new();
            let mut failure = None;
            for node in &frontiers[i] {
                match &fetched[node] {
                    Ok(edges) => {
                        for e in edges {
                            let w = match multipliers {
                                None => e.weight,
                                Some(m) => e.weight * m.get(&e.edge_type).copied().unwrap_or(1.0),
                            };
                            *candidates.entry(e.node).or_insert(0.0) += w;
                        }
                    }
                    Err(err) => {
                        failure = Some(err.clone());
                        break;
                    }
                }
            }
            if let Some(err) = failure {
                results[i] = Err(err);
                continue;
            }
            if multipliers.is_some() {
                candidates.retain(|_, w| *w > 0.0);
            }
            let candidates: Vec<(NodeRef, f64)> = candidates.into_iter().collect();
            let mut rng = keyed_rng(rng_seed, *seed, hop);
            let chosen = match multipliers {
                None => choose_uniform(&mut rng, candidates.len(), fanout),
                Some(_) => choose_weighted(&mut rng, &candidates, fanout),
            };
            let mut sample = NeighborSample::new(*seed, strategy);
            sample.entries = chosen
                .into_iter()
                .map(|j| SampleEntry { node: candidates[j].0, score: candidates[j].1, hop })
                .collect();
            frontiers[i] = sample.nodes().collect();
            hops.push(sample);
        }
    }
    results
}

/// Indices of `k` distinct positions in `0..n`, ascending.
fn choose_uniform<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Weighted sampling without replacement (exponential-key method): each
/// candidate gets key `ln(u) / w` and the `k` largest keys win. For `k = 1`
/// the selection probability is exactly `w / Σw`.
fn choose_weighted<R: Rng>(rng: &mut R, candidates: &[(NodeRef, f64)], k: usize) -> Vec<usize> {
    if k >= candidates.len() {
        return (0..candidates.len()).collect();
    }
    let mut keyed: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(j, (_, w))| {
            let u: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
            (u.ln() / w, j)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = keyed.into_iter().take(k).map(|(_, j)| j).collect();
    picked.sort_unstable();
    picked
}
