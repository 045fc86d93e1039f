//! Lloyd's k-means with k-means++ seeding. Assignment distances use the
//! `|x|^2 - 2 x.c + |c|^2` expansion through a matrix product, with exact
//! re-ranking of near-ties so the returned index is the true nearest entry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{gemm, View};

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Pin centroid 0 to the zero vector (it is never moved by updates).
    pub zero_centroid: bool,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

fn sq_norms(data: &[f32], dim: usize) -> Vec<f32> {
    data.chunks_exact(dim)
        .map(|r| r.iter().map(|x| x * x).sum())
        .collect()
}

/// Index of the nearest centroid (lowest index on exact ties) and its squared
/// distance, for every row of `data`.
pub fn assign(data: &[f32], dim: usize, centroids: &[f32]) -> (Vec<u32>, Vec<f64>) {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    let c_norms = sq_norms(centroids, dim);
    let mut labels = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n);
    let mut dots = vec![0.0f32; CHUNK * k];
    for start in (0..n).step_by(CHUNK) {
        let rows = CHUNK.min(n - start);
        let block = &data[start * dim..(start + rows) * dim];
        gemm(
            rows,
            dim,
            k,
            1.0,
            block,
            View::rows(dim),
            centroids,
            View::rows(dim).t(),
            0.0,
            &mut dots,
            View::rows(k),
        );
        for r in 0..rows {
            let x = &block[r * dim..(r + 1) * dim];
            let x_norm: f32 = x.iter().map(|v| v * v).sum();
            let row = &dots[r * k..(r + 1) * k];
            let approx: Vec<f32> = row
                .iter()
                .zip(&c_norms)
                .map(|(d, cn)| x_norm - 2.0 * d + cn)
                .collect();
            let best = approx.iter().cloned().fold(f32::INFINITY, f32::min);
            let scale = x_norm + c_norms.iter().cloned().fold(0.0, f32::max);
            let slack = 1e-4 * scale + 1e-12;
            let mut label = 0u32;
            let mut dist = f64::INFINITY;
            for (j, a) in approx.iter().enumerate() {
                if *a <= best + slack {
                    let d = sq_dist(x, &centroids[j * dim..(j + 1) * dim]);
                    if d < dist {
                        dist = d;
                        label = j as u32;
                    }
                }
            }
            labels.push(label);
            dists.push(dist);
        }
    }
    (labels, dists)
}

fn plus_plus_init(data: &[f32], dim: usize, params: &KMeansParams, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = data.len() / dim;
    let k = params.k;
    let mut centroids = Vec::with_capacity(k * dim);
    let mut min_d: Vec<f64>;
    if params.zero_centroid {
        centroids.extend(std::iter::repeat(0.0).take(dim));
        min_d = data.chunks_exact(dim).map(|r| sq_dist(r, &centroids[..dim])).collect();
    } else {
        let first = rng.gen_range(0..n);
        centroids.extend_from_slice(&data[first * dim..(first + 1) * dim]);
        min_d = data.chunks_exact(dim).map(|r| sq_dist(r, &centroids[..dim])).collect();
    }
    while centroids.len() < k * dim {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in min_d.iter().enumerate() {
                if target < *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = data[pick * dim..(pick + 1) * dim].to_vec();
        for (m, r) in min_d.iter_mut().zip(data.chunks_exact(dim)) {
            let d = sq_dist(r, &c);
            if d < *m {
                *m = d;
            }
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Trains `params.k` centroids over the rows of `data` (row-major, `dim`
/// wide). Deterministic in `params.seed`.
pub fn kmeans(data: &[f32], dim: usize, params: &KMeansParams) -> Vec<f32> {
    let n = data.len() / dim;
    assert!(n > 0 && params.k > 0, "k-means needs data and k > 0");
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let k = params.k;
    let mut centroids = plus_plus_init(data, dim, params, &mut rng);
    let fixed = usize::from(params.zero_centroid);
    for _ in 0..params.iterations {
        let (labels, dists) = assign(data, dim, &centroids);
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (row, &l) in data.chunks_exact(dim).zip(&labels) {
            let l = l as usize;
            counts[l] += 1;
            for (s, v) in sums[l * dim..(l + 1) * dim].iter_mut().zip(row) {
                *s += *v as f64;
            }
        }
        // refill empty clusters with the points farthest from their centroid
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
        let mut donors = order.into_iter();
        for j in fixed..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                for (dst, s) in centroids[j * dim..(j + 1) * dim]
                    .iter_mut()
                    .zip(&sums[j * dim..(j + 1) * dim])
                {
                    *dst = (s / c) as f32;
                }
            } else if let Some(p) = donors.next() {
                centroids[j * dim..(j + 1) * dim].copy_from_slice(&data[p * dim..(p + 1) * dim]);
            }
        }
    }
    centroids
}
