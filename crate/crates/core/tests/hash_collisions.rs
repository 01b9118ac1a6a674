//! Pairwise similarity of hash embeddings across a full-size vocabulary.

use rayon::prelude::*;

use notematch::embed::hash_vector;

#[test]
fn no_near_duplicate_token_vectors() {
    const VOCAB: u32 = 30_000;
    const DIM: usize = 64;
    let vectors: Vec<Vec<f32>> = (0..VOCAB).map(|t| hash_vector(t, 1, DIM)).collect();
    for v in &vectors {
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }
    let (worst, i, j) = (0..vectors.len())
        .into_par_iter()
        .map(|i| {
            let a = &vectors[i];
            let mut best = (f32::NEG_INFINITY, i, i);
            for (j, b) in vectors.iter().enumerate().skip(i + 1) {
                let cos: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                if cos > best.0 {
                    best = (cos, i, j);
                }
            }
            best
        })
        .reduce(|| (f32::NEG_INFINITY, 0, 0), |a, b| if b.0 > a.0 { b } else { a });
    assert!(worst < 0.9, "tokens {i} and {j} have cosine {worst}");
}
