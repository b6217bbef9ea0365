//! Linear-chain CRF over emission scores: exact path score, log-partition,
//! negative log-likelihood with analytic gradients, and Viterbi decoding.
//!
//! The score of a label sequence y for a length-L sentence is
//! `Σ_i E[i, y_i] + Σ_i T[y_i, y_{i+1}]` with no start or end transition
//! terms. All arithmetic is in log space with f64 and max-shifted
//! logsumexp, so the brute-force oracle below agrees to tight tolerances.

use crate::error::{Error, Result};
use crate::tagging::{is_valid_tag_bigram, Tag, NUM_TAGS};
use crate::tensor::Array;

/// Max-shifted log(Σ exp(x)). Returns −∞ for an effectively empty input.
fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_shapes(e: &Array, t: &Array) -> (usize, usize) {
    assert_eq!(e.shape().len(), 2, "emissions must be [L,C]");
    assert_eq!(t.shape().len(), 2, "transitions must be [C,C]");
    let (l, c) = (e.dim(0), e.dim(1));
    assert!(l >= 1, "empty emission matrix");
    assert_eq!(t.dim(0), c, "transition rows must match label count");
    assert_eq!(t.dim(1), c, "transition columns must match label count");
    (l, c)
}

/// Unnormalized score of one label sequence. Accumulation order is frozen
/// (E₀, then alternating T and E left to right) so Viterbi's running sums
/// reproduce it bit-exactly.
pub fn path_score(e: &Array, t: &Array, y: &[usize]) -> f64 {
    let (l, c) = check_shapes(e, t);
    assert_eq!(y.len(), l, "label sequence length must match emissions");
    assert!(y.iter().all(|&tag| tag < c), "label index out of range");

    let mut score = e.at2(0, y[0]);
    for i in 1..l {
        score += t.at2(y[i - 1], y[i]);
        score += e.at2(i, y[i]);
    }
    score
}

/// log Σ_y exp(score(y)) over all C^L label sequences, by the forward
/// recursion α₁ = E₁, α_{i+1,y′} = logsumexp_y(α_{i,y} + T[y,y′]) + E_{i+1,y′}.
pub fn log_partition(e: &Array, t: &Array) -> f64 {
    let (l, c) = check_shapes(e, t);
    let mut alpha = e.row(0).to_vec();
    let mut scratch = vec![0.0; c];
    for i in 1..l {
        let mut next = vec![0.0; c];
        for (to, slot) in next.iter_mut().enumerate() {
            for (from, s) in scratch.iter_mut().enumerate() {
                *s = alpha[from] + t.at2(from, to);
            }
            *slot = logsumexp(&scratch) + e.at2(i, to);
        }
        alpha = next;
    }
    logsumexp(&alpha)
}

/// Posterior marginals from the forward-backward recursions.
pub struct Marginals {
    /// `[L,C]`: P(y_i = c | S).
    pub unigram: Array,
    /// `[L-1,C,C]`: P(y_i = a, y_{i+1} = b | S). Empty first axis when L = 1.
    pub pairwise: Array,
    pub log_partition: f64,
}

/// Runs forward-backward and exponentiates into probability space.
pub fn marginals(e: &Array, t: &Array) -> Marginals {
    let (l, c) = check_shapes(e, t);

    let mut alpha = Array::zeros(&[l, c]);
    alpha.row_mut(0).copy_from_slice(e.row(0));
    let mut scratch = vec![0.0; c];
    for i in 1..l {
        for to in 0..c {
            for (from, s) in scratch.iter_mut().enumerate() {
                *s = alpha.at2(i - 1, from) + t.at2(from, to);
            }
            alpha.row_mut(i)[to] = logsumexp(&scratch) + e.at2(i, to);
        }
    }
    let log_z = logsumexp(alpha.row(l - 1));

    // β_{L-1} = 0; β_i[y] = logsumexp_{y′}(T[y,y′] + E_{i+1,y′} + β_{i+1}[y′]).
    let mut beta = Array::zeros(&[l, c]);
    for i in (0..l - 1).rev() {
        for from in 0..c {
            for (to, s) in scratch.iter_mut().enumerate() {
                *s = t.at2(from, to) + e.at2(i + 1, to) + beta.at2(i + 1, to);
            }
            beta.row_mut(i)[from] = logsumexp(&scratch);
        }
    }

    let mut unigram = Array::zeros(&[l, c]);
    for i in 0..l {
        for y in 0..c {
            unigram.row_mut(i)[y] = (alpha.at2(i, y) + beta.at2(i, y) - log_z).exp();
        }
    }

    let pair_len = l - 1;
    let mut pairwise = Array::zeros(&[pair_len, c, c]);
    for i in 0..pair_len {
        for a in 0..c {
            for b in 0..c {
                let lp =
                    alpha.at2(i, a) + t.at2(a, b) + e.at2(i + 1, b) + beta.at2(i + 1, b) - log_z;
                let idx = (i * c + a) * c + b;
                pairwise.data_mut()[idx] = lp.exp();
            }
        }
    }

    Marginals {
        unigram,
        pairwise,
        log_partition: log_z,
    }
}

/// Negative log-likelihood of the gold sequence and its exact gradients:
/// dE[i,c] = P(y_i=c|S) − 1[y*_i=c], dT[a,b] = Σ_i P(y_i=a, y_{i+1}=b|S)
/// minus the count of (a,b) transitions in y*.
pub fn nll_loss(e: &Array, t: &Array, gold: &[usize]) -> (f64, Array, Array) {
    let (l, c) = check_shapes(e, t);
    assert_eq!(gold.len(), l, "gold sequence length must match emissions");

    let m = marginals(e, t);
    let loss = m.log_partition - path_score(e, t, gold);

    let mut d_e = m.unigram;
    for (i, &y) in gold.iter().enumerate() {
        d_e.row_mut(i)[y] -= 1.0;
    }

    let mut d_t = Array::zeros(&[c, c]);
    for i in 0..l - 1 {
        for a in 0..c {
            for b in 0..c {
                d_t.row_mut(a)[b] += m.pairwise.at3(i, a, b);
            }
        }
    }
    for w in gold.windows(2) {
        d_t.row_mut(w[0])[w[1]] -= 1.0;
    }

    (loss, d_e, d_t)
}

/// Highest-scoring label sequence and its score. Ties are broken by the
/// smallest tag index at each backtrack step (equivalently: the path whose
/// reversed index sequence is lexicographically smallest among maximizers).
/// Constrained mode forbids transitions that are invalid BMES bigrams.
#[allow(clippy::needless_range_loop)]
pub fn viterbi(e: &Array, t: &Array, constrained: bool) -> (Vec<usize>, f64) {
    let (l, c) = check_shapes(e, t);
    if constrained {
        assert_eq!(c, NUM_TAGS, "constrained decoding requires the BMES label set");
    }
    let trans = |from: usize, to: usize| -> f64 {
        if constrained && !is_valid_tag_bigram(Tag::from_index(from), Tag::from_index(to)) {
            f64::NEG_INFINITY
        } else {
            t.at2(from, to)
        }
    };

    let mut delta = e.row(0).to_vec();
    // back[i][to] = best predecessor of label `to` at position i.
    let mut back = vec![vec![0usize; c]; l];
    for i in 1..l {
        let mut next = vec![f64::NEG_INFINITY; c];
        for to in 0..c {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0usize;
            for from in 0..c {
                let s = delta[from] + trans(from, to);
                if s > best {
                    best = s;
                    arg = from;
                }
            }
            next[to] = best + e.at2(i, to);
            back[i][to] = arg;
        }
        delta = next;
    }

    let mut last = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (tag, &score) in delta.iter().enumerate() {
        if score > best {
            best = score;
            last = tag;
        }
    }

    let mut path = vec![0usize; l];
    path[l - 1] = last;
    for i in (1..l).rev() {
        path[i - 1] = back[i][path[i]];
    }
    (path, best)
}

/// Exhaustive-enumeration results, used as the oracle for the dynamic
/// programs above.
pub struct BruteForce {
    pub log_partition: f64,
    pub best_path: Vec<usize>,
    pub best_score: f64,
}

/// True when `a` precedes `b` in the order Viterbi's tie-break induces:
/// reversed index sequences compared lexicographically.
fn reversed_lex_less(a: &[usize], b: &[usize]) -> bool {
    for (x, y) in a.iter().rev().zip(b.iter().rev()) {
        if x != y {
            return x < y;
        }
    }
    false
}

/// Enumerates all C^L label sequences. Refuses instances with more than
/// 10⁶ sequences.
pub fn brute_force(e: &Array, t: &Array) -> Result<BruteForce> {
    let (l, c) = check_shapes(e, t);
    let count = (c as f64).powi(l as i32);
    if count > 1e6 {
        return Err(Error::config(format!(
            "brute force needs C^L <= 1e6, got {c}^{l}"
        )));
    }
    let count = count as usize;

    let mut scores = Vec::with_capacity(count);
    let mut best_path: Option<Vec<usize>> = None;
    let mut best_score = f64::NEG_INFINITY;

    let mut path = vec![0usize; l];
    for _ in 0..count {
        let score = path_score(e, t, &path);
        scores.push(score);
        let better = match &best_path {
            None => true,
            Some(b) => score > best_score || (score == best_score && reversed_lex_less(&path, b)),
        };
        if better {
            best_score = score;
            best_path = Some(path.clone());
        }
        // Odometer increment, least-significant position last.
        for slot in path.iter_mut().rev() {
            *slot += 1;
            if *slot < c {
                break;
            }
            *slot = 0;
        }
    }

    Ok(BruteForce {
        log_partition: logsumexp(&scores),
        best_path: best_path.expect("at least one path"),
        best_score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Array::from_vec(shape, data)
    }

    /// Entries from a coarse grid so score ties are frequent.
    fn rand_quantized(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| 0.5 * rng.random_range(-1..=1) as f64).collect();
        Array::from_vec(shape, data)
    }

    #[test]
    fn path_score_single_position_is_emission() {
        let e = Array::from_vec(&[1, 4], vec![0.3, -1.0, 2.0, 0.1]);
        let t = Array::zeros(&[4, 4]);
        assert_eq!(path_score(&e, &t, &[2]), 2.0);
    }

    #[test]
    fn path_score_zero_transitions_sums_emissions() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let e = randn(&[5, 4], &mut rng);
        let t = Array::zeros(&[4, 4]);
        let y = [1, 3, 0, 2, 2];
        let expect: f64 = y.iter().enumerate().map(|(i, &c)| e.at2(i, c)).sum();
        assert!((path_score(&e, &t, &y) - expect).abs() < 1e-12);
    }

    #[test]
    fn path_score_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = randn(&[4, 4], &mut rng);
        let t = randn(&[4, 4], &mut rng);
        let y = [3, 1, 1, 0];
        let mut oracle = 0.0;
        for (i, &c) in y.iter().enumerate() {
            oracle += e.at2(i, c);
        }
        for w in y.windows(2) {
            oracle += t.at2(w[0], w[1]);
        }
        assert!((path_score(&e, &t, &y) - oracle).abs() < 1e-12);
    }

    #[test]
    fn log_partition_single_position() {
        let e = Array::from_vec(&[1, 4], vec![0.3, -1.0, 2.0, 0.1]);
        let t = Array::zeros(&[4, 4]);
        let expect = logsumexp(e.row(0));
        assert!((log_partition(&e, &t) - expect).abs() < 1e-12);
    }

    #[test]
    fn log_partition_factorizes_without_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let e = randn(&[5, 4], &mut rng);
        let t = Array::zeros(&[4, 4]);
        let expect: f64 = (0..5).map(|i| logsumexp(e.row(i))).sum();
        assert!((log_partition(&e, &t) - expect).abs() < 1e-10);
    }

    #[test]
    fn log_partition_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..40 {
            let l = 1 + (trial % 6);
            let e = randn(&[l, 4], &mut rng);
            let t = randn(&[4, 4], &mut rng);
            let oracle = brute_force(&e, &t).unwrap();
            let got = log_partition(&e, &t);
            assert!(
                (got - oracle.log_partition).abs() < 1e-8,
                "trial {trial}: {got} vs {}",
                oracle.log_partition
            );
        }
    }

    #[test]
    fn viterbi_matches_enumeration_including_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for trial in 0..60 {
            let l = 1 + (trial % 6);
            // Quantized scores on half the trials force frequent ties.
            let (e, t) = if trial % 2 == 0 {
                (randn(&[l, 4], &mut rng), randn(&[4, 4], &mut rng))
            } else {
                (rand_quantized(&[l, 4], &mut rng), rand_quantized(&[4, 4], &mut rng))
            };
            let oracle = brute_force(&e, &t).unwrap();
            let (path, score) = viterbi(&e, &t, false);
            assert_eq!(path, oracle.best_path, "trial {trial}");
            assert!((score - oracle.best_score).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn viterbi_zero_transitions_is_rowwise_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let e = randn(&[6, 4], &mut rng);
        let t = Array::zeros(&[4, 4]);
        let (path, _) = viterbi(&e, &t, false);
        for (i, &tag) in path.iter().enumerate() {
            let row = e.row(i);
            let best = (0..4).fold(0usize, |b, c| if row[c] > row[b] { c } else { b });
            assert_eq!(tag, best);
        }
    }

    #[test]
    fn viterbi_single_position() {
        let e = Array::from_vec(&[1, 4], vec![0.3, -1.0, 2.0, 0.1]);
        let t = Array::zeros(&[4, 4]);
        let (path, score) = viterbi(&e, &t, false);
        assert_eq!(path, vec![2]);
        assert_eq!(score, 2.0);
    }

    #[test]
    fn viterbi_all_zero_scores_returns_all_b() {
        // Total tie: the frozen tie-break picks index 0 everywhere.
        let e = Array::zeros(&[4, 4]);
        let t = Array::zeros(&[4, 4]);
        let (path, score) = viterbi(&e, &t, false);
        assert_eq!(path, vec![0, 0, 0, 0]);
        assert_eq!(score, 0.0);
        let oracle = brute_force(&e, &t).unwrap();
        assert_eq!(oracle.best_path, path);
    }

    #[test]
    fn constrained_viterbi_emits_valid_bigrams_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..30 {
            let l = 2 + rng.random_range(0..5);
            // Adversarial transitions strongly favoring invalid bigrams.
            let mut t = Array::zeros(&[4, 4]);
            for a in 0..4 {
                for b in 0..4 {
                    let valid = is_valid_tag_bigram(Tag::from_index(a), Tag::from_index(b));
                    t.row_mut(a)[b] = if valid { -5.0 } else { 5.0 };
                }
            }
            let e = randn(&[l, 4], &mut rng);
            let (path, score) = viterbi(&e, &t, true);
            assert!(score.is_finite());
            for w in path.windows(2) {
                assert!(is_valid_tag_bigram(
                    Tag::from_index(w[0]),
                    Tag::from_index(w[1])
                ));
            }
        }
    }

    #[test]
    fn shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let l = 5;
        let e = randn(&[l, 4], &mut rng);
        let t = randn(&[4, 4], &mut rng);
        let delta = 0.75;
        let mut shifted = e.clone();
        for v in shifted.data_mut() {
            *v += delta;
        }
        let z0 = log_partition(&e, &t);
        let z1 = log_partition(&shifted, &t);
        assert!((z1 - (z0 + l as f64 * delta)).abs() < 1e-9);
        assert_eq!(viterbi(&e, &t, false).0, viterbi(&shifted, &t, false).0);
    }

    #[test]
    fn log_partition_dominates_every_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let e = randn(&[4, 4], &mut rng);
        let t = randn(&[4, 4], &mut rng);
        let z = log_partition(&e, &t);
        let oracle = brute_force(&e, &t).unwrap();
        assert!(z >= oracle.best_score);
    }

    #[test]
    fn marginals_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for l in [1, 2, 5] {
            let e = randn(&[l, 4], &mut rng);
            let t = randn(&[4, 4], &mut rng);
            let m = marginals(&e, &t);
            for i in 0..l {
                let s: f64 = m.unigram.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-10, "unigram row {i} sums to {s}");
            }
            for i in 0..l - 1 {
                let mut s = 0.0;
                for a in 0..4 {
                    for b in 0..4 {
                        s += m.pairwise.at3(i, a, b);
                    }
                }
                assert!((s - 1.0).abs() < 1e-10, "pairwise slice {i} sums to {s}");
            }
        }
    }

    #[test]
    fn loss_saturated_likelihood_is_zero() {
        let gold = [0usize, 1, 2, 3];
        let mut e = Array::zeros(&[4, 4]);
        for (i, &y) in gold.iter().enumerate() {
            e.row_mut(i)[y] = 40.0;
        }
        let t = Array::zeros(&[4, 4]);
        let (loss, _, _) = nll_loss(&e, &t, &gold);
        assert!(loss >= 0.0);
        assert!(loss < 1e-10, "loss {loss}");
    }

    #[test]
    fn loss_uniform_distribution() {
        let e = Array::zeros(&[2, 4]);
        let t = Array::zeros(&[4, 4]);
        let (loss, _, _) = nll_loss(&e, &t, &[1, 2]);
        assert!((loss - 2.0 * 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_nonnegative_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for _ in 0..50 {
            let l = 1 + rng.random_range(0..6);
            let e = randn(&[l, 4], &mut rng);
            let t = randn(&[4, 4], &mut rng);
            let gold: Vec<usize> = (0..l).map(|_| rng.random_range(0..4)).collect();
            let (loss, _, _) = nll_loss(&e, &t, &gold);
            assert!(loss >= 0.0, "loss {loss}");
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..5 {
            let l = 2 + trial;
            let e = randn(&[l, 4], &mut rng);
            let t = randn(&[4, 4], &mut rng);
            let gold: Vec<usize> = (0..l).map(|_| rng.random_range(0..4)).collect();

            let (_, d_e, d_t) = nll_loss(&e, &t, &gold);
            let analytic = vec![("E".to_string(), d_e), ("T".to_string(), d_t)];
            let mut target = (e, t);
            let gold2 = gold.clone();
            let report = finite_diff_check(
                &mut target,
                |p| vec![("E".to_string(), &mut p.0), ("T".to_string(), &mut p.1)],
                &analytic,
                move |p| nll_loss(&p.0, &p.1, &gold2).0,
                1e-5,
            );
            assert!(report.max_rel_err() < 1e-6, "trial {trial}: {report:?}");
        }
    }

    #[test]
    fn gradient_at_viterbi_path_not_generally_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let e = randn(&[4, 4], &mut rng);
        let t = randn(&[4, 4], &mut rng);
        let (path, _) = viterbi(&e, &t, false);
        let (loss, d_e, _) = nll_loss(&e, &t, &path);
        assert!(loss > 0.0);
        assert!(d_e.max_abs() > 1e-3);
    }

    #[test]
    fn brute_force_rejects_large_instances() {
        let e = Array::zeros(&[11, 4]);
        let t = Array::zeros(&[4, 4]);
        assert!(brute_force(&e, &t).is_err());
    }
}
