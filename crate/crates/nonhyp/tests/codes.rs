use nonhyp::codes::{count_decodings, forward_decode, power, CodeBook, PeriodicStream, Symbol, Word};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_code(rng: &mut ChaCha8Rng) -> CodeBook {
    loop {
        let n: Symbol = rng.gen_range(2..=4);
        let size = rng.gen_range(1..=5);
        let mut words: Vec<Vec<Symbol>> = Vec::new();
        for _ in 0..size {
            let len = rng.gen_range(1..=5);
            let w: Vec<Symbol> = (0..len).map(|_| rng.gen_range(1..=n)).collect();
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let words = words.into_iter().map(|w| Word::new(w).unwrap()).collect();
        let c = CodeBook::new(n, words).unwrap();
        if c.is_disjoint() {
            return c;
        }
    }
}

fn random_concat(rng: &mut ChaCha8Rng, code: &CodeBook, parts: usize) -> Vec<Symbol> {
    let idx: Vec<usize> = (0..parts).map(|_| rng.gen_range(0..code.len())).collect();
    code.spell(&idx)
}

fn random_stream(rng: &mut ChaCha8Rng, code: &CodeBook) -> PeriodicStream {
    let n = code.n_symbols();
    let part = |rng: &mut ChaCha8Rng, min: usize| -> Vec<Symbol> {
        if rng.gen_bool(0.7) {
            let k = rng.gen_range(min.max(1)..=3);
            random_concat(rng, code, k)
        } else {
            let k = rng.gen_range(min..=6);
            (0..k).map(|_| rng.gen_range(1..=n)).collect()
        }
    };
    let left = part(rng, 1);
    let center = part(rng, 0);
    let right = part(rng, 1);
    PeriodicStream::new(left, center, right).unwrap()
}

// Plain reachability on [-far, far]: a boundary q in [-w, -w+R) starts a
// restriction when a predecessor boundary below -w is reachable from the far
// left and q reaches the far right.
fn oracle_count(code: &CodeBook, s: &PeriodicStream, w: i64) -> usize {
    let far: i64 = 400;
    let r = code.max_len() as i64;
    let matches = |p: i64, word: &[Symbol]| word.iter().enumerate().all(|(k, &x)| s.at(p + k as i64) == x);
    let span = (2 * far + 1) as usize;
    let idx = |p: i64| (p + far) as usize;
    let mut from_left = vec![false; span];
    for p in -far..=far {
        from_left[idx(p)] = p < -far + r
            || code.words().iter().any(|word| {
                let q = p - word.len() as i64;
                q >= -far && matches(q, word) && from_left[idx(q)]
            });
    }
    let mut to_right = vec![false; span];
    for p in (-far..=far).rev() {
        to_right[idx(p)] = p > far - r
            || code.words().iter().any(|word| {
                let q = p + word.len() as i64;
                q <= far && matches(p, word) && to_right[idx(q)]
            });
    }
    (-w..-w + r)
        .filter(|&q| {
            to_right[idx(q)]
                && code.words().iter().any(|word| {
                    let p = q - word.len() as i64;
                    p < -w && matches(p, word) && from_left[idx(p)]
                })
        })
        .count()
}

#[test]
fn decoding_counts_match_reachability_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nonzero = 0;
    for _ in 0..300 {
        let code = random_code(&mut rng);
        let s = random_stream(&mut rng, &code);
        let got = count_decodings(&code, &s, 40).unwrap();
        assert_eq!(got, oracle_count(&code, &s, 40), "code {code:?} stream {s:?}");
        assert!(got <= code.max_len());
        if got > 0 {
            nonzero += 1;
        }
    }
    assert!(nonzero > 100, "too few codable streams: {nonzero}");
}

#[test]
fn forward_decode_recovers_indices() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let code = random_code(&mut rng);
        let k = rng.gen_range(0..40);
        let idx: Vec<usize> = (0..k).map(|_| rng.gen_range(0..code.len())).collect();
        let d = forward_decode(&code, &code.spell(&idx)).unwrap();
        assert_eq!(d.indices, idx);
        assert!(d.residual.is_empty());
    }
}

#[test]
fn power_words_are_concatenations() {
    let code = CodeBook::from_slices(3, &[&[1], &[2, 3], &[3, 3, 1]]).unwrap();
    let p = power(&code, 3, 1000).unwrap();
    assert_eq!(p.len(), 27);
    for (i, w) in p.words().iter().enumerate() {
        let idx = [i / 9, (i / 3) % 3, i % 3];
        assert_eq!(w.symbols(), code.spell(&idx).as_slice());
    }
}

#[test]
fn codebook_json_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let code = random_code(&mut rng);
        let s = serde_json::to_string(&code).unwrap();
        let back: CodeBook = serde_json::from_str(&s).unwrap();
        assert_eq!(back, code);
    }
}
