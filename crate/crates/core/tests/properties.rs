use std::collections::{BTreeMap, BTreeSet};

use groundwork::eval::{precision_at_k, recall_at_k, Qrels, RunRecord};
use groundwork::generation::{build_costar_prompt, parse_answer, CoStarSpec, PromptTemplate};
use groundwork::index::ScoredChunk;
use groundwork::retrieval::{fuse, FusionMethod, FusionPolicy, Snippet};
use groundwork::verify::support_score;
use proptest::prelude::*;

const WORDS: &[&str] = &["tenant", "deposit", "notice", "written", "landlord", "repairs", "within", "days", "fee", "court"];

fn leg() -> impl Strategy<Value = Vec<ScoredChunk>> {
    (proptest::sample::subsequence((0..40).collect::<Vec<u32>>(), 0..40), any::<u64>()).prop_map(|(ids, seed)| {
        let mut ids = ids;
        // Deterministic shuffle so the leg order is not the id order.
        ids.sort_by_key(|i| (u64::from(*i).wrapping_mul(seed | 1)).rotate_left(17));
        let n = ids.len();
        ids.into_iter()
            .enumerate()
            .map(|(r, i)| ScoredChunk { chunk_id: format!("k{i:02}"), score: (n - r) as f64 * 0.37 + 1.0 })
            .collect()
    })
}

fn rrf_oracle(a: &[ScoredChunk], b: &[ScoredChunk], c: f64) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for list in [a, b] {
        for (r, s) in list.iter().enumerate() {
            *out.entry(s.chunk_id.clone()).or_insert(0.0) += 1.0 / (c + (r + 1) as f64);
        }
    }
    out
}

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(proptest::sample::select(WORDS), 1..10).prop_map(|w| {
        let mut s = w.join(" ");
        s[..1].make_ascii_uppercase();
        s + "."
    })
}

proptest! {
    #[test]
    fn fused_ranks_form_a_permutation(a in leg(), b in leg(), cap in 1usize..100) {
        let policy = FusionPolicy { n_candidates: cap, ..Default::default() };
        let fused = fuse(&a, &b, &policy);
        let union: BTreeSet<&str> = a.iter().chain(&b).map(|s| s.chunk_id.as_str()).collect();
        prop_assert_eq!(fused.len(), union.len().min(cap));
        let ranks: Vec<usize> = fused.candidates.iter().map(|c| c.fused_rank).collect();
        prop_assert_eq!(ranks, (1..=fused.len()).collect::<Vec<_>>());
        let ids: BTreeSet<&str> = fused.candidates.iter().map(|c| c.chunk_id.as_str()).collect();
        prop_assert_eq!(ids.len(), fused.len());
        prop_assert!(ids.is_subset(&union));
    }

    #[test]
    fn rrf_scores_match_reference(a in leg(), b in leg(), c in 1.0f64..100.0) {
        let policy = FusionPolicy { rrf_c: c, n_candidates: 1000, ..Default::default() };
        let oracle = rrf_oracle(&a, &b, c);
        let fused = fuse(&a, &b, &policy);
        for cand in &fused.candidates {
            prop_assert!((cand.fused_score - oracle[&cand.chunk_id]).abs() < 1e-12);
        }
        for w in fused.candidates.windows(2) {
            prop_assert!(w[0].fused_score >= w[1].fused_score);
            if w[0].fused_score == w[1].fused_score {
                prop_assert!(w[0].chunk_id < w[1].chunk_id);
            }
        }
    }

    #[test]
    fn weighted_fusion_ignores_affine_rescaling(a in leg(), b in leg(), scale in 0.1f64..50.0, shift in -5.0f64..5.0) {
        let policy = FusionPolicy { method: FusionMethod::Weighted, n_candidates: 1000, ..Default::default() };
        let scores = |list: &[ScoredChunk]| -> BTreeMap<String, f64> {
            fuse(list, &b, &policy).candidates.into_iter().map(|c| (c.chunk_id, c.fused_score)).collect()
        };
        let scaled: Vec<ScoredChunk> =
            a.iter().map(|s| ScoredChunk { chunk_id: s.chunk_id.clone(), score: s.score * scale + shift }).collect();
        let (before, after) = (scores(&a), scores(&scaled));
        prop_assert_eq!(before.keys().collect::<Vec<_>>(), after.keys().collect::<Vec<_>>());
        for (id, s) in &before {
            prop_assert!((s - after[id]).abs() < 1e-9, "{}: {} vs {}", id, s, after[id]);
        }
    }

    #[test]
    fn support_score_ignores_case_and_is_bounded(s in sentence(), t in proptest::collection::vec(sentence(), 0..4)) {
        let t = t.join(" ");
        let base = support_score(&s, &t).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert_eq!(support_score(&s.to_uppercase(), &t.to_lowercase()).unwrap(), base);
        prop_assert_eq!(support_score(&s, &format!("{t} {s}")).unwrap(), 1.0);
    }

    #[test]
    fn recall_is_monotonic_in_k(
        ranked in proptest::sample::subsequence((0..30).collect::<Vec<u32>>(), 0..30),
        relevant in proptest::sample::subsequence((0..30).collect::<Vec<u32>>(), 1..10),
    ) {
        let mut qrels = Qrels::new();
        qrels.insert("q", relevant.iter().map(|i| format!("d{i}")));
        let run = RunRecord::new("q", ranked.iter().rev().map(|i| format!("d{i}")).collect());
        let mut last = 0.0;
        for k in 1..=40 {
            let r = recall_at_k(&run, &qrels, k).unwrap();
            prop_assert!(r >= last && r <= 1.0);
            let p = precision_at_k(&run, &qrels, k).unwrap();
            prop_assert!((p * k as f64 - r * relevant.len() as f64).abs() < 1e-9);
            last = r;
        }
    }

    #[test]
    fn prompt_answer_round_trip(
        sentences in proptest::collection::vec((sentence(), proptest::collection::btree_set(1usize..=5, 0..3)), 1..6),
    ) {
        let snippets: Vec<Snippet> = (1..=5)
            .map(|i| Snippet {
                chunk_id: format!("chunk-{i}"),
                text: format!("Snippet number {i}."),
                rerank_score: 0.0,
                fused_rank: i,
                context_index: i,
            })
            .collect();
        let prompt = build_costar_prompt("question", &snippets, &CoStarSpec::default(), &PromptTemplate::default()).unwrap();
        for s in &snippets {
            let line = format!("[{}] {}", s.context_index, s.text);
            prop_assert!(prompt.text.contains(&line));
        }
        let mut raw = String::new();
        for (text, cites) in &sentences {
            raw.push_str(text);
            for c in cites {
                raw.push_str(&format!(" [{c}]"));
            }
            raw.push(' ');
        }
        let draft = parse_answer(&raw, &prompt.manifest).unwrap();
        prop_assert_eq!(draft.sentences.len(), sentences.len());
        for (got, (text, cites)) in draft.sentences.iter().zip(&sentences) {
            prop_assert_eq!(&got.text, text);
            prop_assert_eq!(&got.cited, &cites.iter().copied().collect::<Vec<_>>());
            prop_assert_eq!(got.missing_citation, cites.is_empty());
        }
    }
}
