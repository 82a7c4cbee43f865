mod common;

use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use muserag::benchgen::{balance_options, normalize_genre, select_artists, ArtistRecord, ArtistSection, Topic};
use muserag::corpus::{filter_sections, Category, ChunkConfig, Chunker, Document, Passage, PassageStore, Section};
use muserag::dense_index::{cosine_similarity, EmbeddingVector, HashingEmbedder, VectorStore};
use muserag::evaluation::{evaluate, BenchmarkItem, EvalMode, EvalSetup, QuestionType};
use muserag::finetune_export::{build_records, export_qa, export_rag, read_records, ExportStyle};
use muserag::generation::{assemble_prompt, parse_choice, Letter, PromptTemplate};
use muserag::retrieval::{retrieve, Backend, BudgetPolicy, IndexHandle, RetrievalConfig, RetrievedContext, RetrievedItem};
use muserag::sparse_index::{Bm25Params, SparseIndex};
use muserag::tokenizer::Tokenizer;
use muserag::Error;

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn words(rng: &mut impl Rng, n: usize) -> String {
    (0..n)
        .map(|_| {
            let w = format!("t{}", rng.random_range(0..50));
            match rng.random_range(0..6) {
                0 => format!("{w},"),
                1 => format!("({w})"),
                _ => w,
            }
        })
        .collect::<Vec<_>>()
        .join(if rng.random_bool(0.5) { " " } else { "  " })
}

fn random_doc(rng: &mut impl Rng, id: usize) -> Document {
    let sections = (0..rng.random_range(0..5))
        .map(|i| {
            let n = rng.random_range(0..200);
            Section::new(format!("H{i}"), words(rng, n), Tokenizer::UnicodeWord)
        })
        .collect();
    Document {
        doc_id: format!("doc{id:02}"),
        title: format!("Doc {id}"),
        category: Category::Artists,
        r#abstract: String::new(),
        sections,
    }
}

fn item(i: usize, rng: &mut impl Rng) -> BenchmarkItem {
    BenchmarkItem {
        item_id: format!("q{i:03}"),
        question: format!("Question {i} about t{}?", rng.random_range(0..50)),
        options: [0, 1, 2, 3].map(|j| format!("opt{i}-{j}")),
        answer_key: Letter::ALL[rng.random_range(0..4)],
        question_type: if rng.random_bool(0.5) {
            QuestionType::Factual
        } else {
            QuestionType::Contextual
        },
        category: ["artists", "genres", "history"][rng.random_range(0..3)].into(),
        seen: Some(rng.random_bool(0.5)),
        gold_passage_ids: None,
        artist_id: Some(format!("artist{}", rng.random_range(0..5))),
    }
}

/// Drops passages whose hashed features cancel out.
fn nonzero(passages: Vec<Passage>, emb: &HashingEmbedder) -> Vec<Passage> {
    passages.into_iter().filter(|p| !emb.embed_one(&p.text).is_zero()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chunks_cover_section_with_fixed_stride(seed in any::<u64>(), size in 2usize..80, ratio in 0.0f64..0.5) {
        let cfg = ChunkConfig::new(size, ratio).unwrap();
        let chunker = Chunker::new(Tokenizer::UnicodeWord, cfg).unwrap();
        let mut r = rng(seed);
        let n = r.random_range(0..300);
        let section = Section::new("H", words(&mut r, n), Tokenizer::UnicodeWord);
        let ps = chunker.chunk_section("d", "T", 0, &section);
        let tokens: Vec<String> = Tokenizer::UnicodeWord.tokens(&section.text).iter().map(|t| t.text.to_string()).collect();
        let stride = size - (ratio * size as f64).floor() as usize;
        prop_assert_eq!(cfg.stride(), stride);
        if tokens.is_empty() {
            prop_assert!(ps.is_empty());
        }
        let mut covered = vec![false; tokens.len()];
        for (i, p) in ps.iter().enumerate() {
            prop_assert!(p.token_count >= 1 && p.token_count <= size);
            prop_assert_eq!(p.token_offset, i * stride);
            prop_assert!(section.text.contains(&p.text));
            let got: Vec<String> = Tokenizer::UnicodeWord.tokens(&p.text).iter().map(|t| t.text.to_string()).collect();
            prop_assert_eq!(&got[..], &tokens[p.token_offset..p.token_offset + p.token_count]);
            covered[p.token_offset..p.token_offset + p.token_count].iter_mut().for_each(|c| *c = true);
        }
        prop_assert!(covered.iter().all(|&c| c));
        if let Some(last) = ps.last() {
            prop_assert_eq!(last.token_offset + last.token_count, tokens.len());
        }
    }

    #[test]
    fn filter_is_idempotent_and_order_preserving(seed in any::<u64>(), min in 0usize..150) {
        let doc = random_doc(&mut rng(seed), 0);
        let once = filter_sections(&doc, min);
        prop_assert_eq!(&filter_sections(&once, min), &once);
        prop_assert!(once.sections.iter().all(|s| s.token_count >= min));
        let expected: Vec<&Section> = doc.sections.iter().filter(|s| s.token_count >= min).collect();
        prop_assert_eq!(once.sections.iter().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn passage_ids_are_deterministic_and_unique(seed in any::<u64>()) {
        let mut r = rng(seed);
        let docs: Vec<Document> = (0..r.random_range(1..6)).map(|i| random_doc(&mut r, i)).collect();
        let chunker = Chunker::new(Tokenizer::UnicodeWord, ChunkConfig::new(32, 0.1).unwrap()).unwrap();
        let a = chunker.chunk_corpus(&docs, 10);
        let b = chunker.chunk_corpus(&docs, 10);
        prop_assert_eq!(&a, &b);
        let mut ids: Vec<&str> = a.iter().map(|p| p.passage_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), a.len());
    }

    #[test]
    fn bm25_matches_brute_force(seed in any::<u64>()) {
        let mut r = rng(seed);
        let passages = random_corpus(&mut r, 25, 20);
        let ix = SparseIndex::build(passages, Bm25Params::default(), Tokenizer::UnicodeWord, 128).unwrap();
        let docs: Vec<Vec<String>> = ix.store().passages().iter().map(|p| Tokenizer::UnicodeWord.terms(&p.text)).collect();
        for _ in 0..10 {
            let q = random_query(&mut r, 20);
            let want = brute_force_bm25(&docs, &q, 1.2, 0.75);
            let got = ix.search_terms(&q, ix.len());
            prop_assert!(same_ranking(&got, &want, 1e-9).is_ok(), "{:?}", same_ranking(&got, &want, 1e-9));
            for &(ord, s) in &got {
                prop_assert!((ix.bm25_score(&q, ord).unwrap() - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn index_bytes_ignore_input_order(seed in any::<u64>()) {
        let mut r = rng(seed);
        let passages = random_corpus(&mut r, 30, 25);
        let mut shuffled = passages.clone();
        shuffled.shuffle(&mut r);
        let a = SparseIndex::build(passages, Bm25Params::default(), Tokenizer::UnicodeWord, 64).unwrap();
        let b = SparseIndex::build(shuffled, Bm25Params::default(), Tokenizer::UnicodeWord, 64).unwrap();
        prop_assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn extra_occurrence_never_lowers_score(seed in any::<u64>()) {
        let mut r = rng(seed);
        let mut passages = random_corpus(&mut r, 20, 15);
        let target = r.random_range(0..passages.len());
        let term = format!("w{}", r.random_range(0..15));
        let id = passages[target].passage_id.clone();
        let build = |ps: Vec<_>| SparseIndex::build(ps, Bm25Params::default(), Tokenizer::UnicodeWord, 64).unwrap();
        let before_ix = build(passages.clone());
        let before = before_ix.bm25_score(std::slice::from_ref(&term), before_ix.store().ord_of(&id).unwrap()).unwrap();
        passages[target].text.push_str(&format!(" {term}"));
        let after_ix = build(passages);
        let after = after_ix.bm25_score(std::slice::from_ref(&term), after_ix.store().ord_of(&id).unwrap()).unwrap();
        prop_assert!(after >= before - 1e-12, "{} -> {}", before, after);
    }

    #[test]
    fn term_weight_increases_with_tf(tf in 0u32..50, len in 50u32..200, avgdl in 1.0f64..300.0) {
        let p = Bm25Params::default();
        prop_assert!(p.term_weight(tf + 1, len, avgdl) > p.term_weight(tf, len, avgdl));
    }

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        a in prop::collection::vec(-10.0f32..10.0, 8),
        b in prop::collection::vec(-10.0f32..10.0, 8),
        scale in 0.01f32..100.0,
    ) {
        let va = EmbeddingVector(a.clone());
        let vb = EmbeddingVector(b);
        prop_assume!(!va.is_zero() && !vb.is_zero());
        let ab = cosine_similarity(&va, &vb).unwrap();
        let ba = cosine_similarity(&vb, &va).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
        let scaled = EmbeddingVector(a.iter().map(|x| x * scale).collect());
        prop_assert!((cosine_similarity(&scaled, &vb).unwrap() - ab).abs() < 1e-5);
    }

    #[test]
    fn dense_search_matches_scan_and_ignores_query_scale(seed in any::<u64>(), scale in 0.1f32..50.0) {
        let mut r = rng(seed);
        let n = r.random_range(1..40);
        let vecs: Vec<Vec<f32>> = (0..n)
            .map(|_| {
                let mut v: Vec<f32> = (0..6).map(|_| r.random_range(-3..=3) as f32).collect();
                v[0] += 0.5;
                v
            })
            .collect();
        let entries = vecs
            .iter()
            .enumerate()
            .map(|(i, v)| (passage(&format!("p{i:03}"), "x"), EmbeddingVector(v.clone())))
            .collect();
        let store = VectorStore::build(entries, "test", 16).unwrap();
        let q: Vec<f32> = (0..6).map(|_| r.random_range(-3.0f32..3.0)).collect();
        prop_assume!(q.iter().any(|x| *x != 0.0));
        let k = r.random_range(1..=n);
        let got = store.search(&EmbeddingVector(q.clone()), k).unwrap();
        prop_assert!(same_ranking(&got, &brute_force_cosine(&vecs, &q, k), 1e-9).is_ok());
        let scaled = store.search(&EmbeddingVector(q.iter().map(|x| x * scale).collect()), k).unwrap();
        prop_assert_eq!(
            got.iter().map(|h| h.0).collect::<Vec<_>>(),
            scaled.iter().map(|h| h.0).collect::<Vec<_>>()
        );
    }

    #[test]
    fn retrieval_respects_budget_and_is_deterministic(seed in any::<u64>(), chunk in 1usize..200, budget in 0usize..2000) {
        let mut r = rng(seed);
        let ix = SparseIndex::build(random_corpus(&mut r, 30, 20), Bm25Params::default(), Tokenizer::UnicodeWord, chunk).unwrap();
        let cfg = RetrievalConfig::new(Backend::SparseBm25, BudgetPolicy::new(budget, chunk));
        let q = random_query(&mut r, 20).join(" ");
        let first = retrieve(&q, &cfg, IndexHandle::Sparse(&ix));
        if budget < chunk {
            prop_assert!(matches!(first, Err(Error::Config(_))));
        } else {
            let first = first.unwrap();
            prop_assert!(first.items.len() <= budget / chunk);
            prop_assert_eq!(first.items.len(), (budget / chunk).min(ix.search(&q, ix.len()).len()));
            prop_assert_eq!(&first, &retrieve(&q, &cfg, IndexHandle::Sparse(&ix)).unwrap());
        }
    }

    #[test]
    fn dense_retrieval_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let emb = HashingEmbedder::new(32, Tokenizer::UnicodeWord).unwrap();
        let passages = nonzero(random_corpus(&mut r, 20, 20), &emb);
        prop_assume!(!passages.is_empty());
        let store = VectorStore::embed_passages(passages, &emb, 16).unwrap();
        let cfg = RetrievalConfig::new(Backend::Dense, BudgetPolicy::new(64, 16));
        let q = random_query(&mut r, 20).join(" ");
        let h = IndexHandle::Dense { store: &store, embedder: &emb };
        let a = retrieve(&q, &cfg, h).unwrap();
        prop_assert!(a.items.len() <= 4);
        prop_assert_eq!(a, retrieve(&q, &cfg, h).unwrap());
    }

    #[test]
    fn rag_prompt_is_context_plus_zero_shot_prompt(seed in any::<u64>(), n in 0usize..5) {
        let mut r = rng(seed);
        let it = item(0, &mut r);
        let template = PromptTemplate::default();
        let ctx = RetrievedContext::new(
            it.question.clone(),
            (0..n).map(|i| RetrievedItem { passage: passage(&format!("p{i}"), &words(&mut r, 10)), score: 1.0 }).collect(),
        );
        let zero = assemble_prompt(&it.question, &it.options, None, &template).unwrap();
        let rag = assemble_prompt(&it.question, &it.options, Some(&ctx), &template).unwrap();
        prop_assert!(rag.ends_with(&zero));
        let prefix = &rag[..rag.len() - zero.len()];
        if n == 0 {
            prop_assert_eq!(prefix, "");
        } else {
            prop_assert!(prefix.starts_with(&template.context_header));
            for i in &ctx.items {
                prop_assert!(prefix.contains(&i.passage.text));
            }
        }
    }

    #[test]
    fn parse_choice_is_total_and_sound(s in ".{0,12}") {
        let v = parse_choice(&s);
        prop_assert_eq!(v.format_ok, v.parsed.is_some());
        prop_assert_eq!(&v.raw_text, &s);
        if let Some(l) = v.parsed {
            let t = s.trim_start();
            let c = l.as_char();
            let paren = format!("({})", c);
            prop_assert!(t.starts_with(c) || t.starts_with(paren.as_str()));
        }
    }

    #[test]
    fn parse_choice_accepts_the_grammar(l in 0usize..4, form in 0usize..5, ws in "[ \t\n]{0,3}", tail in "[a-z ]{0,8}") {
        let c = Letter::ALL[l].as_char();
        let s = match form {
            0 => format!("{ws}{c}"),
            1 => format!("{ws}{c}){tail}"),
            2 => format!("{ws}{c}.{tail}"),
            3 => format!("{ws}{c}:{tail}"),
            _ => format!("{ws}({c}){tail}"),
        };
        prop_assert_eq!(parse_choice(&s).parsed, Some(Letter::ALL[l]));
    }

    #[test]
    fn breakdowns_partition_the_scored_items(seed in any::<u64>(), workers in 1usize..4) {
        let mut r = rng(seed);
        let items: Vec<BenchmarkItem> = (0..r.random_range(1..40)).map(|i| item(i, &mut r)).collect();
        let replies: HashMap<String, Option<String>> = items
            .iter()
            .map(|it| {
                let reply = match r.random_range(0..6) {
                    0 => None,
                    1 => Some("no idea".to_string()),
                    k => Some(Letter::ALL[k - 2].to_string()),
                };
                (it.question.clone(), reply)
            })
            .collect();
        let generator = |_: &str, user: &str| -> muserag::Result<String> {
            let (_, reply) = replies.iter().find(|(q, _)| user.contains(q.as_str())).expect("known question");
            reply.clone().ok_or_else(|| Error::GenerationUnavailable { attempts: 1, last_error: "down".into() })
        };
        let template = PromptTemplate::default();
        let mut setup = EvalSetup::new(EvalMode::ZeroShot, &generator, &template);
        setup.workers = workers;
        let report = evaluate(&items, &setup).unwrap();
        let errors = replies.values().filter(|v| v.is_none()).count();
        prop_assert_eq!(report.generation_errors, errors);
        prop_assert_eq!(report.accuracy.total, items.len() - errors);
        for buckets in [&report.by_type, &report.by_category, report.by_seen.as_ref().unwrap()] {
            prop_assert_eq!(buckets.iter().map(|b| b.n).sum::<usize>(), report.accuracy.total);
            prop_assert_eq!(buckets.iter().map(|b| b.correct).sum::<usize>(), report.accuracy.correct);
        }
        let mut reversed = items.clone();
        reversed.reverse();
        let again = evaluate(&reversed, &setup).unwrap();
        prop_assert_eq!(report.to_json(), again.to_json());
    }

    #[test]
    fn genre_normalization_is_idempotent(s in "\\PC{0,20}") {
        let once = normalize_genre(&s);
        prop_assert_eq!(normalize_genre(&once), once.clone());
        prop_assert!(!once.contains([' ', '-', '/']));
    }

    #[test]
    fn balancing_is_exact_and_preserves_answers(seed in any::<u64>(), quarter in 0usize..30) {
        let mut r = rng(seed);
        let items: Vec<BenchmarkItem> = (0..quarter * 4).map(|i| item(i, &mut r)).collect();
        let balanced = balance_options(&items, seed).unwrap();
        prop_assert_eq!(&balanced, &balance_options(&items, seed).unwrap());
        for l in Letter::ALL {
            prop_assert_eq!(balanced.iter().filter(|i| i.answer_key == l).count(), quarter);
        }
        for (a, b) in items.iter().zip(&balanced) {
            prop_assert_eq!(a.answer_text(), b.answer_text());
            let mut x = a.options.to_vec();
            let mut y = b.options.to_vec();
            x.sort();
            y.sort();
            prop_assert_eq!(x, y);
        }
    }

    #[test]
    fn selection_is_deterministic_and_country_balanced(seed in any::<u64>()) {
        let mut r = rng(seed);
        let countries = ["France", "Japan", "Brazil", "Mali", "Chile"];
        let records: Vec<ArtistRecord> = (0..r.random_range(1..40))
            .map(|i| ArtistRecord {
                doc_id: format!("a{i:02}"),
                name: format!("Artist {i}"),
                topics: vec![Topic::Career],
                raw_genres: vec![],
                normalized_genres: vec![],
                mapped_genre_labels: vec![["rock", "jazz", "pop"][r.random_range(0..3)].into()],
                country: Some(countries[r.random_range(0..countries.len())].into()),
                eligible_sections: vec![ArtistSection {
                    heading: "Career".into(),
                    text: "x".into(),
                    topic: Some(Topic::Career),
                    token_count: 600,
                }],
            })
            .collect();
        let n = r.random_range(0..=records.len());
        let picked = select_artists(&records, n, seed).unwrap();
        prop_assert_eq!(&picked, &select_artists(&records, n, seed).unwrap());
        prop_assert_eq!(picked.len(), n);
        let mut count: BTreeMap<&str, usize> = BTreeMap::new();
        for p in &picked {
            *count.entry(p.country.as_deref().unwrap()).or_default() += 1;
        }
        let picked_ids: Vec<&str> = picked.iter().map(|p| p.doc_id.as_str()).collect();
        for u in records.iter().filter(|x| !picked_ids.contains(&x.doc_id.as_str())) {
            let cu = count.get(u.country.as_deref().unwrap()).copied().unwrap_or(0);
            for (c, &cs) in &count {
                prop_assert!(cu + 1 >= cs, "{} left out with {} picked while {} has {}", u.doc_id, cu, c, cs);
            }
        }
        let more = select_artists(&records, records.len() + 1, seed);
        prop_assert!(matches!(more, Err(Error::Input(ref m)) if m.contains("short by 1")));
    }

    #[test]
    fn export_round_trips_and_styles_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let passages: Vec<_> = (0..5).map(|i| passage(&format!("g{i}#s0000#c0000"), &words(&mut r, 12))).collect();
        let store = PassageStore::new(passages).unwrap();
        let items: Vec<BenchmarkItem> = (0..r.random_range(1..20))
            .map(|i| {
                let mut it = item(i, &mut r);
                it.gold_passage_ids = Some(vec![format!("g{}#s0000#c0000", r.random_range(0..5))]);
                it
            })
            .collect();
        let template = PromptTemplate::default();
        let dir = temp();
        let qa_path = dir.path().join("qa.jsonl");
        let rag_path = dir.path().join("rag.jsonl");
        let qa_manifest = export_qa(&items, &template, &qa_path).unwrap();
        let rag_manifest = export_rag(&items, &store, &template, &rag_path).unwrap();
        let qa = read_records(&qa_path).unwrap();
        let rag = read_records(&rag_path).unwrap();
        prop_assert_eq!(&qa, &build_records(&items, ExportStyle::Qa, None, &template).unwrap().0);
        prop_assert_eq!(qa.len(), items.len());
        prop_assert_eq!(rag.len(), items.len());
        prop_assert_eq!(qa_manifest.record_count, rag_manifest.record_count);
        prop_assert_eq!(&qa_manifest.seen_artists, &rag_manifest.seen_artists);
        for (a, b) in qa.iter().zip(&rag) {
            prop_assert_eq!(&a.item_id, &b.item_id);
            prop_assert_eq!(&a.assistant, &b.assistant);
            prop_assert!(b.user.ends_with(&a.user));
            let it = items.iter().find(|i| i.item_id == a.item_id).unwrap();
            prop_assert_eq!(&a.assistant, &format!("{}. {}", it.answer_key, it.answer_text()));
        }
    }

    #[test]
    fn persisted_indexes_round_trip(seed in any::<u64>()) {
        let mut r = rng(seed);
        let passages = random_corpus(&mut r, 30, 25);
        let ix = SparseIndex::build(passages.clone(), Bm25Params { k1: 0.9, b: 0.4 }, Tokenizer::UnicodeWord, 96).unwrap();
        let back = SparseIndex::from_bytes(&ix.to_bytes(), Tokenizer::UnicodeWord).unwrap();
        prop_assert_eq!(back.to_bytes(), ix.to_bytes());
        prop_assert_eq!(back.params(), ix.params());
        let q = random_query(&mut r, 25).join(" ");
        prop_assert_eq!(back.search(&q, 10), ix.search(&q, 10));

        let emb = HashingEmbedder::new(24, Tokenizer::UnicodeWord).unwrap();
        let passages = nonzero(passages, &emb);
        prop_assume!(!passages.is_empty());
        let vs = VectorStore::embed_passages(passages, &emb, 96).unwrap();
        prop_assert_eq!(VectorStore::from_bytes(&vs.to_bytes()).unwrap(), vs);
    }
}
