//! Artist-centred benchmark construction: genre normalization and mapping,
//! LLM-assisted country extraction, diversity-first artist selection,
//! question generation, two-judge validation and answer balancing.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::PassageStore;
use crate::error::{Error, Result};
use crate::evaluation::{BenchmarkItem, QuestionType};
use crate::generation::{render, Generator, Letter};
use crate::tokenizer::Tokenizer;

pub const MIN_SECTION_TOKENS: usize = 500;
pub const MAX_SECTION_TOKENS: usize = 2000;
pub const DEFAULT_TOP_GENRES: usize = 300;
pub const DEFAULT_ARTIST_COUNT: usize = 500;

const COUNTRY_PROMPT: &str = include_str!("../data/prompts/country.v1.txt");
const FACTUAL_PROMPT: &str = include_str!("../data/prompts/question_factual.v1.txt");
const CONTEXTUAL_PROMPT: &str = include_str!("../data/prompts/question_contextual.v1.txt");
const RELEVANCE_PROMPT: &str = include_str!("../data/prompts/judge_relevance.v1.txt");
const FAITHFULNESS_PROMPT: &str = include_str!("../data/prompts/judge_faithfulness.v1.txt");
const COUNTRIES: &str = include_str!("../data/iso3166_countries.txt");
const DEFAULT_GENRE_MAP: &str = include_str!("../data/genre_map.json");

/// Lowercases and removes spaces, hyphens and slashes.
pub fn normalize_genre(raw: &str) -> String {
    raw.chars()
        .filter(|c| !matches!(c, ' ' | '-' | '/'))
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topic {
    Biography,
    Career,
    Discography,
    Artistry,
    Collaborations,
}

impl Topic {
    /// Groups a section heading into a topic by keyword.
    pub fn classify(heading: &str) -> Option<Topic> {
        let h = heading.to_lowercase();
        let has = |ks: &[&str]| ks.iter().any(|k| h.contains(k));
        if has(&["collaborat", "side project", "guest appearance"]) {
            Some(Topic::Collaborations)
        } else if has(&["discograph", "album", "recording", "releases", "singles"]) {
            Some(Topic::Discography)
        } else if has(&["biograph", "early life", "personal life", "childhood", "background", "death"]) {
            Some(Topic::Biography)
        } else if has(&["style", "artistry", "influence", "legacy", "musicianship", "technique", "instrument"]) {
            Some(Topic::Artistry)
        } else if has(&["career", "history", "tour", "formation", "years"]) {
            Some(Topic::Career)
        } else {
            None
        }
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("topic serializes");
        f.write_str(s.as_str().expect("unit variant"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtistSection {
    pub heading: String,
    pub text: String,
    #[serde(default)]
    pub topic: Option<Topic>,
    #[serde(default)]
    pub token_count: usize,
}

/// One artist page as read from the artist records file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtistSource {
    pub doc_id: String,
    pub name: String,
    #[serde(default)]
    pub r#abstract: String,
    #[serde(default)]
    pub raw_genres: Vec<String>,
    #[serde(default)]
    pub sections: Vec<ArtistSection>,
    /// Skips country extraction when already known.
    #[serde(default)]
    pub country: Option<String>,
}

pub fn load_artist_sources(path: &Path) -> Result<Vec<ArtistSource>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let src: ArtistSource =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        if !ids.insert(src.doc_id.clone()) {
            return Err(Error::Integrity(format!("duplicate artist doc_id {:?}", src.doc_id)));
        }
        out.push(src);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtistRecord {
    pub doc_id: String,
    pub name: String,
    pub topics: Vec<Topic>,
    pub raw_genres: Vec<String>,
    pub normalized_genres: Vec<String>,
    pub mapped_genre_labels: Vec<String>,
    pub country: Option<String>,
    /// Sections with a topic and a token count within the eligible range.
    pub eligible_sections: Vec<ArtistSection>,
}

impl ArtistRecord {
    /// Builds the record without genre labels or country; those are filled
    /// by [`GenreMapper`] and [`extract_country`].
    pub fn from_source(src: &ArtistSource, tokenizer: Tokenizer) -> Self {
        let eligible_sections: Vec<ArtistSection> = src
            .sections
            .iter()
            .filter_map(|s| {
                let token_count = tokenizer.count(&s.text);
                let topic = s.topic.or_else(|| Topic::classify(&s.heading))?;
                (MIN_SECTION_TOKENS..=MAX_SECTION_TOKENS)
                    .contains(&token_count)
                    .then(|| ArtistSection {
                        topic: Some(topic),
                        token_count,
                        ..s.clone()
                    })
            })
            .collect();
        let topics: BTreeSet<Topic> = eligible_sections.iter().filter_map(|s| s.topic).collect();
        ArtistRecord {
            doc_id: src.doc_id.clone(),
            name: src.name.clone(),
            topics: topics.into_iter().collect(),
            raw_genres: src.raw_genres.clone(),
            normalized_genres: src.raw_genres.iter().map(|g| normalize_genre(g)).collect(),
            mapped_genre_labels: Vec::new(),
            country: src.country.clone(),
            eligible_sections,
        }
    }
}

/// Normalized-genre to coarse-label table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenreTable {
    pub labels: Vec<String>,
    pub mapping: BTreeMap<String, String>,
}

impl GenreTable {
    /// The bundled 20-label stand-in table.
    pub fn bundled() -> Self {
        serde_json::from_str(DEFAULT_GENRE_MAP).expect("bundled genre map parses")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: GenreTable =
            serde_json::from_str(&raw).map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let labels: HashSet<&str> = self.labels.iter().map(String::as_str).collect();
        if let Some((g, l)) = self.mapping.iter().find(|(_, l)| !labels.contains(l.as_str())) {
            return Err(Error::Config(format!("genre {g:?} maps to unknown label {l:?}")));
        }
        Ok(())
    }
}

/// Genre counts over normalized names.
pub type FrequencyTable = BTreeMap<String, usize>;

pub fn genre_frequencies<'a>(records: impl IntoIterator<Item = &'a ArtistRecord>) -> FrequencyTable {
    let mut f = FrequencyTable::new();
    for r in records {
        for g in r.normalized_genres.iter().collect::<BTreeSet<_>>() {
            *f.entry(g.clone()).or_default() += 1;
        }
    }
    f
}

/// Keeps the `top_n` most frequent genres (ties broken by name) and maps
/// them to labels.
#[derive(Debug, Clone)]
pub struct GenreMapper {
    kept: HashMap<String, String>,
}

impl GenreMapper {
    pub fn new(freq: &FrequencyTable, table: &GenreTable, top_n: usize) -> Result<Self> {
        let mut ranked: Vec<(&String, &usize)> = freq.iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        ranked.truncate(top_n);
        let missing: Vec<&str> = ranked
            .iter()
            .filter(|(g, _)| !table.mapping.contains_key(g.as_str()))
            .map(|(g, _)| g.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "genre table has no label for {} top-{top_n} genre(s): {}",
                missing.len(),
                missing.join(", ")
            )));
        }
        Ok(GenreMapper {
            kept: ranked
                .into_iter()
                .map(|(g, _)| (g.clone(), table.mapping[g].clone()))
                .collect(),
        })
    }

    /// Labels for `normalized`, deduplicated, first occurrence order.
    pub fn map(&self, normalized: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in normalized {
            if let Some(l) = self.kept.get(g) {
                if !out.contains(l) {
                    out.push(l.clone());
                }
            }
        }
        out
    }
}

pub fn map_genres(
    normalized: &[String],
    freq: &FrequencyTable,
    table: &GenreTable,
    top_n: usize,
) -> Result<Vec<String>> {
    Ok(GenreMapper::new(freq, table, top_n)?.map(normalized))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountryList {
    names: BTreeSet<String>,
}

impl CountryList {
    /// ISO 3166-1 short names.
    pub fn iso3166() -> Self {
        CountryList {
            names: COUNTRIES.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.contains(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Asks the generator for the artist's country; only exact members of
/// `countries` are accepted.
pub fn extract_country(
    generator: &dyn Generator,
    abstract_text: &str,
    countries: &CountryList,
) -> Result<Option<String>> {
    if abstract_text.trim().is_empty() {
        return Ok(None);
    }
    let prompt = render(COUNTRY_PROMPT, &[("abstract", abstract_text)]);
    let answer = generator.generate("You extract structured facts from text.", &prompt)?;
    let answer = answer.trim();
    Ok(countries.contains(answer).then(|| answer.to_string()))
}

/// Picks `n` artists, one at a time. Each step takes the candidate whose
/// country is least represented among those already chosen (then rarest in
/// the pool), then likewise for genre label and topic; remaining ties are
/// broken by a seeded shuffle.
pub fn select_artists(records: &[ArtistRecord], n: usize, seed: u64) -> Result<Vec<ArtistRecord>> {
    let eligible: Vec<&ArtistRecord> =
        records.iter().filter(|r| !r.eligible_sections.is_empty()).collect();
    if n > eligible.len() {
        return Err(Error::Input(format!(
            "need {n} artists but only {} are eligible (short by {})",
            eligible.len(),
            n - eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rank: Vec<usize> = (0..eligible.len()).collect();
    rank.shuffle(&mut rng);

    let keys: Vec<Facets> = eligible.iter().map(|r| Facets::of(r)).collect();
    let mut pool = FacetCounts::default();
    for k in &keys {
        pool.add(k);
    }
    let mut chosen = FacetCounts::default();
    let mut remaining: Vec<usize> = (0..eligible.len()).collect();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .min_by_key(|(_, &i)| (keys[i].priority(&chosen, &pool), rank[i]))
            .expect("n <= eligible");
        let i = remaining.swap_remove(pos);
        chosen.add(&keys[i]);
        out.push(eligible[i].clone());
    }
    Ok(out)
}

/// Facet values used for selection. Missing values form their own bucket.
#[derive(Debug, Clone)]
struct Facets {
    country: String,
    genres: Vec<String>,
    topics: Vec<String>,
}

impl Facets {
    fn of(r: &ArtistRecord) -> Self {
        let or_blank = |v: Vec<String>| if v.is_empty() { vec![String::new()] } else { v };
        Facets {
            country: r.country.clone().unwrap_or_default(),
            genres: or_blank(r.mapped_genre_labels.clone()),
            topics: or_blank(r.topics.iter().map(Topic::to_string).collect()),
        }
    }

    /// Lexicographic priority; smaller is picked first.
    fn priority(&self, chosen: &FacetCounts, pool: &FacetCounts) -> [(usize, usize); 3] {
        let rarest = |vals: &[String], c: &HashMap<String, usize>, p: &HashMap<String, usize>| {
            vals.iter()
                .map(|v| (c.get(v).copied().unwrap_or(0), p.get(v).copied().unwrap_or(0)))
                .min()
                .unwrap_or((0, 0))
        };
        [
            rarest(std::slice::from_ref(&self.country), &chosen.country, &pool.country),
            rarest(&self.genres, &chosen.genre, &pool.genre),
            rarest(&self.topics, &chosen.topic, &pool.topic),
        ]
    }
}

#[derive(Debug, Default)]
struct FacetCounts {
    country: HashMap<String, usize>,
    genre: HashMap<String, usize>,
    topic: HashMap<String, usize>,
}

impl FacetCounts {
    fn add(&mut self, f: &Facets) {
        *self.country.entry(f.country.clone()).or_default() += 1;
        for g in &f.genres {
            *self.genre.entry(g.clone()).or_default() += 1;
        }
        for t in &f.topics {
            *self.topic.entry(t.clone()).or_default() += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub music_relevant: Option<bool>,
    pub faithful: Option<bool>,
}

impl Validation {
    pub fn passed(&self) -> bool {
        self.music_relevant == Some(true) && self.faithful == Some(true)
    }

    pub fn failed(&self) -> bool {
        self.music_relevant == Some(false) || self.faithful == Some(false)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateQuestion {
    pub artist_id: String,
    pub artist_name: String,
    pub source_passage_ids: Vec<String>,
    pub section_heading: String,
    pub topic: Option<Topic>,
    pub question_type: QuestionType,
    pub stem: String,
    pub options: [String; 4],
    pub answer_key: Letter,
    #[serde(default)]
    pub validation: Validation,
}

impl CandidateQuestion {
    pub fn options_block(&self) -> String {
        self.options
            .iter()
            .zip(Letter::ALL)
            .map(|(o, l)| format!("{l}. {o}"))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn answer_text(&self) -> &str {
        &self.options[self.answer_key.index()]
    }
}

/// A generator output that could not become a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub artist_id: String,
    pub question_type: QuestionType,
    pub reason: String,
    pub raw_output: String,
}

/// Parses `{"question", "options": [4], "answer": "A".."D"}` out of a
/// generator reply. Surrounding prose or code fences are tolerated.
pub fn parse_question_output(raw: &str) -> std::result::Result<(String, [String; 4], Letter), String> {
    let start = raw.find('{').ok_or("no_json_object")?;
    let end = raw.rfind('}').ok_or("no_json_object")?;
    if end < start {
        return Err("no_json_object".into());
    }
    let v: Value = serde_json::from_str(&raw[start..=end]).map_err(|e| format!("invalid_json: {e}"))?;
    let stem = v
        .get("question")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or("missing_question")?
        .to_string();
    let options: Vec<String> = v
        .get("options")
        .and_then(Value::as_array)
        .ok_or("missing_options")?
        .iter()
        .map(|o| o.as_str().map(|s| s.trim().to_string()).ok_or("non_string_option"))
        .collect::<std::result::Result<_, _>>()?;
    let options: [String; 4] = options
        .try_into()
        .map_err(|o: Vec<String>| format!("wrong_option_count: {}", o.len()))?;
    let key = v
        .get("answer")
        .and_then(Value::as_str)
        .and_then(|s| s.trim().parse::<Letter>().ok())
        .ok_or("bad_answer_key")?;
    let answer = &options[key.index()];
    if options.iter().filter(|o| *o == answer).count() != 1 {
        return Err("answer_not_unique".into());
    }
    Ok((stem, options, key))
}

/// Generates one factual and one contextual candidate from a section.
/// Unparseable outputs come back as rejections, not errors.
pub fn generate_questions(
    generator: &dyn Generator,
    artist: &ArtistRecord,
    section: &ArtistSection,
    source_passage_ids: &[String],
    tokenizer: Tokenizer,
) -> Result<Vec<std::result::Result<CandidateQuestion, Rejection>>> {
    let tokens = tokenizer.count(&section.text);
    if !(MIN_SECTION_TOKENS..=MAX_SECTION_TOKENS).contains(&tokens) {
        return Err(Error::Input(format!(
            "section {:?} of {} has {tokens} tokens; questions need {MIN_SECTION_TOKENS}-{MAX_SECTION_TOKENS}",
            section.heading, artist.doc_id
        )));
    }
    let mut out = Vec::with_capacity(2);
    for (qt, template) in [
        (QuestionType::Factual, FACTUAL_PROMPT),
        (QuestionType::Contextual, CONTEXTUAL_PROMPT),
    ] {
        let prompt = render(
            template,
            &[
                ("artist", &artist.name),
                ("heading", &section.heading),
                ("section", &section.text),
            ],
        );
        let raw = generator.generate("You write music trivia questions.", &prompt)?;
        out.push(match parse_question_output(&raw) {
            Ok((stem, options, answer_key)) => Ok(CandidateQuestion {
                artist_id: artist.doc_id.clone(),
                artist_name: artist.name.clone(),
                source_passage_ids: source_passage_ids.to_vec(),
                section_heading: section.heading.clone(),
                topic: section.topic,
                question_type: qt,
                stem,
                options,
                answer_key,
                validation: Validation::default(),
            }),
            Err(reason) => Err(Rejection {
                artist_id: artist.doc_id.clone(),
                question_type: qt,
                reason,
                raw_output: raw,
            }),
        });
    }
    Ok(out)
}

fn parse_judgement(raw: &str) -> Option<bool> {
    let word: String = raw
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Records the music-relevance and faithfulness judgements.
pub fn validate_question(
    generator: &dyn Generator,
    candidate: &CandidateQuestion,
    section_text: &str,
) -> Result<CandidateQuestion> {
    let options = candidate.options_block();
    let answer = format!("{}. {}", candidate.answer_key, candidate.answer_text());
    let vars = [
        ("question", candidate.stem.as_str()),
        ("options", options.as_str()),
        ("answer", answer.as_str()),
        ("section", section_text),
    ];
    let system = "You are a strict reviewer of benchmark questions.";
    let relevance = generator.generate(system, &render(RELEVANCE_PROMPT, &vars))?;
    let faithfulness = generator.generate(system, &render(FAITHFULNESS_PROMPT, &vars))?;
    let mut out = candidate.clone();
    out.validation = Validation {
        music_relevant: parse_judgement(&relevance),
        faithful: parse_judgement(&faithfulness),
    };
    Ok(out)
}

/// Moves each item's correct option so that every key letter is used by
/// exactly a quarter of the items. Distractors keep their relative order.
pub fn balance_options(items: &[BenchmarkItem], seed: u64) -> Result<Vec<BenchmarkItem>> {
    if !items.len().is_multiple_of(4) {
        return Err(Error::Input(format!(
            "balancing needs a multiple of 4 items, got {}",
            items.len()
        )));
    }
    let mut targets: Vec<Letter> = Letter::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, items.len() / 4))
        .collect();
    targets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(items
        .iter()
        .zip(targets)
        .map(|(item, key)| {
            let correct = item.answer_text().to_string();
            let mut rest: Vec<String> = item
                .options
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != item.answer_key.index())
                .map(|(_, o)| o.clone())
                .collect();
            rest.insert(key.index(), correct);
            BenchmarkItem {
                options: rest.try_into().expect("four options"),
                answer_key: key,
                ..item.clone()
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    /// Passed both judges; included in the benchmark.
    Retained,
    /// Failed at least one judge.
    Excluded,
    /// A judge reply could not be parsed; left for a human.
    NeedsReview,
    /// Generator output did not parse into a question.
    Rejected,
    /// Valid but dropped to make the item count divisible by four.
    Trimmed,
}

/// One line of the human-review queue. The tool never marks anything as
/// human-validated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub artist_id: String,
    pub question_type: QuestionType,
    pub status: ReviewStatus,
    pub reasons: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate: Option<CandidateQuestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
}

#[derive(Debug, Clone)]
pub struct BenchBuildConfig {
    pub n: usize,
    pub seed: u64,
    pub top_genres: usize,
    pub genre_table: GenreTable,
    /// Computed from the artist sources when absent.
    pub frequencies: Option<FrequencyTable>,
    pub tokenizer: Tokenizer,
    pub workers: usize,
}

impl Default for BenchBuildConfig {
    fn default() -> Self {
        BenchBuildConfig {
            n: DEFAULT_ARTIST_COUNT,
            seed: 0,
            top_genres: DEFAULT_TOP_GENRES,
            genre_table: GenreTable::bundled(),
            frequencies: None,
            tokenizer: Tokenizer::UnicodeWord,
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchBuildOutput {
    pub items: Vec<BenchmarkItem>,
    pub review_queue: Vec<ReviewEntry>,
    pub selected: Vec<ArtistRecord>,
}

/// Runs the whole construction pipeline. `passages` supplies the gold
/// passage ids for each question's source section.
pub fn build_benchmark(
    sources: &[ArtistSource],
    passages: &PassageStore,
    cfg: &BenchBuildConfig,
    generator: &dyn Generator,
) -> Result<BenchBuildOutput> {
    cfg.genre_table.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut records: Vec<ArtistRecord> =
        sources.iter().map(|s| ArtistRecord::from_source(s, cfg.tokenizer)).collect();
    let freq = cfg.frequencies.clone().unwrap_or_else(|| genre_frequencies(&records));
    let mapper = GenreMapper::new(&freq, &cfg.genre_table, cfg.top_genres)?;
    for r in &mut records {
        r.mapped_genre_labels = mapper.map(&r.normalized_genres);
    }

    let countries = CountryList::iso3166();
    let extracted: Vec<Result<Option<String>>> = pool.install(|| {
        records
            .par_iter()
            .zip(sources)
            .map(|(r, s)| match &r.country {
                Some(c) if countries.contains(c) => Ok(Some(c.clone())),
                _ if r.eligible_sections.is_empty() => Ok(None),
                _ => extract_country(generator, &s.r#abstract, &countries),
            })
            .collect()
    });
    for (r, c) in records.iter_mut().zip(extracted) {
        r.country = c?;
    }

    let selected = select_artists(&records, cfg.n, cfg.seed)?;

    let mut section_passages: HashMap<(&str, &str), Vec<String>> = HashMap::new();
    for p in passages.passages() {
        section_passages
            .entry((p.doc_id.as_str(), p.section_heading.as_str()))
            .or_default()
            .push(p.passage_id.clone());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let picks: Vec<(&ArtistRecord, &ArtistSection)> = selected
        .iter()
        .map(|a| {
            let i = rng.random_range(0..a.eligible_sections.len());
            (a, &a.eligible_sections[i])
        })
        .collect();

    type Generated = Vec<std::result::Result<CandidateQuestion, Rejection>>;
    let generated: Vec<Result<(Generated, &ArtistSection)>> = pool.install(|| {
        picks
            .par_iter()
            .map(|(artist, section)| {
                let ids = section_passages
                    .get(&(artist.doc_id.as_str(), section.heading.as_str()))
                    .cloned()
                    .unwrap_or_default();
                let cands = generate_questions(generator, artist, section, &ids, cfg.tokenizer)?;
                let cands = cands
                    .into_iter()
                    .map(|c| match c {
                        Ok(c) => validate_question(generator, &c, &section.text).map(Ok),
                        Err(r) => Ok(Err(r)),
                    })
                    .collect::<Result<Generated>>()?;
                Ok((cands, *section))
            })
            .collect()
    });

    let mut review_queue = Vec::new();
    let mut retained = Vec::new();
    for g in generated {
        let (cands, _) = g?;
        for c in cands {
            match c {
                Err(r) => review_queue.push(ReviewEntry {
                    artist_id: r.artist_id,
                    question_type: r.question_type,
                    status: ReviewStatus::Rejected,
                    reasons: vec![r.reason],
                    item_id: None,
                    candidate: None,
                    raw_output: Some(r.raw_output),
                }),
                Ok(c) => {
                    let mut reasons = Vec::new();
                    if c.validation.music_relevant == Some(false) {
                        reasons.push("not_music_relevant".to_string());
                    }
                    if c.validation.faithful == Some(false) {
                        reasons.push("not_faithful".to_string());
                    }
                    if c.validation.music_relevant.is_none() {
                        reasons.push("relevance_judgement_unparseable".to_string());
                    }
                    if c.validation.faithful.is_none() {
                        reasons.push("faithfulness_judgement_unparseable".to_string());
                    }
                    let status = if c.validation.passed() {
                        ReviewStatus::Retained
                    } else if c.validation.failed() {
                        ReviewStatus::Excluded
                    } else {
                        ReviewStatus::NeedsReview
                    };
                    let item_id = format!("{}-{}", c.artist_id, c.question_type);
                    if status == ReviewStatus::Retained {
                        retained.push(BenchmarkItem {
                            item_id: item_id.clone(),
                            question: c.stem.clone(),
                            options: c.options.clone(),
                            answer_key: c.answer_key,
                            question_type: c.question_type,
                            category: c.topic.map(|t| t.to_string()).unwrap_or_else(|| "other".into()),
                            seen: None,
                            gold_passage_ids: Some(c.source_passage_ids.clone()),
                            artist_id: Some(c.artist_id.clone()),
                        });
                    }
                    review_queue.push(ReviewEntry {
                        artist_id: c.artist_id.clone(),
                        question_type: c.question_type,
                        status,
                        reasons,
                        item_id: Some(item_id),
                        candidate: Some(c),
                        raw_output: None,
                    });
                }
            }
        }
    }

    retained.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let keep = retained.len() - retained.len() % 4;
    for dropped in retained.drain(keep..) {
        if let Some(e) = review_queue
            .iter_mut()
            .find(|e| e.item_id.as_deref() == Some(dropped.item_id.as_str()))
        {
            e.status = ReviewStatus::Trimmed;
            e.reasons.push("trimmed_for_balance".into());
        }
    }
    let items = balance_options(&retained, cfg.seed)?;
    Ok(BenchBuildOutput {
        items,
        review_queue,
        selected,
    })
}

pub fn write_review_queue(path: &Path, entries: &[ReviewEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&serde_json::to_string(e).expect("review entry serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
