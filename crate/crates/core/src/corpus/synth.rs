//! Seeded synthetic summarization corpus.
//!
//! A document is a sequence of seven-token "fact" sentences
//! (`adj noun verb adj noun in place`) interleaved with five-token
//! distractor sentences. The gold summary renders the leading
//! `summary_facts` facts in document order. Each rendered fact is rewritten
//! with probability `paraphrase_rate` through one fixed template, a passive
//! reordering with the verb replaced by its synonym:
//!
//! ```text
//! brave farmer repaired old bridge in oakridge
//! old bridge was fixed by brave farmer in oakridge
//! ```
//!
//! Synonyms, `was` and `by` never occur in documents, so the paraphrase
//! introduces three novel unigrams per fact.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TextExample, Vocabulary};
use crate::error::{Error, Result};
use crate::rng;

const ADJECTIVES: [&str; 30] = [
    "old", "young", "brave", "quiet", "tall", "small", "happy", "angry", "clever", "lazy", "rich",
    "poor", "busy", "calm", "eager", "gentle", "proud", "shy", "wild", "loyal", "bold", "kind",
    "strong", "weak", "famous", "local", "tired", "curious", "careful", "cheerful",
];

const NOUNS: [&str; 50] = [
    "farmer", "teacher", "doctor", "baker", "pilot", "sailor", "artist", "driver", "nurse",
    "judge", "miner", "poet", "chef", "guard", "clerk", "mayor", "singer", "hunter", "builder",
    "student", "bridge", "boat", "wagon", "garden", "tower", "library", "school", "market",
    "statue", "fountain", "engine", "piano", "kitchen", "barn", "fence", "ladder", "lantern",
    "bicycle", "clock", "window", "horse", "dog", "cat", "goat", "owl", "fox", "rabbit", "parrot",
    "tractor", "canoe",
];

/// Verb and the synonym used by the paraphrase template.
const VERBS: [(&str, &str); 60] = [
    ("repaired", "fixed"),
    ("built", "constructed"),
    ("painted", "colored"),
    ("visited", "toured"),
    ("sold", "traded"),
    ("bought", "purchased"),
    ("found", "discovered"),
    ("lost", "misplaced"),
    ("opened", "unlocked"),
    ("closed", "shut"),
    ("cleaned", "scrubbed"),
    ("carried", "hauled"),
    ("watched", "observed"),
    ("helped", "assisted"),
    ("praised", "commended"),
    ("feared", "dreaded"),
    ("chased", "pursued"),
    ("guarded", "protected"),
    ("moved", "relocated"),
    ("lifted", "raised"),
    ("pushed", "shoved"),
    ("pulled", "tugged"),
    ("washed", "rinsed"),
    ("cooked", "prepared"),
    ("ate", "devoured"),
    ("drew", "sketched"),
    ("wrote", "penned"),
    ("read", "perused"),
    ("greeted", "welcomed"),
    ("hired", "employed"),
    ("rescued", "saved"),
    ("hid", "concealed"),
    ("showed", "displayed"),
    ("sent", "dispatched"),
    ("received", "accepted"),
    ("borrowed", "took"),
    ("broke", "shattered"),
    ("mended", "patched"),
    ("planted", "sowed"),
    ("harvested", "reaped"),
    ("measured", "gauged"),
    ("counted", "tallied"),
    ("checked", "inspected"),
    ("tested", "examined"),
    ("started", "launched"),
    ("finished", "completed"),
    ("joined", "entered"),
    ("kicked", "booted"),
    ("tossed", "threw"),
    ("caught", "grabbed"),
    ("fed", "nourished"),
    ("trained", "coached"),
    ("taught", "instructed"),
    ("hugged", "embraced"),
    ("followed", "trailed"),
    ("ignored", "overlooked"),
    ("questioned", "interrogated"),
    ("photographed", "filmed"),
    ("dismissed", "fired"),
    ("celebrated", "honored"),
];

const PLACES: [&str; 20] = [
    "oakridge", "riverton", "maplewood", "stonebay", "pinehill", "ashford", "brookside",
    "elmwood", "fairview", "glenmore", "highgate", "lakeside", "millbrook", "northfield",
    "redwood", "silverton", "westport", "woodvale", "crestview", "harborview",
];

const FILLERS: [&str; 40] = [
    "weather", "remained", "mild", "officials", "noted", "nothing", "unusual", "traffic",
    "flowed", "slowly", "markets", "stayed", "flat", "crowds", "gathered", "early", "rain",
    "expected", "later", "prices", "rose", "slightly", "schools", "reopened", "today", "tickets",
    "vanished", "quickly", "roads", "icy", "winds", "calmed", "overnight", "residents", "waited",
    "patiently", "buses", "delayed", "again", "briefly",
];

const MARKERS: [&str; 3] = ["meanwhile", "reportedly", "separately"];
const FACT_LINK: &str = "in";
const PASSIVE_AUX: &str = "was";
const PASSIVE_BY: &str = "by";

const TOTAL_CONTENT: usize = ADJECTIVES.len() + NOUNS.len() + VERBS.len() + PLACES.len() + FILLERS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_train: usize,
    pub num_val: usize,
    pub num_test: usize,
    pub facts_per_doc: usize,
    pub distractors_per_doc: usize,
    pub summary_facts: usize,
    pub paraphrase_rate: f64,
    pub vocab_content_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_train: 2000,
            num_val: 100,
            num_test: 200,
            facts_per_doc: 5,
            distractors_per_doc: 4,
            summary_facts: 2,
            paraphrase_rate: 0.35,
            vocab_content_words: TOTAL_CONTENT,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.facts_per_doc == 0 {
            return Err(Error::config("facts_per_doc", "must be positive"));
        }
        if self.distractors_per_doc == 0 {
            return Err(Error::config("distractors_per_doc", "must be positive"));
        }
        if self.summary_facts == 0 {
            return Err(Error::config("summary_facts", "must be positive"));
        }
        if self.summary_facts > self.facts_per_doc {
            return Err(Error::config(
                "summary_facts",
                format!(
                    "{} exceeds facts_per_doc {}",
                    self.summary_facts, self.facts_per_doc
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.paraphrase_rate) {
            return Err(Error::config("paraphrase_rate", "must lie in [0, 1]"));
        }
        if !(20..=TOTAL_CONTENT).contains(&self.vocab_content_words) {
            return Err(Error::config(
                "vocab_content_words",
                format!("must lie in [20, {TOTAL_CONTENT}]"),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub train: Vec<TextExample>,
    pub val: Vec<TextExample>,
    pub test: Vec<TextExample>,
}

/// Word inventory restricted to `vocab_content_words`, taking the same
/// fraction from each category.
struct Lexicon {
    adjectives: Vec<&'static str>,
    nouns: Vec<&'static str>,
    verbs: Vec<(&'static str, &'static str)>,
    places: Vec<&'static str>,
    fillers: Vec<&'static str>,
}

impl Lexicon {
    fn new(content_words: usize) -> Self {
        let take = |len: usize| ((len * content_words).div_ceil(TOTAL_CONTENT)).clamp(2, len);
        Self {
            adjectives: ADJECTIVES[..take(ADJECTIVES.len())].to_vec(),
            nouns: NOUNS[..take(NOUNS.len())].to_vec(),
            verbs: VERBS[..take(VERBS.len())].to_vec(),
            places: PLACES[..take(PLACES.len())].to_vec(),
            fillers: FILLERS[..take(FILLERS.len())].to_vec(),
        }
    }
}

struct Fact<'a> {
    subject: [&'a str; 2],
    verb: (&'a str, &'a str),
    object: [&'a str; 2],
    place: &'a str,
}

impl Fact<'_> {
    fn literal(&self) -> [&str; 7] {
        [
            self.subject[0],
            self.subject[1],
            self.verb.0,
            self.object[0],
            self.object[1],
            FACT_LINK,
            self.place,
        ]
    }

    fn paraphrase(&self) -> [&str; 9] {
        [
            self.object[0],
            self.object[1],
            PASSIVE_AUX,
            self.verb.1,
            PASSIVE_BY,
            self.subject[0],
            self.subject[1],
            FACT_LINK,
            self.place,
        ]
    }
}

fn pick<'a, R: Rng>(rng: &mut R, words: &[&'a str]) -> &'a str {
    words.choose(rng).copied().expect("non-empty word list")
}

fn make_example<R: Rng>(rng: &mut R, lex: &Lexicon, cfg: &SynthConfig, id: String) -> TextExample {
    let facts: Vec<Fact> = (0..cfg.facts_per_doc)
        .map(|_| Fact {
            subject: [pick(rng, &lex.adjectives), pick(rng, &lex.nouns)],
            verb: *lex.verbs.choose(rng).expect("non-empty verb list"),
            object: [pick(rng, &lex.adjectives), pick(rng, &lex.nouns)],
            place: pick(rng, &lex.places),
        })
        .collect();

    // Interleave facts (kept in order) with distractors at random slots.
    let total = cfg.facts_per_doc + cfg.distractors_per_doc;
    let mut is_fact = vec![false; total];
    let slots = rand::seq::index::sample(rng, total, cfg.facts_per_doc).into_vec();
    for s in slots {
        is_fact[s] = true;
    }
    let mut document: Vec<&str> = Vec::new();
    let mut next_fact = facts.iter();
    for fact_slot in is_fact {
        if fact_slot {
            document.extend(next_fact.next().expect("fact count").literal());
        } else {
            document.push(pick(rng, &MARKERS));
            for _ in 0..4 {
                document.push(pick(rng, &lex.fillers));
            }
        }
    }

    // One uniform draw per rendered fact regardless of the rate, so the set
    // of paraphrased facts grows monotonically with paraphrase_rate.
    let mut summary: Vec<&str> = Vec::new();
    for fact in &facts[..cfg.summary_facts] {
        let u: f64 = rng.random();
        if u < cfg.paraphrase_rate {
            summary.extend(fact.paraphrase());
        } else {
            summary.extend(fact.literal());
        }
    }

    TextExample {
        id,
        document: document.join(" "),
        summary: summary.join(" "),
    }
}

/// Every word the generator can emit under `cfg`, in a fixed order.
pub fn synthetic_vocabulary(cfg: &SynthConfig) -> Vocabulary {
    let lex = Lexicon::new(cfg.vocab_content_words);
    let mut words: Vec<&str> = Vec::new();
    words.extend(&lex.adjectives);
    words.extend(&lex.nouns);
    words.extend(lex.verbs.iter().map(|v| v.0));
    words.extend(&lex.places);
    words.extend(&lex.fillers);
    words.extend(MARKERS);
    words.extend([FACT_LINK, PASSIVE_AUX, PASSIVE_BY]);
    words.extend(lex.verbs.iter().map(|v| v.1));
    Vocabulary::from_words(words)
}

pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let lex = Lexicon::new(cfg.vocab_content_words);
    let split = |name: &str, count: usize| -> Vec<TextExample> {
        let mut rng = rng::stream(cfg.seed, &format!("synth/{name}"), 0, 0);
        (0..count)
            .map(|i| make_example(&mut rng, &lex, cfg, format!("{name}-{i:06}")))
            .collect()
    };
    Ok(SyntheticCorpus {
        train: split("train", cfg.num_train),
        val: split("val", cfg.num_val),
        test: split("test", cfg.num_test),
    })
}
