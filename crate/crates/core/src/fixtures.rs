//! Seeded synthetic QFS data for tests, benches and the demo config.
//!
//! Summaries are short templates over a fixed topic lexicon. Each test
//! document mentions exactly the topic words of its reference, surrounded by
//! filler, and the accompanying scorer embeds every topic word along one
//! shared direction, so saliency singles them out.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::pipeline::QfsExample;
use crate::saliency::{BilinearScorer, EmbeddingTable, ScorerModel};

pub const TOPIC_WORDS: [&str; 10] = [
    "water",
    "health",
    "standards",
    "energy",
    "schools",
    "taxes",
    "privacy",
    "congress",
    "insurers",
    "climate",
];

const FILLERS: [&str; 8] = [
    "reports",
    "critics",
    "regions",
    "experts",
    "studies",
    "officials",
    "communities",
    "decades",
];

const QUERY_HEADS: [&str; 4] = ["policy", "debate", "reform", "economy"];

pub const FIXTURE_SEED: u64 = 2024;
pub const FIXTURE_DIM: usize = 4;

pub struct SyntheticData {
    pub train: Vec<QfsExample>,
    pub test: Vec<QfsExample>,
    pub scorer: ScorerModel,
}

fn pick3(rng: &mut ChaCha8Rng) -> [&'static str; 3] {
    let mut words = TOPIC_WORDS.to_vec();
    words.shuffle(rng);
    [words[0], words[1], words[2]]
}

fn example(rng: &mut ChaCha8Rng, id: String) -> QfsExample {
    let [x, y, z] = pick3(rng);
    let head = QUERY_HEADS.choose(rng).expect("non-empty");
    let query = format!("{head}: should we worry about {x}?");
    let summary = match rng.random_range(0..3) {
        0 => format!("{x} and {y} affect {z} ."),
        1 => format!("{x} shapes {y} and {z} ."),
        _ => format!("{x} and {y} depend on {z} ."),
    };
    let mut fillers = FILLERS.to_vec();
    fillers.shuffle(rng);
    let document = format!(
        "{} say that {y} and {x} often affect {z} in many {} . the {} disagree , as {} show .",
        fillers[0], fillers[1], fillers[2], fillers[3]
    );
    QfsExample {
        id,
        query,
        document,
        summary,
    }
}

/// Train and test splits plus the matching scorer.
pub fn synthetic(seed: u64, n_train: usize, n_test: usize) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = (0..n_train)
        .map(|i| example(&mut rng, format!("train-{i:04}")))
        .collect();
    let test = (0..n_test)
        .map(|i| example(&mut rng, format!("test-{i:02}")))
        .collect();

    let mut embeddings = EmbeddingTable::seeded(FIXTURE_DIM, seed);
    let mut topic = vec![0.0; FIXTURE_DIM];
    topic[0] = 1.0;
    for w in TOPIC_WORDS {
        embeddings.set(w, topic.clone())?;
    }
    let identity = (0..FIXTURE_DIM)
        .map(|r| {
            (0..FIXTURE_DIM)
                .map(|c| f64::from(u8::from(r == c)))
                .collect()
        })
        .collect();
    let scorer = ScorerModel {
        embeddings,
        scorer: BilinearScorer::new(FIXTURE_DIM, identity)?,
    };
    Ok(SyntheticData {
        train,
        test,
        scorer,
    })
}

/// The dataset shipped under `fixtures/`: 1000 training and 8 test examples.
pub fn shipped() -> Result<SyntheticData> {
    synthetic(FIXTURE_SEED, 1000, 8)
}
