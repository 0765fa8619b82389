//! Seeded synthetic benchmarks and knowledge bases for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::BenchmarkRecord;
use crate::retrieval::Document;

const SUBJECTS: &[&str] = &["anatomy", "pharmacology", "microbiology", "pathology", "physiology"];
const TERMS: &[&str] = &[
    "amoxicillin", "nitrofurantoin", "metformin", "heparin", "warfarin", "insulin", "propranolol", "lisinopril",
    "omeprazole", "prednisone", "ceftriaxone", "vancomycin", "atropine", "digoxin", "furosemide", "albuterol",
    "haloperidol", "lithium", "levothyroxine", "morphine",
];
const FINDINGS: &[&str] = &[
    "fever", "cough", "dysuria", "chest pain", "rash", "headache", "fatigue", "jaundice", "dyspnea", "edema",
];
const FILLER: &[&str] = &[
    "the", "clinical", "course", "typically", "involves", "careful", "assessment", "of", "renal", "hepatic",
    "function", "and", "monitoring", "for", "adverse", "effects", "in", "older", "patients", "with",
];

/// `n` four-option questions with seeded gold positions and distinct option texts.
pub fn synthetic_benchmark(n: usize, seed: u64) -> Vec<BenchmarkRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let age = 18 + rng.random_range(0..70);
            let finding = FINDINGS[rng.random_range(0..FINDINGS.len())];
            let start = rng.random_range(0..TERMS.len());
            let options: Vec<String> = (0..4).map(|j| TERMS[(start + j * 3) % TERMS.len()].to_string()).collect();
            BenchmarkRecord {
                id: format!("synth-{i:03}"),
                question: format!(
                    "Case {i}: a {age}-year-old patient presents with {finding}. Which drug is the most appropriate next step?"
                ),
                options,
                gold_index: rng.random_range(0..4),
                subject: Some(SUBJECTS[i % SUBJECTS.len()].to_string()),
                dataset_tag: "synthetic".to_string(),
            }
        })
        .collect()
}

/// Paragraph documents of roughly `words` words each.
pub fn synthetic_kb(docs: usize, words: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..docs)
        .map(|d| {
            let mut text = String::new();
            let mut sentence_len = 0;
            for w in 0..words {
                let pool = if rng.random_range(0..4) == 0 { TERMS } else { FILLER };
                let word = pool[rng.random_range(0..pool.len())];
                if w > 0 && !text.ends_with('\n') {
                    text.push(' ');
                }
                text.push_str(word);
                sentence_len += 1;
                if sentence_len >= 12 && rng.random_range(0..3) == 0 {
                    text.push('.');
                    sentence_len = 0;
                    if rng.random_range(0..4) == 0 {
                        text.push('\n');
                    }
                }
            }
            text.push('.');
            Document {
                id: format!("kb-{d:04}"),
                text,
            }
        })
        .collect()
}

pub fn documents_to_jsonl(docs: &[Document]) -> String {
    let mut s = String::new();
    for d in docs {
        s.push_str(&serde_json::to_string(d).expect("document serializes"));
        s.push('\n');
    }
    s
}
