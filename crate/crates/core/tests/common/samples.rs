//! The sample question, passages and rendered prompts behind the golden files.

use ctxgenie::corpus::BenchmarkRecord;
use ctxgenie::prompt::{ContextView, Grounding, Renderer, ShotSet};

pub fn sample_record() -> BenchmarkRecord {
    BenchmarkRecord {
        id: "sample".into(),
        question: "A 65-year-old male is treated for anal carcinoma with therapy including external beam radiation. How does radiation affect cancer cells?".into(),
        options: vec![
            "Induces the formation of thymidine dimers".into(),
            "Induces the formation of disulfide".into(),
            "Induces deamination of cytosine".into(),
            "Induces breaks in double-stranded DNA".into(),
        ],
        gold_index: 3,
        subject: None,
        dataset_tag: "medqa-4".into(),
    }
}

pub fn sample_grounding() -> Vec<Grounding> {
    let texts = [
        "Ionizing radiation deposits energy in tissue and produces reactive oxygen species that attack DNA.",
        "Thymidine dimers are the signature lesion of ultraviolet light, not of ionizing radiation.",
        "Deamination of cytosine and disulfide formation are chemical changes unrelated to therapeutic radiation.",
        "External beam radiation therapy is a standard component of treatment for anal carcinoma.",
        "Cancer cells that cannot repair damaged DNA undergo mitotic catastrophe and die.",
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| Grounding {
            text: t.to_string(),
            view: if i < 3 { ContextView::OptionFocused } else { ContextView::OptionFree },
        })
        .collect()
}

pub fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn reader(family: &str, benchmark: &str, pair: &str, k: usize) -> String {
    let shots = ShotSet::builtin(benchmark, pair).unwrap().shots;
    Renderer::default()
        .render_reader_prompt(&sample_record(), &sample_grounding(), &shots, family, k)
        .unwrap()
}

pub fn option_focused() -> String {
    let shots = ShotSet::builtin("generation", "option-focused").unwrap().shots;
    Renderer::default().render_option_focused(&sample_record(), &shots).unwrap()
}

pub fn option_free() -> String {
    let shots = ShotSet::builtin("generation", "option-free").unwrap().shots;
    Renderer::default().render_option_free(&sample_record(), &shots).unwrap()
}

/// Golden file name with the prompt rendered for it now.
pub fn golden_cases() -> Vec<(&'static str, String)> {
    vec![
        ("option_focused.txt", option_focused()),
        ("option_free.txt", option_free()),
        ("llama3_medqa_grounded.txt", reader("llama3-instruct", "medqa", "long", 5)),
        ("phi3_medqa_grounded.txt", reader("phi3", "medqa", "long", 5)),
        ("zephyr_medqa_grounded.txt", reader("zephyr", "medqa", "H", 5)),
        ("llama2_medqa_grounded.txt", reader("llama2-chat", "medqa", "A1", 5)),
        ("zephyr_medmcqa_grounded.txt", reader("zephyr", "medmcqa", "A2", 5)),
        ("llama2_medmcqa_grounded.txt", reader("llama2-chat", "medmcqa", "A1", 5)),
        ("zephyr_mmlu_grounded.txt", reader("zephyr", "mmlu-medical", "A1", 5)),
        ("llama2_mmlu_grounded.txt", reader("llama2-chat", "mmlu-medical", "A2", 5)),
        ("zephyr_medqa_ungrounded.txt", reader("zephyr", "medqa", "H", 0)),
        ("llama2_medqa_ungrounded.txt", reader("llama2-chat", "medqa", "H", 0)),
        ("pmcllama_medqa_ungrounded.txt", reader("pmc-llama", "medqa", "H", 0)),
    ]
}
