//! Render the generation prompt and, when E2CFD_LLM_BASE_URL and
//! E2CFD_LLM_API_KEY are set, ask a live OpenAI-compatible endpoint for
//! candidates. Without them a scripted reply stands in.

use costsmith::cmdp::SafetyRequirement;
use costsmith::env::EnvConfig;
use costsmith::llm::{generate_candidates, ChatBackend, HttpChatClient, LlmEndpointConfig, MockScript, PromptBundle};

fn main() {
    let env = EnvConfig::default();
    let safety = SafetyRequirement::traditional(10.0).unwrap();
    let bundle = PromptBundle::for_task(&env, &safety, None);
    let req = bundle.render_generation(3);
    println!("--- system ---\n{}\n--- user ---\n{}", req.system, req.user);

    let live = std::env::var("E2CFD_LLM_BASE_URL").is_ok() && std::env::var("E2CFD_LLM_API_KEY").is_ok();
    let backend: Box<dyn ChatBackend> = if live {
        Box::new(HttpChatClient::new(LlmEndpointConfig::default().with_env()).expect("endpoint config"))
    } else {
        Box::new(MockScript::from_texts(["```\n-in_hazard\n```\n```\n-0.05 * speed\n```\n```\n-0.01\n```"]))
    };
    match generate_candidates(&bundle, 3, backend.as_ref()) {
        Ok(cands) => cands.iter().for_each(|c| println!("candidate: {c}")),
        Err(e) => eprintln!("generation failed: {e}"),
    }
}
