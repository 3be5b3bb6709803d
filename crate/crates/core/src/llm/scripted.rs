use std::collections::VecDeque;
use std::sync::Mutex;

use super::{approx_token_count, truncate_at_stop, BackendError, Completion, CompletionBackend, CompletionRequest};

/// Replays canned completions in order, one per call.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    state: Mutex<ScriptState>,
}

#[derive(Debug, Default)]
struct ScriptState {
    queue: VecDeque<String>,
    calls: usize,
}

impl ScriptedBackend {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedBackend {
            state: Mutex::new(ScriptState { queue: script.into_iter().map(Into::into).collect(), calls: 0 }),
        }
    }

    pub fn remaining(&self) -> usize {
        self.state.lock().expect("script lock").queue.len()
    }

    pub fn calls(&self) -> usize {
        self.state.lock().expect("script lock").calls
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<Completion, BackendError> {
        request.validate()?;
        let mut state = self.state.lock().expect("script lock");
        let Some(raw) = state.queue.pop_front() else {
            return Err(BackendError::ScriptExhausted { calls: state.calls });
        };
        state.calls += 1;
        let text = truncate_at_stop(&raw, &request.stop).to_string();
        let usage = super::Usage::new(approx_token_count(&request.prompt), approx_token_count(&text));
        Ok(Completion { text, usage })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_then_exhausts() {
        let backend = ScriptedBackend::new(["Thought: done\nFinal Answer: hi"]);
        let req = CompletionRequest::new("prompt text", "scripted");
        let first = backend.complete(&req).unwrap();
        assert_eq!(first.text, "Thought: done\nFinal Answer: hi");
        assert_eq!(first.usage.input_tokens, 3);
        assert_eq!(backend.complete(&req).unwrap_err(), BackendError::ScriptExhausted { calls: 1 });
    }

    #[test]
    fn honours_stop_sequences() {
        let backend = ScriptedBackend::new(["Action: list_domains\nInput: {}\nObservation: [made up]"]);
        let out = backend.complete(&CompletionRequest::new("p", "scripted")).unwrap();
        assert_eq!(out.text, "Action: list_domains\nInput: {}\n");
    }
}
