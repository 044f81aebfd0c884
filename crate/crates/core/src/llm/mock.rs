use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{ChatBackend, ChatRequest, LlmError};

/// Replays canned responses in order. Each call to `chat` consumes one;
/// running past the end is an error, never a wrap-around.
#[derive(Debug)]
pub struct MockScript {
    responses: Vec<(String, String)>,
    state: Mutex<MockState>,
}

#[derive(Debug, Default)]
struct MockState {
    cursor: usize,
    requests: Vec<ChatRequest>,
}

impl MockScript {
    pub fn from_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let responses = texts
            .into_iter()
            .enumerate()
            .map(|(i, t)| (format!("#{i}"), t.into()))
            .collect();
        MockScript {
            responses,
            state: Mutex::default(),
        }
    }

    /// Loads every regular file of `dir` whose name starts with digits,
    /// ordered by that number.
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let read_err = |e: std::io::Error| LlmError::Config(format!("{}: {e}", dir.display()));
        let mut files: Vec<(u64, PathBuf)> = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(read_err)? {
            let path = entry.map_err(read_err)?.path();
            if !path.is_file() {
                continue;
            }
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let digits: String = name.chars().take_while(char::is_ascii_digit).collect();
            if let Ok(n) = digits.parse::<u64>() {
                files.push((n, path));
            }
        }
        files.sort();
        if files.is_empty() {
            return Err(LlmError::Config(format!("no numbered fixture files in {}", dir.display())));
        }
        let mut responses = Vec::with_capacity(files.len());
        for (_, path) in files {
            let text = std::fs::read_to_string(&path).map_err(read_err)?;
            responses.push((path.file_name().unwrap().to_string_lossy().into_owned(), text));
        }
        Ok(MockScript {
            responses,
            state: Mutex::default(),
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.state.lock().expect("mock lock").cursor
    }

    /// Every request received so far.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.state.lock().expect("mock lock").requests.clone()
    }

    pub fn names(&self) -> Vec<&str> {
        self.responses.iter().map(|(n, _)| n.as_str()).collect()
    }
}

impl ChatBackend for MockScript {
    fn chat(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let mut s = self.state.lock().expect("mock lock");
        let Some((_, text)) = self.responses.get(s.cursor) else {
            return Err(LlmError::MockExhausted(self.responses.len()));
        };
        s.cursor += 1;
        s.requests.push(request.clone());
        Ok(text.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ChatRequest {
        ChatRequest {
            system: String::new(),
            user: "u".into(),
        }
    }

    #[test]
    fn replays_in_order_then_errors() {
        let m = MockScript::from_texts(["a", "b"]);
        assert_eq!(m.chat(&req()).unwrap(), "a");
        assert_eq!(m.chat(&req()).unwrap(), "b");
        assert!(matches!(m.chat(&req()), Err(LlmError::MockExhausted(2))));
        assert_eq!(m.cursor(), 2);
        assert_eq!(m.requests().len(), 2);
    }

    #[test]
    fn directory_order_is_numeric() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("10-late.txt"), "ten").unwrap();
        std::fs::write(dir.path().join("2-early.txt"), "two").unwrap();
        std::fs::write(dir.path().join("README"), "ignored").unwrap();
        let m = MockScript::from_dir(dir.path()).unwrap();
        assert_eq!(m.names(), vec!["2-early.txt", "10-late.txt"]);
        assert_eq!(m.chat(&req()).unwrap(), "two");
    }

    #[test]
    fn empty_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(MockScript::from_dir(dir.path()).is_err());
    }
}
