use std::collections::VecDeque;
use std::io::{self, BufRead, Write};

use crate::battery::{Modality, TestItem};

/// Source of operator-typed answers for `ManualTranscript` sessions.
pub trait Transcriber: Send {
    fn transcribe(&mut self, item: &TestItem) -> io::Result<String>;
}

/// Shows the prompt on stderr and reads one line from stdin.
#[derive(Debug, Default)]
pub struct ConsoleTranscriber;

impl Transcriber for ConsoleTranscriber {
    fn transcribe(&mut self, item: &TestItem) -> io::Result<String> {
        let mut err = io::stderr().lock();
        writeln!(err, "--- item {} ---", item.id)?;
        match item.prompt.modality {
            Modality::Text => writeln!(err, "{}", item.prompt.content)?,
            m => writeln!(err, "[{m}] {}", item.prompt.content)?,
        }
        write!(err, "subject's answer> ")?;
        err.flush()?;
        let mut line = String::new();
        if io::stdin().lock().read_line(&mut line)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "end of input"));
        }
        Ok(line.trim_end_matches(['\r', '\n']).to_string())
    }
}

/// Replays a fixed list of answers; errors once exhausted.
#[derive(Debug, Default)]
pub struct ScriptedTranscriber {
    answers: VecDeque<String>,
}

impl ScriptedTranscriber {
    pub fn new<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            answers: answers.into_iter().map(Into::into).collect(),
        }
    }
}

impl Transcriber for ScriptedTranscriber {
    fn transcribe(&mut self, _item: &TestItem) -> io::Result<String> {
        self.answers
            .pop_front()
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "transcript exhausted"))
    }
}
