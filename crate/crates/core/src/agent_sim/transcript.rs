use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::message::RoundMessage;
use crate::{Error, Result, Scalar};

/// Ordered log of every message exchanged during consensus clustering.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transcript<T> {
    pub messages: Vec<RoundMessage<T>>,
}

impl<T: Scalar> Transcript<T> {
    pub fn new(messages: Vec<RoundMessage<T>>) -> Self {
        Self { messages }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, out: W) -> Result<()> {
        let mut out = BufWriter::new(out);
        for m in &self.messages {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(File::create(path.as_ref())?)
    }

    pub fn read_jsonl<R: Read>(input: R) -> Result<Self> {
        let mut messages = Vec::new();
        for (i, line) in BufReader::new(input).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let msg = serde_json::from_str(&line)
                .map_err(|e| Error::MalformedTranscript(format!("line {}: {e}", i + 1)))?;
            messages.push(msg);
        }
        Ok(Self { messages })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(File::open(path.as_ref())?)
    }
}

/// Carries messages between agents and the coordinator.
pub trait Transport<T> {
    fn send(&mut self, msg: RoundMessage<T>) -> Result<()>;
    /// Everything sent since the last call, in send order.
    fn receive_all(&mut self) -> Vec<RoundMessage<T>>;
}

/// Single-process FIFO that also records every message it carries.
#[derive(Debug, Default)]
pub struct InProcessTransport<T> {
    queue: VecDeque<RoundMessage<T>>,
    log: Vec<RoundMessage<T>>,
}

impl<T: Clone> InProcessTransport<T> {
    pub fn new() -> Self {
        Self {
            queue: VecDeque::new(),
            log: Vec::new(),
        }
    }

    pub fn into_log(self) -> Vec<RoundMessage<T>> {
        self.log
    }
}

impl<T: Clone> Transport<T> for InProcessTransport<T> {
    fn send(&mut self, msg: RoundMessage<T>) -> Result<()> {
        self.log.push(msg.clone());
        self.queue.push_back(msg);
        Ok(())
    }

    fn receive_all(&mut self) -> Vec<RoundMessage<T>> {
        self.queue.drain(..).collect()
    }
}
