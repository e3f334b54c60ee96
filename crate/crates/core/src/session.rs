//! Budgeted human labeling sessions: a one-pending-patch protocol over a
//! sampler, with an event log that replays to the identical state.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PatchRef;
use crate::rng::{seeded, SeededRng};
use crate::surface::{Sampler, SurfaceSnapshot, UpdateEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    /// Consumes a budget slot; treated as negative by the sampler.
    Skip,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
            Label::Skip => "skip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pending {
    pub step: usize,
    pub patch: PatchRef,
}

/// One line of the persisted log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    Draw {
        step: usize,
        row: usize,
        col: usize,
    },
    Label {
        step: usize,
        row: usize,
        col: usize,
        label: Label,
        update: Option<UpdateEvent>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStep {
    pub step: usize,
    pub row: usize,
    pub col: usize,
    pub label: Label,
    pub update: Option<UpdateEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tallies {
    pub budget: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_skip: usize,
    pub labeled: usize,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub tallies: Tallies,
    pub pending: Option<Pending>,
    pub steps: Vec<SessionStep>,
    pub surface: SurfaceSnapshot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelSession {
    sampler: Sampler,
    budget: usize,
    rng: SeededRng,
    pending: Option<Pending>,
    steps: Vec<SessionStep>,
}

impl LabelSession {
    pub fn new(sampler: Sampler, budget: usize, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        Ok(Self {
            sampler,
            budget,
            rng: seeded(seed),
            pending: None,
            steps: Vec::new(),
        })
    }

    /// Rebuilds a session by re-executing its event log from the initial
    /// state. Every draw must land on the logged patch.
    pub fn replay<'a>(
        sampler: Sampler,
        budget: usize,
        seed: u64,
        events: impl IntoIterator<Item = &'a SessionEvent>,
    ) -> Result<Self> {
        let mut session = Self::new(sampler, budget, seed)?;
        for event in events {
            session.apply(event)?;
        }
        Ok(session)
    }

    pub fn apply(&mut self, event: &SessionEvent) -> Result<()> {
        match *event {
            SessionEvent::Draw { step, row, col } => {
                let (pending, fresh) = self.next()?;
                if fresh.is_none() || pending.step != step || pending.patch != PatchRef::new(row, col) {
                    return Err(Error::Replay(format!(
                        "step {step} drew ({row}, {col}) but replay drew ({}, {}) at step {}",
                        pending.patch.row, pending.patch.col, pending.step
                    )));
                }
            }
            SessionEvent::Label {
                step,
                row,
                col,
                label,
                update,
            } => {
                let (done, _) = self.submit(PatchRef::new(row, col), label)?;
                if done.step != step || done.update != update {
                    return Err(Error::Replay(format!(
                        "label at step {step} produced a different surface update"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sampler(&self) -> &Sampler {
        &self.sampler
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn pending(&self) -> Option<Pending> {
        self.pending
    }

    pub fn steps(&self) -> &[SessionStep] {
        &self.steps
    }

    pub fn tallies(&self) -> Tallies {
        let count = |l| self.steps.iter().filter(|s| s.label == l).count();
        Tallies {
            budget: self.budget,
            n_pos: count(Label::Positive),
            n_neg: count(Label::Negative),
            n_skip: count(Label::Skip),
            labeled: self.steps.len(),
            remaining: self.budget - self.steps.len(),
        }
    }

    /// Returns the pending patch, drawing one first if none is outstanding.
    /// The event is `Some` only when a new draw happened.
    pub fn next(&mut self) -> Result<(Pending, Option<SessionEvent>)> {
        if let Some(p) = self.pending {
            return Ok((p, None));
        }
        if self.steps.len() >= self.budget {
            return Err(Error::BudgetExhausted {
                budget: self.budget,
            });
        }
        let patch = self.sampler.draw(&mut self.rng)?;
        let pending = Pending {
            step: self.steps.len() + 1,
            patch,
        };
        self.pending = Some(pending);
        let event = SessionEvent::Draw {
            step: pending.step,
            row: patch.row,
            col: patch.col,
        };
        Ok((pending, Some(event)))
    }

    /// Labels the pending patch. Positives trigger the strategy's update;
    /// skips and negatives never do.
    pub fn submit(&mut self, patch: PatchRef, label: Label) -> Result<(SessionStep, SessionEvent)> {
        let pending = self.pending.ok_or(Error::NoPendingPatch)?;
        if pending.patch != patch {
            return Err(Error::PatchMismatch {
                expected_row: pending.patch.row,
                expected_col: pending.patch.col,
                row: patch.row,
                col: patch.col,
            });
        }
        let update = self.sampler.observe(patch, label == Label::Positive)?;
        self.pending = None;
        let step = SessionStep {
            step: pending.step,
            row: patch.row,
            col: patch.col,
            label,
            update,
        };
        self.steps.push(step);
        let event = SessionEvent::Label {
            step: step.step,
            row: step.row,
            col: step.col,
            label,
            update,
        };
        Ok((step, event))
    }

    pub fn snapshot(&self) -> SessionSnapshot {
        SessionSnapshot {
            tallies: self.tallies(),
            pending: self.pending,
            steps: self.steps.clone(),
            surface: self.sampler.surface().snapshot(),
        }
    }

    /// `step,row,col,label,strategy_event`.
    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "row", "col", "label", "strategy_event"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.row.to_string(),
                s.col.to_string(),
                s.label.as_str().to_string(),
                s.update.map(|u| u.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<session log>", e))?;
        Ok(())
    }
}

/// Appends one event as a JSON line.
pub fn write_event<W: Write>(mut writer: W, event: &SessionEvent) -> Result<()> {
    let mut line = serde_json::to_vec(event)?;
    line.push(b'\n');
    writer
        .write_all(&line)
        .map_err(|e| Error::io("<event log>", e))
}

/// Reads a JSON-lines event log. A final line without a newline that fails
/// to parse is treated as a torn write and dropped.
pub fn read_events<R: BufRead>(reader: R) -> Result<Vec<SessionEvent>> {
    let mut events = Vec::new();
    let mut lines = reader.split(b'\n').peekable();
    while let Some(line) = lines.next() {
        let line = line.map_err(|e| Error::io("<event log>", e))?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice(&line) {
            Ok(e) => events.push(e),
            Err(_) if lines.peek().is_none() => break,
            Err(e) => return Err(e.into()),
        }
    }
    Ok(events)
}
