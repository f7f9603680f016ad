use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::events::Transition;
use super::OrchestratorError;
use crate::time::Micros;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SessionId(pub u64);

/// Participation stage of a client session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Selected,
    Downloading,
    Training,
    Reporting,
    Uploading,
    Done,
    Dead,
    Aborted,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Done | SessionState::Dead | SessionState::Aborted)
    }

    /// Counts against the concurrency bound.
    pub fn is_active(self) -> bool {
        !self.is_terminal()
    }

    /// Occupies a device: downloading through uploading.
    pub fn is_working(self) -> bool {
        matches!(
            self,
            SessionState::Downloading | SessionState::Training | SessionState::Reporting | SessionState::Uploading
        )
    }

    fn successor(self) -> Option<SessionState> {
        match self {
            SessionState::Selected => Some(SessionState::Downloading),
            SessionState::Downloading => Some(SessionState::Training),
            SessionState::Training => Some(SessionState::Reporting),
            SessionState::Reporting => Some(SessionState::Uploading),
            SessionState::Uploading => Some(SessionState::Done),
            _ => None,
        }
    }

    pub fn can_transition_to(self, to: SessionState) -> bool {
        if self.is_terminal() {
            return false;
        }
        matches!(to, SessionState::Dead | SessionState::Aborted) || self.successor() == Some(to)
    }

    pub fn transition(self) -> Transition {
        match self {
            SessionState::Selected => Transition::Selected,
            SessionState::Downloading => Transition::Downloading,
            SessionState::Training => Transition::Training,
            SessionState::Reporting => Transition::Reporting,
            SessionState::Uploading => Transition::Uploading,
            SessionState::Done => Transition::Done,
            SessionState::Dead => Transition::Dead,
            SessionState::Aborted => Transition::Aborted,
        }
    }
}

/// Server-side view of one client's participation in one task.
#[derive(Debug, Clone)]
pub struct ClientSession {
    pub id: SessionId,
    pub client_id: u64,
    pub task: usize,
    pub state: SessionState,
    pub initial_version: u64,
    pub started_at: Micros,
    pub last_heartbeat: Micros,
    /// Model parameters handed out at download.
    pub model: Arc<Vec<f64>>,
}

impl ClientSession {
    pub fn advance(&mut self, to: SessionState, now: Micros) -> Result<(), OrchestratorError> {
        if !self.state.can_transition_to(to) {
            return Err(OrchestratorError::IllegalTransition { session: self.id.0, from: self.state, to });
        }
        self.state = to;
        self.last_heartbeat = now;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [SessionState; 8] = [
        SessionState::Selected,
        SessionState::Downloading,
        SessionState::Training,
        SessionState::Reporting,
        SessionState::Uploading,
        SessionState::Done,
        SessionState::Dead,
        SessionState::Aborted,
    ];

    #[test]
    fn transition_table() {
        let mut legal = 0;
        for from in ALL {
            for to in ALL {
                if from.can_transition_to(to) {
                    legal += 1;
                    assert!(!from.is_terminal());
                    assert!(
                        matches!(to, SessionState::Dead | SessionState::Aborted) || to as u8 == from as u8 + 1,
                        "{from:?} -> {to:?}"
                    );
                }
            }
        }
        // five forward edges plus two failure exits from each of five live states
        assert_eq!(legal, 5 + 2 * 5);
    }

    #[test]
    fn advance_rejects_skips() {
        let mut s = ClientSession {
            id: SessionId(1),
            client_id: 2,
            task: 0,
            state: SessionState::Selected,
            initial_version: 0,
            started_at: 0,
            last_heartbeat: 0,
            model: Arc::new(vec![]),
        };
        assert!(s.advance(SessionState::Training, 1).is_err());
        s.advance(SessionState::Downloading, 1).unwrap();
        s.advance(SessionState::Aborted, 2).unwrap();
        assert!(s.advance(SessionState::Dead, 3).is_err());
        assert_eq!(s.last_heartbeat, 2);
    }
}
