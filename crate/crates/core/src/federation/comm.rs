use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Prototype bootstrap before the first round.
    Setup,
    Round,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Down,
    Up,
}

/// One frame that crossed a transport.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommRecord {
    pub phase: Phase,
    pub round: u32,
    pub party_id: u32,
    pub direction: Direction,
    pub bytes: usize,
}

/// Append-only record of every frame moved.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLog {
    records: Vec<CommRecord>,
}

impl CommLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: CommRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[CommRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: &CommLog) {
        self.records.extend_from_slice(&other.records);
    }

    /// Per party of `round`: (ProtoDown frames sent, ReprUp frames received).
    pub fn round_traffic(&self, round: u32, parties: usize) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); parties];
        for r in self.records.iter().filter(|r| r.phase == Phase::Round && r.round == round) {
            if let Some(slot) = (r.party_id as usize).checked_sub(1).and_then(|i| out.get_mut(i)) {
                match r.direction {
                    Direction::Down => slot.0 += 1,
                    Direction::Up => slot.1 += 1,
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommCost {
    pub total: usize,
    pub setup: usize,
    /// Bytes moved in round `t` at index `t`.
    pub per_round: Vec<usize>,
}

pub fn comm_cost(log: &CommLog) -> CommCost {
    let mut cost = CommCost::default();
    for r in log.records() {
        cost.total += r.bytes;
        match r.phase {
            Phase::Setup => cost.setup += r.bytes,
            Phase::Round => {
                let t = r.round as usize;
                if cost.per_round.len() <= t {
                    cost.per_round.resize(t + 1, 0);
                }
                cost.per_round[t] += r.bytes;
            }
        }
    }
    cost
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: u32, bytes: usize) -> CommRecord {
        CommRecord {
            phase: Phase::Round,
            round,
            party_id: 1,
            direction: Direction::Up,
            bytes,
        }
    }

    #[test]
    fn sums() {
        assert_eq!(comm_cost(&CommLog::new()).total, 0);
        let mut log = CommLog::new();
        log.push(rec(0, 10));
        log.push(rec(1, 10));
        let c = comm_cost(&log);
        assert_eq!(c.total, 20);
        assert_eq!(c.per_round, vec![10, 10]);
    }
}
