use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::secagg::GroupConfig;

/// Identifies one upload: a client and the session nonce it reported under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UpdateKey {
    pub client_id: u64,
    pub nonce: u64,
}

/// What an update contributes to the running sum.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// Already multiplied by the update's weight.
    Real(Vec<f64>),
    /// Fixed-point, weighted and masked by the client.
    Masked(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub key: UpdateKey,
    /// Identity hashed to pick an intermediate accumulator.
    pub worker: u64,
    pub weight: f64,
    pub payload: Payload,
}

/// Sum representation, real or modular depending on the buffer kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Accumulated {
    Real(Vec<f64>),
    Masked(Vec<u32>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BufferKind {
    Real,
    Masked(GroupConfig),
}

#[derive(Debug, Clone)]
struct Partial {
    sum: Accumulated,
    total_weight: f64,
    count: usize,
}

impl Partial {
    fn zeros(kind: BufferKind, dim: usize) -> Self {
        let sum = match kind {
            BufferKind::Real => Accumulated::Real(vec![0.0; dim]),
            BufferKind::Masked(_) => Accumulated::Masked(vec![0; dim]),
        };
        Self { sum, total_weight: 0.0, count: 0 }
    }

    fn add(&mut self, kind: BufferKind, payload: &Payload, weight: f64) {
        match (&mut self.sum, payload, kind) {
            (Accumulated::Real(acc), Payload::Real(v), _) => {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
            }
            (Accumulated::Masked(acc), Payload::Masked(v), BufferKind::Masked(group)) => {
                let mask = group.element_mask();
                acc.iter_mut().zip(v).for_each(|(a, x)| *a = a.wrapping_add(*x) & mask);
            }
            _ => unreachable!("payload kind checked before admission"),
        }
        self.total_weight += weight;
        self.count += 1;
    }

    fn merge(&mut self, kind: BufferKind, other: &Partial) {
        match (&mut self.sum, &other.sum, kind) {
            (Accumulated::Real(acc), Accumulated::Real(v), _) => {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
            }
            (Accumulated::Masked(acc), Accumulated::Masked(v), BufferKind::Masked(group)) => {
                let mask = group.element_mask();
                acc.iter_mut().zip(v).for_each(|(a, x)| *a = a.wrapping_add(*x) & mask);
            }
            _ => unreachable!("partials share the buffer kind"),
        }
        self.total_weight += other.total_weight;
        self.count += other.count;
    }
}

#[derive(Debug)]
struct Generation {
    number: u64,
    shards: Vec<Mutex<Partial>>,
    keys: Mutex<Vec<UpdateKey>>,
    completed: AtomicUsize,
}

impl Generation {
    fn new(number: u64, kind: BufferKind, dim: usize, shards: usize) -> Self {
        Self {
            number,
            shards: (0..shards).map(|_| Mutex::new(Partial::zeros(kind, dim))).collect(),
            keys: Mutex::new(Vec::new()),
            completed: AtomicUsize::new(0),
        }
    }
}

#[derive(Debug)]
struct Admission {
    open: Arc<Generation>,
    admitted: usize,
    seen: HashSet<UpdateKey>,
    finalized: u64,
}

/// A closed generation's merged sum, ready for the server step.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalizedGeneration {
    pub generation: u64,
    pub sum: Accumulated,
    pub total_weight: f64,
    pub count: usize,
    /// Contributors in sorted order.
    pub keys: Vec<UpdateKey>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubmitOutcome {
    Accepted { generation: u64 },
    /// This submission completed the generation.
    Finalized(FinalizedGeneration),
    /// The key was already counted; nothing changed.
    Duplicate,
}

/// Weighted running sum toward an aggregation goal.
///
/// Submissions may arrive from many threads. Admission into a generation is
/// serialized, the additions land in hash-selected intermediate accumulators,
/// and whichever thread completes the K-th addition merges the partials. A
/// generation therefore finalizes exactly once, and submissions arriving
/// after it closed fall into the next one.
#[derive(Debug)]
pub struct AggregationBuffer {
    goal: usize,
    dim: usize,
    kind: BufferKind,
    shard_count: usize,
    admission: Mutex<Admission>,
}

impl AggregationBuffer {
    pub fn new(goal: usize, dim: usize, kind: BufferKind, shard_count: usize) -> Result<Self, OrchestratorError> {
        if goal == 0 || shard_count == 0 {
            return Err(OrchestratorError::InvalidBuffer("goal and shard count must be positive".into()));
        }
        if let BufferKind::Masked(group) = kind {
            if group.vector_length != dim {
                return Err(OrchestratorError::InvalidBuffer(format!(
                    "group vector length {} differs from model dimension {dim}",
                    group.vector_length
                )));
            }
        }
        Ok(Self {
            goal,
            dim,
            kind,
            shard_count,
            admission: Mutex::new(Admission {
                open: Arc::new(Generation::new(0, kind, dim, shard_count)),
                admitted: 0,
                seen: HashSet::new(),
                finalized: 0,
            }),
        })
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn kind(&self) -> BufferKind {
        self.kind
    }

    /// Number of the generation currently accepting submissions.
    pub fn open_generation(&self) -> u64 {
        self.admission.lock().unwrap().open.number
    }

    /// Updates admitted to the open generation.
    pub fn open_count(&self) -> usize {
        self.admission.lock().unwrap().admitted
    }

    pub fn finalized_count(&self) -> u64 {
        self.admission.lock().unwrap().finalized
    }

    fn shard_for(&self, worker: u64) -> usize {
        let mut h = DefaultHasher::new();
        worker.hash(&mut h);
        (h.finish() % self.shard_count as u64) as usize
    }

    pub fn submit(&self, c: Contribution) -> Result<SubmitOutcome, OrchestratorError> {
        let len = match (&c.payload, self.kind) {
            (Payload::Real(v), BufferKind::Real) => v.len(),
            (Payload::Masked(v), BufferKind::Masked(_)) => v.len(),
            _ => return Err(OrchestratorError::InvalidBuffer("payload kind does not match buffer".into())),
        };
        if len != self.dim {
            return Err(OrchestratorError::LengthMismatch { expected: self.dim, found: len });
        }
        if !(c.weight > 0.0 && c.weight.is_finite()) {
            return Err(OrchestratorError::InvalidBuffer(format!("weight must be positive, got {}", c.weight)));
        }

        let generation = {
            let mut adm = self.admission.lock().unwrap();
            if !adm.seen.insert(c.key) {
                return Ok(SubmitOutcome::Duplicate);
            }
            let generation = Arc::clone(&adm.open);
            adm.admitted += 1;
            if adm.admitted == self.goal {
                let next = generation.number + 1;
                adm.open = Arc::new(Generation::new(next, self.kind, self.dim, self.shard_count));
                adm.admitted = 0;
                adm.finalized += 1;
            }
            generation
        };

        generation.shards[self.shard_for(c.worker)].lock().unwrap().add(self.kind, &c.payload, c.weight);
        generation.keys.lock().unwrap().push(c.key);
        let done = generation.completed.fetch_add(1, Ordering::AcqRel) + 1;
        if done < self.goal {
            return Ok(SubmitOutcome::Accepted { generation: generation.number });
        }

        let mut merged = Partial::zeros(self.kind, self.dim);
        for shard in &generation.shards {
            merged.merge(self.kind, &shard.lock().unwrap());
        }
        let mut keys = std::mem::take(&mut *generation.keys.lock().unwrap());
        keys.sort_unstable();
        Ok(SubmitOutcome::Finalized(FinalizedGeneration {
            generation: generation.number,
            sum: merged.sum,
            total_weight: merged.total_weight,
            count: merged.count,
            keys,
        }))
    }

    /// Drops the open generation's partial sums. Returns how many updates were lost.
    ///
    /// The generation number advances if anything was dropped, so a lost
    /// generation can never finalize.
    pub fn discard_open(&self) -> usize {
        let mut adm = self.admission.lock().unwrap();
        let lost = adm.admitted;
        if lost > 0 {
            let next = adm.open.number + 1;
            adm.open = Arc::new(Generation::new(next, self.kind, self.dim, self.shard_count));
            adm.admitted = 0;
        }
        lost
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn real(client: u64, worker: u64, weight: f64, v: Vec<f64>) -> Contribution {
        Contribution { key: UpdateKey { client_id: client, nonce: client }, worker, weight, payload: Payload::Real(v) }
    }

    fn finalized(o: SubmitOutcome) -> FinalizedGeneration {
        match o {
            SubmitOutcome::Finalized(f) => f,
            other => panic!("expected finalize, got {other:?}"),
        }
    }

    #[test]
    fn finalizes_on_goal() {
        let b = AggregationBuffer::new(2, 2, BufferKind::Real, 4).unwrap();
        assert_eq!(b.submit(real(1, 1, 1.0, vec![1.0, 2.0])).unwrap(), SubmitOutcome::Accepted { generation: 0 });
        let f = finalized(b.submit(real(2, 2, 3.0, vec![3.0, 0.0])).unwrap());
        assert_eq!(f.sum, Accumulated::Real(vec![4.0, 2.0]));
        assert_eq!((f.total_weight, f.count, f.generation), (4.0, 2, 0));
        assert_eq!(b.open_generation(), 1);
        assert_eq!(b.submit(real(3, 1, 1.0, vec![0.0, 0.0])).unwrap(), SubmitOutcome::Accepted { generation: 1 });
        assert_eq!(b.finalized_count(), 1);
    }

    #[test]
    fn duplicates_are_ignored() {
        let b = AggregationBuffer::new(2, 1, BufferKind::Real, 1).unwrap();
        b.submit(real(1, 0, 1.0, vec![1.0])).unwrap();
        assert_eq!(b.submit(real(1, 0, 1.0, vec![1.0])).unwrap(), SubmitOutcome::Duplicate);
        assert_eq!(b.open_count(), 1);
    }

    #[test]
    fn rejects_bad_submissions() {
        let b = AggregationBuffer::new(2, 2, BufferKind::Real, 1).unwrap();
        assert!(b.submit(real(1, 0, 1.0, vec![1.0])).is_err());
        assert!(b.submit(real(1, 0, 0.0, vec![1.0, 1.0])).is_err());
        let masked = Contribution {
            key: UpdateKey { client_id: 1, nonce: 1 },
            worker: 0,
            weight: 1.0,
            payload: Payload::Masked(vec![1, 2]),
        };
        assert!(b.submit(masked).is_err());
        assert_eq!(b.open_count(), 0);
    }

    #[test]
    fn masked_sums_wrap() {
        let group = GroupConfig::new(8, 2, 1.0, 2).unwrap();
        let b = AggregationBuffer::new(2, 2, BufferKind::Masked(group), 3).unwrap();
        let c = |id: u64, v: Vec<u32>| Contribution {
            key: UpdateKey { client_id: id, nonce: 0 },
            worker: id,
            weight: 1.0,
            payload: Payload::Masked(v),
        };
        b.submit(c(1, vec![200, 5])).unwrap();
        let f = finalized(b.submit(c(2, vec![100, 7])).unwrap());
        assert_eq!(f.sum, Accumulated::Masked(vec![44, 12]));
        assert_eq!(f.count, 2);
    }

    #[test]
    fn discarded_generation_never_finalizes() {
        let b = AggregationBuffer::new(2, 1, BufferKind::Real, 2).unwrap();
        b.submit(real(1, 0, 1.0, vec![1.0])).unwrap();
        assert_eq!(b.discard_open(), 1);
        assert_eq!(b.discard_open(), 0);
        assert_eq!(b.submit(real(2, 0, 1.0, vec![1.0])).unwrap(), SubmitOutcome::Accepted { generation: 1 });
        let f = finalized(b.submit(real(3, 0, 1.0, vec![1.0])).unwrap());
        assert_eq!((f.generation, f.count), (1, 2));
        assert_eq!(b.finalized_count(), 1);
    }

    #[test]
    fn parallel_submitters_finalize_once_per_generation() {
        let dim = 16;
        let goal = 2;
        let per_trial = 8;
        for trial in 0..1000u64 {
            let mut rng = rng::stream(trial, "buffer-stress", 0);
            let updates: Vec<(f64, Vec<f64>)> = (0..per_trial)
                .map(|_| (rng.gen_range(0.5..4.0), (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()))
                .collect();
            let buffer = AggregationBuffer::new(goal, dim, BufferKind::Real, 4).unwrap();
            let results = Mutex::new(Vec::new());
            std::thread::scope(|s| {
                for (worker, (w, v)) in updates.iter().enumerate() {
                    let buffer = &buffer;
                    let results = &results;
                    s.spawn(move || {
                        let payload = Payload::Real(v.iter().map(|x| x * w).collect());
                        let c = Contribution {
                            key: UpdateKey { client_id: worker as u64, nonce: trial },
                            worker: worker as u64,
                            weight: *w,
                            payload,
                        };
                        if let SubmitOutcome::Finalized(f) = buffer.submit(c).unwrap() {
                            results.lock().unwrap().push(f);
                        }
                    });
                }
            });
            let mut results = results.into_inner().unwrap();
            results.sort_by_key(|f| f.generation);
            assert_eq!(results.len(), per_trial / goal, "trial {trial}");
            assert_eq!(buffer.finalized_count() as usize, per_trial / goal);
            for (g, f) in results.iter().enumerate() {
                assert_eq!(f.generation, g as u64);
                assert_eq!(f.count, goal);
                // sequential oracle over the same members
                let mut oracle = vec![0.0; dim];
                let mut weight = 0.0;
                for key in &f.keys {
                    let (w, v) = &updates[key.client_id as usize];
                    oracle.iter_mut().zip(v).for_each(|(o, x)| *o += x * w);
                    weight += w;
                }
                let Accumulated::Real(sum) = &f.sum else { unreachable!() };
                assert!((f.total_weight - weight).abs() < 1e-9);
                for (a, b) in sum.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
            let mut all: Vec<u64> = results.iter().flat_map(|f| f.keys.iter().map(|k| k.client_id)).collect();
            all.sort_unstable();
            assert_eq!(all, (0..per_trial as u64).collect::<Vec<_>>());
        }
    }
}
